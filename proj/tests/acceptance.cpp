// Acceptance checks for the pbmrc pipeline. Each check prints exactly one
// [PASS]/[FAIL] line; the process exits nonzero if any check fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "pbmrc/evaluation.hpp"
#include "pbmrc/model.hpp"
#include "pbmrc/synthetic.hpp"
#include "pbmrc/training.hpp"

using namespace pbmrc;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void report(int number, const std::string& name, bool pass, const std::string& detail) {
  std::printf("[%s] %d %s (%s)\n", pass ? "PASS" : "FAIL", number, name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

// 1: finite-difference gradient check on the small encoder, under a minute.
void check_gradients() {
  auto t0 = Clock::now();
  GradCheckReport rep = gradient_check_model(desk_config(), 42, 1e-4);
  double elapsed = seconds_since(t0);
  double worst = 0;
  std::size_t coords = 0;
  bool enough = !rep.groups.empty();
  for (const auto& g : rep.groups) {
    worst = std::max(worst, g.max_rel_err);
    coords += g.coords_checked;
    enough = enough && g.coords_checked >= 20;
  }
  bool pass = rep.pass && enough && elapsed <= 60.0;
  char detail[160];
  std::snprintf(detail, sizeof(detail), "max_rel_err=%.3e over %zu coords in %zu groups, %.1fs",
                worst, coords, rep.groups.size(), elapsed);
  report(1, "gradient check", pass, detail);
}

// 2: memorize a 40-sentence synthetic corpus with hard prompts, then again
// with soft prompts while the encoder stays frozen.
void check_overfit() {
  auto corpus = make_synthetic_corpus(42, 40);
  auto vocab = make_synthetic_vocab();
  auto reg = make_synthetic_registry();

  TrainRun hard;
  hard.encoder = desk_config();
  hard.encoder.dropout_prob = 0.0;
  hard.train.seed = 42;
  hard.train.learning_rate = 3e-4;
  hard.train.batch_size = 8;
  hard.train.max_epochs = 300;
  hard.train.patience = 25;
  hard.prompt_mode = PromptMode::Hard;

  auto t0 = Clock::now();
  TrainResult hr = train(corpus, corpus, reg, vocab, hard);
  double hard_secs = seconds_since(t0);
  double hard_best = 0;
  std::size_t hard_epoch = 0;
  for (const auto& l : hr.log)
    if (l.dev_f1 > hard_best) {
      hard_best = l.dev_f1;
      hard_epoch = l.epoch;
    }
  bool hard_ok = hard_best >= 0.99 && hard_epoch <= 300 && hard_secs <= 300.0;

  // prompt tuning against the frozen trained backbone: soft prompts are
  // re-seeded from the (now trained) template token embeddings
  ModelParams backbone = clone_params(hr.best_params);
  init_soft_prompts_from_templates(backbone, reg, vocab);

  TrainRun soft = hard;
  soft.prompt_mode = PromptMode::Soft;
  soft.train.freeze = FreezePolicy::PromptAndHeads;
  soft.train.learning_rate = 1e-3;
  soft.train.max_epochs = 500;
  soft.train.patience = 40;
  soft.initial_params = &backbone;

  auto t1 = Clock::now();
  TrainResult sr = train(corpus, corpus, reg, vocab, soft);
  double soft_secs = seconds_since(t1);
  double soft_best = 0;
  std::size_t soft_epoch = 0;
  for (const auto& l : sr.log)
    if (l.dev_f1 > soft_best) {
      soft_best = l.dev_f1;
      soft_epoch = l.epoch;
    }
  bool soft_ok = soft_best >= 0.90 && soft_epoch <= 500;

  char detail[200];
  std::snprintf(detail, sizeof(detail),
                "hard f1=%.3f@ep%zu %.0fs; frozen-encoder soft f1=%.3f@ep%zu %.0fs", hard_best,
                hard_epoch, hard_secs, soft_best, soft_epoch, soft_secs);
  report(2, "memorization", hard_ok && soft_ok, detail);
}

// 3: span decoding agrees with an exhaustive scan over random score grids.
void check_decode_oracle() {
  Rng rng(303);
  std::size_t mismatches = 0;
  const int trials = 200;
  for (int trial = 0; trial < trials; ++trial) {
    const std::size_t L = 5 + rng.uniform_int(14);
    const std::size_t lo = 1 + rng.uniform_int(3);
    const std::size_t hi = lo + 1 + rng.uniform_int(L - lo - 1);
    const std::size_t msl = 1 + rng.uniform_int(8);

    SpanScores s;
    s.context_range = {lo, hi};
    s.max_span_len = msl;
    s.start_logits.assign(L, -1e30);
    s.end_logits.assign(L, -1e30);
    s.match_logits.assign(L, std::vector<double>(L, -1e30));
    for (std::size_t i = lo; i < hi; ++i) {
      s.start_logits[i] = -4 + 8 * rng.uniform();
      s.end_logits[i] = -4 + 8 * rng.uniform();
      for (std::size_t j = i; j < std::min(hi, i + msl); ++j)
        s.match_logits[i][j] = -4 + 8 * rng.uniform();
    }
    EncodedInput enc;
    enc.context_range = {lo, hi};
    for (std::size_t k = 0; k < hi - lo; ++k) enc.context_offsets.push_back({3 * k, 3 * k + 2});

    DecodeThresholds th{0.1 + 0.8 * rng.uniform(), 0.1 + 0.8 * rng.uniform(),
                        0.1 + 0.8 * rng.uniform()};
    auto fast = decode_spans(s, enc, "X", th, msl);

    std::vector<SpanPrediction> slow;
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t j = 0; j < L; ++j) {
        if (i < lo || j >= hi || j < i || j - i >= msl) continue;
        double ps = sigmoid(s.start_logits[i]), pe = sigmoid(s.end_logits[j]),
               pm = sigmoid(s.match_logits[i][j]);
        if (ps > th.start && pe > th.end && pm > th.match)
          slow.push_back({i, j, enc.context_offsets[i - lo].first,
                          enc.context_offsets[j - lo].second, "X",
                          std::cbrt(ps * pe * pm)});
      }
    bool same = fast.size() == slow.size();
    for (std::size_t k = 0; same && k < fast.size(); ++k)
      same = fast[k].tok_start == slow[k].tok_start && fast[k].tok_end == slow[k].tok_end &&
             std::abs(fast[k].score - slow[k].score) <= 1e-12;
    if (!same) ++mismatches;
  }
  char detail[96];
  std::snprintf(detail, sizeof(detail), "%d random grids, %zu mismatches", trials, mismatches);
  report(3, "decoding vs exhaustive scan", mismatches == 0, detail);
}

// 4: instance construction identities on random corpora: count, answer
// conservation, and split partitioning.
void check_instance_identities() {
  Rng rng(404);
  bool ok = true;
  const int trials = 30;
  for (int trial = 0; trial < trials && ok; ++trial) {
    AnnotatedCorpus c;
    const std::size_t n_labels = 1 + rng.uniform_int(6);
    for (std::size_t l = 0; l < n_labels; ++l)
      c.label_set.labels.push_back("L" + std::to_string(l));
    const std::size_t n_sent = rng.uniform_int(60);
    std::multiset<std::tuple<std::string, std::size_t, std::size_t, std::string>> gold;
    for (std::size_t i = 0; i < n_sent; ++i) {
      Sentence s;
      s.id = "s" + std::to_string(i);
      s.text = std::string(8 + rng.uniform_int(40), 'w');
      const std::size_t n_m = rng.uniform_int(4);
      for (std::size_t m = 0; m < n_m; ++m) {
        std::size_t a = rng.uniform_int(s.text.size() - 1);
        std::size_t b = a + 1 + rng.uniform_int(s.text.size() - a - 1);
        EntityMention em{a, b, c.label_set.labels[rng.uniform_int(n_labels)]};
        bool dup = false;
        for (const auto& ex : s.mentions) dup = dup || ex == em;
        if (dup) continue;
        s.mentions.push_back(em);
        gold.insert({s.id, a, b, em.label});
      }
      c.sentences.push_back(std::move(s));
    }

    auto insts = build_instances(c, default_registry(c.label_set));
    ok = ok && insts.size() == c.sentences.size() * c.label_set.labels.size();
    std::multiset<std::tuple<std::string, std::size_t, std::size_t, std::string>> seen;
    for (const auto& inst : insts)
      for (const auto& [a, b] : inst.answers) seen.insert({inst.sentence_id, a, b, inst.label});
    ok = ok && seen == gold;

    auto sp = split_corpus(c, 0.7, 0.2, 0.1, rng.next_u64());
    std::set<std::string> ids;
    std::size_t total = 0;
    for (const auto* part : {&sp.train, &sp.dev, &sp.test})
      for (const auto& s : part->sentences) {
        ok = ok && ids.insert(s.id).second;
        ++total;
      }
    ok = ok && total == c.sentences.size();
  }
  char detail[96];
  std::snprintf(detail, sizeof(detail), "%d random corpora", trials);
  report(4, "instance and split identities", ok, detail);
}

// 5: tokenizer fuzz: offsets are ordered, in range, faithful to the text,
// and word-boundary spans align exactly.
void check_tokenizer_fuzz() {
  std::vector<std::string> toks;
  for (char ch = 'a'; ch <= 'z'; ++ch) {
    toks.push_back(std::string(1, ch));
    toks.push_back("##" + std::string(1, ch));
  }
  for (char ch = '0'; ch <= '9'; ++ch) toks.push_back(std::string(1, ch));
  const char* words[] = {"the",  "and",    "drug", "dose", "pain",  "head",  "##ache",
                         "ab",   "##cd",   "##cde", "xy",  "qu",    "##est",
                         "mild", "severe", "un",    "##it", "##its", "co"};
  for (const char* w : words) toks.push_back(w);
  while (toks.size() < 195) toks.push_back("tok" + std::to_string(toks.size()));
  auto vocab = make_vocab(toks);  // + 5 specials = 200

  Rng rng(505);
  const std::string alphabet = "abcdefghijklmnopqrstuvwxyz0123456789 .,!?;:-";
  const int trials = 10000;
  std::size_t violations = 0;
  for (int t = 0; t < trials; ++t) {
    std::string text;
    const std::size_t len = rng.uniform_int(60);
    for (std::size_t i = 0; i < len; ++i) text += alphabet[rng.uniform_int(alphabet.size())];
    TokenizedText tk;
    try {
      tk = wordpiece_tokenize(text, vocab);
    } catch (...) {
      ++violations;
      continue;
    }
    const std::size_t n_scalars = utf8_length(text);
    bool ok = true;
    for (std::size_t i = 0; i < tk.size() && ok; ++i) {
      auto [s, e] = tk.offsets[i];
      ok = s < e && e <= n_scalars && (i == 0 || tk.offsets[i - 1].second <= s);
      if (ok && tk.tokens[i] != "[UNK]") {
        std::string piece = tk.tokens[i];
        if (piece.starts_with("##")) piece = piece.substr(2);
        ok = utf8_substr(text, s, e) == piece;
      }
      if (ok) {
        auto ts = align_char_span_to_tokens({s, e}, tk);
        ok = ts.exact && tk.offsets[ts.tok_start].first == s && tk.offsets[ts.tok_end].second == e;
      }
    }
    if (!ok) ++violations;
  }
  char detail[96];
  std::snprintf(detail, sizeof(detail), "%d strings, vocab of %zu, %zu violations", trials,
                vocab.size(), violations);
  report(5, "tokenizer fuzz", violations == 0, detail);
}

// 6: metric arithmetic is exact on a hand-computed fixture and invariant to
// the order labels are inserted.
void check_metrics() {
  std::map<std::string, LabelCounts> counts;
  counts["A"] = {2, 0, 0};
  counts["B"] = {1, 1, 3};
  auto rep = compute_metrics(counts);
  bool ok = std::abs(rep.per_label_metrics["A"].f1 - 1.0) <= 1e-12 &&
            std::abs(rep.per_label_metrics["B"].precision - 0.5) <= 1e-12 &&
            std::abs(rep.per_label_metrics["B"].recall - 0.25) <= 1e-12 &&
            std::abs(rep.per_label_metrics["B"].f1 - 1.0 / 3.0) <= 1e-12 &&
            rep.micro_counts.tp == 3 && rep.micro_counts.fp == 1 && rep.micro_counts.fn == 3 &&
            std::abs(rep.micro.precision - 0.75) <= 1e-12 &&
            std::abs(rep.micro.recall - 0.5) <= 1e-12 && std::abs(rep.micro.f1 - 0.6) <= 1e-12 &&
            std::abs(rep.macro_f1 - (1.0 + 1.0 / 3.0) / 2.0) <= 1e-12;

  ok = ok && std::abs(prf_from_counts(0, 0, 0).f1) <= 1e-12 &&
       std::abs(prf_from_counts(5, 0, 0).f1 - 1.0) <= 1e-12;

  Rng rng(606);
  for (int trial = 0; trial < 50 && ok; ++trial) {
    std::vector<std::string> labels;
    std::vector<LabelCounts> vals;
    const std::size_t n = 2 + rng.uniform_int(6);
    for (std::size_t i = 0; i < n; ++i) {
      labels.push_back("L" + std::to_string(i));
      vals.push_back({rng.uniform_int(9), rng.uniform_int(9), rng.uniform_int(9)});
    }
    std::map<std::string, LabelCounts> fwd, rev;
    for (std::size_t i = 0; i < n; ++i) fwd[labels[i]] = vals[i];
    for (std::size_t i = n; i-- > 0;) rev[labels[i]] = vals[i];
    auto a = compute_metrics(fwd);
    auto b = compute_metrics(rev);
    ok = a.micro.f1 == b.micro.f1 && a.macro_f1 == b.macro_f1;
  }
  report(6, "metric arithmetic", ok, "hand fixture to 1e-12, insertion-order invariance");
}

// 7: the same training run twice produces byte-identical logs and
// checkpoints, with dropout active.
void check_train_determinism() {
  auto corpus = make_synthetic_corpus(7, 10);
  auto vocab = make_synthetic_vocab();
  auto reg = make_synthetic_registry();

  TrainRun run;
  run.encoder = desk_config();
  run.encoder.dropout_prob = 0.1;  // determinism must hold with dropout active
  run.train.max_epochs = 5;
  run.train.seed = 7;
  auto a = train(corpus, corpus, reg, vocab, run);
  auto b = train(corpus, corpus, reg, vocab, run);
  bool logs_equal = epoch_log_to_jsonl(a.log) == epoch_log_to_jsonl(b.log);
  bool ckpt_equal = save_params(a.best_params) == save_params(b.best_params);
  char detail[96];
  std::snprintf(detail, sizeof(detail), "5 epochs, dropout %.1f: logs %s, checkpoints %s",
                run.encoder.dropout_prob, logs_equal ? "identical" : "differ",
                ckpt_equal ? "identical" : "differ");
  report(7, "bitwise training determinism", logs_equal && ckpt_equal, detail);
}

// 8: the full-size configuration initializes, matches the closed-form
// parameter count, and runs a forward pass within the time budget.
void check_full_size_forward() {
  auto t0 = Clock::now();
  EncoderConfig cfg = table1_base_config();
  std::vector<std::string> labels = {"ADR", "Drug"};
  std::vector<std::size_t> plens = {7, 7};
  Rng rng(8, 1);
  ModelParams params = init_params(cfg, labels, plens, rng);
  const std::size_t expected = expected_param_count(cfg, plens);
  const bool count_ok = params.scalar_count() == expected;

  auto vocab = make_synthetic_vocab();
  MrcInstance inst;
  inst.sentence_id = "s0";
  inst.label = "ADR";
  inst.prompt_text = "find all ADR entities in the text";
  inst.context_text = "the patient took aspirin and reported mild nausea and severe fever";
  auto enc = encode_instance(inst, vocab, 64);
  ModelGraph g(params);
  Rng frng(0, 0);
  NodePtr x = embed_input(g, enc.input, PromptMode::Hard, "ADR", frng, false);
  NodePtr e = encoder_forward(g, x, enc.input.attention_mask, frng, false);
  auto scores = materialize_scores(span_head_forward(g, e, enc.input, 16));
  bool finite = true;
  const auto [lo, hi] = scores.context_range;
  for (std::size_t i = lo; i < hi; ++i)
    finite = finite && std::isfinite(scores.start_logits[i]) && std::isfinite(scores.end_logits[i]);
  double elapsed = seconds_since(t0);
  bool pass = count_ok && finite && elapsed <= 120.0;
  char detail[128];
  std::snprintf(detail, sizeof(detail), "%zu parameters (analytic %zu), forward in %.1fs total",
                params.scalar_count(), expected, elapsed);
  report(8, "full-size config forward", pass, detail);
}

// 9: soft prompts seeded from the hard templates reproduce the hard-prompt
// scores on fresh instances.
void check_soft_init_equivalence() {
  auto corpus = make_synthetic_corpus(9, 10);  // 10 sentences x 2 labels = 20 instances
  auto vocab = make_synthetic_vocab();
  auto reg = make_synthetic_registry();
  std::vector<std::size_t> plens;
  for (const auto& l : corpus.label_set.labels)
    plens.push_back(wordpiece_tokenize(reg.for_label(l).text, vocab).size());
  Rng rng(9, 1);
  auto params = init_params(desk_config(), corpus.label_set.labels, plens, rng);
  init_soft_prompts_from_templates(params, reg, vocab);

  auto insts = build_instances(corpus, reg);
  double worst = 0;
  std::size_t n_compared = 0;
  for (const auto& inst : insts) {
    auto enc = encode_instance(inst, vocab, 64);
    Rng frng(0, 0);
    auto run_mode = [&](PromptMode mode) {
      ModelGraph g(params);
      NodePtr x = embed_input(g, enc.input, mode, inst.label, frng, false);
      NodePtr e = encoder_forward(g, x, enc.input.attention_mask, frng, false);
      return materialize_scores(span_head_forward(g, e, enc.input, 16));
    };
    auto hard = run_mode(PromptMode::Hard);
    auto soft = run_mode(PromptMode::Soft);
    const auto [lo, hi] = hard.context_range;
    for (std::size_t i = lo; i < hi; ++i) {
      worst = std::max(worst, std::abs(hard.start_logits[i] - soft.start_logits[i]));
      worst = std::max(worst, std::abs(hard.end_logits[i] - soft.end_logits[i]));
      for (std::size_t j = i; j < std::min(hi, i + hard.max_span_len); ++j)
        worst = std::max(worst, std::abs(hard.match_logits[i][j] - soft.match_logits[i][j]));
    }
    ++n_compared;
  }
  char detail[96];
  std::snprintf(detail, sizeof(detail), "%zu instances, max |hard-soft|=%.2e", n_compared, worst);
  report(9, "soft prompt initialization equivalence", n_compared == 20 && worst <= 1e-9, detail);
}

}  // namespace

int main() {
  check_gradients();
  check_overfit();
  check_decode_oracle();
  check_instance_identities();
  check_tokenizer_fuzz();
  check_metrics();
  check_train_determinism();
  check_full_size_forward();
  check_soft_init_equivalence();
  if (g_failures) std::printf("%d check(s) failed\n", g_failures);
  return g_failures ? 1 : 0;
}
