#include "pbmrc/training.hpp"

#include <set>
#include <map>
#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

namespace pbmrc {

using nlohmann::json;

FreezePolicy freeze_policy_from_string(const std::string& s) {
  if (s == "full") return FreezePolicy::Full;
  if (s == "prompt_only") return FreezePolicy::PromptOnly;
  if (s == "prompt_and_heads") return FreezePolicy::PromptAndHeads;
  throw ValidationError("unknown freeze policy: " + s);
}

std::string to_string(FreezePolicy p) {
  switch (p) {
    case FreezePolicy::Full: return "full";
    case FreezePolicy::PromptOnly: return "prompt_only";
    case FreezePolicy::PromptAndHeads: return "prompt_and_heads";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (max_epochs < 1) throw ValidationError("max_epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (learning_rate <= 0) throw ValidationError("learning_rate must be > 0");
  if (loss_alpha < 0 || loss_beta < 0 || loss_gamma < 0)
    throw ValidationError("loss weights must be >= 0");
  if (loss_alpha + loss_beta + loss_gamma == 0)
    throw ValidationError("loss weights must not all be zero");
  if (selection_metric != "f1" && selection_metric != "precision")
    throw ValidationError("selection_metric must be f1 or precision");
}

LossNodes compute_loss(const SpanScoresNodes& scores, const std::vector<EncodedAnswer>& gold,
                       const TrainConfig& cfg) {
  const std::size_t L = scores.length;
  const auto [lo, hi] = scores.context_range;
  Tensor start_t(L, 1, 0.0), end_t(L, 1, 0.0), ctx_mask(L, 1, 0.0);
  for (std::size_t i = lo; i < hi; ++i) ctx_mask.at(i, 0) = 1.0;
  std::set<std::pair<int, int>> gold_pairs;
  for (const auto& a : gold) {
    if (a.tok_start < lo || a.tok_end >= hi)
      throw ValidationError("gold span outside context range");
    start_t.at(a.tok_start, 0) = 1.0;
    end_t.at(a.tok_end, 0) = 1.0;
    gold_pairs.insert({static_cast<int>(a.tok_start), static_cast<int>(a.tok_end)});
  }
  Tensor match_t(scores.pairs.size(), 1, 0.0);
  Tensor match_mask(scores.pairs.size(), 1, 1.0);
  for (std::size_t k = 0; k < scores.pairs.size(); ++k)
    if (gold_pairs.count(scores.pairs[k])) match_t.at(k, 0) = 1.0;

  LossNodes out;
  NodePtr sl = bce_with_logits(scores.start_logits, start_t, ctx_mask);
  NodePtr el = bce_with_logits(scores.end_logits, end_t, ctx_mask);
  NodePtr ml;
  if (!scores.pairs.empty())
    ml = bce_with_logits(scores.match_logits, match_t, match_mask);
  else
    ml = constant(Tensor(1, 1, 0.0));
  out.total = add(add(scale(sl, cfg.loss_alpha), scale(el, cfg.loss_beta)),
                  scale(ml, cfg.loss_gamma));

  LossBreakdown& v = out.values;
  v.start_loss = sl->value.at(0, 0);
  v.end_loss = el->value.at(0, 0);
  v.match_loss = ml->value.at(0, 0);
  v.total = out.total->value.at(0, 0);
  for (std::size_t i = lo; i < hi; ++i) {
    (start_t.at(i, 0) > 0 ? v.positives_start : v.negatives_start)++;
    (end_t.at(i, 0) > 0 ? v.positives_end : v.negatives_end)++;
  }
  for (std::size_t k = 0; k < scores.pairs.size(); ++k)
    (match_t.at(k, 0) > 0 ? v.positives_match : v.negatives_match)++;
  return out;
}

OptimizerState init_optimizer(const ModelParams& params) {
  OptimizerState s;
  for (const auto& e : params.entries) {
    s.m.emplace_back(e.value.rows(), e.value.cols(), 0.0);
    s.v.emplace_back(e.value.rows(), e.value.cols(), 0.0);
  }
  return s;
}

bool entry_trainable(const ParamEntry& entry, FreezePolicy policy) {
  switch (policy) {
    case FreezePolicy::Full:
      return true;
    case FreezePolicy::PromptOnly:
      return entry.group == "soft_prompt_bank";
    case FreezePolicy::PromptAndHeads:
      return entry.group == "soft_prompt_bank" || entry.group == "span_start_head" ||
             entry.group == "span_end_head" || entry.group == "span_match_head";
  }
  return false;
}

void adam_step(ModelParams& params, const std::vector<Tensor>& grads, OptimizerState& state,
               const TrainConfig& cfg) {
  if (grads.size() != params.entries.size())
    throw ValidationError("adam_step: gradient count mismatch");
  for (std::size_t k = 0; k < grads.size(); ++k)
    if (!grads[k].same_shape(params.entries[k].value))
      throw ValidationError("adam_step: gradient shape mismatch for " + params.entries[k].name);

  double sq = 0.0;
  for (std::size_t k = 0; k < grads.size(); ++k)
    if (entry_trainable(params.entries[k], cfg.freeze)) sq += grads[k].sum_squares();
  const double norm = std::sqrt(sq);
  const double clip_scale =
      (cfg.grad_clip_norm > 0 && norm > cfg.grad_clip_norm) ? cfg.grad_clip_norm / norm : 1.0;

  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < grads.size(); ++k) {
    ParamEntry& e = params.entries[k];
    if (!entry_trainable(e, cfg.freeze)) continue;
    Tensor& m = state.m[k];
    Tensor& v = state.v[k];
    double* pm = m.ptr();
    double* pv = v.ptr();
    double* pp = e.value.ptr();
    const double* pg = grads[k].ptr();
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double g = pg[i] * clip_scale;
      pm[i] = cfg.adam_beta1 * pm[i] + (1.0 - cfg.adam_beta1) * g;
      pv[i] = cfg.adam_beta2 * pv[i] + (1.0 - cfg.adam_beta2) * g * g;
      const double mhat = pm[i] / bc1;
      const double vhat = pv[i] / bc2;
      pp[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
      if (e.decay && cfg.weight_decay > 0)
        pp[i] -= cfg.learning_rate * cfg.weight_decay * pp[i];
    }
  }
}

TrainResult train(const AnnotatedCorpus& train_corpus, const AnnotatedCorpus& dev_corpus,
                  const PromptRegistry& registry, const Vocabulary& vocab, const TrainRun& run) {
  run.encoder.validate();
  run.train.validate();
  if (train_corpus.sentences.empty()) throw ValidationError("train split is empty");
  if (dev_corpus.sentences.empty()) throw ValidationError("dev split is empty");
  if (run.train.freeze == FreezePolicy::PromptOnly && run.prompt_mode != PromptMode::Soft)
    throw ValidationError("freeze policy prompt_only requires soft prompt mode");
  if (vocab.size() > run.encoder.vocab_size)
    throw ValidationError("vocabulary larger than encoder vocab_size");

  // encode everything once
  std::vector<MrcInstance> instances = build_instances(train_corpus, registry);
  std::vector<EncodeResult> encoded;
  encoded.reserve(instances.size());
  for (const auto& inst : instances) encoded.push_back(encode_instance(inst, vocab, run.max_len));

  const auto& labels = train_corpus.label_set.labels;
  std::vector<std::size_t> prompt_lengths;
  for (const auto& label : labels)
    prompt_lengths.push_back(wordpiece_tokenize(registry.for_label(label).text, vocab).size());

  ModelParams params;
  if (run.initial_params) {
    if (!(run.initial_params->config == run.encoder))
      throw ValidationError("initial parameters disagree with the encoder config");
    if (run.initial_params->labels != labels)
      throw ValidationError("initial parameters were built for a different label set");
    params = clone_params(*run.initial_params);
  } else {
    Rng init_rng(run.train.seed, 1);
    params = init_params(run.encoder, labels, prompt_lengths, init_rng);
    if (run.prompt_mode == PromptMode::Soft)
      init_soft_prompts_from_templates(params, registry, vocab);
  }
  for (const auto& label : labels)
    params.template_digests[label] = fnv1a_hex(registry.for_label(label).text);

  OptimizerState opt = init_optimizer(params);

  TrainResult result;
  double best_metric = -1.0;
  std::size_t epochs_since_improvement = 0;

  std::vector<std::size_t> order(instances.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= run.train.max_epochs; ++epoch) {
    Rng shuffle_rng = Rng(run.train.seed, 3).split(epoch);
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(i)]);

    double sum_start = 0, sum_end = 0, sum_match = 0, sum_total = 0;
    std::size_t batch_index = 0;
    for (std::size_t b = 0; b < order.size(); b += run.train.batch_size, ++batch_index) {
      const std::size_t b_end = std::min(order.size(), b + run.train.batch_size);
      Rng drop_rng = Rng(run.train.seed, 2).split(epoch * 1000003 + batch_index);
      ModelGraph graph(params);
      std::vector<NodePtr> totals;
      for (std::size_t q = b; q < b_end; ++q) {
        const EncodeResult& er = encoded[order[q]];
        NodePtr x = embed_input(graph, er.input, run.prompt_mode, er.input.label, drop_rng, true);
        NodePtr e = encoder_forward(graph, x, er.input.attention_mask, drop_rng, true);
        SpanScoresNodes sc = span_head_forward(graph, e, er.input, run.max_span_len);
        LossNodes loss = compute_loss(sc, er.answers, run.train);
        if (!std::isfinite(loss.values.total))
          throw NonFiniteLossError("non-finite loss at epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(batch_index) + ", instance " +
                                   er.input.sentence_id + "/" + er.input.label);
        sum_start += loss.values.start_loss;
        sum_end += loss.values.end_loss;
        sum_match += loss.values.match_loss;
        sum_total += loss.values.total;
        totals.push_back(loss.total);
      }
      NodePtr batch_loss = totals[0];
      for (std::size_t q = 1; q < totals.size(); ++q) batch_loss = add(batch_loss, totals[q]);
      batch_loss = scale(batch_loss, 1.0 / static_cast<double>(totals.size()));
      backward(batch_loss);

      std::vector<Tensor> grads;
      grads.reserve(params.entries.size());
      for (const auto& e : params.entries) grads.push_back(graph.grad_of(e.name));
      adam_step(params, grads, opt, run.train);
    }

    const double n = static_cast<double>(instances.size());
    EpochLog log;
    log.epoch = epoch;
    log.start_loss = sum_start / n;
    log.end_loss = sum_end / n;
    log.match_loss = sum_match / n;
    log.total_loss = sum_total / n;

    EvalResult dev = evaluate_model(params, dev_corpus, registry, vocab, run.prompt_mode,
                                    run.max_len, run.thresholds, run.max_span_len);
    log.dev_precision = dev.report.micro.precision;
    log.dev_recall = dev.report.micro.recall;
    log.dev_f1 = dev.report.micro.f1;
    result.log.push_back(log);
    log_info("epoch " + std::to_string(epoch) + " loss " + std::to_string(log.total_loss) +
             " dev_f1 " + std::to_string(log.dev_f1));

    const double metric =
        run.train.selection_metric == "precision" ? log.dev_precision : log.dev_f1;
    if (metric > best_metric) {
      best_metric = metric;
      result.best_params = clone_params(params);
      result.best_epoch = epoch;
      epochs_since_improvement = 0;
    } else {
      ++epochs_since_improvement;
      if (run.train.patience > 0 && epochs_since_improvement >= run.train.patience) break;
    }
  }
  return result;
}

std::string epoch_log_to_jsonl(const std::vector<EpochLog>& log) {
  std::ostringstream out;
  for (const auto& e : log) {
    json j = {{"epoch", e.epoch},
              {"start_loss", e.start_loss},
              {"end_loss", e.end_loss},
              {"match_loss", e.match_loss},
              {"total_loss", e.total_loss},
              {"dev_precision", e.dev_precision},
              {"dev_recall", e.dev_recall},
              {"dev_f1", e.dev_f1}};
    out << j.dump() << "\n";
  }
  return out.str();
}

namespace {

// Fixed two-instance batch over a tiny vocabulary; used by gradcheck only.
struct CheckFixture {
  Vocabulary vocab;
  std::vector<MrcInstance> instances;
  std::vector<EncodeResult> encoded;
  std::vector<std::string> labels;
  std::vector<std::size_t> prompt_lengths;
  PromptRegistry registry;
};

CheckFixture make_fixture(const EncoderConfig& config, std::size_t max_len) {
  CheckFixture f;
  f.vocab = make_vocab({"find", "all", "drug", "adr", "entities", "in", "the", "text",
                        "aspirin", "causes", "nausea", "and", "head", "##ache", "mild"});
  if (f.vocab.size() > config.vocab_size)
    throw ValidationError("gradcheck fixture vocabulary exceeds config vocab_size");
  f.labels = {"adr", "drug"};
  LabelSet ls{f.labels};
  f.registry = default_registry(ls);

  const std::string text = "aspirin causes mild nausea and headache";
  MrcInstance drug;
  drug.sentence_id = "g0";
  drug.label = "drug";
  drug.prompt_text = f.registry.for_label("drug").text;
  drug.context_text = text;
  drug.answers = {{0, 7}};  // "aspirin"
  MrcInstance adr;
  adr.sentence_id = "g0";
  adr.label = "adr";
  adr.prompt_text = f.registry.for_label("adr").text;
  adr.context_text = text;
  adr.answers = {{20, 26}, {31, 39}};  // "nausea", "headache"
  f.instances = {drug, adr};
  for (const auto& inst : f.instances)
    f.encoded.push_back(encode_instance(inst, f.vocab, max_len));
  for (const auto& label : f.labels)
    f.prompt_lengths.push_back(
        wordpiece_tokenize(f.registry.for_label(label).text, f.vocab).size());
  return f;
}

}  // namespace

GradCheckReport gradient_check_model(
    const EncoderConfig& config, std::uint64_t seed, double tolerance,
    const std::function<void(const std::string& group, Tensor& grad)>& tamper) {
  EncoderConfig cfg = config;
  cfg.dropout_prob = 0.0;  // keep the loss deterministic
  cfg.validate();

  const std::size_t max_len = 32;
  const std::size_t max_span_len = 8;
  CheckFixture fix = make_fixture(cfg, max_len);

  Rng init_rng(seed, 11);
  ModelParams params = init_params(cfg, fix.labels, fix.prompt_lengths, init_rng);
  init_soft_prompts_from_templates(params, fix.registry, fix.vocab);

  TrainConfig tc;  // only the loss weights matter here
  Rng unused(0, 0);

  auto loss_graph = [&](ModelGraph& graph) {
    std::vector<NodePtr> totals;
    for (const auto& er : fix.encoded) {
      NodePtr x = embed_input(graph, er.input, PromptMode::Soft, er.input.label, unused, false);
      NodePtr e = encoder_forward(graph, x, er.input.attention_mask, unused, false);
      SpanScoresNodes sc = span_head_forward(graph, e, er.input, max_span_len);
      totals.push_back(compute_loss(sc, er.answers, tc).total);
    }
    NodePtr total = add(totals[0], totals[1]);
    return scale(total, 0.5);
  };
  auto loss_value = [&]() {
    ModelGraph graph(params);
    return loss_graph(graph)->value.at(0, 0);
  };

  ModelGraph graph(params);
  backward(loss_graph(graph));

  std::map<std::string, Tensor> analytic;
  for (const auto& e : params.entries) {
    Tensor g = graph.grad_of(e.name);
    if (tamper) {
      tamper(e.group, g);
    }
    analytic[e.name] = g;
  }

  const double h = 1e-5;
  Rng pick(seed, 13);
  GradCheckReport report;
  report.tolerance = tolerance;
  report.pass = true;
  for (const auto& group : params.groups()) {
    std::vector<std::pair<std::size_t, std::size_t>> coords;  // (entry idx, flat idx)
    std::vector<std::size_t> members;
    for (std::size_t k = 0; k < params.entries.size(); ++k)
      if (params.entries[k].group == group) members.push_back(k);
    std::size_t group_size = 0;
    for (std::size_t k : members) group_size += params.entries[k].value.size();
    const std::size_t want = std::min<std::size_t>(20, group_size);
    std::set<std::pair<std::size_t, std::size_t>> seen;
    while (coords.size() < want) {
      std::size_t flat = pick.uniform_int(group_size);
      std::size_t k = 0;
      for (std::size_t m : members) {
        if (flat < params.entries[m].value.size()) {
          k = m;
          break;
        }
        flat -= params.entries[m].value.size();
      }
      if (seen.insert({k, flat}).second) coords.emplace_back(k, flat);
    }

    GroupCheck gc;
    gc.group = group;
    gc.coords_checked = coords.size();
    for (const auto& [k, flat] : coords) {
      double* slot = params.entries[k].value.ptr() + flat;
      const double orig = *slot;
      *slot = orig + h;
      const double lp = loss_value();
      *slot = orig - h;
      const double lm = loss_value();
      *slot = orig;
      const double fd = (lp - lm) / (2.0 * h);
      const double an = analytic[params.entries[k].name].ptr()[flat];
      const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-3});
      gc.max_rel_err = std::max(gc.max_rel_err, rel);
    }
    gc.pass = gc.max_rel_err <= tolerance;
    if (!gc.pass) report.pass = false;
    report.groups.push_back(gc);
  }
  return report;
}

}  // namespace pbmrc
