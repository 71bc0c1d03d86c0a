#include <doctest.h>

#include <cmath>

#include "pbmrc/synthetic.hpp"
#include "pbmrc/training.hpp"
#include "test_support.hpp"

using namespace pbmrc;

namespace {

struct LossFixture {
  Vocabulary vocab;
  ModelParams params;
  EncodeResult enc;
  ModelGraph graph;
  SpanScoresNodes nodes;

  explicit LossFixture(std::size_t max_span_len = 4)
      : vocab(make_vocab({"find", "X", "pain", "now", "mild"})),
        params([] {
          Rng rng(9, 1);
          return init_params(desk_config(), {"X"}, {2}, rng);
        }()),
        enc([this] {
          MrcInstance inst;
          inst.label = "X";
          inst.prompt_text = "find X";
          inst.context_text = "mild pain now";
          return encode_instance(inst, vocab, 16);
        }()),
        graph(params),
        nodes([this, max_span_len] {
          Rng rng(0, 0);
          NodePtr x = embed_input(graph, enc.input, PromptMode::Hard, "X", rng, false);
          NodePtr e = encoder_forward(graph, x, enc.input.attention_mask, rng, false);
          return span_head_forward(graph, e, enc.input, max_span_len);
        }()) {}
};

}  // namespace

TEST_CASE("loss on zeroed heads equals ln 2 per component") {
  LossFixture f;
  f.params.get("head.start_w").fill(0.0);
  f.params.get("head.start_b").fill(0.0);
  f.params.get("head.end_w").fill(0.0);
  f.params.get("head.end_b").fill(0.0);
  f.params.get("head.match_w").fill(0.0);
  f.params.get("head.match_b").fill(0.0);
  ModelGraph g(f.params);
  Rng rng(0, 0);
  NodePtr x = embed_input(g, f.enc.input, PromptMode::Hard, "X", rng, false);
  NodePtr e = encoder_forward(g, x, f.enc.input.attention_mask, rng, false);
  auto nodes = span_head_forward(g, e, f.enc.input, 4);

  TrainConfig cfg;
  auto loss = compute_loss(nodes, f.enc.answers, cfg);
  CHECK(loss.values.start_loss == doctest::Approx(std::log(2.0)));
  CHECK(loss.values.end_loss == doctest::Approx(std::log(2.0)));
  CHECK(loss.values.match_loss == doctest::Approx(std::log(2.0)));
  CHECK(loss.values.total == doctest::Approx(3.0 * std::log(2.0)));

  SUBCASE("gamma scales the match term") {
    TrainConfig g0;
    g0.loss_gamma = 0.0;
    auto l0 = compute_loss(nodes, f.enc.answers, g0);
    CHECK(l0.values.total == doctest::Approx(2.0 * std::log(2.0)));
    TrainConfig g2;
    g2.loss_alpha = 2.0;
    auto l2 = compute_loss(nodes, f.enc.answers, g2);
    CHECK(l2.values.total == doctest::Approx(4.0 * std::log(2.0)));
  }
}

TEST_CASE("loss target bookkeeping") {
  LossFixture f;
  TrainConfig cfg;
  // one gold answer: tokens for "pain" inside "mild pain now"
  std::vector<EncodedAnswer> gold = {{f.enc.input.context_range.first + 1,
                                      f.enc.input.context_range.first + 1, true}};
  auto loss = compute_loss(f.nodes, gold, cfg);
  CHECK(loss.values.positives_start == 1);
  CHECK(loss.values.negatives_start == f.enc.input.context_len() - 1);
  CHECK(loss.values.positives_match == 1);
  CHECK(loss.values.negatives_match == f.nodes.pairs.size() - 1);

  // no answers: everything negative, loss still finite
  auto empty = compute_loss(f.nodes, {}, cfg);
  CHECK(empty.values.positives_start == 0);
  CHECK(std::isfinite(empty.values.total));
  CHECK(empty.total->value.at(0, 0) == doctest::Approx(empty.values.total));
}

TEST_CASE("loss gradient vs finite differences") {
  TrainConfig cfg;
  cfg.loss_alpha = 1.3;
  cfg.loss_beta = 0.7;
  cfg.loss_gamma = 2.0;
  LossFixture f;
  std::vector<EncodedAnswer> gold = {
      {f.enc.input.context_range.first, f.enc.input.context_range.first + 1, true}};

  ModelGraph g(f.params);
  Rng rng(0, 0);
  NodePtr x = embed_input(g, f.enc.input, PromptMode::Hard, "X", rng, false);
  NodePtr e = encoder_forward(g, x, f.enc.input.attention_mask, rng, false);
  auto nodes = span_head_forward(g, e, f.enc.input, 4);
  auto loss = compute_loss(nodes, gold, cfg);
  backward(loss.total);

  const double h = 1e-5;
  Rng pick(14, 2);
  for (const char* name : {"head.start_w", "head.match_w", "embed.token", "layer1.ffn_w2"}) {
    Tensor analytic = g.grad_of(name);
    Tensor& value = f.params.get(name);
    for (int trial = 0; trial < 8; ++trial) {
      const std::size_t i = pick.uniform_int(value.size());
      const double orig = value.ptr()[i];
      auto eval = [&]() {
        ModelGraph gf(f.params);
        NodePtr xf = embed_input(gf, f.enc.input, PromptMode::Hard, "X", rng, false);
        NodePtr ef = encoder_forward(gf, xf, f.enc.input.attention_mask, rng, false);
        auto nf = span_head_forward(gf, ef, f.enc.input, 4);
        return compute_loss(nf, gold, cfg).total->value.at(0, 0);
      };
      value.ptr()[i] = orig + h;
      const double lp = eval();
      value.ptr()[i] = orig - h;
      const double lm = eval();
      value.ptr()[i] = orig;
      const double fd = (lp - lm) / (2 * h);
      const double rel =
          std::abs(analytic.ptr()[i] - fd) / std::max({std::abs(analytic.ptr()[i]), std::abs(fd), 1e-3});
      CHECK(rel <= 1e-4);
    }
  }
}

TEST_CASE("adam first step moves by lr along the gradient sign") {
  Rng rng(21, 1);
  auto params = init_params(desk_config(), {"X"}, {2}, rng);
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.grad_clip_norm = 1e18;  // effectively off
  cfg.weight_decay = 0.0;

  std::vector<Tensor> grads;
  for (const auto& e : params.entries) {
    Tensor g(e.value.rows(), e.value.cols(), 0.0);
    grads.push_back(g);
  }
  // a single constant gradient on one coordinate
  const std::size_t idx = params.index.at("head.start_w");
  grads[idx].at(0, 0) = 0.5;

  auto state = init_optimizer(params);
  const double before = params.get("head.start_w").at(0, 0);
  adam_step(params, grads, state, cfg);
  // with bias correction the first update is exactly -lr * sign(g) up to eps
  CHECK(params.get("head.start_w").at(0, 0) ==
        doctest::Approx(before - 0.1).epsilon(1e-6));
  CHECK(state.step == 1);

  // untouched coordinates stay put
  CHECK(params.get("head.end_w").at(0, 0) == doctest::Approx(params.get("head.end_w").at(0, 0)));
}

TEST_CASE("gradient clipping rescales the global norm") {
  Rng rng(22, 1);
  auto params = init_params(desk_config(), {"X"}, {2}, rng);
  TrainConfig cfg;
  cfg.learning_rate = 1.0;
  cfg.grad_clip_norm = 1.0;

  std::vector<Tensor> g1, g2;
  for (const auto& e : params.entries) {
    g1.emplace_back(e.value.rows(), e.value.cols(), 0.0);
    g2.emplace_back(e.value.rows(), e.value.cols(), 0.0);
  }
  const std::size_t idx = params.index.at("head.start_b");
  g1[idx].at(0, 0) = 100.0;
  g2[idx].at(0, 0) = 1e6;  // same direction, much larger norm

  auto pa = params;
  for (auto& e : pa.entries) e.value = e.value.clone();
  auto pb = params;
  for (auto& e : pb.entries) e.value = e.value.clone();
  auto sa = init_optimizer(pa);
  auto sb = init_optimizer(pb);
  adam_step(pa, g1, sa, cfg);
  adam_step(pb, g2, sb, cfg);
  // both collapse to a unit-norm gradient, so the updates agree
  CHECK(pa.get("head.start_b").at(0, 0) == doctest::Approx(pb.get("head.start_b").at(0, 0)));
}

TEST_CASE("freeze policies gate exactly the right groups") {
  Rng rng(23, 1);
  auto params = init_params(desk_config(), {"A", "B"}, {2, 2}, rng);
  for (const auto& e : params.entries) {
    CHECK(entry_trainable(e, FreezePolicy::Full));
    const bool is_prompt = e.group == "soft_prompt_bank";
    const bool is_head = e.group == "span_start_head" || e.group == "span_end_head" ||
                         e.group == "span_match_head";
    CHECK(entry_trainable(e, FreezePolicy::PromptOnly) == is_prompt);
    CHECK(entry_trainable(e, FreezePolicy::PromptAndHeads) == (is_prompt || is_head));
  }
  CHECK(freeze_policy_from_string("full") == FreezePolicy::Full);
  CHECK(freeze_policy_from_string("prompt_only") == FreezePolicy::PromptOnly);
  CHECK(freeze_policy_from_string("prompt_and_heads") == FreezePolicy::PromptAndHeads);
  CHECK_THROWS_AS(freeze_policy_from_string("nope"), ValidationError);

  SUBCASE("frozen entries are bitwise untouched by adam_step") {
    TrainConfig cfg;
    cfg.freeze = FreezePolicy::PromptOnly;
    cfg.weight_decay = 0.01;
    std::vector<Tensor> grads;
    for (const auto& e : params.entries) grads.emplace_back(e.value.rows(), e.value.cols(), 1.0);
    std::vector<Tensor> before;
    for (const auto& e : params.entries) before.push_back(e.value.clone());
    auto state = init_optimizer(params);
    adam_step(params, grads, state, cfg);
    for (std::size_t i = 0; i < params.entries.size(); ++i) {
      const bool frozen = !entry_trainable(params.entries[i], cfg.freeze);
      CHECK(params.entries[i].value.bitwise_equal(before[i]) == frozen);
    }
  }
}

TEST_CASE("model gradient check passes on the desk config") {
  auto report = gradient_check_model(desk_config(), 42);
  CHECK(report.pass);
  for (const auto& g : report.groups) {
    INFO(g.group);
    CHECK(g.pass);
    CHECK(g.coords_checked >= 20);
    CHECK(g.max_rel_err <= report.tolerance);
  }

  SUBCASE("a corrupted backward rule is caught") {
    auto bad = gradient_check_model(desk_config(), 42, 1e-4,
                                    [](const std::string& group, Tensor& grad) {
                                      if (group != "span_end_head") return;
                                      for (std::size_t i = 0; i < grad.size(); ++i)
                                        grad.ptr()[i] = grad.ptr()[i] * 1.5 + 0.01;
                                    });
    CHECK(!bad.pass);
    bool end_failed = false, others_ok = true;
    for (const auto& g : bad.groups) {
      if (g.group == "span_end_head")
        end_failed = !g.pass;
      else
        others_ok = others_ok && g.pass;
    }
    CHECK(end_failed);
    CHECK(others_ok);
  }
}

TEST_CASE("one epoch of training runs and logs") {
  auto corpus = make_synthetic_corpus(7, 12);
  auto vocab = make_synthetic_vocab();
  auto reg = make_synthetic_registry();
  auto split = split_corpus(corpus, 0.75, 0.25, 0.0, 7);

  TrainRun run;
  run.encoder = desk_config();
  run.encoder.dropout_prob = 0.0;
  run.train.max_epochs = 1;
  run.train.seed = 7;
  auto result = train(split.train, split.dev, reg, vocab, run);
  REQUIRE(result.log.size() == 1);
  CHECK(result.best_epoch == 1);
  CHECK(std::isfinite(result.log[0].total_loss));
  CHECK(result.log[0].epoch == 1);

  std::string jsonl = epoch_log_to_jsonl(result.log);
  CHECK(jsonl.find("\"epoch\":") != std::string::npos);
  CHECK(jsonl.find("\"dev_f1\":") != std::string::npos);
}

TEST_CASE("training loss decreases while memorizing a tiny corpus") {
  auto corpus = make_synthetic_corpus(11, 6);
  auto vocab = make_synthetic_vocab();
  auto reg = make_synthetic_registry();

  TrainRun run;
  run.encoder = desk_config();
  run.encoder.dropout_prob = 0.0;
  run.train.max_epochs = 12;
  run.train.learning_rate = 3e-4;
  run.train.seed = 11;
  auto result = train(corpus, corpus, reg, vocab, run);
  REQUIRE(result.log.size() == 12);
  CHECK(result.log.back().total_loss < result.log.front().total_loss);
}

TEST_CASE("training is bitwise deterministic") {
  auto corpus = make_synthetic_corpus(5, 8);
  auto vocab = make_synthetic_vocab();
  auto reg = make_synthetic_registry();
  auto split = split_corpus(corpus, 0.75, 0.25, 0.0, 5);

  TrainRun run;
  run.encoder = desk_config();
  run.train.max_epochs = 3;
  run.train.seed = 5;
  auto r1 = train(split.train, split.dev, reg, vocab, run);
  auto r2 = train(split.train, split.dev, reg, vocab, run);
  CHECK(epoch_log_to_jsonl(r1.log) == epoch_log_to_jsonl(r2.log));
  CHECK(save_params(r1.best_params) == save_params(r2.best_params));
}

TEST_CASE("warm-started training picks up where the checkpoint left off") {
  auto corpus = make_synthetic_corpus(17, 8);
  auto vocab = make_synthetic_vocab();
  auto reg = make_synthetic_registry();

  TrainRun run;
  run.encoder = desk_config();
  run.encoder.dropout_prob = 0.0;
  run.train.max_epochs = 40;
  run.train.seed = 17;
  auto first = train(corpus, corpus, reg, vocab, run);
  double first_best = 0;
  for (const auto& l : first.log) first_best = std::max(first_best, l.dev_f1);

  TrainRun resumed = run;
  resumed.train.max_epochs = 1;
  resumed.train.learning_rate = 1e-6;
  resumed.initial_params = &first.best_params;
  auto second = train(corpus, corpus, reg, vocab, resumed);
  // with a tiny step the warm start keeps the memorized behavior
  CHECK(second.log[0].dev_f1 == doctest::Approx(first_best).epsilon(1e-6));

  SUBCASE("config mismatch is rejected") {
    TrainRun bad = resumed;
    bad.encoder.num_layers = 1;
    CHECK_THROWS_AS(train(corpus, corpus, reg, vocab, bad), ValidationError);
  }
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  TrainConfig cfg2;
  cfg2.selection_metric = "bleu";
  CHECK_THROWS_AS(cfg2.validate(), ValidationError);
  TrainConfig cfg3;
  cfg3.batch_size = 0;
  CHECK_THROWS_AS(cfg3.validate(), ValidationError);
}
