#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pbmrc/evaluation.hpp"
#include "pbmrc/model.hpp"

namespace pbmrc {

enum class FreezePolicy { Full, PromptOnly, PromptAndHeads };

FreezePolicy freeze_policy_from_string(const std::string& s);
std::string to_string(FreezePolicy p);

struct TrainConfig {
  std::size_t max_epochs = 30;
  std::size_t batch_size = 8;
  double learning_rate = 3e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  double grad_clip_norm = 1.0;
  FreezePolicy freeze = FreezePolicy::Full;
  double loss_alpha = 1.0, loss_beta = 1.0, loss_gamma = 1.0;
  std::string selection_metric = "f1";  // or "precision"
  std::size_t patience = 0;             // 0 disables early stopping
  std::uint64_t seed = 42;

  void validate() const;
};

struct LossBreakdown {
  double start_loss = 0, end_loss = 0, match_loss = 0, total = 0;
  std::size_t positives_start = 0, negatives_start = 0;
  std::size_t positives_end = 0, negatives_end = 0;
  std::size_t positives_match = 0, negatives_match = 0;
};

struct LossNodes {
  NodePtr total;  // differentiable [1x1]
  LossBreakdown values;
};

// BCE-with-logits per head over unmasked context positions / banded pairs;
// total = alpha*start + beta*end + gamma*match. Zero-answer instances give
// all-negative targets.
LossNodes compute_loss(const SpanScoresNodes& scores, const std::vector<EncodedAnswer>& gold,
                       const TrainConfig& cfg);

struct OptimizerState {
  std::vector<Tensor> m, v;  // aligned with ModelParams::entries
  std::size_t step = 0;
};

OptimizerState init_optimizer(const ModelParams& params);
bool entry_trainable(const ParamEntry& entry, FreezePolicy policy);

// Adam with bias correction and decoupled weight decay (weight matrices
// only). Clips the global norm of trainable gradients to cfg.grad_clip_norm
// first. Frozen groups are skipped entirely.
void adam_step(ModelParams& params, const std::vector<Tensor>& grads, OptimizerState& state,
               const TrainConfig& cfg);

struct NonFiniteLossError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double start_loss = 0, end_loss = 0, match_loss = 0, total_loss = 0;
  double dev_precision = 0, dev_recall = 0, dev_f1 = 0;
};

struct TrainResult {
  ModelParams best_params;
  std::size_t best_epoch = 0;
  std::vector<EpochLog> log;
};

struct TrainRun {
  EncoderConfig encoder;
  TrainConfig train;
  PromptMode prompt_mode = PromptMode::Hard;
  std::size_t max_len = 64;
  DecodeThresholds thresholds;
  std::size_t max_span_len = 16;
  // Warm start: taken verbatim (deep-copied) instead of fresh initialization.
  // Must match the encoder config and the corpus label set. Typical use is
  // prompt tuning against a frozen, previously trained encoder.
  const ModelParams* initial_params = nullptr;
};

// Epoch loop with seeded shuffling, per-epoch dev evaluation, best-model
// selection (ties go to the earlier epoch), and optional early stopping.
TrainResult train(const AnnotatedCorpus& train_corpus, const AnnotatedCorpus& dev_corpus,
                  const PromptRegistry& registry, const Vocabulary& vocab, const TrainRun& run);

std::string epoch_log_to_jsonl(const std::vector<EpochLog>& log);

struct GroupCheck {
  std::string group;
  double max_rel_err = 0.0;
  std::size_t coords_checked = 0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GroupCheck> groups;
  double tolerance = 1e-4;
  bool pass = false;
};

// Central finite differences (h = 1e-5) vs analytic gradients on a small
// random batch, >= 20 sampled coordinates per parameter group, dropout
// disabled. The tamper hook (test fixture) may corrupt analytic gradients
// of one group to verify the check catches faults.
GradCheckReport gradient_check_model(
    const EncoderConfig& config, std::uint64_t seed, double tolerance = 1e-4,
    const std::function<void(const std::string& group, Tensor& grad)>& tamper = nullptr);

}  // namespace pbmrc
