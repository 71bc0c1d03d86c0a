#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "pbmrc/autodiff.hpp"
#include "pbmrc/prompting.hpp"
#include "pbmrc/rng.hpp"
#include "pbmrc/tokenizer.hpp"

namespace pbmrc {

struct EncoderConfig {
  std::size_t hidden_size = 768;
  std::size_t num_layers = 12;
  std::size_t num_heads = 12;
  std::size_t intermediate_size = 0;  // 0 -> 4 * hidden_size
  std::size_t vocab_size = 28996;
  std::size_t max_position_embeddings = 512;
  double layer_norm_eps = 1e-12;
  double dropout_prob = 0.1;
  std::size_t num_segments = 2;

  std::size_t intermediate() const {
    return intermediate_size ? intermediate_size : 4 * hidden_size;
  }
  void validate() const;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

EncoderConfig desk_config();          // d=32, 2 layers, 2 heads
EncoderConfig table1_base_config();   // 768 / 12 / 12
EncoderConfig table1_large_config();  // 1024 / 24 / 16

struct ParamEntry {
  std::string name;
  std::string group;   // gradcheck / freeze granularity
  Tensor value;
  bool decay = false;  // decoupled weight decay applies
};

// All learnable arrays, in a fixed named order. Soft-prompt matrices are
// entries named "soft_prompt.<label>" with one row per prompt token.
struct ModelParams {
  EncoderConfig config;
  std::vector<std::string> labels;
  std::map<std::string, std::string> template_digests;
  std::vector<ParamEntry> entries;
  std::unordered_map<std::string, std::size_t> index;

  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const { return index.count(name) != 0; }
  Tensor& add(const std::string& name, const std::string& group, std::size_t rows,
              std::size_t cols, bool decay);
  std::size_t scalar_count() const;
  std::vector<std::string> groups() const;  // distinct, in entry order
};

// Deep copy: entry tensors get their own buffers.
ModelParams clone_params(const ModelParams& params);

// Exact number of scalars the layout above produces for this config, with
// one soft-prompt row per prompt token per label.
std::size_t expected_param_count(const EncoderConfig& config,
                                 const std::vector<std::size_t>& prompt_lengths);

// Weights ~ Normal(0, 0.02) truncated at +/-2 sigma; biases 0; gains 1.
// prompt_lengths[i] is the tokenized length of labels[i]'s template.
ModelParams init_params(const EncoderConfig& config, const std::vector<std::string>& labels,
                        const std::vector<std::size_t>& prompt_lengths, Rng& rng);

// Overwrites each soft-prompt matrix with the token-embedding rows of the
// label's hard template, making Soft mode start out equivalent to Hard.
void init_soft_prompts_from_templates(ModelParams& params, const PromptRegistry& registry,
                                      const Vocabulary& vocab);

// Per-step leaf cache so each parameter appears once in the graph.
struct ModelGraph {
  explicit ModelGraph(const ModelParams& params) : params_(&params) {}
  NodePtr param(const std::string& name);
  const ModelParams& params() const { return *params_; }
  // Gradient of a leaf after backward(); zeros if never touched.
  Tensor grad_of(const std::string& name) const;

 private:
  const ModelParams* params_;
  std::unordered_map<std::string, NodePtr> leaves_;
};

// Token + position + segment embeddings, Soft mode substituting the
// label's soft-prompt rows at prompt positions, then layer-norm + dropout.
NodePtr embed_input(ModelGraph& g, const EncodedInput& enc, PromptMode mode,
                    const std::string& label, Rng& rng, bool training);

// Post-layer-norm transformer stack; padded keys are masked additively.
NodePtr encoder_forward(ModelGraph& g, const NodePtr& x, const std::vector<int>& attention_mask,
                        Rng& rng, bool training);

struct SpanScoresNodes {
  NodePtr start_logits;  // [L x 1]
  NodePtr end_logits;    // [L x 1]
  NodePtr match_logits;  // [P x 1], one row per banded pair
  std::vector<std::pair<int, int>> pairs;
  std::pair<std::size_t, std::size_t> context_range;
  std::size_t length = 0;
  std::size_t max_span_len = 0;
};

// Plain values with everything outside the context / band masked to -inf.
struct SpanScores {
  std::vector<double> start_logits;
  std::vector<double> end_logits;
  std::vector<std::vector<double>> match_logits;  // L x L
  std::pair<std::size_t, std::size_t> context_range;
  std::size_t max_span_len = 0;
};

SpanScoresNodes span_head_forward(ModelGraph& g, const NodePtr& e, const EncodedInput& enc,
                                  std::size_t max_span_len);
SpanScores materialize_scores(const SpanScoresNodes& nodes);

struct DecodeThresholds {
  double start = 0.5, end = 0.5, match = 0.5;
};

struct SpanPrediction {
  std::size_t tok_start = 0, tok_end = 0;    // inclusive, absolute
  std::size_t char_start = 0, char_end = 0;  // end-exclusive
  std::string label;
  double score = 0.0;  // geometric mean of the three probabilities

  friend bool operator==(const SpanPrediction&, const SpanPrediction&) = default;
};

// Every (i, j) in the context band whose start/end/match probabilities all
// clear their thresholds; sorted by (tok_start, tok_end). Overlapping and
// nested outputs are permitted.
std::vector<SpanPrediction> decode_spans(const SpanScores& scores, const EncodedInput& enc,
                                         const std::string& label,
                                         const DecodeThresholds& thresholds,
                                         std::size_t max_span_len);

// Full pipeline for one instance (no gradients), shared by predict/evaluate.
std::vector<SpanPrediction> predict_instance(const ModelParams& params, const MrcInstance& inst,
                                             const Vocabulary& vocab, PromptMode mode,
                                             std::size_t max_len,
                                             const DecodeThresholds& thresholds,
                                             std::size_t max_span_len);

// Checkpoint container: "PBMRC1", 4-byte LE JSON length, JSON metadata
// (format version, config, labels, template digests, array manifest),
// then raw little-endian float64 arrays in manifest order.
std::string save_params(const ModelParams& params);
ModelParams load_params(const std::string& bytes);
void save_params_file(const ModelParams& params, const std::string& path);
ModelParams load_params_file(const std::string& path);

}  // namespace pbmrc
