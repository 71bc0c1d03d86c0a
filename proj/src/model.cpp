#include "pbmrc/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <set>

#include <json.hpp>

namespace pbmrc {

using nlohmann::json;

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kMaskValue = -1e9;
constexpr char kMagic[] = "PBMRC1";
constexpr int kFormatVersion = 1;
}  // namespace

void EncoderConfig::validate() const {
  if (hidden_size == 0 || num_heads == 0 || vocab_size == 0 || max_position_embeddings == 0)
    throw ValidationError("encoder config: extents must be positive");
  if (hidden_size % num_heads != 0)
    throw ValidationError("encoder config: hidden_size not divisible by num_heads");
  if (layer_norm_eps <= 0) throw ValidationError("encoder config: layer_norm_eps must be > 0");
  if (dropout_prob < 0 || dropout_prob >= 1)
    throw ValidationError("encoder config: dropout_prob must be in [0,1)");
  if (num_segments != 2) throw ValidationError("encoder config: num_segments must be 2");
}

EncoderConfig desk_config() {
  EncoderConfig c;
  c.hidden_size = 32;
  c.num_layers = 2;
  c.num_heads = 2;
  c.intermediate_size = 0;
  c.vocab_size = 64;
  c.max_position_embeddings = 64;
  c.dropout_prob = 0.0;
  return c;
}

EncoderConfig table1_base_config() {
  EncoderConfig c;  // defaults are the base profile
  return c;
}

EncoderConfig table1_large_config() {
  EncoderConfig c;
  c.hidden_size = 1024;
  c.num_layers = 24;
  c.num_heads = 16;
  return c;
}

Tensor& ModelParams::get(const std::string& name) {
  auto it = index.find(name);
  if (it == index.end()) throw ValidationError("unknown parameter: " + name);
  return entries[it->second].value;
}

const Tensor& ModelParams::get(const std::string& name) const {
  auto it = index.find(name);
  if (it == index.end()) throw ValidationError("unknown parameter: " + name);
  return entries[it->second].value;
}

Tensor& ModelParams::add(const std::string& name, const std::string& group, std::size_t rows,
                         std::size_t cols, bool decay) {
  if (index.count(name)) throw ValidationError("duplicate parameter: " + name);
  index[name] = entries.size();
  entries.push_back({name, group, Tensor(rows, cols, 0.0), decay});
  return entries.back().value;
}

std::size_t ModelParams::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.value.size();
  return n;
}

std::vector<std::string> ModelParams::groups() const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& e : entries)
    if (seen.insert(e.group).second) out.push_back(e.group);
  return out;
}

ModelParams clone_params(const ModelParams& params) {
  ModelParams out = params;
  for (auto& e : out.entries) e.value = e.value.clone();
  return out;
}

std::size_t expected_param_count(const EncoderConfig& config,
                                 const std::vector<std::size_t>& prompt_lengths) {
  const std::size_t d = config.hidden_size, di = config.intermediate();
  std::size_t n = 0;
  n += config.vocab_size * d;                // token embedding
  n += config.max_position_embeddings * d;   // position embedding
  n += config.num_segments * d;              // segment embedding
  n += 2 * d;                                // embedding layer norm
  n += config.num_layers * (4 * (d * d + d)  // QKVO + biases
                            + 2 * d          // attention layer norm
                            + d * di + di + di * d + d  // FFN
                            + 2 * d);                   // FFN layer norm
  n += 2 * (d + 1);   // start + end heads
  n += 2 * d + 1;     // match head
  for (std::size_t m : prompt_lengths) n += m * d;
  return n;
}

namespace {

void fill_truncated_normal(Tensor& t, Rng& rng) {
  for (std::size_t i = 0; i < t.size(); ++i) t.ptr()[i] = rng.truncated_normal(0.02);
}

void build_layout(ModelParams& p, const std::vector<std::size_t>& prompt_lengths) {
  const EncoderConfig& c = p.config;
  const std::size_t d = c.hidden_size, di = c.intermediate();
  p.add("embed.token", "token_embedding", c.vocab_size, d, true);
  p.add("embed.position", "position_embedding", c.max_position_embeddings, d, true);
  p.add("embed.segment", "segment_embedding", c.num_segments, d, true);
  p.add("embed.ln_gain", "embedding_layer_norm", 1, d, false);
  p.add("embed.ln_bias", "embedding_layer_norm", 1, d, false);
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    const std::string ga = "layer_" + std::to_string(l) + "_attention";
    const std::string gf = "layer_" + std::to_string(l) + "_ffn";
    for (const char* nm : {"q", "k", "v", "o"}) {
      p.add(pre + nm + "_w", ga, d, d, true);
      p.add(pre + nm + "_b", ga, 1, d, false);
    }
    p.add(pre + "attn_ln_gain", ga, 1, d, false);
    p.add(pre + "attn_ln_bias", ga, 1, d, false);
    p.add(pre + "ffn_w1", gf, d, di, true);
    p.add(pre + "ffn_b1", gf, 1, di, false);
    p.add(pre + "ffn_w2", gf, di, d, true);
    p.add(pre + "ffn_b2", gf, 1, d, false);
    p.add(pre + "ffn_ln_gain", gf, 1, d, false);
    p.add(pre + "ffn_ln_bias", gf, 1, d, false);
  }
  p.add("head.start_w", "span_start_head", d, 1, true);
  p.add("head.start_b", "span_start_head", 1, 1, false);
  p.add("head.end_w", "span_end_head", d, 1, true);
  p.add("head.end_b", "span_end_head", 1, 1, false);
  p.add("head.match_w", "span_match_head", 2 * d, 1, true);
  p.add("head.match_b", "span_match_head", 1, 1, false);
  for (std::size_t i = 0; i < p.labels.size(); ++i)
    p.add("soft_prompt." + p.labels[i], "soft_prompt_bank", prompt_lengths[i], d, false);
}

}  // namespace

ModelParams init_params(const EncoderConfig& config, const std::vector<std::string>& labels,
                        const std::vector<std::size_t>& prompt_lengths, Rng& rng) {
  config.validate();
  if (labels.size() != prompt_lengths.size())
    throw ValidationError("init_params: labels/prompt_lengths size mismatch");
  ModelParams p;
  p.config = config;
  p.labels = labels;
  build_layout(p, prompt_lengths);
  for (auto& e : p.entries) {
    const bool is_gain = e.name.ends_with("ln_gain");
    const bool is_bias = e.name.ends_with("_b") || e.name.ends_with("ln_bias") ||
                         e.name.ends_with("ffn_b1") || e.name.ends_with("ffn_b2");
    if (is_gain)
      e.value.fill(1.0);
    else if (!is_bias)
      fill_truncated_normal(e.value, rng);
    // biases stay zero
  }
  return p;
}

void init_soft_prompts_from_templates(ModelParams& params, const PromptRegistry& registry,
                                      const Vocabulary& vocab) {
  const Tensor& tok = params.get("embed.token");
  for (const auto& label : params.labels) {
    const PromptTemplate& tmpl = registry.for_label(label);
    TokenizedText tk = wordpiece_tokenize(tmpl.text, vocab);
    Tensor& s = params.get("soft_prompt." + label);
    if (s.rows() != tk.size())
      throw ValidationError("soft prompt for '" + label + "' has " + std::to_string(s.rows()) +
                            " rows but template tokenizes to " + std::to_string(tk.size()));
    for (std::size_t i = 0; i < tk.size(); ++i)
      for (std::size_t j = 0; j < s.cols(); ++j) s.at(i, j) = tok.at(tk.ids[i], j);
    params.template_digests[label] = fnv1a_hex(tmpl.text);
  }
}

NodePtr ModelGraph::param(const std::string& name) {
  auto it = leaves_.find(name);
  if (it != leaves_.end()) return it->second;
  NodePtr n = leaf(params_->get(name), name);
  leaves_[name] = n;
  return n;
}

Tensor ModelGraph::grad_of(const std::string& name) const {
  auto it = leaves_.find(name);
  if (it != leaves_.end() && !it->second->grad.empty()) return it->second->grad;
  const Tensor& v = params_->get(name);
  return Tensor(v.rows(), v.cols(), 0.0);
}

NodePtr embed_input(ModelGraph& g, const EncodedInput& enc, PromptMode mode,
                    const std::string& label, Rng& rng, bool training) {
  const EncoderConfig& c = g.params().config;
  const std::size_t L = enc.length();
  if (L > c.max_position_embeddings)
    throw ValidationError("sequence length exceeds max_position_embeddings");

  NodePtr tok = embedding_rows(g.param("embed.token"), enc.ids);
  if (mode == PromptMode::Soft) {
    NodePtr s = g.param("soft_prompt." + label);
    if (s->value.rows() != enc.prompt_len())
      throw ValidationError("soft prompt rows (" + std::to_string(s->value.rows()) +
                            ") != prompt length (" + std::to_string(enc.prompt_len()) + ")");
    tok = row_substitute(tok, s, enc.prompt_range.first);
  }
  std::vector<int> pos_ids(L), seg_ids(enc.segment_ids.begin(), enc.segment_ids.end());
  for (std::size_t i = 0; i < L; ++i) pos_ids[i] = static_cast<int>(i);
  NodePtr x = add(tok, embedding_rows(g.param("embed.position"), pos_ids));
  x = add(x, embedding_rows(g.param("embed.segment"), seg_ids));
  x = layer_norm(x, g.param("embed.ln_gain"), g.param("embed.ln_bias"), c.layer_norm_eps);
  return dropout(x, c.dropout_prob, rng, training);
}

NodePtr encoder_forward(ModelGraph& g, const NodePtr& x_in, const std::vector<int>& attention_mask,
                        Rng& rng, bool training) {
  const EncoderConfig& c = g.params().config;
  const std::size_t L = x_in->value.rows();
  const std::size_t d = c.hidden_size, heads = c.num_heads, dh = d / heads;
  if (attention_mask.size() != L) throw ValidationError("attention mask length mismatch");

  // additive mask over keys, shared by all layers and heads
  Tensor key_mask(L, L, 0.0);
  for (std::size_t j = 0; j < L; ++j)
    if (attention_mask[j] == 0)
      for (std::size_t i = 0; i < L; ++i) key_mask.at(i, j) = kMaskValue;

  NodePtr x = x_in;
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    NodePtr q = add_row(matmul(x, g.param(pre + "q_w")), g.param(pre + "q_b"));
    NodePtr k = add_row(matmul(x, g.param(pre + "k_w")), g.param(pre + "k_b"));
    NodePtr v = add_row(matmul(x, g.param(pre + "v_w")), g.param(pre + "v_b"));
    std::vector<NodePtr> ctx;
    for (std::size_t h = 0; h < heads; ++h) {
      NodePtr qh = slice_cols(q, h * dh, (h + 1) * dh);
      NodePtr kh = slice_cols(k, h * dh, (h + 1) * dh);
      NodePtr vh = slice_cols(v, h * dh, (h + 1) * dh);
      NodePtr scores = scale(matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
      NodePtr probs = softmax_rows(add_const(scores, key_mask));
      ctx.push_back(matmul(probs, vh));
    }
    NodePtr attn = add_row(matmul(concat_cols(ctx), g.param(pre + "o_w")), g.param(pre + "o_b"));
    attn = dropout(attn, c.dropout_prob, rng, training);
    x = layer_norm(add(x, attn), g.param(pre + "attn_ln_gain"), g.param(pre + "attn_ln_bias"),
                   c.layer_norm_eps);

    NodePtr h1 = gelu(add_row(matmul(x, g.param(pre + "ffn_w1")), g.param(pre + "ffn_b1")));
    NodePtr h2 = add_row(matmul(h1, g.param(pre + "ffn_w2")), g.param(pre + "ffn_b2"));
    h2 = dropout(h2, c.dropout_prob, rng, training);
    x = layer_norm(add(x, h2), g.param(pre + "ffn_ln_gain"), g.param(pre + "ffn_ln_bias"),
                   c.layer_norm_eps);
  }
  return x;
}

SpanScoresNodes span_head_forward(ModelGraph& g, const NodePtr& e, const EncodedInput& enc,
                                  std::size_t max_span_len) {
  SpanScoresNodes out;
  out.length = e->value.rows();
  out.context_range = enc.context_range;
  out.max_span_len = max_span_len;
  out.start_logits = add_row(matmul(e, g.param("head.start_w")), g.param("head.start_b"));
  out.end_logits = add_row(matmul(e, g.param("head.end_w")), g.param("head.end_b"));
  const auto [lo, hi] = enc.context_range;
  for (std::size_t i = lo; i < hi; ++i)
    for (std::size_t j = i; j < std::min(hi, i + max_span_len); ++j)
      out.pairs.emplace_back(static_cast<int>(i), static_cast<int>(j));
  if (!out.pairs.empty()) {
    out.match_logits =
        add_row(matmul(pair_concat(e, out.pairs), g.param("head.match_w")),
                g.param("head.match_b"));
  }
  return out;
}

SpanScores materialize_scores(const SpanScoresNodes& nodes) {
  SpanScores s;
  s.context_range = nodes.context_range;
  s.max_span_len = nodes.max_span_len;
  const std::size_t L = nodes.length;
  s.start_logits.assign(L, kNegInf);
  s.end_logits.assign(L, kNegInf);
  s.match_logits.assign(L, std::vector<double>(L, kNegInf));
  const auto [lo, hi] = nodes.context_range;
  for (std::size_t i = lo; i < hi; ++i) {
    s.start_logits[i] = nodes.start_logits->value.at(i, 0);
    s.end_logits[i] = nodes.end_logits->value.at(i, 0);
  }
  for (std::size_t k = 0; k < nodes.pairs.size(); ++k) {
    const auto [i, j] = nodes.pairs[k];
    s.match_logits[i][j] = nodes.match_logits->value.at(k, 0);
  }
  return s;
}

std::vector<SpanPrediction> decode_spans(const SpanScores& scores, const EncodedInput& enc,
                                         const std::string& label,
                                         const DecodeThresholds& thresholds,
                                         std::size_t max_span_len) {
  for (double t : {thresholds.start, thresholds.end, thresholds.match})
    if (t <= 0.0 || t >= 1.0) throw ValidationError("decode thresholds must lie in (0,1)");
  std::vector<SpanPrediction> out;
  const auto [lo, hi] = scores.context_range;
  for (std::size_t i = lo; i < hi; ++i) {
    double ps = sigmoid(scores.start_logits[i]);
    if (!(ps > thresholds.start)) continue;
    for (std::size_t j = i; j < std::min(hi, i + max_span_len); ++j) {
      double pe = sigmoid(scores.end_logits[j]);
      if (!(pe > thresholds.end)) continue;
      double pm = sigmoid(scores.match_logits[i][j]);
      if (!(pm > thresholds.match)) continue;
      SpanPrediction p;
      p.tok_start = i;
      p.tok_end = j;
      p.char_start = enc.context_offsets[i - lo].first;
      p.char_end = enc.context_offsets[j - lo].second;
      p.label = label;
      p.score = std::cbrt(ps * pe * pm);
      out.push_back(std::move(p));
    }
  }
  std::sort(out.begin(), out.end(), [](const SpanPrediction& a, const SpanPrediction& b) {
    return a.tok_start < b.tok_start || (a.tok_start == b.tok_start && a.tok_end < b.tok_end);
  });
  return out;
}

std::vector<SpanPrediction> predict_instance(const ModelParams& params, const MrcInstance& inst,
                                             const Vocabulary& vocab, PromptMode mode,
                                             std::size_t max_len,
                                             const DecodeThresholds& thresholds,
                                             std::size_t max_span_len) {
  EncodeResult enc = encode_instance(inst, vocab, max_len);
  ModelGraph g(params);
  Rng rng(0, 0);  // inference: dropout disabled, rng unused
  NodePtr x = embed_input(g, enc.input, mode, inst.label, rng, /*training=*/false);
  NodePtr e = encoder_forward(g, x, enc.input.attention_mask, rng, /*training=*/false);
  SpanScoresNodes nodes = span_head_forward(g, e, enc.input, max_span_len);
  return decode_spans(materialize_scores(nodes), enc.input, inst.label, thresholds, max_span_len);
}

namespace {

void append_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t read_u32_le(const std::string& s, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
  return v;
}

json config_to_json(const EncoderConfig& c) {
  return {{"hidden_size", c.hidden_size},
          {"num_layers", c.num_layers},
          {"num_heads", c.num_heads},
          {"intermediate_size", c.intermediate_size},
          {"vocab_size", c.vocab_size},
          {"max_position_embeddings", c.max_position_embeddings},
          {"layer_norm_eps", c.layer_norm_eps},
          {"dropout_prob", c.dropout_prob},
          {"num_segments", c.num_segments}};
}

EncoderConfig config_from_json(const json& j) {
  EncoderConfig c;
  c.hidden_size = j.at("hidden_size").get<std::size_t>();
  c.num_layers = j.at("num_layers").get<std::size_t>();
  c.num_heads = j.at("num_heads").get<std::size_t>();
  c.intermediate_size = j.at("intermediate_size").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.max_position_embeddings = j.at("max_position_embeddings").get<std::size_t>();
  c.layer_norm_eps = j.at("layer_norm_eps").get<double>();
  c.dropout_prob = j.at("dropout_prob").get<double>();
  c.num_segments = j.at("num_segments").get<std::size_t>();
  return c;
}

}  // namespace

std::string save_params(const ModelParams& params) {
  json manifest = json::array();
  std::size_t offset = 0;
  for (const auto& e : params.entries) {
    manifest.push_back({{"name", e.name},
                        {"group", e.group},
                        {"rows", e.value.rows()},
                        {"cols", e.value.cols()},
                        {"decay", e.decay},
                        {"offset", offset}});
    offset += e.value.size() * sizeof(double);
  }
  json meta = {{"format_version", kFormatVersion},
               {"config", config_to_json(params.config)},
               {"labels", params.labels},
               {"template_digests", params.template_digests},
               {"arrays", manifest}};
  std::string meta_str = meta.dump();

  std::string out;
  out.reserve(6 + 4 + meta_str.size() + offset);
  out.append(kMagic, 6);
  append_u32_le(out, static_cast<std::uint32_t>(meta_str.size()));
  out += meta_str;
  for (const auto& e : params.entries) {
    const char* src = reinterpret_cast<const char*>(e.value.ptr());
    out.append(src, e.value.size() * sizeof(double));
  }
  return out;
}

ModelParams load_params(const std::string& bytes) {
  if (bytes.size() < 10 || std::memcmp(bytes.data(), kMagic, 6) != 0)
    throw ValidationError("checkpoint: bad magic");
  std::uint32_t meta_len = read_u32_le(bytes, 6);
  if (bytes.size() < 10 + meta_len) throw ValidationError("checkpoint: truncated metadata");
  json meta;
  try {
    meta = json::parse(bytes.substr(10, meta_len));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint: bad metadata: ") + e.what());
  }
  if (meta.at("format_version").get<int>() != kFormatVersion)
    throw ValidationError("checkpoint: unsupported format version");

  ModelParams p;
  p.config = config_from_json(meta.at("config"));
  p.config.validate();
  p.labels = meta.at("labels").get<std::vector<std::string>>();
  for (auto it = meta.at("template_digests").begin(); it != meta.at("template_digests").end(); ++it)
    p.template_digests[it.key()] = it.value().get<std::string>();

  // expected layout from the embedded config
  std::vector<std::size_t> prompt_lengths;
  std::map<std::string, std::size_t> soft_rows;
  for (const auto& a : meta.at("arrays")) {
    std::string name = a.at("name").get<std::string>();
    if (name.starts_with("soft_prompt."))
      soft_rows[name.substr(12)] = a.at("rows").get<std::size_t>();
  }
  for (const auto& label : p.labels) {
    auto it = soft_rows.find(label);
    if (it == soft_rows.end())
      throw ValidationError("checkpoint: missing soft prompt array for label " + label);
    prompt_lengths.push_back(it->second);
  }
  build_layout(p, prompt_lengths);

  const std::size_t body = 10 + meta_len;
  if (meta.at("arrays").size() != p.entries.size())
    throw ValidationError("checkpoint: array manifest does not match config layout");
  std::size_t k = 0;
  for (const auto& a : meta.at("arrays")) {
    ParamEntry& e = p.entries[k++];
    std::string name = a.at("name").get<std::string>();
    auto rows = a.at("rows").get<std::size_t>();
    auto cols = a.at("cols").get<std::size_t>();
    if (name != e.name)
      throw ValidationError("checkpoint: unexpected array '" + name + "' (expected '" + e.name +
                            "')");
    if (rows != e.value.rows() || cols != e.value.cols())
      throw ValidationError("checkpoint: shape mismatch for '" + name + "': file has " +
                            std::to_string(rows) + "x" + std::to_string(cols) + ", config needs " +
                            std::to_string(e.value.rows()) + "x" +
                            std::to_string(e.value.cols()));
    auto off = a.at("offset").get<std::size_t>();
    const std::size_t nbytes = e.value.size() * sizeof(double);
    if (body + off + nbytes > bytes.size()) throw ValidationError("checkpoint: truncated data");
    std::memcpy(e.value.ptr(), bytes.data() + body + off, nbytes);
    if (!e.value.all_finite())
      throw ValidationError("checkpoint: non-finite values in '" + name + "'");
  }
  return p;
}

void save_params_file(const ModelParams& params, const std::string& path) {
  write_file(path, save_params(params));
}

ModelParams load_params_file(const std::string& path) { return load_params(read_file(path)); }

}  // namespace pbmrc
