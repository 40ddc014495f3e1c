// LCB-net: audio/context bi-encoder with audio-context (AC) and
// context-audio (CA) cross-attention, an attention decoder, a CTC head on the
// AC output and a biasing prediction head on the CA output.
//
//   H_a  = audio encoder(X)            H_c  = context encoder(C)
//   H_ac = cross(query H_a, kv H_c)    H_ca = cross(query H_c, kv H_a)
//   logits = decoder(H_ac)             ctc_logits = linear(H_ac)
//   alpha = sigmoid(linear(conv(ffn(self_attention(H_ca)))))
//
// All sublayers are post-norm: x = LayerNorm(x + sublayer(x)).
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lcbnet/biasing.hpp"
#include "lcbnet/errors.hpp"
#include "lcbnet/losses.hpp"
#include "lcbnet/numerics.hpp"
#include "lcbnet/rng.hpp"
#include "lcbnet/tokenizer.hpp"

namespace lcbnet {

using num::DiffArray;

struct LossWeights {
  double ctc = 0.3;
  double ce = 0.7;
  double bce = 1.0;
  bool operator==(const LossWeights&) const = default;
};

struct ModelConfig {
  std::size_t d_model = 256;
  std::size_t n_heads = 4;
  std::size_t d_ffn = 2048;
  std::size_t audio_layers = 12;
  std::size_t context_layers = 12;
  std::size_t decoder_layers = 6;
  std::size_t conv_window = 2;  // half-span of the biasing convolution
  std::size_t vocab_size = 0;
  std::size_t feature_dim = 80;
  LossWeights loss_weights;
  bool use_conformer_conv = true;
  std::size_t conformer_kernel = 15;
  double label_smoothing = 0.1;
  bool context_positions = true;
  double norm_eps = 1e-5;

  bool operator==(const ModelConfig&) const = default;

  static ModelConfig full() { return ModelConfig{}; }

  static ModelConfig toy() {
    ModelConfig c;
    c.d_model = 32;
    c.n_heads = 2;
    c.d_ffn = 64;
    c.audio_layers = 2;
    c.context_layers = 2;
    c.decoder_layers = 1;
    c.use_conformer_conv = false;
    return c;
  }

  std::size_t head_dim() const { return d_model / n_heads; }
  std::size_t bias_conv_span() const { return 2 * conv_window + 1; }

  // vocab_size may be left at 0 while a config is still being assembled;
  // pass require_vocab=false to skip that check.
  void validate(bool require_vocab = true) const {
    if (d_model == 0 || n_heads == 0 || d_ffn == 0)
      throw ConfigError("model: d_model, n_heads and d_ffn must be >= 1");
    if (d_model % n_heads != 0)
      throw ConfigError("model: d_model must be divisible by n_heads");
    if (audio_layers == 0 || context_layers == 0 || decoder_layers == 0)
      throw ConfigError("model: layer counts must be >= 1");
    if (require_vocab && vocab_size <= static_cast<std::size_t>(kNumReserved))
      throw ConfigError("model: vocab_size must exceed the reserved symbols");
    if (feature_dim == 0) throw ConfigError("model: feature_dim must be >= 1");
    if (use_conformer_conv && conformer_kernel % 2 == 0)
      throw ConfigError("model: conformer_kernel must be odd");
    const LossWeights& w = loss_weights;
    if (w.ctc < 0 || w.ce < 0 || w.bce < 0)
      throw ConfigError("model: loss weights must be non-negative");
    if (w.ctc == 0 && w.ce == 0 && w.bce == 0)
      throw ConfigError("model: at least one loss weight must be positive");
    if (!(label_smoothing >= 0.0 && label_smoothing < 1.0))
      throw ConfigError("model: label_smoothing must lie in [0,1)");
    if (!(norm_eps > 0.0)) throw ConfigError("model: norm_eps must be > 0");
  }
};

// Frames left after the two stride-2 front-end convolutions.
inline std::size_t subsampled_length(std::size_t frames) {
  return ((frames + 1) / 2 + 1) / 2;
}
inline constexpr std::size_t kMinFrames = 7;

// Sinusoidal position table [len x d].
inline DiffArray sinusoid_positions(std::size_t len, std::size_t d) {
  std::vector<double> table(len * d);
  for (std::size_t pos = 0; pos < len; ++pos) {
    for (std::size_t i = 0; i < d; ++i) {
      const double rate =
          std::pow(10000.0, -static_cast<double>(2 * (i / 2)) /
                                static_cast<double>(d));
      const double angle = static_cast<double>(pos) * rate;
      table[pos * d + i] = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return DiffArray::matrix(len, d, std::move(table));
}

struct Linear {
  DiffArray weight;  // [in x out]
  DiffArray bias;    // [out]
};
struct Norm {
  DiffArray gain;
  DiffArray bias;
};
struct AttentionWeights {
  Linear query, key, value, output;
};
struct FeedForward {
  Linear up, down;
};
struct ConvModule {
  Linear expand;  // d -> 2d, gated by GLU
  DiffArray depthwise;
  DiffArray depthwise_bias;
  Norm norm;
  Linear project;
};
struct EncoderLayer {
  AttentionWeights attention;
  Norm attention_norm;
  bool has_conv = false;
  ConvModule conv;
  Norm conv_norm;
  FeedForward ffn;
  Norm ffn_norm;
};
struct CrossAttentionLayer {
  AttentionWeights attention;
  Norm attention_norm;
  FeedForward ffn;
  Norm ffn_norm;
};
struct DecoderLayer {
  AttentionWeights self_attention;
  Norm self_norm;
  AttentionWeights cross_attention;
  Norm cross_norm;
  FeedForward ffn;
  Norm ffn_norm;
};
struct BiasingHead {
  AttentionWeights attention;
  Norm attention_norm;
  FeedForward ffn;
  Norm ffn_norm;
  DiffArray conv_kernel;  // [span x d x d]
  DiffArray conv_bias;
  Linear classifier;  // d -> 1
};

inline DiffArray apply(const Linear& layer, const DiffArray& x) {
  return num::add_bias(num::matmul(x, layer.weight), layer.bias);
}

struct AttentionResult {
  DiffArray output;   // [Tq x d], after the output projection
  DiffArray weights;  // [heads x Tq x Tk], values only
};

// Multi-head scaled dot-product attention, scale 1/sqrt(d_model / heads).
inline AttentionResult attend(const DiffArray& query_side,
                              const DiffArray& kv_side,
                              const AttentionWeights& w, std::size_t heads,
                              bool causal = false) {
  num::detail::require_rank2(query_side, "attend");
  num::detail::require_rank2(kv_side, "attend");
  if (query_side.cols() != kv_side.cols()) {
    throw ContractError("attention: query width " +
                        std::to_string(query_side.cols()) +
                        " differs from key/value width " +
                        std::to_string(kv_side.cols()));
  }
  const std::size_t d = query_side.cols();
  const std::size_t dh = d / heads;
  const std::size_t tq = query_side.rows(), tk = kv_side.rows();
  const DiffArray q = apply(w.query, query_side);
  const DiffArray k = apply(w.key, kv_side);
  const DiffArray v = apply(w.value, kv_side);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<DiffArray> contexts;
  std::vector<double> weights;
  weights.reserve(heads * tq * tk);
  for (std::size_t h = 0; h < heads; ++h) {
    const DiffArray qh = heads == 1 ? q : num::slice_cols(q, h * dh, dh);
    const DiffArray kh = heads == 1 ? k : num::slice_cols(k, h * dh, dh);
    const DiffArray vh = heads == 1 ? v : num::slice_cols(v, h * dh, dh);
    const DiffArray scores =
        num::scale(num::matmul(qh, num::transpose(kh)), scale);
    const DiffArray probs =
        causal ? num::causal_softmax_rows(scores) : num::softmax_rows(scores);
    weights.insert(weights.end(), probs.data().begin(), probs.data().end());
    contexts.push_back(num::matmul(probs, vh));
  }
  const DiffArray merged = heads == 1 ? contexts[0] : num::concat_cols(contexts);
  return {apply(w.output, merged),
          DiffArray({heads, tq, tk}, std::move(weights))};
}

struct CrossAttentionResult {
  DiffArray output;
  DiffArray weights;
};

struct BiasingPrediction {
  DiffArray alpha;  // [L], strictly inside (0,1)
  DiffArray h_att;
  DiffArray h_ffn;
  DiffArray h_cov;
  DiffArray attention_weights;
};

struct ForwardTrace {
  DiffArray h_a, h_c, h_ac, h_ca, h_att, h_ffn, h_cov;
  DiffArray alpha;
  DiffArray ctc_logits;
  DiffArray decoder_logits;
  DiffArray ac_attention;  // [heads x T x L]
  DiffArray ca_attention;  // [heads x L x T]
};

struct LossBreakdown {
  DiffArray total;
  double ctc = 0.0;
  double ce = 0.0;
  double bce = 0.0;
  bool ctc_feasible = true;
  ForwardTrace trace;
};

enum class CrossDirection { audio_context, context_audio };

class LcbNet {
 public:
  LcbNet(const ModelConfig& config, std::uint64_t seed)
      : config_(config), init_rng_(seed) {
    config_.validate();
    build();
  }

  // Parameters hold handles into this model; copies would alias them.
  LcbNet(const LcbNet&) = delete;
  LcbNet& operator=(const LcbNet&) = delete;

  const ModelConfig& config() const { return config_; }
  std::vector<num::Parameter>& parameters() { return params_; }
  const std::vector<num::Parameter>& parameters() const { return params_; }

  num::Parameter* find_parameter(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.value.zero_grad();
  }

  // Copies parameter values from a model with the same configuration.
  void copy_values_from(const LcbNet& other) {
    if (other.params_.size() != params_.size())
      throw ContractError("copy_values_from: architecture mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto src = other.params_[i].value.data();
      auto dst = params_[i].value.mutable_data();
      std::copy(src.begin(), src.end(), dst.begin());
    }
  }

  // ---- encoders --------------------------------------------------------

  DiffArray encode_audio(const DiffArray& features) const {
    if (features.rank() != 2 || features.cols() != config_.feature_dim) {
      throw InputError("encode_audio: expected [frames x " +
                       std::to_string(config_.feature_dim) + "] features, got " +
                       num::shape_string(features.shape()));
    }
    if (features.rows() < kMinFrames) {
      throw InputError("encode_audio: " + std::to_string(features.rows()) +
                       " frames is too short for 4x subsampling (need >= " +
                       std::to_string(kMinFrames) + ")");
    }
    DiffArray x = num::silu(
        num::conv1d(features, frontend_conv1_, frontend_bias1_, 2, 1));
    x = num::silu(num::conv1d(x, frontend_conv2_, frontend_bias2_, 2, 1));
    x = num::add(x, sinusoid_positions(x.rows(), config_.d_model));
    for (const EncoderLayer& layer : audio_layers_) x = encoder_layer(x, layer);
    return x;
  }

  DiffArray encode_context(std::span<const int> ids) const {
    if (ids.empty()) throw ContractError("encode_context: empty context");
    DiffArray x = num::embedding(context_embedding_, ids);
    if (config_.context_positions)
      x = num::add(x, sinusoid_positions(ids.size(), config_.d_model));
    for (const EncoderLayer& layer : context_layers_) x = encoder_layer(x, layer);
    return x;
  }

  // ---- cross attention and biasing head ---------------------------------

  CrossAttentionResult cross_attention(const DiffArray& query_side,
                                       const DiffArray& kv_side,
                                       CrossDirection direction) const {
    const CrossAttentionLayer& layer =
        direction == CrossDirection::audio_context ? ac_ : ca_;
    auto [x, weights] =
        attention_sublayer(query_side, kv_side, layer.attention,
                           layer.attention_norm, false);
    x = ffn_sublayer(x, layer.ffn, layer.ffn_norm);
    return {std::move(x), std::move(weights)};
  }

  BiasingPrediction biasing_prediction(const DiffArray& h_ca) const {
    BiasingPrediction out;
    auto [h_att, weights] = attention_sublayer(
        h_ca, h_ca, bias_head_.attention, bias_head_.attention_norm, false);
    out.h_att = std::move(h_att);
    out.attention_weights = std::move(weights);
    out.h_ffn = ffn_sublayer(out.h_att, bias_head_.ffn, bias_head_.ffn_norm);
    out.h_cov = num::silu(num::conv1d_same(out.h_ffn, bias_head_.conv_kernel,
                                           bias_head_.conv_bias));
    const DiffArray logits = apply(bias_head_.classifier, out.h_cov);
    out.alpha = num::sigmoid(num::reshape(logits, {logits.rows()}));
    return out;
  }

  // ---- decoder -----------------------------------------------------------

  // Teacher-forced logits [U x V] for decoder inputs (starting with <sos>).
  DiffArray decoder_logits(const DiffArray& h_ac,
                           std::span<const int> inputs) const {
    if (inputs.empty() || inputs[0] != Vocab::reserved_id(Reserved::sos))
      throw ContractError("decoder: input prefix must start with <sos>");
    DiffArray x = num::embedding(decoder_embedding_, inputs);
    x = num::add(x, sinusoid_positions(inputs.size(), config_.d_model));
    for (const DecoderLayer& layer : decoder_layers_) {
      x = attention_sublayer(x, x, layer.self_attention, layer.self_norm, true)
              .output;
      x = attention_sublayer(x, h_ac, layer.cross_attention, layer.cross_norm,
                             false)
              .output;
      x = ffn_sublayer(x, layer.ffn, layer.ffn_norm);
    }
    return apply(decoder_output_, x);
  }

  // Logits [1 x V] for the token following `prefix`.
  DiffArray decode_step(const DiffArray& h_ac, std::span<const int> prefix) const {
    const DiffArray all = decoder_logits(h_ac, prefix);
    return num::slice_rows(all, all.rows() - 1, 1);
  }

  DiffArray ctc_logits(const DiffArray& h_ac) const { return apply(ctc_output_, h_ac); }

  // ---- whole network -----------------------------------------------------

  ForwardTrace forward(const DiffArray& features, std::span<const int> context,
                       std::span<const int> decoder_inputs) const {
    ForwardTrace t;
    t.h_a = encode_audio(features);
    t.h_c = encode_context(context);
    auto ac = cross_attention(t.h_a, t.h_c, CrossDirection::audio_context);
    t.h_ac = std::move(ac.output);
    t.ac_attention = std::move(ac.weights);
    auto ca = cross_attention(t.h_c, t.h_a, CrossDirection::context_audio);
    t.h_ca = std::move(ca.output);
    t.ca_attention = std::move(ca.weights);
    BiasingPrediction bp = biasing_prediction(t.h_ca);
    t.h_att = std::move(bp.h_att);
    t.h_ffn = std::move(bp.h_ffn);
    t.h_cov = std::move(bp.h_cov);
    t.alpha = std::move(bp.alpha);
    t.ctc_logits = ctc_logits(t.h_ac);
    if (!decoder_inputs.empty())
      t.decoder_logits = decoder_logits(t.h_ac, decoder_inputs);
    return t;
  }

  // Weighted CTC + CE + BCE for one utterance. An infeasible CTC alignment
  // drops the CTC term and clears `ctc_feasible`.
  LossBreakdown total_loss(const DiffArray& features,
                           std::span<const int> reference,
                           const LongContextSequence& context) const {
    std::vector<int> inputs{Vocab::reserved_id(Reserved::sos)};
    inputs.insert(inputs.end(), reference.begin(), reference.end());
    std::vector<int> targets(reference.begin(), reference.end());
    targets.push_back(Vocab::reserved_id(Reserved::eos));

    LossBreakdown out;
    out.trace = forward(features, context.ids, inputs);
    const LossWeights& w = config_.loss_weights;
    std::vector<DiffArray> terms;

    CtcResult ctc = ctc_loss(out.trace.ctc_logits, reference,
                             Vocab::reserved_id(Reserved::ctc_blank));
    out.ctc_feasible = ctc.feasible;
    out.ctc = ctc.loss.item();
    if (ctc.feasible && w.ctc > 0) terms.push_back(num::scale(ctc.loss, w.ctc));

    DiffArray ce = ce_loss(out.trace.decoder_logits, targets,
                           config_.label_smoothing);
    out.ce = ce.item();
    if (w.ce > 0) terms.push_back(num::scale(ce, w.ce));

    DiffArray bce = bce_loss(out.trace.alpha, context.bias_labels,
                             context.separator_mask());
    out.bce = bce.item();
    if (w.bce > 0) terms.push_back(num::scale(bce, w.bce));

    out.total = terms.empty() ? DiffArray::scalar(0.0) : terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i)
      out.total = num::add(out.total, terms[i]);
    return out;
  }

  // Greedy attention-decoder search from <sos> until <eos> or max_len tokens.
  std::vector<int> greedy_decode(const DiffArray& features,
                                 std::span<const int> context,
                                 std::size_t max_len) const {
    std::vector<int> hypothesis;
    if (max_len == 0) return hypothesis;
    num::NoGradGuard no_grad;
    const DiffArray h_a = encode_audio(features);
    const DiffArray h_c = encode_context(context);
    const DiffArray h_ac =
        cross_attention(h_a, h_c, CrossDirection::audio_context).output;
    std::vector<int> prefix{Vocab::reserved_id(Reserved::sos)};
    const int eos = Vocab::reserved_id(Reserved::eos);
    while (hypothesis.size() < max_len) {
      const DiffArray logits = decode_step(h_ac, prefix);
      int best = 0;
      for (std::size_t k = 1; k < logits.size(); ++k)
        if (logits.value(k) > logits.value(best)) best = static_cast<int>(k);
      if (best == eos) break;
      hypothesis.push_back(best);
      prefix.push_back(best);
    }
    return hypothesis;
  }

 private:
  enum class Init { xavier, zeros, ones, embedding };

  DiffArray make_param(const std::string& name, num::Shape shape, Init init,
                       std::size_t fan_in = 0, std::size_t fan_out = 0) {
    const std::size_t n = num::shape_size(shape);
    std::vector<double> values(n, 0.0);
    switch (init) {
      case Init::zeros: break;
      case Init::ones: std::fill(values.begin(), values.end(), 1.0); break;
      case Init::xavier: {
        const double limit =
            std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (double& v : values) v = uniform(init_rng_, -limit, limit);
        break;
      }
      case Init::embedding:
        for (double& v : values) v = uniform(init_rng_, -1.0, 1.0);
        break;
    }
    DiffArray value(std::move(shape), std::move(values), true);
    params_.push_back({name, value});
    return value;
  }

  Linear make_linear(const std::string& name, std::size_t in, std::size_t out) {
    return {make_param(name + ".weight", {in, out}, Init::xavier, in, out),
            make_param(name + ".bias", {out}, Init::zeros)};
  }
  Norm make_norm(const std::string& name) {
    return {make_param(name + ".gain", {config_.d_model}, Init::ones),
            make_param(name + ".bias", {config_.d_model}, Init::zeros)};
  }
  AttentionWeights make_attention(const std::string& name) {
    const std::size_t d = config_.d_model;
    return {make_linear(name + ".w_q", d, d), make_linear(name + ".w_k", d, d),
            make_linear(name + ".w_v", d, d), make_linear(name + ".w_o", d, d)};
  }
  FeedForward make_ffn(const std::string& name) {
    return {make_linear(name + ".up", config_.d_model, config_.d_ffn),
            make_linear(name + ".down", config_.d_ffn, config_.d_model)};
  }
  EncoderLayer make_encoder_layer(const std::string& name, bool with_conv) {
    EncoderLayer layer;
    const std::size_t d = config_.d_model;
    layer.attention = make_attention(name + ".attn");
    layer.attention_norm = make_norm(name + ".attn_norm");
    if (with_conv) {
      const std::size_t k = config_.conformer_kernel;
      layer.has_conv = true;
      layer.conv.expand = make_linear(name + ".conv.expand", d, 2 * d);
      layer.conv.depthwise =
          make_param(name + ".conv.depthwise", {k, d}, Init::xavier, k, 1);
      layer.conv.depthwise_bias =
          make_param(name + ".conv.depthwise_bias", {d}, Init::zeros);
      layer.conv.norm = make_norm(name + ".conv.norm");
      layer.conv.project = make_linear(name + ".conv.project", d, d);
      layer.conv_norm = make_norm(name + ".conv_norm");
    }
    layer.ffn = make_ffn(name + ".ffn");
    layer.ffn_norm = make_norm(name + ".ffn_norm");
    return layer;
  }

  void build() {
    const std::size_t d = config_.d_model, f = config_.feature_dim;
    const std::size_t v = config_.vocab_size;
    frontend_conv1_ = make_param("audio_encoder.subsample.conv1", {3, f, d},
                                 Init::xavier, 3 * f, d);
    frontend_bias1_ = make_param("audio_encoder.subsample.conv1_bias", {d},
                                 Init::zeros);
    frontend_conv2_ = make_param("audio_encoder.subsample.conv2", {3, d, d},
                                 Init::xavier, 3 * d, d);
    frontend_bias2_ = make_param("audio_encoder.subsample.conv2_bias", {d},
                                 Init::zeros);
    for (std::size_t i = 0; i < config_.audio_layers; ++i)
      audio_layers_.push_back(make_encoder_layer(
          "audio_encoder.layer" + std::to_string(i), config_.use_conformer_conv));

    context_embedding_ =
        make_param("context_encoder.embedding", {v, d}, Init::embedding);
    for (std::size_t i = 0; i < config_.context_layers; ++i)
      context_layers_.push_back(make_encoder_layer(
          "context_encoder.layer" + std::to_string(i), false));

    ac_ = {make_attention("ac_cross.attn"), make_norm("ac_cross.attn_norm"),
           make_ffn("ac_cross.ffn"), make_norm("ac_cross.ffn_norm")};
    ca_ = {make_attention("ca_cross.attn"), make_norm("ca_cross.attn_norm"),
           make_ffn("ca_cross.ffn"), make_norm("ca_cross.ffn_norm")};

    const std::size_t span = config_.bias_conv_span();
    bias_head_.attention = make_attention("bias_predictor.attn");
    bias_head_.attention_norm = make_norm("bias_predictor.attn_norm");
    bias_head_.ffn = make_ffn("bias_predictor.ffn");
    bias_head_.ffn_norm = make_norm("bias_predictor.ffn_norm");
    bias_head_.conv_kernel = make_param("bias_predictor.conv", {span, d, d},
                                        Init::xavier, span * d, d);
    bias_head_.conv_bias =
        make_param("bias_predictor.conv_bias", {d}, Init::zeros);
    bias_head_.classifier = make_linear("bias_predictor.classifier", d, 1);

    decoder_embedding_ = make_param("decoder.embedding", {v, d}, Init::embedding);
    for (std::size_t i = 0; i < config_.decoder_layers; ++i) {
      const std::string name = "decoder.layer" + std::to_string(i);
      decoder_layers_.push_back(
          {make_attention(name + ".self_attn"), make_norm(name + ".self_norm"),
           make_attention(name + ".cross_attn"), make_norm(name + ".cross_norm"),
           make_ffn(name + ".ffn"), make_norm(name + ".ffn_norm")});
    }
    decoder_output_ = make_linear("decoder.output", d, v);
    ctc_output_ = make_linear("ctc.output", d, v);
  }

  DiffArray norm(const DiffArray& x, const Norm& n) const {
    return num::layer_norm(x, n.gain, n.bias, config_.norm_eps);
  }

  AttentionResult attention_sublayer(const DiffArray& x, const DiffArray& kv,
                                     const AttentionWeights& w, const Norm& n,
                                     bool causal) const {
    AttentionResult r = attend(x, kv, w, config_.n_heads, causal);
    return {norm(num::add(x, r.output), n), std::move(r.weights)};
  }

  DiffArray ffn_sublayer(const DiffArray& x, const FeedForward& ffn,
                         const Norm& n) const {
    const DiffArray hidden = num::silu(apply(ffn.up, x));
    return norm(num::add(x, apply(ffn.down, hidden)), n);
  }

  DiffArray conv_sublayer(const DiffArray& x, const ConvModule& conv,
                          const Norm& n) const {
    const std::size_t d = config_.d_model;
    const DiffArray expanded = apply(conv.expand, x);
    const DiffArray gated =
        num::mul(num::slice_cols(expanded, 0, d),
                 num::sigmoid(num::slice_cols(expanded, d, d)));
    DiffArray y =
        num::depthwise_conv1d_same(gated, conv.depthwise, conv.depthwise_bias);
    y = num::silu(norm(y, conv.norm));
    return norm(num::add(x, apply(conv.project, y)), n);
  }

  DiffArray encoder_layer(const DiffArray& x, const EncoderLayer& layer) const {
    DiffArray y =
        attention_sublayer(x, x, layer.attention, layer.attention_norm, false)
            .output;
    if (layer.has_conv) y = conv_sublayer(y, layer.conv, layer.conv_norm);
    return ffn_sublayer(y, layer.ffn, layer.ffn_norm);
  }

  ModelConfig config_;
  Rng init_rng_;
  std::vector<num::Parameter> params_;

  DiffArray frontend_conv1_, frontend_bias1_, frontend_conv2_, frontend_bias2_;
  std::vector<EncoderLayer> audio_layers_;
  DiffArray context_embedding_;
  std::vector<EncoderLayer> context_layers_;
  CrossAttentionLayer ac_, ca_;
  BiasingHead bias_head_;
  DiffArray decoder_embedding_;
  std::vector<DecoderLayer> decoder_layers_;
  Linear decoder_output_;
  Linear ctc_output_;
};

}  // namespace lcbnet
