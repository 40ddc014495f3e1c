// Optimizer, two-phase training loop and evaluation helpers.
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "lcbnet/biasing.hpp"
#include "lcbnet/corpus.hpp"
#include "lcbnet/errors.hpp"
#include "lcbnet/losses.hpp"
#include "lcbnet/model.hpp"
#include "lcbnet/rng.hpp"
#include "lcbnet/tokenizer.hpp"

namespace lcbnet {

struct TrainConfig {
  std::size_t epochs = 40;
  std::size_t pretrain_epochs = 10;  // phase 1: simulated phrase lists only
  double learning_rate = 2e-3;       // peak of the warmup schedule
  std::size_t warmup_steps = 100;
  std::size_t batch_size = 8;
  std::uint64_t seed = 1;
  double mask_prob = 0.05;
  double provided_mix = 0.5;  // phase 2 share of provided phrase lists
  double grad_clip = 5.0;     // global norm; 0 disables clipping
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-9;
  std::size_t threads = 1;

  static TrainConfig toy() { return TrainConfig{}; }
  static TrainConfig full() {
    TrainConfig c;
    c.epochs = 75;
    c.pretrain_epochs = 25;
    c.learning_rate = 1e-3;
    c.warmup_steps = 20000;
    c.batch_size = 32;
    return c;
  }

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be > 0");
    if (batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
    if (!(mask_prob >= 0.0 && mask_prob < 1.0))
      throw ConfigError("train.mask_prob must lie in [0,1)");
    if (!(provided_mix >= 0.0 && provided_mix <= 1.0))
      throw ConfigError("train.provided_mix must lie in [0,1]");
    if (!(grad_clip >= 0.0)) throw ConfigError("train.grad_clip must be >= 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) ||
        !(adam_beta2 >= 0.0 && adam_beta2 < 1.0) || !(adam_eps > 0.0))
      throw ConfigError("train: adam betas must lie in [0,1) and eps be > 0");
    if (threads == 0) throw ConfigError("train.threads must be >= 1");
  }
};

struct DecodeConfig {
  std::size_t max_len = 64;
  std::uint64_t seed = 11;  // shuffles the phrase order of each context

  void validate() const {}
};

// peak * min(step / warmup, sqrt(warmup / step)); constant without warmup.
inline double warmup_learning_rate(double peak, std::size_t warmup,
                                   std::size_t step) {
  if (warmup == 0) return peak;
  const double s = static_cast<double>(std::max<std::size_t>(step, 1));
  const double w = static_cast<double>(warmup);
  return peak * std::min(s / w, std::sqrt(w / s));
}

class Adam {
 public:
  Adam(double beta1, double beta2, double eps)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::vector<num::Parameter>& params, double lr) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.value.size(), 0.0);
        v_.emplace_back(p.value.size(), 0.0);
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!params[i].value.requires_grad()) continue;
      auto w = params[i].value.mutable_data();
      auto g = params[i].value.grad();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t k = 0; k < w.size(); ++k) {
        m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
        v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
        w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
      }
    }
  }

  std::size_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

inline double global_grad_norm(const std::vector<num::Parameter>& params) {
  double total = 0.0;
  for (const auto& p : params)
    for (double g : p.value.grad()) total += g * g;
  return std::sqrt(total);
}

inline void scale_grads(std::vector<num::Parameter>& params, double factor) {
  for (auto& p : params)
    for (double& g : p.value.mutable_grad()) g *= factor;
}

// ---------------------------------------------------------------------------
// Epoch log lines: space-separated key=value pairs, doubles printed with 17
// significant digits so they parse back exactly.

struct EpochStats {
  std::size_t epoch = 0;
  std::string phase;
  double loss = 0.0;
  double ctc = 0.0;
  double ce = 0.0;
  double bce = 0.0;
  std::size_t ctc_infeasible = 0;
  std::size_t utterances = 0;
  std::size_t steps = 0;
  double lr = 0.0;
  bool operator==(const EpochStats&) const = default;
};

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string format_epoch_log(const EpochStats& s) {
  std::ostringstream out;
  out << "epoch=" << s.epoch << " phase=" << s.phase
      << " loss=" << format_double(s.loss) << " ctc=" << format_double(s.ctc)
      << " ce=" << format_double(s.ce) << " bce=" << format_double(s.bce)
      << " ctc_infeasible=" << s.ctc_infeasible << " utterances=" << s.utterances
      << " steps=" << s.steps << " lr=" << format_double(s.lr);
  return out.str();
}

inline EpochStats parse_epoch_log(const std::string& line) {
  std::map<std::string, std::string> kv;
  std::istringstream in(line);
  std::string item;
  while (in >> item) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw DataError("log line: bad field " + item);
    kv[item.substr(0, eq)] = item.substr(eq + 1);
  }
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw DataError(std::string("log line: missing ") + key);
    return it->second;
  };
  EpochStats s;
  try {
    s.epoch = std::stoull(get("epoch"));
    s.phase = get("phase");
    s.loss = std::stod(get("loss"));
    s.ctc = std::stod(get("ctc"));
    s.ce = std::stod(get("ce"));
    s.bce = std::stod(get("bce"));
    s.ctc_infeasible = std::stoull(get("ctc_infeasible"));
    s.utterances = std::stoull(get("utterances"));
    s.steps = std::stoull(get("steps"));
    s.lr = std::stod(get("lr"));
  } catch (const std::logic_error&) {
    throw DataError("log line: malformed number in " + line);
  }
  return s;
}

// ---------------------------------------------------------------------------

// Builds, labels and (optionally) masks the context of one utterance.
inline LongContextSequence prepare_context(const PhraseList& phrases,
                                           const UtteranceSample& sample,
                                           const Vocab& vocab, double mask_prob,
                                           Rng& rng) {
  LongContextSequence ctx = build_long_context(phrases, vocab, rng);
  ctx = label_bias_tokens(std::move(ctx), sample.reference_words);
  if (mask_prob > 0.0) ctx = mask_context(std::move(ctx), mask_prob, rng);
  return ctx;
}

class Trainer {
 public:
  Trainer(LcbNet& model, const Vocab& vocab, const TrainConfig& train,
          const SimulationConfig& sim)
      : model_(model),
        vocab_(vocab),
        train_(train),
        sim_(sim),
        adam_(train.adam_beta1, train.adam_beta2, train.adam_eps),
        rng_(make_stream(train.seed, 0x7a11)),
        sim_rng_(make_stream(sim.rng_seed, 0x5140)) {
    train_.validate();
    sim_.validate();
    for (std::size_t w = 1; w < train_.threads; ++w)
      replicas_.push_back(std::make_unique<LcbNet>(model_.config(), 0));
  }

  std::size_t epochs_done() const { return epoch_; }
  std::size_t steps() const { return adam_.steps(); }
  bool in_pretraining() const { return epoch_ < train_.pretrain_epochs; }

  EpochStats run_epoch(std::span<const UtteranceSample> data) {
    EpochStats stats;
    stats.phase = in_pretraining() ? "pretrain" : "finetune";
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle(std::span<std::size_t>(order), rng_);
    for (std::size_t start = 0; start < order.size(); start += train_.batch_size) {
      const std::size_t end = std::min(order.size(), start + train_.batch_size);
      std::vector<const UtteranceSample*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&data[order[i]]);
      run_batch(batch, stats);
    }
    if (stats.utterances > 0) {
      const double n = static_cast<double>(stats.utterances);
      stats.loss /= n;
      stats.ce /= n;
      stats.bce /= n;
      const std::size_t feasible = stats.utterances - stats.ctc_infeasible;
      stats.ctc = feasible ? stats.ctc / static_cast<double>(feasible) : 0.0;
    }
    stats.epoch = ++epoch_;
    stats.steps = adam_.steps();
    return stats;
  }

 private:
  struct Item {
    const UtteranceSample* sample;
    LongContextSequence context;
  };

  struct Partial {
    double loss = 0, ctc = 0, ce = 0, bce = 0;
    std::size_t infeasible = 0;
  };

  void run_batch(const std::vector<const UtteranceSample*>& batch,
                 EpochStats& stats) {
    std::vector<TokenSeq> refs;
    for (const auto* s : batch) refs.push_back(s->reference);
    const PhraseList simulated = simulate_phrases(refs, vocab_, sim_, sim_rng_);

    std::vector<Item> items;
    for (const auto* s : batch) {
      const bool use_provided = !in_pretraining() && s->has_phrases &&
                                bernoulli(rng_, train_.provided_mix);
      items.push_back({s, prepare_context(use_provided ? s->phrases : simulated,
                                          *s, vocab_, train_.mask_prob, rng_)});
    }

    model_.zero_grad();
    const std::size_t workers = std::min(train_.threads, items.size());
    std::vector<Partial> partials(workers);
    if (workers <= 1) {
      accumulate(model_, items, 0, items.size(), partials[0]);
    } else {
      // Static contiguous partition: worker w owns a fixed slice.
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < workers; ++w) {
        LcbNet& net = w == 0 ? model_ : *replicas_[w - 1];
        if (w > 0) {
          net.copy_values_from(model_);
          net.zero_grad();
        }
        const std::size_t lo = items.size() * w / workers;
        const std::size_t hi = items.size() * (w + 1) / workers;
        pool.emplace_back([&, lo, hi, w, pnet = &net] {
          accumulate(*pnet, items, lo, hi, partials[w]);
        });
      }
      for (auto& t : pool) t.join();
      for (std::size_t w = 1; w < workers; ++w) {
        auto& dst = model_.parameters();
        const auto& src = replicas_[w - 1]->parameters();
        for (std::size_t i = 0; i < dst.size(); ++i) {
          auto d = dst[i].value.mutable_grad();
          auto s = src[i].value.grad();
          for (std::size_t k = 0; k < d.size(); ++k) d[k] += s[k];
        }
      }
    }
    for (const Partial& p : partials) {
      stats.loss += p.loss;
      stats.ctc += p.ctc;
      stats.ce += p.ce;
      stats.bce += p.bce;
      stats.ctc_infeasible += p.infeasible;
    }
    stats.utterances += items.size();

    auto& params = model_.parameters();
    scale_grads(params, 1.0 / static_cast<double>(items.size()));
    if (train_.grad_clip > 0.0) {
      const double norm = global_grad_norm(params);
      if (norm > train_.grad_clip) scale_grads(params, train_.grad_clip / norm);
    }
    stats.lr = warmup_learning_rate(train_.learning_rate, train_.warmup_steps,
                                    adam_.steps() + 1);
    adam_.step(params, stats.lr);
  }

  static void accumulate(LcbNet& net, const std::vector<Item>& items,
                         std::size_t lo, std::size_t hi, Partial& out) {
    for (std::size_t i = lo; i < hi; ++i) {
      const Item& item = items[i];
      LossBreakdown l = net.total_loss(item.sample->features,
                                       item.sample->reference.ids, item.context);
      l.total.backward();
      out.loss += l.total.item();
      if (l.ctc_feasible) out.ctc += l.ctc;
      else ++out.infeasible;
      out.ce += l.ce;
      out.bce += l.bce;
    }
  }

  LcbNet& model_;
  const Vocab& vocab_;
  TrainConfig train_;
  SimulationConfig sim_;
  Adam adam_;
  Rng rng_;
  Rng sim_rng_;
  std::vector<std::unique_ptr<LcbNet>> replicas_;
  std::size_t epoch_ = 0;
};

// ---------------------------------------------------------------------------
// Inference and evaluation

enum class DecodeMode { with_bias, without_bias };

// Inference context: the provided list in with_bias mode, otherwise (or when
// the utterance has no list) the single-separator context.
inline LongContextSequence inference_context(const UtteranceSample& sample,
                                             const Vocab& vocab, DecodeMode mode,
                                             std::uint64_t seed,
                                             std::size_t index) {
  Rng rng = make_stream(seed, index);
  const PhraseList none;
  const PhraseList& list =
      mode == DecodeMode::with_bias && sample.has_phrases ? sample.phrases : none;
  LongContextSequence ctx = build_long_context(list, vocab, rng);
  return label_bias_tokens(std::move(ctx), sample.reference_words);
}

inline std::string decode_text(const LcbNet& model, const Vocab& vocab,
                               const num::DiffArray& features,
                               std::span<const int> context, std::size_t max_len) {
  std::vector<int> ids = model.greedy_decode(features, context, max_len);
  return detokenize(sequence_from_ids(std::move(ids), vocab), vocab);
}

struct BiasClassification {
  std::size_t positions = 0;
  std::size_t correct = 0;
  double alpha_sum[2] = {0.0, 0.0};
  std::size_t label_count[2] = {0, 0};

  double accuracy() const {
    return positions ? static_cast<double>(correct) / static_cast<double>(positions)
                     : 0.0;
  }
  double mean_alpha(int label) const {
    return label_count[label] ? alpha_sum[label] / static_cast<double>(label_count[label])
                              : 0.0;
  }
};

// Token-level bias classification at threshold 0.5 over the provided lists;
// separators are excluded.
inline BiasClassification evaluate_bias_classification(
    const LcbNet& model, std::span<const UtteranceSample> samples,
    const Vocab& vocab, std::uint64_t seed) {
  num::NoGradGuard no_grad;
  BiasClassification out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const LongContextSequence ctx = inference_context(
        samples[i], vocab, DecodeMode::with_bias, seed, i);
    const num::DiffArray h_a = model.encode_audio(samples[i].features);
    const num::DiffArray h_c = model.encode_context(ctx.ids);
    const num::DiffArray h_ca =
        model.cross_attention(h_c, h_a, CrossDirection::context_audio).output;
    const num::DiffArray alpha = model.biasing_prediction(h_ca).alpha;
    for (std::size_t k = 0; k < ctx.ids.size(); ++k) {
      if (ctx.is_separator(k)) continue;
      const int y = ctx.bias_labels[k];
      const double a = alpha.value(k);
      ++out.positions;
      out.correct += (a >= 0.5) == (y == 1);
      out.alpha_sum[y] += a;
      ++out.label_count[y];
    }
  }
  return out;
}

// Mean unsmoothed per-token cross entropy under teacher forcing.
inline double teacher_forced_nll(const LcbNet& model,
                                 std::span<const UtteranceSample> samples,
                                 const Vocab& vocab, DecodeMode mode,
                                 std::uint64_t seed) {
  num::NoGradGuard no_grad;
  double total = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const LongContextSequence ctx =
        inference_context(samples[i], vocab, mode, seed, i);
    const auto& ref = samples[i].reference.ids;
    std::vector<int> inputs{Vocab::reserved_id(Reserved::sos)};
    inputs.insert(inputs.end(), ref.begin(), ref.end());
    std::vector<int> targets(ref.begin(), ref.end());
    targets.push_back(Vocab::reserved_id(Reserved::eos));
    const num::DiffArray h_a = model.encode_audio(samples[i].features);
    const num::DiffArray h_c = model.encode_context(ctx.ids);
    const num::DiffArray h_ac =
        model.cross_attention(h_a, h_c, CrossDirection::audio_context).output;
    total += ce_loss(model.decoder_logits(h_ac, inputs), targets, 0.0).item();
  }
  return samples.empty() ? 0.0 : total / static_cast<double>(samples.size());
}

}  // namespace lcbnet
