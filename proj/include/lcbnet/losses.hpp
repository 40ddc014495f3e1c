// Training objectives: CTC, label-smoothed cross entropy and masked BCE.
#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "lcbnet/errors.hpp"
#include "lcbnet/numerics.hpp"

namespace lcbnet {

namespace detail {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  if (a < b) std::swap(a, b);
  return a + std::log1p(std::exp(b - a));
}

inline std::vector<double> log_softmax_rows(std::span<const double> x,
                                            std::size_t rows,
                                            std::size_t cols) {
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data() + r * cols;
    double mx = kNegInf;
    for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, in[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) total += std::exp(in[j] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] = in[j] - lse;
  }
  return out;
}

}  // namespace detail

// Minimum number of frames a CTC alignment of `labels` needs.
inline std::size_t ctc_min_frames(std::span<const int> labels) {
  std::size_t n = labels.size();
  for (std::size_t i = 1; i < labels.size(); ++i) n += labels[i] == labels[i - 1];
  return n;
}

struct CtcResult {
  num::DiffArray loss;
  bool feasible = true;
};

inline constexpr double kCtcInfeasibleLoss = 1e30;

// Negative log-likelihood of `labels` under frame posteriors softmax(logits),
// summed over all blank-interleaved alignments. Logits are [T x V].
inline CtcResult ctc_loss(const num::DiffArray& logits,
                          std::span<const int> labels, int blank) {
  num::detail::require_rank2(logits, "ctc_loss");
  const std::size_t frames = logits.shape()[0], vocab = logits.shape()[1];
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= vocab || l == blank)
      throw ContractError("ctc_loss: invalid label " + std::to_string(l));
  }
  if (frames == 0 || frames < ctc_min_frames(labels)) {
    return {num::DiffArray::scalar(kCtcInfeasibleLoss), false};
  }

  // Extended sequence: blank, l1, blank, l2, ..., blank.
  const std::size_t states = 2 * labels.size() + 1;
  std::vector<int> ext(states, blank);
  for (std::size_t i = 0; i < labels.size(); ++i) ext[2 * i + 1] = labels[i];
  auto can_skip = [&](std::size_t s) {
    return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];
  };

  const std::vector<double> logp =
      detail::log_softmax_rows(logits.data(), frames, vocab);
  auto lp = [&](std::size_t t, std::size_t s) { return logp[t * vocab + ext[s]]; };

  std::vector<double> alpha(frames * states, detail::kNegInf);
  alpha[0] = lp(0, 0);
  if (states > 1) alpha[1] = lp(0, 1);
  for (std::size_t t = 1; t < frames; ++t) {
    for (std::size_t s = 0; s < states; ++s) {
      double a = alpha[(t - 1) * states + s];
      if (s >= 1) a = detail::log_add(a, alpha[(t - 1) * states + s - 1]);
      if (can_skip(s)) a = detail::log_add(a, alpha[(t - 1) * states + s - 2]);
      alpha[t * states + s] = a == detail::kNegInf ? a : a + lp(t, s);
    }
  }
  const std::size_t last = (frames - 1) * states;
  double log_likelihood = alpha[last + states - 1];
  if (states > 1)
    log_likelihood = detail::log_add(log_likelihood, alpha[last + states - 2]);

  // beta excludes the emission at t, so alpha*beta is the path mass through
  // (t, s).
  std::vector<double> beta(frames * states, detail::kNegInf);
  beta[last + states - 1] = 0.0;
  if (states > 1) beta[last + states - 2] = 0.0;
  for (std::size_t t = frames - 1; t-- > 0;) {
    for (std::size_t s = 0; s < states; ++s) {
      double b = beta[(t + 1) * states + s] + lp(t + 1, s);
      if (s + 1 < states)
        b = detail::log_add(b, beta[(t + 1) * states + s + 1] + lp(t + 1, s + 1));
      if (s + 2 < states && can_skip(s + 2))
        b = detail::log_add(b, beta[(t + 1) * states + s + 2] + lp(t + 1, s + 2));
      beta[t * states + s] = b;
    }
  }

  std::vector<double> grad(frames * vocab);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t k = 0; k < vocab; ++k)
      grad[t * vocab + k] = std::exp(logp[t * vocab + k]);
    for (std::size_t s = 0; s < states; ++s) {
      const double occ = alpha[t * states + s] + beta[t * states + s];
      if (occ == detail::kNegInf) continue;
      grad[t * vocab + ext[s]] -= std::exp(occ - log_likelihood);
    }
  }

  num::DiffArray loss = num::detail::make_result(
      {}, {-log_likelihood}, {&logits},
      [grad = std::move(grad)](num::detail::Node& self) {
        double* g = self.parent_grad(0);
        for (std::size_t i = 0; i < grad.size(); ++i) g[i] += self.grad[0] * grad[i];
      });
  return {std::move(loss), true};
}

// Mean token cross entropy against targets smoothed as
// (1 - smoothing) * one_hot + smoothing / V. Logits are [U x V].
inline num::DiffArray ce_loss(const num::DiffArray& logits,
                              std::span<const int> targets, double smoothing) {
  num::detail::require_rank2(logits, "ce_loss");
  const std::size_t rows = logits.shape()[0], vocab = logits.shape()[1];
  if (targets.size() != rows) {
    throw ContractError("ce_loss: " + std::to_string(rows) + " logit rows for " +
                        std::to_string(targets.size()) + " targets");
  }
  if (rows == 0) return num::DiffArray::scalar(0.0);
  const std::vector<double> logp =
      detail::log_softmax_rows(logits.data(), rows, vocab);
  const double off = smoothing / static_cast<double>(vocab);
  const double on = 1.0 - smoothing + off;
  double total = 0.0;
  std::vector<double> grad(rows * vocab);
  for (std::size_t r = 0; r < rows; ++r) {
    const int y = targets[r];
    if (y < 0 || static_cast<std::size_t>(y) >= vocab)
      throw ContractError("ce_loss: target outside vocab");
    for (std::size_t k = 0; k < vocab; ++k) {
      const double q = static_cast<int>(k) == y ? on : off;
      if (q > 0.0) total -= q * logp[r * vocab + k];
      grad[r * vocab + k] =
          (std::exp(logp[r * vocab + k]) - q) / static_cast<double>(rows);
    }
  }
  return num::detail::make_result(
      {}, {total / static_cast<double>(rows)}, {&logits},
      [grad = std::move(grad)](num::detail::Node& self) {
        double* g = self.parent_grad(0);
        for (std::size_t i = 0; i < grad.size(); ++i) g[i] += self.grad[0] * grad[i];
      });
}

inline constexpr double kProbabilityClamp = 1e-12;

// Mean binary cross entropy over positions where `excluded` is false.
// Probabilities are clamped to [1e-12, 1 - 1e-12].
inline num::DiffArray bce_loss(const num::DiffArray& alpha,
                               std::span<const int> labels,
                               const std::vector<bool>& excluded) {
  if (alpha.size() != labels.size() || excluded.size() != labels.size())
    throw DimensionError("bce_loss: alpha, labels and mask lengths differ");
  std::size_t counted = 0;
  for (bool e : excluded) counted += !e;
  if (counted == 0) return num::DiffArray::scalar(0.0);
  const double n = static_cast<double>(counted);
  double total = 0.0;
  std::vector<double> grad(labels.size(), 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (excluded[i]) continue;
    const double raw = alpha.value(i);
    const double p = std::clamp(raw, kProbabilityClamp, 1.0 - kProbabilityClamp);
    const double y = labels[i];
    total -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
    if (p == raw) grad[i] = (-y / p + (1.0 - y) / (1.0 - p)) / n;
  }
  return num::detail::make_result(
      {}, {total / n}, {&alpha},
      [grad = std::move(grad)](num::detail::Node& self) {
        double* g = self.parent_grad(0);
        for (std::size_t i = 0; i < grad.size(); ++i) g[i] += self.grad[0] * grad[i];
      });
}

}  // namespace lcbnet
