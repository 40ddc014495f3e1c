#include <gtest/gtest.h>

#include <cmath>

#include "lcbnet/losses.hpp"
#include "test_util.hpp"

namespace lcbnet {
namespace {

using num::DiffArray;
using testing::random_array;

std::vector<int> collapse(const std::vector<int>& path, int blank) {
  std::vector<int> out;
  int prev = -1;
  for (int s : path) {
    if (s != prev && s != blank) out.push_back(s);
    prev = s;
  }
  return out;
}

// -log sum over every length-T path whose collapse equals `labels`.
double ctc_enumeration(const DiffArray& logits, const std::vector<int>& labels, int blank) {
  const std::size_t T = logits.rows(), V = logits.cols();
  std::vector<double> p(T * V);
  for (std::size_t t = 0; t < T; ++t) {
    double z = 0.0;
    for (std::size_t k = 0; k < V; ++k) z += std::exp(logits.at(t, k));
    for (std::size_t k = 0; k < V; ++k) p[t * V + k] = std::exp(logits.at(t, k)) / z;
  }
  double total = 0.0;
  std::vector<int> path(T, 0);
  while (true) {
    if (collapse(path, blank) == labels) {
      double prob = 1.0;
      for (std::size_t t = 0; t < T; ++t) prob *= p[t * V + path[t]];
      total += prob;
    }
    std::size_t t = 0;
    while (t < T && ++path[t] == static_cast<int>(V)) path[t++] = 0;
    if (t == T) break;
  }
  return -std::log(total);
}

TEST(Ctc, ForcedSingleFramePathHasZeroLoss) {
  const DiffArray logits = DiffArray::matrix(1, 3, {-1e3, 0.0, -1e3});
  const CtcResult r = ctc_loss(logits, std::vector<int>{1}, 0);
  EXPECT_TRUE(r.feasible);
  EXPECT_NEAR(r.loss.item(), 0.0, 1e-12);
}

TEST(Ctc, MatchesEnumerationForThreeFrames) {
  Rng rng(1);
  const DiffArray logits = random_array(rng, {3, 4}, false, -2, 2);
  const std::vector<int> labels = {1, 2};
  EXPECT_NEAR(ctc_loss(logits, labels, 0).loss.item(),
              ctc_enumeration(logits, labels, 0), 1e-10);
}

TEST(Ctc, NonNegativeAndInfeasibleFlagged) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const DiffArray logits = random_array(rng, {5, 4}, false, -3, 3);
    EXPECT_GE(ctc_loss(logits, std::vector<int>{1, 3}, 0).loss.item(), 0.0);
  }
  // Repeated label needs a blank in between: three frames minimum.
  const CtcResult r = ctc_loss(DiffArray::zeros({2, 3}), std::vector<int>{1, 1}, 0);
  EXPECT_FALSE(r.feasible);
  EXPECT_EQ(r.loss.item(), kCtcInfeasibleLoss);
}

TEST(Ctc, BlankLabelIsContractError) {
  EXPECT_THROW(ctc_loss(DiffArray::zeros({3, 3}), std::vector<int>{0}, 0), ContractError);
}

TEST(Ctc, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  std::vector<num::Parameter> params = {{"logits", random_array(rng, {6, 4})}};
  const std::vector<int> labels = {2, 2, 3};
  auto loss = [&] { return ctc_loss(params[0].value, labels, 1).loss; };
  const auto report = num::grad_check(loss, params, 1e-5, 1e-6);
  EXPECT_TRUE(report.passed()) << report.max_rel_error();
}

TEST(CrossEntropy, OneHotCorrectLogitsGiveZero) {
  const DiffArray logits = DiffArray::matrix(2, 3, {100, 0, 0, 0, 0, 100});
  EXPECT_NEAR(ce_loss(logits, std::vector<int>{0, 2}, 0.0).item(), 0.0, 1e-12);
}

TEST(CrossEntropy, UniformLogitsGiveLogV) {
  EXPECT_NEAR(ce_loss(DiffArray::zeros({3, 7}), std::vector<int>{1, 2, 6}, 0.1).item(),
              std::log(7.0), 1e-12);
}

TEST(CrossEntropy, SmoothedMatchesClosedForm) {
  Rng rng(4);
  const DiffArray logits = random_array(rng, {3, 5}, false, -2, 2);
  const std::vector<int> targets = {4, 0, 2};
  const double eps = 0.1;
  double want = 0.0;
  for (std::size_t r = 0; r < 3; ++r) {
    double z = 0.0;
    for (std::size_t k = 0; k < 5; ++k) z += std::exp(logits.at(r, k));
    for (std::size_t k = 0; k < 5; ++k) {
      const double q = (1 - eps) * (static_cast<int>(k) == targets[r]) + eps / 5.0;
      want -= q * std::log(std::exp(logits.at(r, k)) / z);
    }
  }
  EXPECT_NEAR(ce_loss(logits, targets, eps).item(), want / 3.0, 1e-12);
}

TEST(CrossEntropy, LengthMismatchIsContractError) {
  EXPECT_THROW(ce_loss(DiffArray::zeros({2, 3}), std::vector<int>{1}, 0.1), ContractError);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  Rng rng(5);
  std::vector<num::Parameter> params = {{"logits", random_array(rng, {4, 6})}};
  const std::vector<int> targets = {0, 5, 2, 2};
  auto loss = [&] { return ce_loss(params[0].value, targets, 0.1); };
  EXPECT_TRUE(num::grad_check(loss, params, 1e-5, 1e-6).passed());
}

TEST(BinaryCrossEntropy, PerfectPredictionIsNearZero) {
  const DiffArray alpha = DiffArray::vector({1.0, 0.0, 1.0});
  const double loss =
      bce_loss(alpha, std::vector<int>{1, 0, 1}, std::vector<bool>(3, false)).item();
  EXPECT_LT(loss, 1e-11);
  EXPECT_GE(loss, 0.0);
}

TEST(BinaryCrossEntropy, HalfEverywhereIsLogTwo) {
  const DiffArray alpha = DiffArray::filled({4}, 0.5);
  EXPECT_NEAR(bce_loss(alpha, std::vector<int>{1, 0, 0, 1}, std::vector<bool>(4, false))
                  .item(),
              std::log(2.0), 1e-15);
}

TEST(BinaryCrossEntropy, RandomCaseMatchesFormulaAndSkipsSeparators) {
  Rng rng(6);
  const DiffArray alpha = random_array(rng, {6}, false, 0.05, 0.95);
  const std::vector<int> labels = {1, 0, 0, 1, 1, 0};
  const std::vector<bool> sep = {false, true, false, false, true, false};
  double want = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < 6; ++i) {
    if (sep[i]) continue;
    const double a = alpha.value(i);
    want -= labels[i] * std::log(a) + (1 - labels[i]) * std::log(1 - a);
    ++n;
  }
  EXPECT_NEAR(bce_loss(alpha, labels, sep).item(), want / n, 1e-14);
}

TEST(BinaryCrossEntropy, GradientMatchesFiniteDifferences) {
  Rng rng(7);
  std::vector<num::Parameter> params = {{"logits", random_array(rng, {5})}};
  const std::vector<int> labels = {1, 0, 0, 1, 0};
  const std::vector<bool> sep = {false, false, true, false, false};
  auto loss = [&] { return bce_loss(num::sigmoid(params[0].value), labels, sep); };
  EXPECT_TRUE(num::grad_check(loss, params, 1e-5, 1e-6).passed());
}

TEST(BinaryCrossEntropy, LengthMismatchIsDimensionError) {
  EXPECT_THROW(bce_loss(DiffArray::filled({2}, 0.5), std::vector<int>{1},
                        std::vector<bool>(1, false)),
               DimensionError);
}

}  // namespace
}  // namespace lcbnet
