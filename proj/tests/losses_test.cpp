// Copyright 2026 The cfex Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "cfex/losses.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "cfex/error.hpp"
#include "cfex/model.hpp"
#include "support.hpp"

namespace cfex {
namespace {

TEST(CrossEntropy, TwoOneExample) {
  const std::vector<double> probs = softmax(std::vector<double>{2.0, 1.0});
  EXPECT_NEAR(ce_loss(probs, 0), std::log1p(std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(ce_loss(probs, 0), 0.3133, 1e-4);
}

TEST(CrossEntropy, UniformAndOneHot) {
  for (std::size_t c : {2u, 5u, 10u}) {
    const std::vector<double> uniform(c, 1.0 / static_cast<double>(c));
    EXPECT_NEAR(ce_loss(uniform, c - 1), std::log(static_cast<double>(c)), 1e-12);
  }
  EXPECT_EQ(ce_loss(std::vector<double>{0.0, 1.0}, 1), 0.0);
}

TEST(CrossEntropy, FloorsZeroProbability) {
  EXPECT_NEAR(ce_loss(std::vector<double>{1.0, 0.0}, 1), -std::log(kProbabilityFloor), 1e-9);
}

TEST(L1, SumOfEntries) {
  EXPECT_EQ(l1_loss(std::vector<double>(4, 0.5)), 2.0);
  EXPECT_EQ(l1_loss(std::vector<double>{}), 0.0);
  EXPECT_THROW(l1_loss(std::vector<double>{1.0, -0.5}), ValidationError);
}

TEST(LogitsContribution, HandExample) {
  ClassifierHead head{Matrix<float>(2, 1, 0.0f), {0.0f}};
  head.weights(0, 0) = 0.5f;
  head.weights(1, 0) = -1.0f;
  EXPECT_DOUBLE_EQ(logits_contribution(std::vector<double>{1.0, 0.0},
                                       std::vector<float>{2.0f, 3.0f}, head, 0),
                   1.0);
}

// Property: with the full mask the contribution is the target logit minus bias.
TEST(LogitsContribution, FullMaskIsTheTargetLogit) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    RandomStream rng(seed, streams::kSamples);
    const ClassifierHead head = cfex::testing::random_head(6, 3, rng);
    const std::vector<float> g = cfex::testing::random_features(6, rng);
    const std::vector<double> z = classify(g, head).logits;
    for (std::size_t c = 0; c < 3; ++c) {
      EXPECT_NEAR(logits_contribution(std::vector<double>(6, 1.0), g, head, c),
                  z[c] - head.bias[c], 1e-9);
    }
  }
}

TEST(LogitsContribution, LinearInTheMask) {
  RandomStream rng(7, streams::kSamples);
  const ClassifierHead head = cfex::testing::random_head(5, 2, rng);
  const std::vector<float> g = cfex::testing::random_features(5, rng);
  std::vector<double> a(5), b(5), sum(5);
  for (std::size_t k = 0; k < 5; ++k) {
    a[k] = rng.uniform(0.0, 0.5);
    b[k] = rng.uniform(0.0, 0.5);
    sum[k] = a[k] + b[k];
  }
  EXPECT_NEAR(logits_contribution(sum, g, head, 1),
              logits_contribution(a, g, head, 1) + logits_contribution(b, g, head, 1), 1e-12);
}

// Batch-mean reference built from the per-sample pieces.
LossBreakdown reference_mc(std::span<const Sample> batch, const McHead& head,
                           const ClassifierHead& classifier, double lambda) {
  LossBreakdown out;
  for (const Sample& s : batch) {
    const std::vector<double> f = mc_forward_train(head, s.features);
    out.ce += ce_loss(masked_classify(s.features, f, classifier).probs, s.target);
    out.l1 += std::accumulate(f.begin(), f.end(), 0.0);
    out.logits_term += logits_contribution(f, s.features, classifier, s.target);
  }
  const double m = static_cast<double>(batch.size());
  out.ce /= m;
  out.l1 /= m;
  out.logits_term /= m;
  out.total = out.ce + lambda * out.l1 - out.logits_term;
  return out;
}

TEST(TotalLoss, McComposesFromPieces) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const GradCheckProblem p = make_gradcheck_problem(8, 3, 4, seed);
    const std::vector<Sample> batch = p.batch();
    for (double lambda : {0.0, 0.5, 2.0}) {
      const LossBreakdown got = mc_total_loss(batch, p.mc, p.classifier, lambda);
      const LossBreakdown want = reference_mc(batch, p.mc, p.classifier, lambda);
      EXPECT_NEAR(got.ce, want.ce, 1e-10);
      EXPECT_NEAR(got.l1, want.l1, 1e-10);
      EXPECT_NEAR(got.logits_term, want.logits_term, 1e-10);
      EXPECT_NEAR(got.total, want.total, 1e-10);

      const LossBreakdown off = mc_total_loss(batch, p.mc, p.classifier, lambda, LogitsTerm::kOff);
      EXPECT_NEAR(off.total, want.ce + lambda * want.l1, 1e-10);
    }
  }
}

TEST(TotalLoss, MiComposesFromPieces) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const GradCheckProblem p = make_gradcheck_problem(8, 3, 4, seed);
    const std::vector<Sample> batch = p.batch();
    double ce = 0.0, l1 = 0.0;
    for (const Sample& s : batch) {
      const std::vector<double> a = mi_forward(p.mi, s.features);
      ce += ce_loss(additive_classify(s.features, a, p.classifier).probs, s.target);
      l1 += std::accumulate(a.begin(), a.end(), 0.0);
    }
    ce /= static_cast<double>(batch.size());
    l1 /= static_cast<double>(batch.size());
    const LossBreakdown got = mi_total_loss(batch, p.mi, p.classifier, 1.5);
    EXPECT_NEAR(got.ce, ce, 1e-10);
    EXPECT_NEAR(got.l1, l1, 1e-10);
    EXPECT_NEAR(got.total, ce + 1.5 * l1, 1e-10);
    EXPECT_NEAR(mi_total_loss(batch, p.mi, p.classifier, 0.0).total, ce, 1e-10);
  }
}

TEST(Gradient, DeadUnitsGetNothing) {
  GradCheckProblem p = make_gradcheck_problem(6, 3, 4, 2);
  p.mc.layer.bias[2] = -50.0;
  p.mi.layer.bias[4] = -50.0;
  const std::vector<Sample> batch = p.batch();
  const LayerGradient mc = grad_mc(batch, p.mc, p.classifier, 1.0);
  const LayerGradient mi = grad_mi(batch, p.mi, p.classifier, 1.0);
  EXPECT_EQ(mc.bias[2], 0.0);
  EXPECT_EQ(mi.bias[4], 0.0);
  for (std::size_t j = 0; j < 6; ++j) {
    EXPECT_EQ(mc.weights(2, j), 0.0);
    EXPECT_EQ(mi.weights(4, j), 0.0);
  }
}

// The sparsity term enters linearly, so the gradient is affine in lambda.
TEST(Gradient, AffineInLambda) {
  const GradCheckProblem p = make_gradcheck_problem(6, 3, 4, 3);
  const std::vector<Sample> batch = p.batch();
  const std::vector<double> g0 = flatten(grad_mc(batch, p.mc, p.classifier, 0.0));
  const std::vector<double> g1 = flatten(grad_mc(batch, p.mc, p.classifier, 1.0));
  const std::vector<double> g2 = flatten(grad_mc(batch, p.mc, p.classifier, 2.0));
  for (std::size_t i = 0; i < g0.size(); ++i) EXPECT_NEAR(g2[i] - g1[i], g1[i] - g0[i], 1e-12);

  const std::vector<double> m0 = flatten(grad_mi(batch, p.mi, p.classifier, 0.0));
  const std::vector<double> m1 = flatten(grad_mi(batch, p.mi, p.classifier, 1.0));
  const std::vector<double> m2 = flatten(grad_mi(batch, p.mi, p.classifier, 2.0));
  for (std::size_t i = 0; i < m0.size(); ++i) EXPECT_NEAR(m2[i] - m1[i], m1[i] - m0[i], 1e-12);
}

TEST(Gradient, ReportsTheSameLossAsTheForwardPass) {
  const GradCheckProblem p = make_gradcheck_problem(6, 3, 4, 4);
  const std::vector<Sample> batch = p.batch();
  LossBreakdown seen;
  grad_mc(batch, p.mc, p.classifier, 2.0, LogitsTerm::kSigned, &seen);
  EXPECT_NEAR(seen.total, mc_total_loss(batch, p.mc, p.classifier, 2.0).total, 1e-12);
  grad_mi(batch, p.mi, p.classifier, 2.0, &seen);
  EXPECT_NEAR(seen.total, mi_total_loss(batch, p.mi, p.classifier, 2.0).total, 1e-12);
}

TEST(FiniteDiff, ExactOnAQuadratic) {
  const std::vector<double> x{0.3, -1.2, 2.5};
  const auto loss = [](std::span<const double> p) {
    double s = 0.0;
    for (double v : p) s += v * v;
    return s;
  };
  const std::vector<double> analytic{0.6, -2.4, 5.0};
  const FiniteDiffResult r = finite_diff_check(loss, x, analytic, 1e-4);
  EXPECT_LE(r.max_relative_error, 1e-8);
  EXPECT_EQ(r.checked, 3u);

  const std::vector<double> wrong{0.6, -2.4, 4.0};
  const FiniteDiffResult bad = finite_diff_check(loss, x, wrong, 1e-4);
  EXPECT_GT(bad.max_relative_error, 0.1);
  EXPECT_EQ(bad.worst_index, 2u);

  const FiniteDiffResult skipped = finite_diff_check(loss, x, wrong, 1e-4, {false, false, true});
  EXPECT_EQ(skipped.excluded, 1u);
  EXPECT_LE(skipped.max_relative_error, 1e-8);
}

TEST(FiniteDiff, AnalyticGradientsAgree) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const GradCheckProblem p = make_gradcheck_problem(6, 3, 4, seed);
    const std::vector<Sample> batch = p.batch();
    for (LogitsTerm term : {LogitsTerm::kSigned, LogitsTerm::kAbsolute, LogitsTerm::kOff}) {
      EXPECT_LE(check_mc_gradient(batch, p.mc, p.classifier, 1.0, 1e-4, 1e-3, term)
                    .max_relative_error,
                1e-4);
    }
    EXPECT_LE(check_mi_gradient(batch, p.mi, p.classifier, 1.0).max_relative_error, 1e-4);
  }
}

TEST(Flatten, RoundTrips) {
  RandomStream rng(5, streams::kSamples);
  DenseLayer layer(3);
  for (double& w : layer.weights.flat()) w = rng.normal();
  for (double& b : layer.bias) b = rng.normal();
  const std::vector<double> flat = flatten(layer);
  ASSERT_EQ(flat.size(), 12u);
  EXPECT_EQ(flat[1], layer.weights(0, 1));
  EXPECT_EQ(flat[9], layer.bias[0]);
  DenseLayer copy(3);
  assign_flat(copy, flat);
  EXPECT_EQ(copy, layer);
}

}  // namespace
}  // namespace cfex
