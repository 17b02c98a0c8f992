#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "recdenoise/denoiser.hpp"

namespace recdenoise {
namespace {

// Flattens the causal entries of a single-block mask into a gate vector.
std::vector<int> causal_gates(const Tensor& z) {
  std::vector<int> out;
  const std::size_t n = z.dim(0);
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = 0; v <= u; ++v) out.push_back(z[u * n + v] != 0.0 ? 1 : 0);
  return out;
}

TEST(Denoiser, MasksFollowUniformThreshold) {
  MaskParams phi = MaskParams::constant(1, 2, 0.0);
  phi.logits[0] = Tensor::from_rows({{2.0, 0.0}, {-2.0, 0.0}});
  const std::vector<Tensor> u{Tensor::from_rows({{0.85, 0.3}, {0.2, 0.6}})};
  const auto z = masks_from_uniforms(phi, u);
  EXPECT_EQ(z[0], Tensor::from_rows({{1.0, 1.0}, {0.0, 0.0}}));
  // Antithetic: U > g(-phi) = 1 - g(phi).
  const auto anti = antithetic_masks(phi, u);
  EXPECT_EQ(anti[0], Tensor::from_rows({{1.0, 0.0}, {0.0, 1.0}}));
  EXPECT_THROW(masks_from_uniforms(phi, {Tensor({3, 3})}), ShapeError);
}

TEST(Denoiser, L0SurrogateCountsCausalEntries) {
  const MaskParams phi = MaskParams::constant(2, 4, 2.0);
  EXPECT_EQ(phi.gate_count(), 20u);
  EXPECT_NEAR(l0_surrogate(phi), 20.0 * logistic(2.0), 1e-12);
  const auto g = l0_gradient(phi);
  EXPECT_EQ(g[0].at(0, 1), 0.0);
  EXPECT_NEAR(g[1].at(3, 0), logistic(2.0) * (1 - logistic(2.0)), 1e-15);
}

TEST(Denoiser, L0GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(1);
  MaskParams phi;
  phi.logits.push_back(testing::random_tensor({4, 4}, rng));
  auto f = [&](const Tensor& t) {
    MaskParams p;
    p.logits.push_back(t);
    return l0_surrogate(p);
  };
  const Tensor fd = testing::finite_diff_gradient(f, phi.logits[0], 1e-6);
  EXPECT_LT(testing::max_relative_error(l0_gradient(phi)[0], fd, 1e-10), 1e-8);
}

TEST(Denoiser, InferenceMaskClipsAtOneHalf) {
  MaskParams phi = MaskParams::constant(1, 3, 0.0);
  phi.logits[0].at(1, 0) = 1.0;
  phi.logits[0].at(2, 2) = -1.0;
  phi.logits[0].at(0, 2) = 5.0;  // non-causal
  const auto m = inference_mask(phi);
  EXPECT_EQ(m[0].at(0, 0), 0.0);  // g = 0.5 exactly is dropped
  EXPECT_NEAR(m[0].at(1, 0), logistic(1.0), 1e-15);
  EXPECT_EQ(m[0].at(2, 2), 0.0);
  EXPECT_EQ(m[0].at(0, 2), 0.0);
  EXPECT_EQ(retained_count(m), 1u);
  EXPECT_NEAR(mask_density(m), 1.0 / 6.0, 1e-15);
}

TEST(Denoiser, WindowMask) {
  const Tensor w = window_mask(4, 2);
  EXPECT_EQ(w, Tensor::from_rows({{1, 0, 0, 0}, {1, 1, 0, 0}, {0, 1, 1, 0}, {0, 0, 1, 1}}));
  EXPECT_EQ(window_mask(3, 10), Tensor::from_rows({{1, 0, 0}, {1, 1, 0}, {1, 1, 1}}));
  EXPECT_THROW(window_mask(3, 0), std::invalid_argument);
}

TEST(Denoiser, EstimatorCallCounts) {
  const MaskParams phi = MaskParams::constant(1, 3, 0.3);
  int calls = 0;
  const MaskLoss loss = [&](const std::vector<Tensor>&) { return static_cast<double>(++calls); };
  std::mt19937_64 rng(2);
  EXPECT_EQ(arm_gradient(phi, loss, 0.0, rng).loss_evaluations, 2);
  EXPECT_EQ(calls, 2);
  EXPECT_EQ(ar_gradient(phi, loss, 0.0, rng).loss_evaluations, 1);
  EXPECT_EQ(calls, 3);
}

TEST(Denoiser, ConstantLossGivesZeroArmGradient) {
  const MaskParams phi = MaskParams::constant(2, 3, 0.7);
  std::mt19937_64 rng(3);
  const auto g = arm_gradient(phi, [](const std::vector<Tensor>&) { return 4.2; }, 0.0, rng);
  for (const auto& t : g.gradient)
    for (double v : t.data()) EXPECT_EQ(v, 0.0);
}

TEST(Denoiser, EstimatorsAreUnbiasedOnSmallProblem) {
  // Three gates (n = 2) with a non-linear loss.
  std::mt19937_64 rng(4);
  MaskParams phi = MaskParams::constant(1, 2, 0.0);
  phi.logits[0] = Tensor::from_rows({{0.4, 0.0}, {-0.8, 1.1}});
  const std::vector<double> w{1.5, -2.0, 0.7};
  auto f_gates = [&](const std::vector<int>& z) {
    double s = 0.3;
    for (std::size_t i = 0; i < z.size(); ++i) s += w[i] * z[i];
    return s * s + z[0] * z[2];
  };
  const MaskLoss loss = [&](const std::vector<Tensor>& m) { return f_gates(causal_gates(m[0])); };
  const std::vector<double> causal_phi{0.4, -0.8, 1.1};
  const auto exact = testing::exact_bernoulli_gradient(f_gates, causal_phi);

  const int samples = 40000;
  for (bool use_arm : {true, false}) {
    std::vector<double> sum(3, 0.0), sq(3, 0.0);
    for (int s = 0; s < samples; ++s) {
      const auto g = use_arm ? arm_gradient(phi, loss, 0.0, rng) : ar_gradient(phi, loss, 0.0, rng);
      const double vals[3] = {g.gradient[0].at(0, 0), g.gradient[0].at(1, 0), g.gradient[0].at(1, 1)};
      for (int i = 0; i < 3; ++i) {
        sum[i] += vals[i];
        sq[i] += vals[i] * vals[i];
      }
      EXPECT_EQ(g.gradient[0].at(0, 1), 0.0);
    }
    for (int i = 0; i < 3; ++i) {
      const double mean = sum[i] / samples;
      const double se = std::sqrt((sq[i] / samples - mean * mean) / samples);
      EXPECT_NEAR(mean, exact[i], 4.0 * se) << (use_arm ? "arm" : "ar") << " gate " << i;
    }
  }
}

TEST(Denoiser, BetaAddsL0Gradient) {
  const MaskParams phi = MaskParams::constant(1, 2, 1.0);
  const std::vector<Tensor> u{Tensor({2, 2}, 0.5)};
  const auto with = arm_gradient_from_losses(phi, u, 3.0, 1.0, 0.5);
  const auto without = arm_gradient_from_losses(phi, u, 3.0, 1.0, 0.0);
  EXPECT_NEAR(with[0].at(1, 0) - without[0].at(1, 0), 0.5 * logistic(1.0) * (1 - logistic(1.0)), 1e-15);
}

TEST(Denoiser, MaskCsvCoversCausalPairs) {
  const MaskParams phi = MaskParams::constant(2, 4, 2.0);
  std::ostringstream out;
  write_mask_csv(out, phi, 1);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "u,v,keep_prob");
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    const double p = std::stod(line.substr(line.rfind(',') + 1));
    EXPECT_NEAR(p, 0.8807970779778823, 1e-15);
  }
  EXPECT_EQ(rows, 10);
  EXPECT_THROW(write_mask_csv(out, phi, 2), std::out_of_range);
}

}  // namespace
}  // namespace recdenoise
