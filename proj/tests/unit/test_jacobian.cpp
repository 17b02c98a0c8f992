#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "recdenoise/jacobian.hpp"

namespace recdenoise {
namespace {

TEST(Jacobian, JvpOfLinearMapIsExact) {
  std::mt19937_64 rng(1);
  const Tensor a = testing::random_tensor({3, 3}, rng);
  const BlockMap f = [&](const Tensor& x) {
    Tape t;
    return matmul(t.constant(x), t.constant(a)).value();
  };
  const Tensor x = testing::random_tensor({2, 3}, rng), eta = testing::random_tensor({2, 3}, rng);
  const Tensor jv = jvp_finite_difference(f, x, eta, 1e-3);
  Tape t;
  const Tensor want = matmul(t.constant(eta), t.constant(a)).value();
  EXPECT_LT(max_abs_diff(jv, want), 1e-10);
  EXPECT_THROW(jvp_finite_difference(f, x, Tensor({3, 2}), 1e-3), ShapeError);
}

TEST(Jacobian, HutchinsonConvergesToFrobeniusOfLinearMap) {
  std::mt19937_64 rng(2);
  const Tensor a = testing::random_tensor({3, 3}, rng);
  const BlockMap f = [&](const Tensor& x) {
    Tape t;
    return matmul(t.constant(x), t.constant(a)).value();
  };
  // J = I_2 (x) A^T, so |J|_F^2 = 2 |A|_F^2.
  double fro = 0.0;
  for (double v : a.data()) fro += v * v;
  const Tensor x({2, 3}, 0.5);
  EXPECT_NEAR(testing::explicit_frobenius(f, x, 1e-3), 2.0 * fro, 1e-8);
  const double est = hutchinson_frobenius(f, x, 20000, 1e-3, rng);
  EXPECT_NEAR(est / (2.0 * fro), 1.0, 0.05);
  EXPECT_THROW(hutchinson_frobenius(f, x, 0, 1e-3, rng), std::invalid_argument);
}

TEST(Jacobian, TapePenaltyMatchesPlainComputation) {
  std::mt19937_64 rng(3);
  const Tensor w = testing::random_tensor({3, 3}, rng);
  const Tensor x = testing::random_tensor({2, 3}, rng), eta = testing::random_tensor({2, 3}, rng);
  Tape tape;
  Var wv = tape.parameter(w);
  const TapeBlock f = [&](Var in) { return sigmoid(matmul(in, wv)); };
  Var sq = squared_jvp_norm(tape, f, tape.parameter(x), eta, 1e-3);
  const BlockMap plain = [&](const Tensor& in) {
    Tape t;
    return sigmoid(matmul(t.constant(in), t.constant(w))).value();
  };
  const Tensor jv = jvp_finite_difference(plain, x, eta, 1e-3);
  double want = 0.0;
  for (double v : jv.data()) want += v * v;
  EXPECT_NEAR(sq.value().item(), want, 1e-12);

  // d/dW of the penalty matches finite differences of the plain version.
  tape.backward(sq);
  auto value = [&](const Tensor& at) {
    Tape t;
    Var wa = t.constant(at);
    return squared_jvp_norm(t, [&](Var in) { return sigmoid(matmul(in, wa)); }, t.constant(x), eta, 1e-3)
        .value()
        .item();
  };
  const Tensor fd = testing::finite_diff_gradient(value, w, 1e-6);
  EXPECT_LT(testing::max_relative_error(tape.gradient(wv), fd, 1e-8), 1e-5);
}

TEST(Jacobian, PenaltySumsBlocksAndDividesByBatch) {
  Tape tape;
  const std::vector<TapeBlock> blocks{[](Var x) { return scale(x, 2.0); }, [](Var x) { return scale(x, 3.0); }};
  const std::vector<Var> inputs{tape.constant(Tensor({2, 2}, 1.0)), tape.constant(Tensor({2, 2}, 1.0))};
  const Tensor ones({2, 2}, 1.0);
  const std::vector<std::vector<Tensor>> probes{{ones, ones}, {ones}};
  const JacobianPenalty p = hutchinson_penalty(tape, blocks, inputs, probes, 1e-3, 2.0);
  // Block 0: |2 eta|^2 = 16; block 1: |3 eta|^2 = 36; sum / 2.
  EXPECT_NEAR(p.value.value().item(), 26.0, 1e-9);
  EXPECT_EQ(p.probes_run, 3u);
  const std::vector<std::vector<Tensor>> missing{{ones}, {}};
  EXPECT_THROW(hutchinson_penalty(tape, blocks, inputs, missing, 1e-3, 2.0), std::invalid_argument);
}

TEST(Jacobian, ProbeSettingsValidate) {
  JacobianProbe p;
  p.num_projections = 0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p.num_projections = 1;
  p.eps = 0.0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
}

TEST(Jacobian, ModelPenaltyIsFiniteAndProbeCountMatches) {
  ModelConfig c;
  c.num_items = 10;
  c.max_len = 4;
  c.dim = 4;
  c.num_heads = 2;
  c.num_blocks = 2;
  c.dropout = 0.0;
  std::mt19937_64 rng(4);
  const ModelParams params = ModelParams::init(c, rng);
  Tape tape;
  const BoundParams bound = bind(tape, params);
  const std::vector<int> inputs{0, 1, 2, 3, 4, 5, 6, 7};
  const BlockContext ctx = make_block_context(inputs, 2, c);
  const ForwardResult fwd = transformer_forward(tape, embed_sequence(tape, bound, inputs, ctx, c), {}, ctx, c, bound);
  JacobianProbe setting;
  setting.num_projections = 3;
  const auto probes = draw_block_probes(fwd, setting, rng);
  const JacobianPenalty pen = jacobian_penalty(tape, bound, fwd, ctx, {}, c, probes, 1e-3);
  EXPECT_EQ(pen.probes_run, 6u);
  EXPECT_TRUE(std::isfinite(pen.value.value().item()));
  EXPECT_GT(pen.value.value().item(), 0.0);
}

}  // namespace
}  // namespace recdenoise
