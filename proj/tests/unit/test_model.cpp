#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "recdenoise/denoiser.hpp"
#include "recdenoise/model.hpp"

namespace recdenoise {
namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.num_items = 12;
  c.max_len = 6;
  c.dim = 8;
  c.num_blocks = 2;
  c.num_heads = 2;
  c.dropout = 0.0;
  return c;
}

std::vector<double> forward_states(const ModelParams& p, const ModelConfig& c, const std::vector<int>& inputs,
                                   std::size_t batch, const std::vector<Tensor>& masks = {}) {
  Tape tape;
  const BoundParams bound = bind(tape, p);
  const BlockContext ctx = make_block_context(inputs, batch, c);
  const ForwardResult fwd = transformer_forward(tape, embed_sequence(tape, bound, inputs, ctx, c), masks, ctx, c, bound);
  const auto v = fwd.output.value().data();
  return {v.begin(), v.end()};
}

SequenceBatch tiny_batch() {
  SequenceBatch b;
  b.size = 2;
  b.seq_len = 6;
  b.inputs = {0, 0, 3, 5, 7, 2, 1, 4, 6, 8, 9, 10};
  b.positives = {0, 0, 5, 7, 2, 11, 4, 6, 8, 9, 10, 12};
  b.negatives = {0, 0, 1, 1, 4, 4, 2, 3, 3, 5, 5, 7};
  b.users = {0, 1};
  return b;
}

TEST(ModelConfig, ValidateNamesField) {
  ModelConfig c = tiny_config();
  c.num_heads = 3;
  try {
    c.validate();
    FAIL() << "expected invalid_argument";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("num_heads"), std::string::npos);
  }
}

TEST(Model, InitKeepsPaddingRowZero) {
  std::mt19937_64 rng(1);
  const ModelParams p = ModelParams::init(tiny_config(), rng);
  for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(p.item_emb.at(0, c), 0.0);
  EXPECT_EQ(p.item_emb.shape(), (Shape{13, 8}));
  EXPECT_EQ(p.tensor_count(), 2u + 2u * 11u);
}

TEST(Model, ForwardMatchesLoopOracle) {
  const ModelConfig c = tiny_config();
  std::mt19937_64 rng(2);
  const ModelParams p = ModelParams::init(c, rng);
  const SequenceBatch b = tiny_batch();
  const auto got = forward_states(p, c, b.inputs, b.size);
  const auto want = testing::loop_forward(p, c, b.inputs, b.size, {});
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12) << i;

  MaskParams phi = MaskParams::constant(2, 6, 0.0);
  std::mt19937_64 mrng(3);
  const auto masks = sample_masks(phi, mrng).masks;
  const auto got_m = forward_states(p, c, b.inputs, b.size, masks);
  const auto want_m = testing::loop_forward(p, c, b.inputs, b.size, masks);
  for (std::size_t i = 0; i < got_m.size(); ++i) EXPECT_NEAR(got_m[i], want_m[i], 1e-12) << i;
}

TEST(Model, AllOnesMaskIsBitwiseNoMask) {
  const ModelConfig c = tiny_config();
  std::mt19937_64 rng(4);
  const ModelParams p = ModelParams::init(c, rng);
  const SequenceBatch b = tiny_batch();
  const std::vector<Tensor> ones(2, Tensor({6, 6}, 1.0));
  EXPECT_EQ(forward_states(p, c, b.inputs, b.size), forward_states(p, c, b.inputs, b.size, ones));
}

TEST(Model, FutureChangesDoNotLeak) {
  const ModelConfig c = tiny_config();
  std::mt19937_64 rng(5);
  const ModelParams p = ModelParams::init(c, rng);
  std::vector<int> base{2, 4, 6, 8, 10, 12};
  const auto ref = forward_states(p, c, base, 1);
  for (std::size_t t = 0; t + 1 < 6; ++t) {
    std::vector<int> changed = base;
    for (std::size_t s = t + 1; s < 6; ++s) changed[s] = 1 + static_cast<int>((s * 7 + t) % 12);
    const auto out = forward_states(p, c, changed, 1);
    for (std::size_t r = 0; r <= t; ++r)
      for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(out[r * 8 + k], ref[r * 8 + k]);
  }
}

TEST(Model, PaddingRowsAreZero) {
  const ModelConfig c = tiny_config();
  std::mt19937_64 rng(6);
  const ModelParams p = ModelParams::init(c, rng);
  const auto out = forward_states(p, c, tiny_batch().inputs, 2);
  for (std::size_t k = 0; k < 16; ++k) EXPECT_EQ(out[k], 0.0);
}

TEST(Model, MaskShapeIsChecked) {
  const ModelConfig c = tiny_config();
  std::mt19937_64 rng(7);
  const ModelParams p = ModelParams::init(c, rng);
  const std::vector<Tensor> bad(2, Tensor({5, 5}, 1.0));
  EXPECT_THROW(forward_states(p, c, tiny_batch().inputs, 2, bad), ShapeError);
  const std::vector<Tensor> too_few(1, Tensor({6, 6}, 1.0));
  EXPECT_THROW(forward_states(p, c, tiny_batch().inputs, 2, too_few), std::invalid_argument);
}

TEST(Model, BceMatchesHandComputation) {
  const ModelConfig c = tiny_config();
  std::mt19937_64 rng(8);
  const ModelParams p = ModelParams::init(c, rng);
  const SequenceBatch b = tiny_batch();
  const auto states = forward_states(p, c, b.inputs, b.size);
  double want = 0.0;
  for (std::size_t i = 0; i < b.inputs.size(); ++i) {
    if (b.inputs[i] == 0) continue;
    const std::span<const double> s(states.data() + i * 8, 8);
    const double pos = score(s, b.positives[i], p), neg = score(s, b.negatives[i], p);
    want -= std::log(1.0 / (1.0 + std::exp(-pos))) + std::log(1.0 - 1.0 / (1.0 + std::exp(-neg)));
  }
  want /= 2.0;
  Tape tape;
  const ModelLoss loss = model_loss(tape, bind(tape, p), b, {}, c);
  EXPECT_NEAR(loss.terms.bce.value().item(), want, 1e-12);
  EXPECT_EQ(loss.terms.weight_decay.value().item(), 0.0);
}

TEST(Model, StrictHistoryRejectsSeenNegative) {
  const ModelConfig c = tiny_config();
  std::mt19937_64 rng(9);
  const ModelParams p = ModelParams::init(c, rng);
  const SequenceBatch b = tiny_batch();
  const std::vector<std::vector<int>> hist{{3, 5, 7, 2, 11}, {1, 4, 6, 8, 9, 10, 12}};
  BceOptions strict;
  strict.strict_histories = &hist;
  Tape tape;
  EXPECT_NO_THROW(model_loss(tape, bind(tape, p), b, {}, c, {}, strict));
  const std::vector<std::vector<int>> overlapping{{3, 5, 7, 2, 11, 1}, {1, 4, 6, 8, 9, 10, 12}};
  strict.strict_histories = &overlapping;
  Tape tape2;
  EXPECT_THROW(model_loss(tape2, bind(tape2, p), b, {}, c, {}, strict), std::invalid_argument);
}

TEST(Model, BceGradientMatchesFiniteDifferences) {
  ModelConfig c = tiny_config();
  c.weight_decay = 0.01;
  std::mt19937_64 rng(10);
  const ModelParams p = ModelParams::init(c, rng);
  const SequenceBatch b = tiny_batch();
  Tape tape;
  const BoundParams bound = bind(tape, p);
  const ModelLoss loss = model_loss(tape, bound, b, {}, c);
  tape.backward(loss.terms.total);
  const auto vars = bound.all();
  std::size_t k = 0;
  p.for_each([&](const std::string& name, const Tensor& t) {
    auto f = [&](const Tensor& at) {
      ModelParams q = p;
      q.for_each([&](const std::string& n2, Tensor& t2) {
        if (n2 == name) t2 = at;
      });
      Tape t2;
      return model_loss(t2, bind(t2, q), b, {}, c).terms.total.value().item();
    };
    const Tensor fd = testing::finite_diff_gradient(f, t, 1e-5);
    EXPECT_LT(testing::max_relative_error(tape.gradient(vars[k]), fd, 1e-8), 1e-4) << name;
    ++k;
  });
}

TEST(Model, DropoutIsReplayable) {
  ModelConfig c = tiny_config();
  c.dropout = 0.5;
  std::mt19937_64 rng(11);
  const ModelParams p = ModelParams::init(c, rng);
  const SequenceBatch b = tiny_batch();
  ForwardOptions opt;
  opt.training = true;
  opt.dropout_seed = 42;
  Tape t1, t2, t3;
  const double a = model_loss(t1, bind(t1, p), b, {}, c, opt).terms.bce.value().item();
  const double again = model_loss(t2, bind(t2, p), b, {}, c, opt).terms.bce.value().item();
  opt.dropout_seed = 43;
  const double other = model_loss(t3, bind(t3, p), b, {}, c, opt).terms.bce.value().item();
  EXPECT_EQ(a, again);
  EXPECT_NE(a, other);
}

}  // namespace
}  // namespace recdenoise
