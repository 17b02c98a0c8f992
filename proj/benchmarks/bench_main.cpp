#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "recdenoise/data.hpp"
#include "recdenoise/denoiser.hpp"
#include "recdenoise/jacobian.hpp"
#include "recdenoise/model.hpp"
#include "recdenoise/train.hpp"

using namespace recdenoise;

namespace {

struct Fixture {
  SplitDataset data;
  ModelConfig model;
  ModelParams params;
  SequenceBatch batch;

  explicit Fixture(std::size_t batch_size) {
    SyntheticSpec spec;
    spec.num_users = 512;
    spec.num_items = 500;
    spec.seed = 1;
    data = split_leave_one_out(generate_synthetic(spec).log);
    model.num_items = data.num_items;
    model.max_len = 10;
    model.dim = 16;
    model.num_blocks = 2;
    model.num_heads = 2;
    std::mt19937_64 rng(3);
    params = ModelParams::init(model, rng);
    batch = BatchSampler(data, model.max_len, batch_size).epoch(rng).front();
  }
};

void BM_ForwardBackward(benchmark::State& state) {
  const Fixture f(static_cast<std::size_t>(state.range(0)));
  ForwardOptions fwd;
  fwd.training = true;
  for (auto _ : state) {
    Tape tape;
    const BoundParams bound = bind(tape, f.params);
    const ModelLoss loss = model_loss(tape, bound, f.batch, {}, f.model, fwd);
    tape.backward(loss.terms.total);
    benchmark::DoNotOptimize(tape.gradient(bound.item_emb));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardBackward)->Arg(32)->Arg(128);

void BM_TrainStep(benchmark::State& state) {
  const Fixture f(128);
  TrainConfig t;
  t.estimator = state.range(0) == 0 ? Estimator::kNone : Estimator::kArm;
  t.beta = state.range(0) == 0 ? 0.0 : 1e-2;
  t.gamma = 1e-3;
  Trainer trainer(f.model, t, f.data);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.train_step(f.batch));
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->ArgNames({"arm"});

void BM_ArmEstimator(benchmark::State& state) {
  const MaskParams phi = MaskParams::constant(2, static_cast<std::size_t>(state.range(0)), 0.5);
  const MaskLoss loss = [](const std::vector<Tensor>& masks) {
    double s = 0.0;
    for (const Tensor& m : masks)
      for (double v : m.data()) s += v;
    return s;
  };
  std::mt19937_64 rng(5);
  for (auto _ : state) benchmark::DoNotOptimize(arm_gradient(phi, loss, 1e-2, rng));
}
BENCHMARK(BM_ArmEstimator)->Arg(10)->Arg(50);

void BM_HutchinsonProbe(benchmark::State& state) {
  const Fixture f(32);
  const std::vector<int> inputs(f.batch.inputs);
  const BlockContext ctx = make_block_context(inputs, f.batch.size, f.model);
  const BlockMap block = [&](const Tensor& x) {
    Tape tape;
    tape.set_grad_enabled(false);
    const BoundParams bound = bind(tape, f.params);
    return transformer_block(tape, tape.constant(x), bound.blocks[0], ctx, nullptr, f.model).value();
  };
  std::mt19937_64 rng(7);
  const Tensor x = draw_probe({f.batch.size * f.model.max_len, f.model.dim}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(hutchinson_frobenius(block, x, 1, 1e-3, rng));
}
BENCHMARK(BM_HutchinsonProbe);

}  // namespace

BENCHMARK_MAIN();
