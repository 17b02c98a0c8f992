#include "recdenoise/jacobian.hpp"

#include <optional>
#include <stdexcept>
#include <string>

namespace recdenoise {

void JacobianProbe::validate() const {
  if (num_projections < 1) throw std::invalid_argument("JacobianProbe.num_projections must be >= 1");
  if (!(eps > 0.0)) throw std::invalid_argument("JacobianProbe.eps must be > 0");
}

Tensor jvp_finite_difference(const BlockMap& f, const Tensor& x, const Tensor& eta, double eps) {
  if (x.shape() != eta.shape()) {
    throw ShapeError("jvp: probe shape " + shape_to_string(eta.shape()) + " differs from input " +
                     shape_to_string(x.shape()));
  }
  Tensor plus = x, minus = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    plus[i] += eps * eta[i];
    minus[i] -= eps * eta[i];
  }
  Tensor fp = f(plus);
  const Tensor fm = f(minus);
  if (fp.shape() != fm.shape()) throw ShapeError("jvp: block map changed output shape");
  for (std::size_t i = 0; i < fp.size(); ++i) fp[i] = (fp[i] - fm[i]) / (2.0 * eps);
  return fp;
}

Tensor draw_probe(const Shape& shape, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor eta(shape, 0.0);
  for (auto& v : eta.storage()) v = normal(rng);
  return eta;
}

double hutchinson_frobenius(const BlockMap& f, const Tensor& x, std::size_t probes, double eps, std::mt19937_64& rng) {
  if (probes < 1) throw std::invalid_argument("hutchinson_frobenius: probes must be >= 1");
  double total = 0.0;
  for (std::size_t p = 0; p < probes; ++p) {
    const Tensor jv = jvp_finite_difference(f, x, draw_probe(x.shape(), rng), eps);
    double sq = 0.0;
    for (double v : jv.data()) sq += v * v;
    total += sq;
  }
  return total / static_cast<double>(probes);
}

Var squared_jvp_norm(Tape& tape, const TapeBlock& f, Var x, const Tensor& eta, double eps) {
  if (x.shape() != eta.shape()) {
    throw ShapeError("jvp: probe shape " + shape_to_string(eta.shape()) + " differs from input " +
                     shape_to_string(x.shape()));
  }
  Tensor step = eta;
  for (auto& v : step.storage()) v *= eps;
  Var delta = tape.constant(std::move(step));
  Var jv = scale(sub(f(add(x, delta)), f(sub(x, delta))), 1.0 / (2.0 * eps));
  return reduce_sum(multiply(jv, jv));
}

JacobianPenalty hutchinson_penalty(Tape& tape, std::span<const TapeBlock> blocks, std::span<const Var> inputs,
                                   const std::vector<std::vector<Tensor>>& probes, double eps, double normalizer) {
  if (blocks.size() != inputs.size() || probes.size() != blocks.size()) {
    throw std::invalid_argument("hutchinson_penalty: blocks, inputs and probes differ in length");
  }
  if (blocks.empty()) throw std::invalid_argument("hutchinson_penalty: no blocks");
  JacobianPenalty out;
  std::optional<Var> total;
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    if (probes[l].empty()) throw std::invalid_argument("hutchinson_penalty: block " + std::to_string(l) + " has no probes");
    std::optional<Var> block_sum;
    for (const Tensor& eta : probes[l]) {
      Var term = squared_jvp_norm(tape, blocks[l], inputs[l], eta, eps);
      block_sum = block_sum ? add(*block_sum, term) : term;
      ++out.probes_run;
    }
    Var mean = scale(*block_sum, 1.0 / static_cast<double>(probes[l].size()));
    total = total ? add(*total, mean) : mean;
  }
  out.value = scale(*total, 1.0 / normalizer);
  return out;
}

JacobianPenalty jacobian_penalty(Tape& tape, const BoundParams& params, const ForwardResult& forward,
                                 const BlockContext& ctx, std::span<const Tensor> masks, const ModelConfig& config,
                                 const std::vector<std::vector<Tensor>>& probes, double eps) {
  std::vector<TapeBlock> blocks;
  for (std::size_t l = 0; l < params.blocks.size(); ++l) {
    const Tensor* mask = masks.empty() ? nullptr : &masks[l];
    const BlockVars* vars = &params.blocks[l];
    blocks.push_back([&tape, vars, &ctx, mask, &config](Var x) {
      return transformer_block(tape, x, *vars, ctx, mask, config);
    });
  }
  return hutchinson_penalty(tape, blocks, forward.block_inputs, probes, eps, static_cast<double>(ctx.batch));
}

std::vector<std::vector<Tensor>> draw_block_probes(const ForwardResult& forward, const JacobianProbe& probe,
                                                   std::mt19937_64& rng) {
  probe.validate();
  std::vector<std::vector<Tensor>> out(forward.block_inputs.size());
  for (std::size_t l = 0; l < out.size(); ++l) {
    for (std::size_t p = 0; p < probe.num_projections; ++p) out[l].push_back(draw_probe(forward.block_inputs[l].shape(), rng));
  }
  return out;
}

}  // namespace recdenoise
