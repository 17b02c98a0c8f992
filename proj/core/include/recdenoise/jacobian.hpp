#pragma once

#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "recdenoise/autograd.hpp"
#include "recdenoise/model.hpp"
#include "recdenoise/tensor.hpp"

namespace recdenoise {

/// Hutchinson probing settings for the Frobenius-norm penalty.
struct JacobianProbe {
  std::size_t num_projections = 1;  // per block per batch
  double eps = 1e-3;                // central-difference step

  void validate() const;
};

/// Plain (tape-free) block map used for diagnostics and tests.
using BlockMap = std::function<Tensor(const Tensor&)>;

/// (f(x + eps*eta) - f(x - eps*eta)) / (2 eps): a central-difference J*eta.
Tensor jvp_finite_difference(const BlockMap& f, const Tensor& x, const Tensor& eta, double eps);

/// Standard-normal probe with the shape of `like`.
Tensor draw_probe(const Shape& shape, std::mt19937_64& rng);

/// Mean over `probes` Gaussian probes of |J eta|^2, an unbiased estimate of
/// |J|_F^2 (up to the finite-difference truncation error).
double hutchinson_frobenius(const BlockMap& f, const Tensor& x, std::size_t probes, double eps, std::mt19937_64& rng);

/// Block map recorded on a tape; must be deterministic.
using TapeBlock = std::function<Var(Var)>;

/// |(f(x + eps*eta) - f(x - eps*eta)) / (2 eps)|^2 as a differentiable
/// scalar. Gradients flow into f's parameters and into x.
Var squared_jvp_norm(Tape& tape, const TapeBlock& f, Var x, const Tensor& eta, double eps);

struct JacobianPenalty {
  Var value;                   // sum over blocks of the probe mean, / normalizer
  std::size_t probes_run = 0;  // number of squared_jvp_norm evaluations
};

/// Sum over blocks of the Hutchinson estimate. `probes[l]` holds the probe
/// vectors for block l, each shaped like inputs[l]. The result is divided by
/// `normalizer` (the number of sequences in the batch).
JacobianPenalty hutchinson_penalty(Tape& tape, std::span<const TapeBlock> blocks, std::span<const Var> inputs,
                                   const std::vector<std::vector<Tensor>>& probes, double eps, double normalizer);

/// R_J for the transformer blocks of a forward pass: each block is probed
/// at its recorded input with its current mask held fixed and dropout off.
JacobianPenalty jacobian_penalty(Tape& tape, const BoundParams& params, const ForwardResult& forward,
                                 const BlockContext& ctx, std::span<const Tensor> masks, const ModelConfig& config,
                                 const std::vector<std::vector<Tensor>>& probes, double eps);

/// Draws num_projections probes for every block input of `forward`.
std::vector<std::vector<Tensor>> draw_block_probes(const ForwardResult& forward, const JacobianProbe& probe,
                                                   std::mt19937_64& rng);

}  // namespace recdenoise
