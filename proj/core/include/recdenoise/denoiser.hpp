#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <random>
#include <vector>

#include "recdenoise/tensor.hpp"

namespace recdenoise {

/// Standard logistic function g(x) = 1 / (1 + e^-x).
double logistic(double x);

/// Causal (query u, key v) pairs are the ones with v <= u.
inline bool is_causal_pair(std::size_t u, std::size_t v) { return v <= u; }

/// Per-block mask logits Phi (n x n). Entries above the diagonal are unused.
///
/// The masks are indexed by position pairs only and are shared by every
/// sequence and every head of a block.
struct MaskParams {
  std::vector<Tensor> logits;

  static MaskParams constant(std::size_t num_blocks, std::size_t seq_len, double value);
  std::size_t num_blocks() const { return logits.size(); }
  std::size_t seq_len() const { return logits.empty() ? 0 : logits.front().dim(0); }
  /// Number of causal gates summed over blocks: L * n(n+1)/2.
  std::size_t gate_count() const;
  bool all_finite() const;
};

/// Uniform draws U and the binary masks Z = I[U < g(Phi)] built from them.
struct MaskSample {
  std::vector<Tensor> uniforms;
  std::vector<Tensor> masks;
};

std::vector<Tensor> draw_uniforms(const MaskParams& phi, std::mt19937_64& rng);
/// Z = I[U < g(Phi)], evaluated on every entry.
std::vector<Tensor> masks_from_uniforms(const MaskParams& phi, const std::vector<Tensor>& uniforms);
/// The antithetic configuration I[U > g(-Phi)].
std::vector<Tensor> antithetic_masks(const MaskParams& phi, const std::vector<Tensor>& uniforms);
MaskSample sample_masks(const MaskParams& phi, std::mt19937_64& rng);

/// Sum of g(Phi) over causal entries of every block.
double l0_surrogate(const MaskParams& phi);
/// d l0_surrogate / d Phi = g(1-g) on causal entries, 0 elsewhere.
std::vector<Tensor> l0_gradient(const MaskParams& phi);

/// Loss of the downstream model for a given set of per-block masks.
using MaskLoss = std::function<double(const std::vector<Tensor>& masks)>;

struct MaskGradient {
  std::vector<Tensor> gradient;  // same layout as MaskParams::logits
  MaskSample sample;
  int loss_evaluations = 0;
};

/// Single-sample AR estimate: L(Z) (1 - 2U) + beta g'(Phi), given the loss
/// already evaluated at Z = I[U < g(Phi)].
std::vector<Tensor> ar_gradient_from_loss(const MaskParams& phi, const std::vector<Tensor>& uniforms,
                                          double loss_at_sample, double beta);
/// Single-sample ARM estimate:
/// (L(I[U > g(-Phi)]) - L(I[U < g(Phi)])) (U - 1/2) + beta g'(Phi).
std::vector<Tensor> arm_gradient_from_losses(const MaskParams& phi, const std::vector<Tensor>& uniforms,
                                             double loss_antithetic, double loss_at_sample, double beta);

/// Draws U and evaluates `loss` once.
MaskGradient ar_gradient(const MaskParams& phi, const MaskLoss& loss, double beta, std::mt19937_64& rng);
/// Draws U once and evaluates `loss` twice (sample and antithetic masks).
MaskGradient arm_gradient(const MaskParams& phi, const MaskLoss& loss, double beta, std::mt19937_64& rng);

/// Deterministic evaluation-time mask: g(Phi) where g(Phi) > 0.5, exactly 0
/// where g(Phi) <= 0.5 and on non-causal entries.
std::vector<Tensor> inference_mask(const MaskParams& phi);

/// Causal sliding window: 1 iff 0 <= u - v < width.
Tensor window_mask(std::size_t seq_len, std::size_t width);

/// Count of non-zero causal entries over the given masks.
std::size_t retained_count(const std::vector<Tensor>& masks);
/// retained_count divided by the number of causal entries.
double mask_density(const std::vector<Tensor>& masks);

/// CSV with header `u,v,keep_prob` and one row per causal pair of `block`,
/// keep_prob = g(Phi_uv).
void write_mask_csv(std::ostream& out, const MaskParams& phi, std::size_t block);

}  // namespace recdenoise
