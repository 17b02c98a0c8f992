#include "recdenoise/denoiser.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <stdexcept>
#include <string>

namespace recdenoise {

namespace {

std::vector<Tensor> zeros_like(const MaskParams& phi) {
  std::vector<Tensor> out;
  out.reserve(phi.num_blocks());
  for (const auto& t : phi.logits) out.emplace_back(t.shape(), 0.0);
  return out;
}

template <typename Fn>
void for_causal(std::size_t n, Fn fn) {
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = 0; v <= u; ++v) fn(u, v, u * n + v);
}

void check_uniforms(const MaskParams& phi, const std::vector<Tensor>& uniforms) {
  if (uniforms.size() != phi.num_blocks()) {
    throw std::invalid_argument("expected " + std::to_string(phi.num_blocks()) + " uniform blocks, got " +
                                std::to_string(uniforms.size()));
  }
  for (std::size_t l = 0; l < uniforms.size(); ++l) {
    if (uniforms[l].shape() != phi.logits[l].shape()) {
      throw ShapeError("uniform draws for block " + std::to_string(l) + " have shape " +
                       shape_to_string(uniforms[l].shape()));
    }
  }
}

}  // namespace

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

MaskParams MaskParams::constant(std::size_t num_blocks, std::size_t seq_len, double value) {
  MaskParams p;
  for (std::size_t l = 0; l < num_blocks; ++l) p.logits.emplace_back(Shape{seq_len, seq_len}, value);
  return p;
}

std::size_t MaskParams::gate_count() const {
  const std::size_t n = seq_len();
  return num_blocks() * n * (n + 1) / 2;
}

bool MaskParams::all_finite() const {
  for (const auto& t : logits)
    if (!t.all_finite()) return false;
  return true;
}

std::vector<Tensor> draw_uniforms(const MaskParams& phi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<Tensor> out = zeros_like(phi);
  for (auto& t : out)
    for (auto& v : t.storage()) v = unif(rng);
  return out;
}

std::vector<Tensor> masks_from_uniforms(const MaskParams& phi, const std::vector<Tensor>& uniforms) {
  check_uniforms(phi, uniforms);
  std::vector<Tensor> out = zeros_like(phi);
  for (std::size_t l = 0; l < out.size(); ++l)
    for (std::size_t i = 0; i < out[l].size(); ++i)
      out[l][i] = uniforms[l][i] < logistic(phi.logits[l][i]) ? 1.0 : 0.0;
  return out;
}

std::vector<Tensor> antithetic_masks(const MaskParams& phi, const std::vector<Tensor>& uniforms) {
  check_uniforms(phi, uniforms);
  std::vector<Tensor> out = zeros_like(phi);
  for (std::size_t l = 0; l < out.size(); ++l)
    for (std::size_t i = 0; i < out[l].size(); ++i)
      out[l][i] = uniforms[l][i] > logistic(-phi.logits[l][i]) ? 1.0 : 0.0;
  return out;
}

MaskSample sample_masks(const MaskParams& phi, std::mt19937_64& rng) {
  MaskSample s;
  s.uniforms = draw_uniforms(phi, rng);
  s.masks = masks_from_uniforms(phi, s.uniforms);
  return s;
}

double l0_surrogate(const MaskParams& phi) {
  double total = 0.0;
  for (const auto& t : phi.logits) {
    for_causal(t.dim(0), [&](std::size_t, std::size_t, std::size_t i) { total += logistic(t[i]); });
  }
  return total;
}

std::vector<Tensor> l0_gradient(const MaskParams& phi) {
  std::vector<Tensor> out = zeros_like(phi);
  for (std::size_t l = 0; l < out.size(); ++l) {
    for_causal(out[l].dim(0), [&](std::size_t, std::size_t, std::size_t i) {
      const double g = logistic(phi.logits[l][i]);
      out[l][i] = g * (1.0 - g);
    });
  }
  return out;
}

std::vector<Tensor> ar_gradient_from_loss(const MaskParams& phi, const std::vector<Tensor>& uniforms,
                                          double loss_at_sample, double beta) {
  check_uniforms(phi, uniforms);
  std::vector<Tensor> grad = l0_gradient(phi);
  for (std::size_t l = 0; l < grad.size(); ++l) {
    for_causal(grad[l].dim(0), [&](std::size_t, std::size_t, std::size_t i) {
      grad[l][i] = loss_at_sample * (1.0 - 2.0 * uniforms[l][i]) + beta * grad[l][i];
    });
  }
  return grad;
}

std::vector<Tensor> arm_gradient_from_losses(const MaskParams& phi, const std::vector<Tensor>& uniforms,
                                             double loss_antithetic, double loss_at_sample, double beta) {
  check_uniforms(phi, uniforms);
  std::vector<Tensor> grad = l0_gradient(phi);
  const double diff = loss_antithetic - loss_at_sample;
  for (std::size_t l = 0; l < grad.size(); ++l) {
    for_causal(grad[l].dim(0), [&](std::size_t, std::size_t, std::size_t i) {
      grad[l][i] = diff * (uniforms[l][i] - 0.5) + beta * grad[l][i];
    });
  }
  return grad;
}

MaskGradient ar_gradient(const MaskParams& phi, const MaskLoss& loss, double beta, std::mt19937_64& rng) {
  MaskGradient out;
  out.sample = sample_masks(phi, rng);
  const double value = loss(out.sample.masks);
  out.loss_evaluations = 1;
  out.gradient = ar_gradient_from_loss(phi, out.sample.uniforms, value, beta);
  return out;
}

MaskGradient arm_gradient(const MaskParams& phi, const MaskLoss& loss, double beta, std::mt19937_64& rng) {
  MaskGradient out;
  out.sample = sample_masks(phi, rng);
  const double at_sample = loss(out.sample.masks);
  const double at_antithetic = loss(antithetic_masks(phi, out.sample.uniforms));
  out.loss_evaluations = 2;
  out.gradient = arm_gradient_from_losses(phi, out.sample.uniforms, at_antithetic, at_sample, beta);
  return out;
}

std::vector<Tensor> inference_mask(const MaskParams& phi) {
  std::vector<Tensor> out = zeros_like(phi);
  for (std::size_t l = 0; l < out.size(); ++l) {
    for_causal(out[l].dim(0), [&](std::size_t, std::size_t, std::size_t i) {
      const double g = logistic(phi.logits[l][i]);
      out[l][i] = g <= 0.5 ? 0.0 : g;
    });
  }
  return out;
}

Tensor window_mask(std::size_t seq_len, std::size_t width) {
  if (width < 1) throw std::invalid_argument("window_mask: width must be >= 1");
  Tensor m({seq_len, seq_len}, 0.0);
  for_causal(seq_len, [&](std::size_t u, std::size_t v, std::size_t i) {
    if (u - v < width) m[i] = 1.0;
  });
  return m;
}

std::size_t retained_count(const std::vector<Tensor>& masks) {
  std::size_t count = 0;
  for (const auto& m : masks) {
    for_causal(m.dim(0), [&](std::size_t, std::size_t, std::size_t i) { count += m[i] != 0.0 ? 1 : 0; });
  }
  return count;
}

double mask_density(const std::vector<Tensor>& masks) {
  if (masks.empty()) return 1.0;
  const std::size_t n = masks.front().dim(0);
  return static_cast<double>(retained_count(masks)) / static_cast<double>(masks.size() * n * (n + 1) / 2);
}

void write_mask_csv(std::ostream& out, const MaskParams& phi, std::size_t block) {
  if (block >= phi.num_blocks()) throw std::out_of_range("write_mask_csv: no block " + std::to_string(block));
  const Tensor& t = phi.logits[block];
  out << "u,v,keep_prob\n";
  out << std::setprecision(17);
  for_causal(t.dim(0), [&](std::size_t u, std::size_t v, std::size_t i) {
    out << u << ',' << v << ',' << logistic(t[i]) << '\n';
  });
}

}  // namespace recdenoise
