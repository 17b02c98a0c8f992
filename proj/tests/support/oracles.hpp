#pragma once

#include <cstddef>
#include <functional>
#include <random>
#include <vector>

#include "recdenoise/data.hpp"
#include "recdenoise/model.hpp"
#include "recdenoise/tensor.hpp"

namespace recdenoise::testing {

/// Central-difference gradient of f with respect to every entry of x.
Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps);

/// max |a - b| / max(|a|, |b|) over entries with |b| > floor (b is the
/// reference); 0 when no entry qualifies.
double max_relative_error(const Tensor& a, const Tensor& b, double floor);

/// Exact d/dphi_k E_{z ~ Bernoulli(g(phi))}[f(z)] by enumerating all 2^K
/// configurations.
std::vector<double> exact_bernoulli_gradient(const std::function<double(const std::vector<int>&)>& f,
                                             const std::vector<double>& phi);

/// |J|_F^2 of f at x, building J one column at a time by central differences.
double explicit_frobenius(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps);

/// Plain-loop forward pass of the backbone (no tape, dropout off). Returns
/// the final hidden states, (B*n) rows of d values.
std::vector<double> loop_forward(const ModelParams& params, const ModelConfig& config, const std::vector<int>& inputs,
                                 std::size_t batch, const std::vector<Tensor>& masks);

/// Random tensor with entries N(0, scale^2).
Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double scale = 1.0);

/// Small split dataset with random sequences (lengths in [min_len, max_len]).
SplitDataset random_split(std::size_t users, std::size_t items, std::size_t min_len, std::size_t max_len,
                          std::uint64_t seed);

}  // namespace recdenoise::testing
