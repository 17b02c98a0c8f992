#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "recdenoise/denoiser.hpp"

namespace recdenoise::testing {

Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps) {
  Tensor grad(x.shape(), 0.0);
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double up = f(probe);
    probe[i] = x[i] - eps;
    const double down = f(probe);
    probe[i] = x[i];
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

double max_relative_error(const Tensor& a, const Tensor& b, double floor) {
  if (a.shape() != b.shape()) throw ShapeError("max_relative_error: shapes differ");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::abs(b[i]) <= floor) continue;
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(std::abs(a[i]), std::abs(b[i])));
  }
  return worst;
}

std::vector<double> exact_bernoulli_gradient(const std::function<double(const std::vector<int>&)>& f,
                                             const std::vector<double>& phi) {
  const std::size_t k = phi.size();
  if (k > 20) throw std::invalid_argument("exact_bernoulli_gradient: too many gates to enumerate");
  std::vector<double> g(k);
  for (std::size_t i = 0; i < k; ++i) g[i] = logistic(phi[i]);
  std::vector<double> grad(k, 0.0);
  std::vector<int> z(k);
  for (std::size_t code = 0; code < (std::size_t{1} << k); ++code) {
    double p = 1.0;
    for (std::size_t i = 0; i < k; ++i) {
      z[i] = static_cast<int>((code >> i) & 1u);
      p *= z[i] ? g[i] : 1.0 - g[i];
    }
    const double value = f(z);
    // d p(z) / d phi_i = p(z) (z_i - g_i).
    for (std::size_t i = 0; i < k; ++i) grad[i] += value * p * (z[i] - g[i]);
  }
  return grad;
}

double explicit_frobenius(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  double total = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const Tensor up = f(probe);
    probe[i] = x[i] - eps;
    const Tensor down = f(probe);
    probe[i] = x[i];
    for (std::size_t r = 0; r < up.size(); ++r) {
      const double j = (up[r] - down[r]) / (2.0 * eps);
      total += j * j;
    }
  }
  return total;
}

namespace {

using Matrix = std::vector<std::vector<double>>;

Matrix rows_of(const Tensor& t) {
  Matrix m(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t r = 0; r < t.dim(0); ++r)
    for (std::size_t c = 0; c < t.dim(1); ++c) m[r][c] = t.at(r, c);
  return m;
}

std::vector<double> vec_mat(const std::vector<double>& v, const Matrix& w) {
  std::vector<double> out(w[0].size(), 0.0);
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += v[i] * w[i][j];
  return out;
}

std::vector<double> layer_norm_row(const std::vector<double>& x, const Tensor& gain, const Tensor& bias, double eps) {
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  std::vector<double> out(x.size());
  for (std::size_t c = 0; c < x.size(); ++c) out[c] = gain[c] * (x[c] - mean) / std::sqrt(var + eps) + bias[c];
  return out;
}

}  // namespace

std::vector<double> loop_forward(const ModelParams& params, const ModelConfig& config, const std::vector<int>& inputs,
                                 std::size_t batch, const std::vector<Tensor>& masks) {
  const std::size_t n = config.max_len, d = config.dim, H = config.num_heads, dh = config.head_dim();
  std::vector<double> out(batch * n * d, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    const int* seq = inputs.data() + b * n;
    Matrix x(n, std::vector<double>(d, 0.0));
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t c = 0; c < d; ++c) {
        x[t][c] = params.item_emb.at(static_cast<std::size_t>(seq[t]), c) + (seq[t] != 0 ? params.pos_emb.at(t, c) : 0.0);
      }
    }
    for (std::size_t l = 0; l < params.blocks.size(); ++l) {
      const BlockParams& blk = params.blocks[l];
      const Matrix wq = rows_of(blk.wq), wk = rows_of(blk.wk), wv = rows_of(blk.wv);
      const Matrix w1 = rows_of(blk.w1), w2 = rows_of(blk.w2);
      Matrix q(n), k(n), v(n);
      for (std::size_t t = 0; t < n; ++t) {
        q[t] = vec_mat(x[t], wq);
        k[t] = vec_mat(x[t], wk);
        v[t] = vec_mat(x[t], wv);
      }
      Matrix next(n, std::vector<double>(d, 0.0));
      for (std::size_t u = 0; u < n; ++u) {
        std::vector<double> attn(d, 0.0);
        for (std::size_t h = 0; h < H; ++h) {
          std::vector<double> logits(u + 1);
          std::vector<bool> allowed(u + 1);
          double top = -1e300;
          for (std::size_t s = 0; s <= u; ++s) {
            allowed[s] = seq[s] != 0 || s == u;
            if (!allowed[s]) continue;
            double dot = 0.0;
            for (std::size_t j = 0; j < dh; ++j) dot += q[u][h * dh + j] * k[s][h * dh + j];
            logits[s] = dot / std::sqrt(static_cast<double>(dh));
            top = std::max(top, logits[s]);
          }
          double z = 0.0;
          for (std::size_t s = 0; s <= u; ++s)
            if (allowed[s]) z += std::exp(logits[s] - top);
          for (std::size_t s = 0; s <= u; ++s) {
            if (!allowed[s]) continue;
            double w = std::exp(logits[s] - top) / z;
            if (!masks.empty()) w *= masks[l].at(u, s);
            for (std::size_t j = 0; j < dh; ++j) attn[h * dh + j] += w * v[s][h * dh + j];
          }
        }
        std::vector<double> r(d);
        for (std::size_t c = 0; c < d; ++c) r[c] = x[u][c] + attn[c];
        const auto h1 = layer_norm_row(r, blk.ln1_gain, blk.ln1_bias, config.layer_norm_eps);
        auto hidden = vec_mat(h1, w1);
        for (std::size_t c = 0; c < d; ++c) hidden[c] = std::max(0.0, hidden[c] + blk.b1[c]);
        auto f = vec_mat(hidden, w2);
        for (std::size_t c = 0; c < d; ++c) f[c] = h1[c] + f[c] + blk.b2[c];
        next[u] = layer_norm_row(f, blk.ln2_gain, blk.ln2_bias, config.layer_norm_eps);
        if (seq[u] == 0) std::fill(next[u].begin(), next[u].end(), 0.0);
      }
      x = next;
    }
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t c = 0; c < d; ++c) out[(b * n + t) * d + c] = x[t][c];
  }
  return out;
}

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> normal(0.0, scale);
  Tensor t(shape, 0.0);
  for (auto& v : t.storage()) v = normal(rng);
  return t;
}

SplitDataset random_split(std::size_t users, std::size_t items, std::size_t min_len, std::size_t max_len,
                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> len(min_len, max_len);
  std::uniform_int_distribution<int> item(1, static_cast<int>(items));
  InteractionLog log;
  for (std::size_t i = 1; i <= items; ++i) log.intern("i" + std::to_string(i));
  for (std::size_t u = 0; u < users; ++u) {
    std::vector<int> s(len(rng));
    for (auto& v : s) v = item(rng);
    log.user_names.push_back("u" + std::to_string(u));
    log.sequences.push_back(std::move(s));
  }
  return split_leave_one_out(log);
}

}  // namespace recdenoise::testing
