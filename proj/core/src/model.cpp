#include "recdenoise/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace recdenoise {

namespace {

constexpr double kCausalFill = -1e9;

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw std::invalid_argument("ModelConfig." + field + ": " + what);
}

Tensor normal_tensor(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t(std::move(shape), 0.0);
  for (auto& v : t.storage()) v = dist(rng);
  return t;
}

Var dropout(Tape& tape, Var x, DropoutSource* source) {
  if (source == nullptr || source->rate() <= 0.0) return x;
  return multiply(x, tape.constant(source->draw(x.shape())));
}

}  // namespace

void ModelConfig::validate() const {
  require(num_items >= 1, "num_items", "must be >= 1");
  require(max_len >= 1, "max_len", "must be >= 1");
  require(dim >= 1, "dim", "must be >= 1");
  require(num_blocks >= 1, "num_blocks", "must be >= 1");
  require(num_heads >= 1, "num_heads", "must be >= 1");
  require(dim % num_heads == 0, "dim", "must be divisible by num_heads");
  require(dropout >= 0.0 && dropout < 1.0, "dropout", "must lie in [0,1)");
  require(weight_decay >= 0.0, "weight_decay", "must be >= 0");
  require(layer_norm_eps > 0.0, "layer_norm_eps", "must be > 0");
}

ModelParams ModelParams::init(const ModelConfig& config, std::mt19937_64& rng) {
  config.validate();
  const std::size_t d = config.dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  ModelParams p;
  p.item_emb = normal_tensor({config.num_items + 1, d}, scale, rng);
  for (std::size_t c = 0; c < d; ++c) p.item_emb.at(0, c) = 0.0;
  p.pos_emb = normal_tensor({config.max_len, d}, scale, rng);
  for (std::size_t l = 0; l < config.num_blocks; ++l) {
    BlockParams b;
    b.wq = normal_tensor({d, d}, scale, rng);
    b.wk = normal_tensor({d, d}, scale, rng);
    b.wv = normal_tensor({d, d}, scale, rng);
    b.w1 = normal_tensor({d, d}, scale, rng);
    b.w2 = normal_tensor({d, d}, scale, rng);
    b.b1 = Tensor({d}, 0.0);
    b.b2 = Tensor({d}, 0.0);
    b.ln1_gain = Tensor({d}, 1.0);
    b.ln1_bias = Tensor({d}, 0.0);
    b.ln2_gain = Tensor({d}, 1.0);
    b.ln2_bias = Tensor({d}, 0.0);
    p.blocks.push_back(std::move(b));
  }
  return p;
}

void ModelParams::for_each(const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("item_emb", item_emb);
  fn("pos_emb", pos_emb);
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const std::string pre = "block" + std::to_string(l) + ".";
    BlockParams& b = blocks[l];
    fn(pre + "wq", b.wq);
    fn(pre + "wk", b.wk);
    fn(pre + "wv", b.wv);
    fn(pre + "w1", b.w1);
    fn(pre + "b1", b.b1);
    fn(pre + "w2", b.w2);
    fn(pre + "b2", b.b2);
    fn(pre + "ln1_gain", b.ln1_gain);
    fn(pre + "ln1_bias", b.ln1_bias);
    fn(pre + "ln2_gain", b.ln2_gain);
    fn(pre + "ln2_bias", b.ln2_bias);
  }
}

void ModelParams::for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const {
  const_cast<ModelParams*>(this)->for_each([&](const std::string& name, Tensor& t) { fn(name, t); });
}

std::size_t ModelParams::tensor_count() const { return 2 + 11 * blocks.size(); }

bool ModelParams::all_finite() const {
  bool ok = true;
  for_each([&](const std::string&, const Tensor& t) { ok = ok && t.all_finite(); });
  return ok;
}

std::vector<Var> BoundParams::all() const {
  std::vector<Var> out{item_emb, pos_emb};
  for (const auto& b : blocks) {
    out.insert(out.end(), {b.wq, b.wk, b.wv, b.w1, b.b1, b.w2, b.b2, b.ln1_gain, b.ln1_bias, b.ln2_gain, b.ln2_bias});
  }
  return out;
}

BoundParams bind(Tape& tape, const ModelParams& params) {
  BoundParams bp;
  bp.item_emb = tape.parameter(params.item_emb);
  bp.pos_emb = tape.parameter(params.pos_emb);
  for (const auto& b : params.blocks) {
    BlockVars v;
    v.wq = tape.parameter(b.wq);
    v.wk = tape.parameter(b.wk);
    v.wv = tape.parameter(b.wv);
    v.w1 = tape.parameter(b.w1);
    v.b1 = tape.parameter(b.b1);
    v.w2 = tape.parameter(b.w2);
    v.b2 = tape.parameter(b.b2);
    v.ln1_gain = tape.parameter(b.ln1_gain);
    v.ln1_bias = tape.parameter(b.ln1_bias);
    v.ln2_gain = tape.parameter(b.ln2_gain);
    v.ln2_bias = tape.parameter(b.ln2_bias);
    bp.blocks.push_back(v);
  }
  return bp;
}

Tensor DropoutSource::draw(const Shape& shape) {
  Tensor keep(shape, 0.0);
  std::bernoulli_distribution survive(1.0 - rate_);
  const double inv = 1.0 / (1.0 - rate_);
  for (auto& v : keep.storage()) v = survive(rng_) ? inv : 0.0;
  return keep;
}

BlockContext make_block_context(std::span<const int> inputs, std::size_t batch, const ModelConfig& config) {
  const std::size_t n = config.max_len, d = config.dim;
  if (batch == 0 || inputs.size() != batch * n) {
    throw ShapeError("batch of " + std::to_string(inputs.size()) + " ids does not form " + std::to_string(batch) +
                     " sequences of length " + std::to_string(n));
  }
  BlockContext ctx;
  ctx.batch = batch;
  ctx.seq_len = n;
  const std::size_t heads = config.num_heads;
  ctx.attention_keep = Tensor({heads * batch, n, n}, 0.0);
  ctx.row_keep = Tensor({batch * n, d}, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    const int* seq = inputs.data() + b * n;
    for (std::size_t u = 0; u < n; ++u) {
      for (std::size_t v = 0; v <= u; ++v) {
        // Real queries never see padding keys; padding queries see only
        // themselves so that no row is fully masked.
        if (seq[v] != 0 || u == v) {
          for (std::size_t h = 0; h < heads; ++h) ctx.attention_keep[((h * batch + b) * n + u) * n + v] = 1.0;
        }
      }
      if (seq[u] != 0) {
        for (std::size_t c = 0; c < d; ++c) ctx.row_keep[(b * n + u) * d + c] = 1.0;
      }
    }
  }
  return ctx;
}

Var embed_sequence(Tape& tape, const BoundParams& params, std::span<const int> inputs, const BlockContext& ctx,
                   const ModelConfig& config) {
  const std::size_t n = config.max_len;
  for (int id : inputs) {
    if (id < 0 || static_cast<std::size_t>(id) > config.num_items) {
      throw std::out_of_range("embed_sequence: item id " + std::to_string(id) + " outside [0," +
                              std::to_string(config.num_items) + "]");
    }
  }
  std::vector<int> positions(inputs.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i % n);
  Var items = gather(params.item_emb, inputs, 0);
  Var pos = multiply(gather(params.pos_emb, positions), tape.constant(ctx.row_keep));
  return add(items, pos);
}

Var attention_layer(Tape& tape, Var x, const BlockVars& block, const BlockContext& ctx, const Tensor* mask,
                    const ModelConfig& config, DropoutSource* dropout_source, AttentionState::Block* capture) {
  const std::size_t heads = config.num_heads;
  const std::size_t n = ctx.seq_len;
  Var q = split_heads(matmul(x, block.wq), ctx.batch, heads);
  Var k = split_heads(matmul(x, block.wk), ctx.batch, heads);
  Var v = split_heads(matmul(x, block.wv), ctx.batch, heads);
  Var logits = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(config.head_dim())));
  Var full = softmax_rows(masked_fill(logits, ctx.attention_keep, kCausalFill));
  Var weights = full;
  if (mask != nullptr) {
    if (mask->shape() != Shape{n, n}) {
      throw ShapeError("attention mask must be " + shape_to_string({n, n}) + ", got " + shape_to_string(mask->shape()));
    }
    weights = multiply(full, tape.constant(*mask));
  }
  if (capture != nullptr) {
    capture->full = full.value();
    capture->mask = mask != nullptr ? *mask : Tensor();
    capture->masked = weights.value();
  }
  if (config.attention_dropout) weights = dropout(tape, weights, dropout_source);
  return merge_heads(matmul(weights, v), ctx.batch, heads);
}

Var ffn(Var x, const BlockVars& block) {
  Var hidden = relu(add(matmul(x, block.w1), block.b1));
  return add(matmul(hidden, block.w2), block.b2);
}

Var transformer_block(Tape& tape, Var x, const BlockVars& block, const BlockContext& ctx, const Tensor* mask,
                      const ModelConfig& config, DropoutSource* dropout_source, AttentionState::Block* capture) {
  Var attn = dropout(tape, attention_layer(tape, x, block, ctx, mask, config, dropout_source, capture), dropout_source);
  Var h = layer_norm(add(x, attn), block.ln1_gain, block.ln1_bias, config.layer_norm_eps);
  Var f = dropout(tape, ffn(h, block), dropout_source);
  Var out = layer_norm(add(h, f), block.ln2_gain, block.ln2_bias, config.layer_norm_eps);
  return multiply(out, tape.constant(ctx.row_keep));
}

ForwardResult transformer_forward(Tape& tape, Var embedded, std::span<const Tensor> masks, const BlockContext& ctx,
                                  const ModelConfig& config, const BoundParams& params, const ForwardOptions& options) {
  if (!masks.empty() && masks.size() != params.blocks.size()) {
    throw std::invalid_argument("transformer_forward: got " + std::to_string(masks.size()) + " masks for " +
                                std::to_string(params.blocks.size()) + " blocks");
  }
  std::optional<DropoutSource> source;
  if (options.training && config.dropout > 0.0) source.emplace(config.dropout, options.dropout_seed);

  ForwardResult result;
  if (options.capture_attention) result.attention.blocks.resize(params.blocks.size());
  Var x = embedded;
  for (std::size_t l = 0; l < params.blocks.size(); ++l) {
    result.block_inputs.push_back(x);
    const Tensor* mask = masks.empty() ? nullptr : &masks[l];
    x = transformer_block(tape, x, params.blocks[l], ctx, mask, config, source ? &*source : nullptr,
                          options.capture_attention ? &result.attention.blocks[l] : nullptr);
  }
  result.output = x;
  return result;
}

double score(std::span<const double> state, int item, const ModelParams& params) {
  const std::size_t d = params.item_emb.cols();
  if (state.size() != d) throw ShapeError("score: state has " + std::to_string(state.size()) + " entries, expected " + std::to_string(d));
  if (item < 0 || static_cast<std::size_t>(item) >= params.item_emb.dim(0)) {
    throw std::out_of_range("score: item id " + std::to_string(item) + " out of range");
  }
  const double* row = params.item_emb.data().data() + static_cast<std::size_t>(item) * d;
  double s = 0.0;
  for (std::size_t c = 0; c < d; ++c) s += state[c] * row[c];
  return s;
}

BceTerms bce_loss(Tape& tape, Var final_states, const SequenceBatch& batch, const BoundParams& params,
                  const ModelConfig& config, const BceOptions& options) {
  const std::size_t total = batch.size * batch.seq_len;
  if (batch.positives.size() != total || batch.negatives.size() != total || batch.inputs.size() != total) {
    throw ShapeError("bce_loss: batch vectors do not match " + std::to_string(batch.size) + "x" +
                     std::to_string(batch.seq_len));
  }
  if (options.strict_histories != nullptr) {
    for (std::size_t i = 0; i < total; ++i) {
      if (batch.is_padding(i)) continue;
      const auto& hist = (*options.strict_histories).at(batch.users.at(i / batch.seq_len));
      for (int item : hist) {
        if (item == batch.negatives[i]) {
          throw std::invalid_argument("bce_loss: negative item " + std::to_string(item) + " occurs in the history of user " +
                                      std::to_string(batch.users[i / batch.seq_len]));
        }
      }
    }
  }

  Tensor weights({total}, 0.0);
  for (std::size_t i = 0; i < total; ++i) {
    if (!batch.is_padding(i)) weights[i] = 1.0 / static_cast<double>(batch.size);
  }
  Var pos_logit = sum_last(multiply(final_states, gather(params.item_emb, batch.positives, 0)));
  Var neg_logit = sum_last(multiply(final_states, gather(params.item_emb, batch.negatives, 0)));
  Var per_position = add(log(sigmoid(pos_logit)), log(sigmoid(scale(neg_logit, -1.0))));
  Var bce = scale(reduce_sum(multiply(per_position, tape.constant(std::move(weights)))), -1.0);

  Var decay = reduce_sum(multiply(params.item_emb, params.item_emb));
  decay = add(decay, reduce_sum(multiply(params.pos_emb, params.pos_emb)));
  decay = scale(decay, config.weight_decay);
  return BceTerms{bce, decay, add(bce, decay)};
}

ModelLoss model_loss(Tape& tape, const BoundParams& params, const SequenceBatch& batch, std::span<const Tensor> masks,
                     const ModelConfig& config, const ForwardOptions& options, const BceOptions& bce) {
  BlockContext ctx = make_block_context(batch.inputs, batch.size, config);
  Var embedded = embed_sequence(tape, params, batch.inputs, ctx, config);
  ForwardResult fwd = transformer_forward(tape, embedded, masks, ctx, config, params, options);
  BceTerms terms = bce_loss(tape, fwd.output, batch, params, config, bce);
  return ModelLoss{terms, std::move(fwd), std::move(ctx)};
}

}  // namespace recdenoise
