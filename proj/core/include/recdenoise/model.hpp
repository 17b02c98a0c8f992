#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "recdenoise/autograd.hpp"
#include "recdenoise/tensor.hpp"

namespace recdenoise {

/// Backbone hyper-parameters.
struct ModelConfig {
  std::size_t num_items = 0;   // |I|; ids run 1..num_items, 0 is padding
  std::size_t max_len = 25;    // n
  std::size_t dim = 50;        // d
  std::size_t num_blocks = 2;  // L
  std::size_t num_heads = 2;   // H
  double dropout = 0.2;
  /// Also drop attention weights (after masking). Block outputs are always
  /// subject to dropout.
  bool attention_dropout = false;
  /// L2 coefficient on the item and positional tables.
  double weight_decay = 0.0;
  double layer_norm_eps = 1e-8;

  std::size_t head_dim() const { return dim / num_heads; }
  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct BlockParams {
  Tensor wq, wk, wv;  // d x d
  Tensor w1, w2;      // d x d
  Tensor b1, b2;      // d
  Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;  // d
};

/// All trainable backbone tensors. Row 0 of `item_emb` is the padding row and
/// stays zero.
struct ModelParams {
  Tensor item_emb;  // (|I|+1) x d
  Tensor pos_emb;   // n x d
  std::vector<BlockParams> blocks;

  static ModelParams init(const ModelConfig& config, std::mt19937_64& rng);

  /// Visits every tensor with a stable dotted name ("item_emb",
  /// "block0.wq", ...). The order is fixed and used for optimizer state and
  /// checkpoints.
  void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
  void for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const;
  std::size_t tensor_count() const;
  bool all_finite() const;
};

struct BlockVars {
  Var wq, wk, wv, w1, w2, b1, b2, ln1_gain, ln1_bias, ln2_gain, ln2_bias;
};

/// ModelParams registered as tape parameters.
struct BoundParams {
  Var item_emb;
  Var pos_emb;
  std::vector<BlockVars> blocks;

  /// Same order as ModelParams::for_each.
  std::vector<Var> all() const;
};

BoundParams bind(Tape& tape, const ModelParams& params);

/// A mini-batch of fixed-length sequences, flattened row-major as (B*n).
struct SequenceBatch {
  std::size_t size = 0;     // B
  std::size_t seq_len = 0;  // n
  std::vector<int> inputs;
  std::vector<int> positives;  // o_t, 0 at padding positions
  std::vector<int> negatives;  // o'_t, 0 at padding positions
  std::vector<std::size_t> users;  // dataset user index per sequence

  bool is_padding(std::size_t flat_index) const { return inputs[flat_index] == 0; }
};

/// Per-block attention snapshot: A (H x n x n, for each sequence), Z (n x n)
/// and M = A o Z.
struct AttentionState {
  struct Block {
    Tensor full;    // (H*B, n, n)
    Tensor mask;    // (n, n); empty when no mask was applied
    Tensor masked;  // (H*B, n, n)
  };
  std::vector<Block> blocks;
};

/// Replayable dropout: masks are drawn from a generator seeded once per
/// forward pass, in call order.
class DropoutSource {
 public:
  DropoutSource(double rate, std::uint64_t seed) : rate_(rate), rng_(seed) {}
  Tensor draw(const Shape& shape);
  double rate() const { return rate_; }

 private:
  double rate_;
  std::mt19937_64 rng_;
};

/// Shared constant inputs for the blocks of one forward pass.
struct BlockContext {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  Tensor attention_keep;  // (H*B, n, n): causal and non-padding keys, head-major
  Tensor row_keep;        // (B*n, d): 1 on non-padding rows
};

BlockContext make_block_context(std::span<const int> inputs, std::size_t batch, const ModelConfig& config);

/// Ê = E + P with the positional row suppressed at padding positions.
Var embed_sequence(Tape& tape, const BoundParams& params, std::span<const int> inputs, const BlockContext& ctx,
                   const ModelConfig& config);

/// Causal multi-head self-attention with an optional (n x n) multiplicative
/// mask shared by all heads. Output is (B*n, d).
Var attention_layer(Tape& tape, Var x, const BlockVars& block, const BlockContext& ctx, const Tensor* mask,
                    const ModelConfig& config, DropoutSource* dropout = nullptr,
                    AttentionState::Block* capture = nullptr);

/// ReLU(x W1 + b1) W2 + b2, row-wise.
Var ffn(Var x, const BlockVars& block);

/// One post-norm transformer block; padding rows of the output are zeroed.
Var transformer_block(Tape& tape, Var x, const BlockVars& block, const BlockContext& ctx, const Tensor* mask,
                      const ModelConfig& config, DropoutSource* dropout = nullptr,
                      AttentionState::Block* capture = nullptr);

struct ForwardOptions {
  bool training = false;
  std::uint64_t dropout_seed = 0;
  bool capture_attention = false;
};

struct ForwardResult {
  Var output;                     // F^(L), (B*n, d)
  std::vector<Var> block_inputs;  // input of each block
  AttentionState attention;
};

/// Runs the L blocks. `masks` is empty (no masking) or holds one (n x n)
/// mask per block.
ForwardResult transformer_forward(Tape& tape, Var embedded, std::span<const Tensor> masks, const BlockContext& ctx,
                                  const ModelConfig& config, const BoundParams& params,
                                  const ForwardOptions& options = {});

/// <F_t, T_item>.
double score(std::span<const double> state, int item, const ModelParams& params);

struct BceOptions {
  /// Per-user item histories; when set, every negative is checked against
  /// the owning user's history.
  const std::vector<std::vector<int>>* strict_histories = nullptr;
};

struct BceTerms {
  Var bce;           // mean over sequences of the per-sequence BCE sum
  Var weight_decay;  // alpha * (|T|^2 + |P|^2)
  Var total;         // bce + weight_decay
};

/// Binary cross-entropy over non-padding positions of the batch. The
/// batch value is the mean over sequences of the per-sequence sum.
BceTerms bce_loss(Tape& tape, Var final_states, const SequenceBatch& batch, const BoundParams& params,
                  const ModelConfig& config, const BceOptions& options = {});

/// Convenience: embed, forward and BCE in one call.
struct ModelLoss {
  BceTerms terms;
  ForwardResult forward;
  BlockContext context;
};
ModelLoss model_loss(Tape& tape, const BoundParams& params, const SequenceBatch& batch, std::span<const Tensor> masks,
                     const ModelConfig& config, const ForwardOptions& options = {}, const BceOptions& bce = {});

}  // namespace recdenoise
