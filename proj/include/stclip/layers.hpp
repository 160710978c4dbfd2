#pragma once

// Parameter registry and the Transformer building blocks shared by the
// tracklet encoder, the text stub and cross-modal attention.

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "stclip/autodiff.hpp"

namespace stclip {

/// Named parameters in registration order. Addresses are stable.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Tensor value, bool frozen);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::vector<Parameter*> trainable();
  std::vector<Parameter*> frozen();
  std::size_t size() const { return params_.size(); }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

Tensor gaussian(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng);

struct AttentionParams {
  Parameter* wq = nullptr;
  Parameter* wk = nullptr;
  Parameter* wv = nullptr;
  Parameter* wo = nullptr;
  std::size_t heads = 1;
};

AttentionParams make_attention(ParamStore& store, const std::string& prefix, std::size_t dim,
                               std::size_t heads, std::mt19937_64& rng, bool frozen);

/// Per-head attention weights, each (queries x keys).
struct AttentionTrace {
  std::vector<Tensor> heads;
};

/// softmax((q Wq)(kv Wk)^T / sqrt(d_head)) (kv Wv), heads concatenated, then
/// Wo. Keys with key_valid[j] == false get exactly zero weight.
Var multi_head_attention(Tape& tape, Var queries, Var keys_values, const AttentionParams& p,
                         const std::vector<bool>* key_valid = nullptr,
                         AttentionTrace* trace = nullptr);

/// Same, with key and value projections supplied already computed.
Var attend_projected(Tape& tape, Var q, Var k, Var v, const AttentionParams& p,
                     const std::vector<bool>* key_valid, AttentionTrace* trace);

struct BlockParams {
  Parameter* ln1_gain = nullptr;
  Parameter* ln1_bias = nullptr;
  AttentionParams attn;
  Parameter* ln2_gain = nullptr;
  Parameter* ln2_bias = nullptr;
  Parameter* ff_in = nullptr;
  Parameter* ff_in_bias = nullptr;
  Parameter* ff_out = nullptr;
  Parameter* ff_out_bias = nullptr;
};

/// Pre-norm encoder: x + PE, then per block
///   x += MHA(LN1(x)); x += FF(LN2(x)) with GELU,
/// then a final LayerNorm.
struct EncoderParams {
  std::vector<BlockParams> blocks;
  Parameter* final_gain = nullptr;
  Parameter* final_bias = nullptr;
  std::size_t dim = 0;
};

EncoderParams make_encoder(ParamStore& store, const std::string& prefix, std::size_t dim,
                           std::size_t layers, std::size_t heads, std::size_t ff_dim,
                           std::mt19937_64& rng, bool frozen);

/// rows x dim sinusoidal position table: sin on even columns, cos on odd.
Tensor sinusoidal_positions(std::size_t rows, std::size_t dim);

/// Runs the encoder over x (positions already added). When `readout` is
/// set, the last block computes only that row and the result is 1 x dim;
/// otherwise all rows are returned.
Var run_encoder(Tape& tape, const EncoderParams& enc, Var x, const std::vector<bool>* valid,
                std::optional<std::size_t> readout = std::nullopt);

/// One block's feed-forward half for the given rows: x + FF(LN2(x)).
Var feed_forward_residual(Tape& tape, const BlockParams& b, Var x);

}  // namespace stclip
