#include "stclip/layers.hpp"

#include <cmath>

#include "stclip/error.hpp"

namespace stclip {

Parameter& ParamStore::add(const std::string& name, Tensor value, bool frozen) {
  if (contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  params_.push_back(std::make_unique<Parameter>(name, std::move(value), frozen));
  return *params_.back();
}

Parameter& ParamStore::get(const std::string& name) {
  for (auto& p : params_)
    if (p->name == name) return *p;
  throw LookupError("no parameter named '" + name + "'");
}

const Parameter& ParamStore::get(const std::string& name) const {
  return const_cast<ParamStore*>(this)->get(name);
}

bool ParamStore::contains(const std::string& name) const {
  for (const auto& p : params_)
    if (p->name == name) return true;
  return false;
}

std::vector<Parameter*> ParamStore::all() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParamStore::all() const {
  std::vector<const Parameter*> out;
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<Parameter*> ParamStore::trainable() {
  std::vector<Parameter*> out;
  for (auto& p : params_)
    if (!p->frozen) out.push_back(p.get());
  return out;
}

std::vector<Parameter*> ParamStore::frozen() {
  std::vector<Parameter*> out;
  for (auto& p : params_)
    if (p->frozen) out.push_back(p.get());
  return out;
}

Tensor gaussian(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, stddev);
  Tensor t(rows, cols);
  for (auto& v : t.data()) v = n(rng);
  return t;
}

AttentionParams make_attention(ParamStore& store, const std::string& prefix, std::size_t dim,
                               std::size_t heads, std::mt19937_64& rng, bool frozen) {
  if (heads == 0 || dim % heads != 0)
    throw ConfigError("head count " + std::to_string(heads) + " does not divide width " +
                      std::to_string(dim));
  const double s = 1.0 / std::sqrt(static_cast<double>(dim));
  AttentionParams p;
  p.wq = &store.add(prefix + ".wq", gaussian(dim, dim, s, rng), frozen);
  p.wk = &store.add(prefix + ".wk", gaussian(dim, dim, s, rng), frozen);
  p.wv = &store.add(prefix + ".wv", gaussian(dim, dim, s, rng), frozen);
  p.wo = &store.add(prefix + ".wo", gaussian(dim, dim, s, rng), frozen);
  p.heads = heads;
  return p;
}

Var attend_projected(Tape& tape, Var q, Var k, Var v, const AttentionParams& p,
                     const std::vector<bool>* key_valid, AttentionTrace* trace) {
  const std::size_t dim = q.cols();
  const std::size_t dh = dim / p.heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> outs;
  outs.reserve(p.heads);
  for (std::size_t h = 0; h < p.heads; ++h) {
    Var qh = p.heads == 1 ? q : slice_cols(q, h * dh, dh);
    Var kh = p.heads == 1 ? k : slice_cols(k, h * dh, dh);
    Var vh = p.heads == 1 ? v : slice_cols(v, h * dh, dh);
    Var scores = scale(matmul_nt(qh, kh), inv);
    Var w = key_valid ? masked_softmax_rows(scores, *key_valid) : softmax_rows(scores);
    if (trace) trace->heads.push_back(w.value());
    outs.push_back(matmul(w, vh));
  }
  Var joined = p.heads == 1 ? outs[0] : concat_cols(outs);
  return matmul(joined, tape.param(*p.wo));
}

Var multi_head_attention(Tape& tape, Var queries, Var keys_values, const AttentionParams& p,
                         const std::vector<bool>* key_valid, AttentionTrace* trace) {
  Var q = matmul(queries, tape.param(*p.wq));
  Var k = matmul(keys_values, tape.param(*p.wk));
  Var v = matmul(keys_values, tape.param(*p.wv));
  return attend_projected(tape, q, k, v, p, key_valid, trace);
}

EncoderParams make_encoder(ParamStore& store, const std::string& prefix, std::size_t dim,
                           std::size_t layers, std::size_t heads, std::size_t ff_dim,
                           std::mt19937_64& rng, bool frozen) {
  EncoderParams enc;
  enc.dim = dim;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string b = prefix + ".block" + std::to_string(l);
    BlockParams bp;
    bp.ln1_gain = &store.add(b + ".ln1.gain", Tensor(1, dim, 1.0), frozen);
    bp.ln1_bias = &store.add(b + ".ln1.bias", Tensor(1, dim), frozen);
    bp.attn = make_attention(store, b + ".attn", dim, heads, rng, frozen);
    bp.ln2_gain = &store.add(b + ".ln2.gain", Tensor(1, dim, 1.0), frozen);
    bp.ln2_bias = &store.add(b + ".ln2.bias", Tensor(1, dim), frozen);
    bp.ff_in = &store.add(b + ".ff.in", gaussian(dim, ff_dim, 1.0 / std::sqrt(double(dim)), rng), frozen);
    bp.ff_in_bias = &store.add(b + ".ff.in_bias", Tensor(1, ff_dim), frozen);
    bp.ff_out =
        &store.add(b + ".ff.out", gaussian(ff_dim, dim, 1.0 / std::sqrt(double(ff_dim)), rng), frozen);
    bp.ff_out_bias = &store.add(b + ".ff.out_bias", Tensor(1, dim), frozen);
    enc.blocks.push_back(bp);
  }
  enc.final_gain = &store.add(prefix + ".final.gain", Tensor(1, dim, 1.0), frozen);
  enc.final_bias = &store.add(prefix + ".final.bias", Tensor(1, dim), frozen);
  return enc;
}

Tensor sinusoidal_positions(std::size_t rows, std::size_t dim) {
  Tensor pe(rows, dim);
  for (std::size_t pos = 0; pos < rows; ++pos)
    for (std::size_t c = 0; c < dim; ++c) {
      const double freq = std::pow(10000.0, -static_cast<double>(c - c % 2) / static_cast<double>(dim));
      pe(pos, c) = c % 2 == 0 ? std::sin(pos * freq) : std::cos(pos * freq);
    }
  return pe;
}

Var feed_forward_residual(Tape& tape, const BlockParams& b, Var x) {
  Var a = layer_norm(x, tape.param(*b.ln2_gain), tape.param(*b.ln2_bias));
  Var h = gelu(add_row(matmul(a, tape.param(*b.ff_in)), tape.param(*b.ff_in_bias)));
  Var o = add_row(matmul(h, tape.param(*b.ff_out)), tape.param(*b.ff_out_bias));
  return add(x, o);
}

Var run_encoder(Tape& tape, const EncoderParams& enc, Var x, const std::vector<bool>* valid,
                std::optional<std::size_t> readout) {
  for (std::size_t l = 0; l < enc.blocks.size(); ++l) {
    const auto& b = enc.blocks[l];
    Var a = layer_norm(x, tape.param(*b.ln1_gain), tape.param(*b.ln1_bias));
    const bool last = l + 1 == enc.blocks.size();
    if (readout && last) {
      Var q = select_row(a, *readout);
      x = add(select_row(x, *readout), multi_head_attention(tape, q, a, b.attn, valid));
    } else {
      x = add(x, multi_head_attention(tape, a, a, b.attn, valid));
    }
    x = feed_forward_residual(tape, b, x);
  }
  if (readout && enc.blocks.empty()) x = select_row(x, *readout);
  return layer_norm(x, tape.param(*enc.final_gain), tape.param(*enc.final_bias));
}

}  // namespace stclip
