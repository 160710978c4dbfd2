#include "stclip/encoders.hpp"

#include <algorithm>
#include <cmath>

#include "stclip/error.hpp"

namespace stclip {

const char* to_string(ClassPosition p) {
  switch (p) {
    case ClassPosition::Start: return "start";
    case ClassPosition::Middle: return "middle";
    case ClassPosition::End: return "end";
  }
  return "end";
}

ClassPosition parse_class_position(const std::string& s) {
  if (s == "start") return ClassPosition::Start;
  if (s == "middle") return ClassPosition::Middle;
  if (s == "end") return ClassPosition::End;
  throw ConfigError("class position must be start, middle or end (got '" + s + "')");
}

ImageStub make_image_stub(ParamStore& store, std::size_t latent_dim, std::size_t patches,
                          std::size_t dim, std::mt19937_64& rng) {
  ImageStub s;
  s.patches = patches;
  s.dim = dim;
  s.weight = &store.add("backbone.image.weight",
                        gaussian(latent_dim, patches * dim, 1.0 / std::sqrt(double(latent_dim)), rng), true);
  s.bias = &store.add("backbone.image.bias", gaussian(1, patches * dim, kPatchBiasStd, rng), true);
  return s;
}

ImageFeatures encode_image_stub(const ImageStub& stub, const Tensor& latent) {
  const Tensor& w = stub.weight->value;
  if (latent.rows() != 1 || latent.cols() != w.rows())
    throw ShapeError("image latent " + latent.shape_str() + " does not fit projection " + w.shape_str());
  Tensor flat = stub.bias->value;
  gemm_nn(latent, w, flat);
  ImageFeatures f;
  f.patches = Tensor(stub.patches, stub.dim, std::move(flat.data()));
  Tensor mean(1, stub.dim);
  for (std::size_t r = 0; r < stub.patches; ++r)
    for (std::size_t c = 0; c < stub.dim; ++c) mean[c] += f.patches(r, c);
  for (std::size_t c = 0; c < stub.dim; ++c) mean[c] /= static_cast<double>(stub.patches);
  f.global = layer_norm_rows(mean);
  return f;
}

TextStub make_text_stub(ParamStore& store, std::size_t dim, std::size_t layers, std::size_t heads,
                        std::size_t ff_dim, std::mt19937_64& rng) {
  TextStub t;
  t.encoder = make_encoder(store, "backbone.text", dim, layers, heads, ff_dim, rng, true);
  t.projection = &store.add("backbone.text.projection",
                            gaussian(dim, dim, 1.0 / std::sqrt(double(dim)), rng), true);
  return t;
}

Var encode_text(Tape& tape, const TextStub& stub, Var tokens) {
  if (tokens.cols() != stub.encoder.dim)
    throw ShapeError("token sequence " + tokens.value().shape_str() + " does not match text width " +
                     std::to_string(stub.encoder.dim));
  Var x = add(tokens, tape.constant(sinusoidal_positions(tokens.rows(), tokens.cols())));
  Var h = run_encoder(tape, stub.encoder, x, nullptr, tokens.rows() - 1);
  return matmul(h, tape.param(*stub.projection));
}

std::size_t class_row(ClassPosition pos, std::size_t prompt_len) {
  switch (pos) {
    case ClassPosition::Start: return 0;
    case ClassPosition::Middle: return prompt_len / 2;
    case ClassPosition::End: return prompt_len;
  }
  return prompt_len;
}

namespace {

// prompts[0:at] ; row ; prompts[at:]
Var splice_row(Var prompts, Var row, std::size_t at) {
  const std::size_t m = prompts.rows();
  std::vector<Var> parts;
  if (at > 0) parts.push_back(slice_rows(prompts, 0, at));
  parts.push_back(row);
  if (at < m) parts.push_back(slice_rows(prompts, at, m - at));
  return concat_rows(parts);
}

}  // namespace

Var build_class_text_input(Var prompts, Var class_word, ClassPosition pos) {
  if (prompts.cols() != class_word.cols() || class_word.rows() != 1)
    throw ShapeError("class word " + class_word.value().shape_str() + " does not fit prompts " +
                     prompts.value().shape_str());
  return splice_row(prompts, class_word, class_row(pos, prompts.rows()));
}

std::vector<Var> encode_text_classes(Tape& tape, const TextStub& stub, Var prompts,
                                     const std::vector<Var>& class_words, ClassPosition pos) {
  std::vector<Var> out;
  out.reserve(class_words.size());
  if (stub.encoder.blocks.size() != 1) {
    for (const Var& c : class_words)
      out.push_back(encode_text(tape, stub, build_class_text_input(prompts, c, pos)));
    return out;
  }
  const std::size_t m = prompts.rows(), dim = prompts.cols();
  if (dim != stub.encoder.dim)
    throw ShapeError("prompts " + prompts.value().shape_str() + " do not match text width " +
                     std::to_string(stub.encoder.dim));
  const std::size_t cr = class_row(pos, m);
  const Tensor pe = sinusoidal_positions(m + 1, dim);
  Tensor prompt_pe(m, dim), class_pe(1, dim);
  for (std::size_t r = 0; r <= m; ++r) {
    if (r == cr) {
      std::copy(pe.row(r).begin(), pe.row(r).end(), class_pe.row(0).begin());
    } else {
      const std::size_t pr = r < cr ? r : r - 1;
      std::copy(pe.row(r).begin(), pe.row(r).end(), prompt_pe.row(pr).begin());
    }
  }
  const auto& b = stub.encoder.blocks[0];
  Var g1 = tape.param(*b.ln1_gain), b1 = tape.param(*b.ln1_bias);
  Var wq = tape.param(*b.attn.wq), wk = tape.param(*b.attn.wk), wv = tape.param(*b.attn.wv);
  Var p = add(prompts, tape.constant(prompt_pe));
  Var ap = layer_norm(p, g1, b1);
  Var kp = matmul(ap, wk), vp = matmul(ap, wv);
  // The last position is the class word at "end", else the last prompt row.
  const bool class_last = cr == m;
  Var x_last{}, q_last{};
  if (!class_last) {
    x_last = select_row(p, m - 1);
    q_last = matmul(select_row(ap, m - 1), wq);
  }
  Var cpe = tape.constant(class_pe);
  for (const Var& c : class_words) {
    Var xc = add(c, cpe);
    Var ac = layer_norm(xc, g1, b1);
    Var k = splice_row(kp, matmul(ac, wk), cr);
    Var v = splice_row(vp, matmul(ac, wv), cr);
    Var xr = class_last ? xc : x_last;
    Var qr = class_last ? matmul(ac, wq) : q_last;
    Var h = add(xr, attend_projected(tape, qr, k, v, b.attn, nullptr, nullptr));
    h = feed_forward_residual(tape, b, h);
    h = layer_norm(h, tape.param(*stub.encoder.final_gain), tape.param(*stub.encoder.final_bias));
    out.push_back(matmul(h, tape.param(*stub.projection)));
  }
  return out;
}

ClassWordTable make_class_words(ParamStore& store, const AspectSet& aspects, std::size_t dim,
                                std::mt19937_64& rng) {
  ClassWordTable t;
  for (const auto& a : aspects) {
    auto& row = t.words.emplace_back();
    for (auto w : a.words) {
      std::replace(w.begin(), w.end(), ' ', '_');
      row.push_back(&store.add("backbone.class_word." + a.name + "." + w, gaussian(1, dim, 1.0, rng), true));
    }
  }
  return t;
}

}  // namespace stclip
