#include "stclip/scamp.hpp"

#include <cmath>

#include "stclip/error.hpp"

namespace stclip {

ScampParams make_scamp(ParamStore& store, const AspectSet& aspects, std::size_t prompt_len,
                       std::size_t dim, std::size_t heads, std::mt19937_64& rng) {
  ScampParams s;
  const double w = 1.0 / std::sqrt(static_cast<double>(dim));
  for (const auto& a : aspects)
    s.prompts.push_back(&store.add("prompt." + a.name, gaussian(prompt_len, dim, kPromptInitStd, rng), false));
  for (const auto& a : aspects)
    s.cross_modal.push_back(make_attention(store, "cross_modal." + a.name, dim, heads, rng, false));
  for (const auto& a : aspects) {
    auto& row = s.cross_aspect.emplace_back();
    for (const auto& b : aspects)
      row.push_back(&store.add("cross_aspect." + a.name + "." + b.name, gaussian(dim, dim, w, rng), false));
  }
  return s;
}

Var inject_context(Var prompts, Var context) { return add_row(prompts, context); }

Var cross_modal_attention(Tape& tape, Var prompts, Var patches, const AttentionParams& params,
                          AttentionTrace* trace) {
  return multi_head_attention(tape, prompts, patches, params, nullptr, trace);
}

std::vector<Var> cross_aspect_attention(Tape& tape, const std::vector<Var>& prompts,
                                        const std::vector<std::vector<Parameter*>>& pair_weights,
                                        std::vector<Tensor>* weights) {
  const std::size_t n = prompts.size();
  if (pair_weights.size() != n) throw ShapeError("cross-aspect weights do not match aspect count");
  std::vector<Var> out;
  out.reserve(n);
  for (std::size_t p = 0; p < n; ++p) {
    const double inv = 1.0 / std::sqrt(static_cast<double>(prompts[p].cols()));
    Var left = prompts[p];
    std::vector<Var> terms;
    terms.reserve(n);
    for (std::size_t q = 0; q < n; ++q) {
      Var scores = scale(matmul_nt(matmul(left, tape.param(*pair_weights[p][q])), prompts[q]), inv);
      Var att = softmax_rows(scores);
      if (weights) weights->push_back(att.value());
      terms.push_back(matmul(att, prompts[q]));
    }
    out.push_back(n == 1 ? terms[0] : sum(terms));
  }
  return out;
}

std::vector<Tensor> cross_aspect_kernel(const std::vector<Tensor>& prompts,
                                        const std::vector<std::vector<const Tensor*>>& pair_weights) {
  const std::size_t n = prompts.size();
  std::vector<Tensor> out;
  out.reserve(n);
  for (std::size_t p = 0; p < n; ++p) {
    const std::size_t m = prompts[p].rows(), d = prompts[p].cols();
    const double inv = 1.0 / std::sqrt(static_cast<double>(d));
    Tensor acc(m, d);
    for (std::size_t q = 0; q < n; ++q) {
      Tensor proj(m, d);
      gemm_nn(prompts[p], *pair_weights[p][q], proj);
      Tensor scores(m, prompts[q].rows());
      gemm_nt(proj, prompts[q], scores);
      for (std::size_t r = 0; r < scores.rows(); ++r) {
        auto row = scores.row(r);
        double hi = -HUGE_VAL;
        for (double& v : row) hi = std::max(hi, v *= inv);
        double z = 0;
        for (double& v : row) z += (v = std::exp(v - hi));
        for (double& v : row) v /= z;
      }
      gemm_nn(scores, prompts[q], acc);
    }
    out.push_back(std::move(acc));
  }
  return out;
}

}  // namespace stclip
