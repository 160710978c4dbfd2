#pragma once

// Multi-aspect learnable prompts with context injection and bi-level
// (cross-modal, then cross-aspect) attention.

#include <random>
#include <vector>

#include "stclip/aspects.hpp"
#include "stclip/autodiff.hpp"
#include "stclip/layers.hpp"

namespace stclip {

struct ScampParams {
  std::vector<Parameter*> prompts;                   // [p] M x D
  std::vector<AttentionParams> cross_modal;          // [p]
  std::vector<std::vector<Parameter*>> cross_aspect;  // [p][q] D x D
};

/// Prompts ~ N(0, 0.02); attention matrices ~ N(0, 1/sqrt(D)).
ScampParams make_scamp(ParamStore& store, const AspectSet& aspects, std::size_t prompt_len,
                       std::size_t dim, std::size_t heads, std::mt19937_64& rng);

inline constexpr double kPromptInitStd = 0.02;

/// Adds the context row r to every prompt row.
Var inject_context(Var prompts, Var context);

/// Prompt rows attend over patch rows. No residual.
Var cross_modal_attention(Tape& tape, Var prompts, Var patches, const AttentionParams& params,
                          AttentionTrace* trace = nullptr);

/// ATT[p][q] = softmax_rows(V^p W^pq (V^q)^T / sqrt(D)); out^p = sum_q ATT[p][q] V^q.
/// `weights`, when given, receives every ATT[p][q] (row-major over p, q).
std::vector<Var> cross_aspect_attention(Tape& tape, const std::vector<Var>& prompts,
                                        const std::vector<std::vector<Parameter*>>& pair_weights,
                                        std::vector<Tensor>* weights = nullptr);

/// The same computation on plain tensors, without a tape.
std::vector<Tensor> cross_aspect_kernel(const std::vector<Tensor>& prompts,
                                        const std::vector<std::vector<const Tensor*>>& pair_weights);

}  // namespace stclip
