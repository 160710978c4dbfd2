#pragma once

// Full-model finite-difference check at toy dimensions.

#include <cstdint>
#include <random>

#include "stclip/autodiff.hpp"
#include "stclip/model.hpp"

namespace stclip {

/// Unit-scale image features and a tracklet whose first row is padding, with
/// categories drawn within the config's vocabularies.
SampleInput random_sample_input(const ModelConfig& config, std::mt19937_64& rng);

/// Adds N(0, scale^2) to every trainable value.
void jitter_trainables(ModelState& model, std::mt19937_64& rng, double scale);

/// Two aspects of two classes each.
AspectSet toy_check_aspects();

/// D=8, M=4, N_w=1, one block in every encoder, two heads, mu = 1.
ModelConfig toy_check_config(std::uint64_t seed);

/// Random model state (trainables jittered by N(0, 0.3^2)), random unit-scale
/// image features and tracklet, random labels; checks the summed aspect loss.
/// The jitter spreads the prompt rows apart: near-identical rows leave the
/// cross-aspect weights with gradients too small to difference, and at small
/// mu the class softmax saturates.
GradCheckReport check_model_gradients(std::uint64_t seed, const AblationFlags& ablation = {});

inline constexpr double kGradCheckTolerance = 1e-4;

inline bool gradients_pass(const GradCheckReport& r) {
  return r.max_rel_error < kGradCheckTolerance && r.frozen_grad_entries == 0;
}

}  // namespace stclip
