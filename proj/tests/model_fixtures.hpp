#pragma once

// Toy model configurations and random inputs for the model-level suites.

#include <random>

#include "stclip/model.hpp"

namespace fixtures {

using namespace stclip;

inline Tensor random_tensor(std::mt19937_64& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(r, c);
  for (auto& v : t.data()) v = n(rng);
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Two aspects with two classes each.
inline AspectSet toy_aspects() { return {{"left", {"red", "blue"}}, {"right", {"up", "down"}}}; }

/// D=8, M=4, one block everywhere, two heads.
inline ModelConfig toy_config(std::uint64_t seed = 1) {
  ModelConfig c;
  c.dim = 8;
  c.prop_dim = 2;
  c.prompt_len = 4;
  c.patches = 3;
  c.latent_dim = 6;
  c.window = 1;
  c.tracklet_layers = 1;
  c.tracklet_heads = 2;
  c.attention_heads = 2;
  c.text_layers = 1;
  c.text_heads = 2;
  c.ff_mult = 2;
  c.vocab.segments = 5;
  c.vocab.function_classes = 3;
  c.vocab.lane_numbers = 3;
  c.vocab.speed_classes = 4;
  c.vocab.out_degrees = 3;
  c.seed = seed;
  // At the default 0.01 the class softmax saturates and finite differences
  // see nothing but round-off.
  c.temperature = 1.0;
  return c;
}

inline SegmentCategories random_categories(std::mt19937_64& rng, const ModelConfig& c) {
  auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  SegmentCategories s;
  s.id = pick(c.vocab.segments);
  s.function_class = pick(c.vocab.function_classes);
  s.lane_number = pick(c.vocab.lane_numbers);
  s.speed_class = pick(c.vocab.speed_classes);
  s.road_length = pick(16);
  s.out_degree = pick(c.vocab.out_degrees);
  s.trajectory_count = pick(5);
  s.medium_speed = pick(11);
  return s;
}

/// Random unit-scale image features and a random tracklet whose first row is
/// padding.
inline SampleInput random_sample(std::mt19937_64& rng, const ModelState& m) {
  const auto& c = m.config();
  // Unit-scale features keep every attention softmax away from saturation,
  // where finite differences only see round-off.
  SampleInput s{random_tensor(rng, c.patches, c.dim), random_tensor(rng, 1, c.dim), {}};
  for (std::size_t k = 0; k < 2 * c.window + 1; ++k) {
    if (k == 0 && c.window > 0)
      s.context.rows.emplace_back(std::nullopt);
    else
      s.context.rows.emplace_back(random_categories(rng, c));
  }
  return s;
}

/// Perturbs every trainable parameter so zero-initialized biases are not special.
inline void jitter_trainables(ModelState& m, std::mt19937_64& rng, double scale = 0.1) {
  for (Parameter* p : m.params().trainable())
    p->value.add_inplace(random_tensor(rng, p->value.rows(), p->value.cols(), scale));
}

}  // namespace fixtures
