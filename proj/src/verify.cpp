#include "stclip/verify.hpp"

#include "stclip/seeding.hpp"

namespace stclip {

namespace {

Tensor normal(std::mt19937_64& rng, std::size_t r, std::size_t c, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(r, c);
  for (auto& v : t.data()) v = n(rng);
  return t;
}

std::size_t pick(std::mt19937_64& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

SegmentCategories random_categories(std::mt19937_64& rng, const ModelConfig& c) {
  SegmentCategories s;
  s.id = pick(rng, c.vocab.segments);
  s.function_class = pick(rng, c.vocab.function_classes);
  s.lane_number = pick(rng, c.vocab.lane_numbers);
  s.speed_class = pick(rng, c.vocab.speed_classes);
  s.road_length = pick(rng, road_length_bins().size());
  s.out_degree = pick(rng, c.vocab.out_degrees);
  s.trajectory_count = pick(rng, trajectory_count_bins().size());
  s.medium_speed = pick(rng, medium_speed_bins().size());
  return s;
}

}  // namespace

SampleInput random_sample_input(const ModelConfig& config, std::mt19937_64& rng) {
  SampleInput sample{normal(rng, config.patches, config.dim, 1.0), normal(rng, 1, config.dim, 1.0), {}};
  for (std::size_t k = 0; k < 2 * config.window + 1; ++k) {
    if (k == 0)
      sample.context.rows.emplace_back(std::nullopt);
    else
      sample.context.rows.emplace_back(random_categories(rng, config));
  }
  return sample;
}

void jitter_trainables(ModelState& model, std::mt19937_64& rng, double scale) {
  for (Parameter* p : model.params().trainable()) p->value.add_inplace(normal(rng, p->value.rows(), p->value.cols(), scale));
}

AspectSet toy_check_aspects() { return {{"left", {"red", "blue"}}, {"right", {"up", "down"}}}; }

ModelConfig toy_check_config(std::uint64_t seed) {
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
  c.temperature = 1.0;
  c.vocab = {5, 3, 3, 4, 3};
  c.seed = seed;
  c.backbone_seed = seed;
  return c;
}

GradCheckReport check_model_gradients(std::uint64_t seed, const AblationFlags& ablation) {
  auto config = toy_check_config(seed);
  config.ablation = ablation;
  const auto aspects = toy_check_aspects();
  auto model = ModelState::init(config, aspects);
  auto rng = substream(seed, "gradcheck.state");
  jitter_trainables(model, rng, 0.3);
  const SampleInput sample = random_sample_input(config, rng);
  std::vector<std::size_t> labels;
  for (const auto& a : aspects) labels.push_back(pick(rng, a.words.size()));

  return grad_check(
      [&](Tape& t) {
        const auto r = forward(t, model, sample);
        std::vector<Var> losses;
        for (std::size_t p = 0; p < labels.size(); ++p) losses.push_back(cross_entropy(r.probabilities[p], labels[p]));
        return sum(losses);
      },
      model.params().all());
}

}  // namespace stclip
