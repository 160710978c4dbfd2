#include "stclip/dataset.hpp"

#include <algorithm>
#include <unordered_map>

#include "stclip/error.hpp"

namespace stclip {

namespace fs = std::filesystem;

std::vector<const SceneSample*> Dataset::split(const std::string& name) const {
  std::vector<const SceneSample*> out;
  for (const auto& s : samples)
    if (s.image.split == name) out.push_back(&s);
  return out;
}

namespace {

void join_latents(Dataset& d, std::vector<SceneSampleRecord> records, std::vector<SceneLatent> latents) {
  std::unordered_map<std::string, std::size_t> by_path;
  for (std::size_t i = 0; i < latents.size(); ++i)
    if (!by_path.emplace(latents[i].image_path, i).second)
      throw IntegrityError("duplicate image_path '" + latents[i].image_path + "' in scene latents");
  for (auto& rec : records) {
    validate_scene_record(rec, d.aspects);
    auto it = by_path.find(rec.image_path);
    if (it == by_path.end()) throw IntegrityError("image '" + rec.image_path + "' has no scene latent");
    for (SegmentId s : rec.trajectory_segments)
      if (!d.network.contains(s))
        throw IntegrityError("image '" + rec.image_path + "' references unknown segment " + std::to_string(s));
    d.samples.push_back({std::move(rec), std::move(latents[it->second])});
  }
}

}  // namespace

Dataset load_dataset(const fs::path& dir, const AspectSet& aspects, const std::optional<fs::path>& stats_path) {
  Dataset d;
  d.aspects = aspects;
  d.network = load_road_network(dir);
  d.stats = load_dynamic_stats(stats_path.value_or(dir / "dynamic_stats.csv"));
  join_latents(d, load_scene_records(dir, aspects), load_scene_latents(dir / "scene_latents.csv"));
  if (fs::exists(dir / "concepts.csv")) d.concepts = load_concepts(dir / "concepts.csv", aspects);
  return d;
}

Dataset dataset_from_world(const SyntheticWorld& world, const AspectSet& aspects) {
  Dataset d;
  d.aspects = aspects;
  d.network = world.network;
  d.stats = world.stats;
  join_latents(d, world.records, world.latents);
  if (!world.concepts.empty()) d.concepts = world.concepts;
  return d;
}

ContextInput context_for(const Dataset& data, const SceneSample& sample, std::size_t window) {
  const auto& segs = sample.record.trajectory_segments;
  const auto at = std::find(segs.begin(), segs.end(), sample.record.image_to_segment);
  if (at == segs.end())
    throw IntegrityError("image '" + sample.record.image_path + "' segment is not on its trajectory");
  ContextInput ctx;
  for (const auto& pos : tracklet_positions(segs.size(), static_cast<std::size_t>(at - segs.begin()), window)) {
    if (!pos) {
      ctx.rows.emplace_back(std::nullopt);
      continue;
    }
    const SegmentId id = segs[*pos];
    const std::size_t index = data.network.index_of(id);
    ctx.rows.emplace_back(categorize(data.network, index, data.stats.lookup(data.network, id, sample.image.timestamp)));
  }
  return ctx;
}

ModelState build_model(ModelConfig config, const Dataset& data) {
  config.vocab = PropertyVocab::from_network(data.network);
  ModelState m = ModelState::init(config, data.aspects);
  if (data.concepts) align_backbone(m, *data.concepts);
  return m;
}

LabeledSample prepare_sample(const ModelState& model, const Dataset& data, const SceneSample& sample) {
  LabeledSample out;
  out.id = sample.record.image_path;
  const auto img = encode_image_stub(model.image_stub(), sample.image.latent);
  out.input.patches = img.patches;
  out.input.global = img.global;
  out.input.context = context_for(data, sample, model.config().window);
  for (int k : sample.record.label_indices) out.labels.push_back(static_cast<std::size_t>(k));
  return out;
}

std::vector<LabeledSample> prepare_samples(const ModelState& model, const Dataset& data,
                                           const std::vector<const SceneSample*>& samples) {
  std::vector<LabeledSample> out;
  out.reserve(samples.size());
  for (const SceneSample* s : samples) out.push_back(prepare_sample(model, data, *s));
  return out;
}

}  // namespace stclip
