#pragma once

// A dataset directory in memory, and its conversion into model inputs.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "stclip/map_match.hpp"
#include "stclip/model.hpp"
#include "stclip/road_graph.hpp"
#include "stclip/synth.hpp"

namespace stclip {

struct SceneSample {
  SceneSampleRecord record;
  SceneLatent image;
};

struct Dataset {
  AspectSet aspects;
  RoadNetwork network;
  DynamicStatsTable stats;
  std::vector<SceneSample> samples;
  std::optional<ConceptLatents> concepts;  // from concepts.csv when present

  std::vector<const SceneSample*> split(const std::string& name) const;
};

/// Reads the network, the scene records joined with scene_latents.csv,
/// dynamic statistics (default: <dir>/dynamic_stats.csv) and, if present,
/// concepts.csv.
Dataset load_dataset(const std::filesystem::path& dir, const AspectSet& aspects,
                     const std::optional<std::filesystem::path>& stats_path = std::nullopt);

Dataset dataset_from_world(const SyntheticWorld& world, const AspectSet& aspects);

/// Tracklet categories around the image segment. Dynamic statistics of every
/// row are looked up in the image's time window.
ContextInput context_for(const Dataset& data, const SceneSample& sample, std::size_t window);

struct LabeledSample {
  std::string id;
  SampleInput input;
  std::vector<std::size_t> labels;  // one per aspect
};

/// Model for this dataset: property vocabularies sized from the network and,
/// when the dataset has concepts, an aligned backbone.
ModelState build_model(ModelConfig config, const Dataset& data);

LabeledSample prepare_sample(const ModelState& model, const Dataset& data, const SceneSample& sample);
std::vector<LabeledSample> prepare_samples(const ModelState& model, const Dataset& data,
                                           const std::vector<const SceneSample*>& samples);

}  // namespace stclip
