#pragma once

// Synthetic world: a grid road network, trajectories driven over it, and
// scene samples whose aspect labels shape both the image latent and the
// traffic observed around the image location.

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "stclip/aspects.hpp"
#include "stclip/encoders.hpp"
#include "stclip/geo.hpp"
#include "stclip/map_match.hpp"
#include "stclip/road_graph.hpp"
#include "stclip/tensor.hpp"

namespace stclip {

struct SpeedBand {
  double min_kmh = 20;
  double max_kmh = 50;
  int min_trajectories = 1;
  int max_trajectories = 3;
};

struct SynthConfig {
  std::uint64_t seed = 0;
  int grid = 8;                // junctions per side
  double spacing = 200;        // meters between junctions
  double junction_jitter = 0.15;  // fraction of spacing
  double lane_offset = 3;      // meters between the two directions of a street
  LonLat origin{116.40, 39.90};

  std::size_t train_samples = 320;
  std::size_t test_samples = 160;
  std::size_t latent_dim = 32;
  double latent_noise = 0.8;
  /// Centroid scale per aspect (scene, surface, width, accessibility).
  std::vector<double> latent_signal{1.0, 1.0, 0.8, 0.2};
  /// Probability that a sample sits on a segment whose static properties
  /// agree with its scene / width labels.
  double static_affinity = 0.7;
  /// Probability that scene and width labels follow the accessibility label.
  double label_coupling = 0.3;

  /// Accessibility classes, easy to extremely hard.
  std::vector<SpeedBand> access_bands{{35, 60, 1, 3}, {12, 25, 3, 6}, {4, 9, 6, 10}};
  double speed_jitter = 0.25;  // lognormal sigma per segment traversal
  double gps_noise = 0;        // meters
  double gps_interval = 5;     // seconds
  double start_time = 1.6e9;
  double stats_window = kDefaultStatsWindow;

  void validate() const;
  std::map<std::string, std::string> to_map() const;
  static SynthConfig from_map(const std::map<std::string, std::string>& kv, SynthConfig base);
};

/// Segments 2k and 2k+1 are the two directions of street k.
inline SegmentId twin_segment(SegmentId id) { return id ^ 1; }

/// Grid of two-way streets with randomized lanes, speed and function class.
/// Every turn is allowed, U-turns included, so the graph is strongly connected.
RoadNetwork generate_network(const SynthConfig& config);

struct GeneratedTrajectory {
  GpsTrajectory gps;
  std::vector<SegmentId> route;
  /// Segment entry times; the first segment is stamped with the first fix.
  SegmentTrajectory truth;
};

/// Renders a route to GPS fixes: starts partway into the first segment, ends
/// partway into the last, one fix every gps_interval seconds, Gaussian noise.
/// `speeds_kmh` holds one speed per route segment.
GeneratedTrajectory render_route(const RoadNetwork& network, const std::vector<SegmentId>& route,
                                 const std::vector<double>& speeds_kmh, double start_time,
                                 std::int64_t id, const SynthConfig& config, std::mt19937_64& rng);

/// Random walk of `length` segments without U-turns (unless at a dead end).
std::vector<SegmentId> random_route(const RoadNetwork& network, std::size_t start_index, std::size_t length,
                                    std::mt19937_64& rng);

/// `count` random-walk trajectories of 3 to 8 segments at 20-50 km/h.
std::vector<GeneratedTrajectory> generate_trajectories(const RoadNetwork& network, const SynthConfig& config,
                                                       std::size_t count, std::mt19937_64& rng);

/// Image latent and time for one scene sample; stand-in for the picture.
struct SceneLatent {
  std::string image_path;
  double timestamp = 0;
  std::string split;  // "train" or "test"
  Tensor latent;      // 1 x latent_dim
};

struct SyntheticWorld {
  RoadNetwork network;
  std::vector<GeneratedTrajectory> trajectories;
  DynamicStatsTable stats;
  std::vector<SceneSampleRecord> records;
  std::vector<SceneLatent> latents;
  ConceptLatents concepts;
};

/// Per-(aspect, class) latent centroids, unit Gaussian before scaling.
std::vector<std::vector<Tensor>> latent_centroids(const SynthConfig& config, const AspectSet& aspects);

/// Centroids scaled by their aspect's latent signal: the latent of a scene
/// showing only that concept.
ConceptLatents concept_latents(const SynthConfig& config, const AspectSet& aspects);

SyntheticWorld generate_world(const SynthConfig& config, const AspectSet& aspects);

/// Writes the network files, scene records, gps.csv, matched.csv (ground
/// truth), dynamic_stats.csv, scene_latents.csv and concepts.csv.
void write_world(const std::filesystem::path& dir, const SyntheticWorld& world, const AspectSet& aspects);

std::vector<SceneLatent> load_scene_latents(const std::filesystem::path& path);
void write_scene_latents(const std::filesystem::path& path, const std::vector<SceneLatent>& latents);

/// Columns aspect, word, latent; every (aspect, word) exactly once.
ConceptLatents load_concepts(const std::filesystem::path& path, const AspectSet& aspects);
void write_concepts(const std::filesystem::path& path, const ConceptLatents& concepts, const AspectSet& aspects);

}  // namespace stclip
