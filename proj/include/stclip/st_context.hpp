#pragma once

// Spatio-temporal context: property embeddings of road segments, feature
// fusion, tracklet windows around an image, and the tracklet encoder.

#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "stclip/autodiff.hpp"
#include "stclip/layers.hpp"
#include "stclip/map_match.hpp"
#include "stclip/road_graph.hpp"

namespace stclip {

/// Bin index of `value` given increasing lower edges: bin i is
/// [edges[i], edges[i+1]); out-of-range values clamp to the end bins.
std::size_t discretize(double value, const std::vector<double>& edges);

/// 16 equal-width bins over log10(length) in [0.5, 4.0].
const std::vector<double>& road_length_bins();
/// {0}, {1..5}, {6..20}, {21..50}, {51+}
const std::vector<double>& trajectory_count_bins();
/// 10 km/h strata from 0 to 100 plus one overflow bin.
const std::vector<double>& medium_speed_bins();

/// Table sizes for the categorical properties.
struct PropertyVocab {
  std::size_t segments = 1;
  std::size_t function_classes = 1;
  std::size_t lane_numbers = 1;
  std::size_t speed_classes = 1;
  std::size_t out_degrees = 1;

  static PropertyVocab from_network(const RoadNetwork& network);
  friend bool operator==(const PropertyVocab&, const PropertyVocab&) = default;
};

/// Row indices into each property table for one segment at one time.
struct SegmentCategories {
  std::size_t id = 0;
  std::size_t function_class = 0;
  std::size_t lane_number = 0;
  std::size_t speed_class = 0;
  std::size_t road_length = 0;
  std::size_t out_degree = 0;
  std::size_t trajectory_count = 0;
  std::size_t medium_speed = 0;
};

SegmentCategories categorize(const RoadNetwork& network, std::size_t segment_index,
                             const DynamicStats& stats);

struct PropertyTables {
  Parameter* id = nullptr;
  Parameter* function_class = nullptr;
  Parameter* lane_number = nullptr;
  Parameter* speed_class = nullptr;
  Parameter* road_length = nullptr;
  Parameter* out_degree = nullptr;
  Parameter* trajectory_count = nullptr;
  Parameter* medium_speed = nullptr;
  std::size_t dim = 0;
};

inline constexpr double kEmbeddingInitStd = 0.1;

PropertyTables make_property_tables(ParamStore& store, const PropertyVocab& vocab, std::size_t dim,
                                    std::mt19937_64& rng);

/// ID | FC | LN | SC | RL | OD, each `dim` wide.
Var embed_static(Tape& tape, const PropertyTables& t, const SegmentCategories& c);
/// TC | MS.
Var embed_dynamic(Tape& tape, const PropertyTables& t, const SegmentCategories& c);

struct FusionParams {
  Parameter* weight = nullptr;  // 8*dim x D
  Parameter* bias = nullptr;    // 1 x D
};

FusionParams make_fusion(ParamStore& store, std::size_t in_dim, std::size_t out_dim,
                         std::mt19937_64& rng);

/// tanh([static | dynamic] W + b)
Var fuse_segment_features(Tape& tape, const FusionParams& f, Var static_part, Var dynamic_part);

struct Tracklet {
  Var rows;                 // (2*window + 1) x D
  std::vector<bool> valid;  // false rows are zero
  std::size_t center = 0;
};

/// Trajectory positions covered by the window around image_index; nullopt
/// past either end. LookupError when image_index is outside the trajectory.
std::vector<std::optional<std::size_t>> tracklet_positions(std::size_t length, std::size_t image_index,
                                                           std::size_t window);

Tracklet build_tracklet(Tape& tape, std::size_t length, std::size_t image_index, std::size_t window,
                        std::size_t dim, const std::function<Var(std::size_t)>& feature_fn);

/// Scales the rows by sqrt(D), adds sinusoidal positions, runs the encoder with masked keys and returns
/// the center row (1 x D).
Var encode_tracklet(Tape& tape, const EncoderParams& enc, const Tracklet& tracklet);

}  // namespace stclip
