#pragma once

// Road network model and the dataset file formats built on it.
//
// Files (comma-delimited, UTF-8, header row):
//   segment_profile.csv      segment_id,function_class,lane_number,speed_class,road_length,
//                            out_degree,trajectory_count,medium_speed,other_attrs_json
//   edges.csv                from_id,to_id
//   segment_geometry.csv     segment_id,geometry   (geometry = "LINESTRING(lon lat, ...)")
//   image_dataset.csv        image_path,label_name_list,label_index_list
//   image_to_trajectory.csv  image_path,trajectory_segments,image_to_segment
// List-valued fields are semicolon separated.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "stclip/aspects.hpp"

namespace stclip {

using SegmentId = std::int64_t;

struct SegmentProfile {
  SegmentId segment_id = 0;
  int function_class = 0;
  int lane_number = 1;
  int speed_class = 0;       // km/h
  double road_length = 1.0;  // meters
  int out_degree = -1;       // -1 when unknown
  int trajectory_count = 0;
  double medium_speed = 0.0;  // km/h
  std::string extra_attrs = "/";

  friend bool operator==(const SegmentProfile&, const SegmentProfile&) = default;
};

struct LonLat {
  double lon = 0.0;
  double lat = 0.0;
  friend bool operator==(const LonLat&, const LonLat&) = default;
};

using Polyline = std::vector<LonLat>;

struct Edge {
  SegmentId from = 0;
  SegmentId to = 0;
  friend bool operator==(const Edge&, const Edge&) = default;
};

/// One-to-all shortest paths from a source segment. cost[v] sums the
/// road_length of every segment entered after the source (v included).
struct ShortestPathTree {
  std::size_t source = 0;
  std::vector<double> cost;  // +inf when unreachable or beyond the bound
  std::vector<std::int32_t> parent;

  bool reached(std::size_t v) const;
  /// Dense indices from source to v, both inclusive.
  std::vector<std::size_t> path_to(std::size_t v) const;
};

/// Directed graph of road segments. Immutable after build(); safe to share
/// across threads for reading.
class RoadNetwork {
 public:
  RoadNetwork() = default;

  /// Integrity errors on duplicate ids, dangling edge endpoints and bad
  /// geometry. Out-degrees are recomputed from the edges; a mismatch with a
  /// known profile value is recorded in warnings() and the edge count wins.
  static RoadNetwork build(std::vector<SegmentProfile> profiles, const std::vector<Edge>& edges,
                           std::unordered_map<SegmentId, Polyline> geometries);

  std::size_t size() const noexcept { return profiles_.size(); }
  const std::vector<SegmentProfile>& profiles() const noexcept { return profiles_; }
  const SegmentProfile& profile(std::size_t index) const { return profiles_.at(index); }
  SegmentId id_of(std::size_t index) const { return profiles_.at(index).segment_id; }
  bool contains(SegmentId id) const { return index_.count(id) != 0; }
  /// LookupError for unknown ids.
  std::size_t index_of(SegmentId id) const;

  bool adjacent(std::size_t from, std::size_t to) const;
  /// Successor indices, sorted by segment id.
  const std::vector<std::size_t>& successors(std::size_t index) const { return out_.at(index); }
  const std::vector<std::size_t>& predecessors(std::size_t index) const { return in_.at(index); }
  std::size_t out_degree(std::size_t index) const { return out_.at(index).size(); }
  std::size_t edge_count() const noexcept { return edge_count_; }
  std::vector<Edge> edges() const;

  bool has_geometry(std::size_t index) const { return !geometry_.at(index).empty(); }
  const Polyline& geometry(std::size_t index) const { return geometry_.at(index); }

  const std::vector<std::string>& warnings() const noexcept { return warnings_; }

  /// Dijkstra over segment entry costs, expanding only nodes with cost <= bound.
  /// Equal-cost ties prefer the parent with the smaller segment id.
  ShortestPathTree shortest_paths(std::size_t source, double bound = HUGE_VAL) const;

 private:
  std::vector<SegmentProfile> profiles_;
  std::unordered_map<SegmentId, std::size_t> index_;
  std::vector<std::vector<std::size_t>> out_;
  std::vector<std::vector<std::size_t>> in_;
  std::vector<Polyline> geometry_;
  std::vector<std::string> warnings_;
  std::size_t edge_count_ = 0;
};

/// Segment-to-segment network distance in meters, measured between segment
/// midpoints: half the origin length, every intermediate segment, half the
/// destination length. Same segment -> 0; unreachable -> nullopt.
std::optional<double> shortest_path_length(const RoadNetwork& network, SegmentId from,
                                           SegmentId to);

// ---- dataset records ------------------------------------------------------

struct SceneSampleRecord {
  std::string image_path;
  std::vector<std::string> label_names;
  std::vector<int> label_indices;
  std::vector<SegmentId> trajectory_segments;
  SegmentId image_to_segment = 0;

  friend bool operator==(const SceneSampleRecord&, const SceneSampleRecord&) = default;
};

// ---- file I/O ---------------------------------------------------------------

std::vector<SegmentProfile> load_segment_profiles(const std::filesystem::path& path);
void write_segment_profiles(const std::filesystem::path& path,
                            const std::vector<SegmentProfile>& profiles);

std::vector<Edge> load_edges(const std::filesystem::path& path);
void write_edges(const std::filesystem::path& path, const std::vector<Edge>& edges);

std::unordered_map<SegmentId, Polyline> load_geometry(const std::filesystem::path& path);
void write_geometry(const std::filesystem::path& path, const RoadNetwork& network);
std::string format_linestring(const Polyline& line);
Polyline parse_linestring(const std::string& text, const std::string& where);

/// Reads the four network files from a dataset directory.
RoadNetwork load_road_network(const std::filesystem::path& dir);
void write_road_network(const std::filesystem::path& dir, const RoadNetwork& network);

/// Joins image_dataset.csv with image_to_trajectory.csv on image_path and
/// validates labels against `aspects`.
std::vector<SceneSampleRecord> load_scene_records(const std::filesystem::path& dir,
                                                  const AspectSet& aspects);
void write_scene_records(const std::filesystem::path& dir,
                         const std::vector<SceneSampleRecord>& records);
void validate_scene_record(const SceneSampleRecord& rec, const AspectSet& aspects);

}  // namespace stclip
