#pragma once

// HMM map matching: grid-indexed candidate search, Gaussian emissions,
// distance-ratio transitions, Viterbi decoding. Also the per-window dynamic
// segment statistics derived from matched trajectories.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "stclip/geo.hpp"
#include "stclip/road_graph.hpp"

namespace stclip {

struct GpsPoint {
  LonLat pos;
  double timestamp = 0.0;  // seconds
};

struct GpsTrajectory {
  std::int64_t id = 0;
  std::vector<GpsPoint> points;
};

struct Candidate {
  SegmentId segment_id = 0;
  std::size_t segment_index = 0;
  LonLat projected_point;
  double perpendicular_distance = 0.0;  // meters
  double offset_along_segment = 0.0;    // meters, in road_length units
};

struct MatchedSample {
  SegmentId segment_id = 0;
  double timestamp = 0.0;
  friend bool operator==(const MatchedSample&, const MatchedSample&) = default;
};

/// Connected segment sequence; timestamps are segment entry times.
struct SegmentTrajectory {
  std::int64_t id = 0;
  std::vector<MatchedSample> samples;
  friend bool operator==(const SegmentTrajectory&, const SegmentTrajectory&) = default;
};

struct MatchParams {
  double sigma = 20.0;    // emission std dev, meters
  double radius = 100.0;  // candidate search radius, meters
  std::size_t k = 8;      // candidates per point
};

/// Uniform grid over the bounding box of all segment geometries.
class SpatialIndex {
 public:
  static SpatialIndex build(const RoadNetwork& network, double cell_size);

  const LocalFrame& frame() const { return frame_; }
  const std::vector<Point2>& local_geometry(std::size_t segment_index) const {
    return local_.at(segment_index);
  }
  /// Segment indices whose geometry may lie within `radius` of p, ascending.
  std::vector<std::size_t> nearby(Point2 p, double radius) const;
  const RoadNetwork& network() const { return *network_; }

 private:
  const RoadNetwork* network_ = nullptr;
  LocalFrame frame_;
  std::vector<std::vector<Point2>> local_;
  double cell_ = 1.0;
  double min_x_ = 0.0, min_y_ = 0.0;
  std::int64_t nx_ = 0, ny_ = 0;
  std::vector<std::vector<std::size_t>> cells_;
};

/// Projection of a point onto one segment.
Candidate project_candidate(const SpatialIndex& index, std::size_t segment_index, LonLat point);

/// Up to k candidates within radius, nearest first, ties by segment id.
std::vector<Candidate> candidate_segments(const SpatialIndex& index, LonLat point, double radius,
                                          std::size_t k);

double emission_prob(const Candidate& c, double sigma);
double log_emission_prob(const Candidate& c, double sigma);

/// Caches one shortest-path tree per source segment.
class RouteCache {
 public:
  explicit RouteCache(const RoadNetwork& network) : network_(&network) {}

  const ShortestPathTree& tree(std::size_t source);
  /// Network distance from a's projected point to b's; nullopt if unreachable.
  std::optional<double> route_distance(const Candidate& a, const Candidate& b);
  /// Segment indices driven from a to b, excluding a's own segment, paired
  /// with the distance from a's point to each segment's entry.
  std::vector<std::pair<std::size_t, double>> route_entries(const Candidate& a, const Candidate& b);

  const RoadNetwork& network() const { return *network_; }

 private:
  // Shortest re-entry of the source segment through a predecessor.
  std::optional<std::size_t> best_return(std::size_t source);

  const RoadNetwork* network_;
  std::unordered_map<std::size_t, ShortestPathTree> trees_;
};

/// min(gc, route) / max(gc, route); 0/0 is 1; unreachable is 0.
double transition_prob(RouteCache& routes, const Candidate& prev, const Candidate& next,
                       double great_circle);

/// Straight-line distance between two GPS points in the index's frame.
double ground_distance(const SpatialIndex& index, LonLat a, LonLat b);

struct LatticePath {
  std::vector<std::size_t> choice;  // candidate index per step
  double log_prob = 0.0;
};

/// Viterbi over an explicit lattice. log_transition[t][i][j] scores moving
/// from candidate i at step t-1 to candidate j at step t (entry 0 unused).
/// Equal scores resolve to the smaller tie key.
LatticePath viterbi(const std::vector<std::vector<double>>& log_emission,
                    const std::vector<std::vector<std::vector<double>>>& log_transition,
                    const std::vector<std::vector<SegmentId>>& tie_keys);

struct Lattice {
  std::vector<std::vector<Candidate>> candidates;
  std::vector<std::vector<double>> log_emission;
  std::vector<std::vector<std::vector<double>>> log_transition;
  std::vector<std::vector<SegmentId>> tie_keys() const;
};

/// Candidate lattice for a trajectory. MatchError names the first point
/// without candidates.
Lattice build_lattice(const GpsTrajectory& traj, const SpatialIndex& index, RouteCache& routes,
                      const MatchParams& params);

struct MatchResult {
  SegmentTrajectory trajectory;
  std::vector<Candidate> chosen;  // one per GPS point
  double log_prob = 0.0;
};

MatchResult viterbi_match(const GpsTrajectory& traj, const SpatialIndex& index,
                          const MatchParams& params);

/// Matches every trajectory; output order follows input order regardless of
/// the worker count.
std::vector<SegmentTrajectory> match_all(const std::vector<GpsTrajectory>& trajs,
                                         const SpatialIndex& index, const MatchParams& params,
                                         unsigned threads = 1);

// ---- dynamic statistics ---------------------------------------------------

struct DynamicStats {
  int trajectory_count = 0;
  double medium_speed = 0.0;  // km/h
  friend bool operator==(const DynamicStats&, const DynamicStats&) = default;
};

inline constexpr double kDefaultStatsWindow = 1800.0;
inline constexpr double kMaxSpeedKmh = 200.0;

class DynamicStatsTable {
 public:
  explicit DynamicStatsTable(double window = kDefaultStatsWindow);

  double window() const { return window_; }
  std::int64_t window_index(double timestamp) const;
  void set(SegmentId segment, std::int64_t window_index, DynamicStats stats);
  /// Empty cells fall back to (0, speed_class of the segment).
  DynamicStats lookup(const RoadNetwork& network, SegmentId segment, double timestamp) const;
  const std::map<std::pair<SegmentId, std::int64_t>, DynamicStats>& cells() const { return cells_; }

 private:
  double window_;
  std::map<std::pair<SegmentId, std::int64_t>, DynamicStats> cells_;
};

DynamicStatsTable compute_dynamic_stats(const std::vector<SegmentTrajectory>& matched,
                                        const RoadNetwork& network,
                                        double window = kDefaultStatsWindow);

// ---- files ------------------------------------------------------------------

/// gps.csv: traj_id,lon,lat,timestamp. Points are ordered by timestamp within
/// a trajectory; trajectories by id.
std::vector<GpsTrajectory> load_gps(const std::filesystem::path& path);
void write_gps(const std::filesystem::path& path, const std::vector<GpsTrajectory>& trajs);

/// matched.csv: traj_id,segment_id,timestamp.
std::vector<SegmentTrajectory> load_matched(const std::filesystem::path& path);
void write_matched(const std::filesystem::path& path, const std::vector<SegmentTrajectory>& trajs);

/// dynamic_stats.csv: segment_id,window_start,trajectory_count,medium_speed.
DynamicStatsTable load_dynamic_stats(const std::filesystem::path& path,
                                     double window = kDefaultStatsWindow);
void write_dynamic_stats(const std::filesystem::path& path, const DynamicStatsTable& table);

}  // namespace stclip
