#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "stclip/geo.hpp"
#include "stclip/road_graph.hpp"

namespace fixtures {

inline const stclip::LocalFrame kFrame(116.40, 39.90);

struct Street {
  stclip::SegmentId id;
  std::vector<stclip::Point2> line;
  int speed_class = 40;
};

/// Network from local-meter polylines; road_length is the polyline length.
inline stclip::RoadNetwork make_network(const std::vector<Street>& streets,
                                        const std::vector<stclip::Edge>& edges) {
  std::vector<stclip::SegmentProfile> ps;
  std::unordered_map<stclip::SegmentId, stclip::Polyline> geom;
  for (const auto& s : streets) {
    stclip::SegmentProfile p;
    p.segment_id = s.id;
    p.road_length = stclip::polyline_length(s.line);
    p.speed_class = s.speed_class;
    ps.push_back(p);
    auto& g = geom[s.id];
    for (auto q : s.line) g.push_back(kFrame.to_lonlat(q));
  }
  return stclip::RoadNetwork::build(ps, edges, geom);
}

/// g x g junction grid, one segment per direction per street, with all
/// turns (U-turns included) allowed at each junction.
inline stclip::RoadNetwork grid_network(int g, double spacing, std::mt19937_64* jitter = nullptr) {
  std::vector<stclip::Point2> nodes;
  std::uniform_real_distribution<double> u(-spacing * 0.2, spacing * 0.2);
  for (int r = 0; r < g; ++r)
    for (int c = 0; c < g; ++c)
      nodes.push_back({c * spacing + (jitter ? u(*jitter) : 0.0),
                       r * spacing + (jitter ? u(*jitter) : 0.0)});
  std::vector<Street> streets;
  std::vector<std::pair<int, int>> ends;
  auto add = [&](int a, int b) {
    streets.push_back({static_cast<stclip::SegmentId>(streets.size()), {nodes[a], nodes[b]}});
    ends.emplace_back(a, b);
  };
  for (int r = 0; r < g; ++r)
    for (int c = 0; c < g; ++c) {
      const int n = r * g + c;
      if (c + 1 < g) {
        add(n, n + 1);
        add(n + 1, n);
      }
      if (r + 1 < g) {
        add(n, n + g);
        add(n + g, n);
      }
    }
  std::vector<stclip::Edge> edges;
  for (std::size_t i = 0; i < ends.size(); ++i)
    for (std::size_t j = 0; j < ends.size(); ++j)
      if (ends[i].second == ends[j].first)
        edges.push_back({static_cast<stclip::SegmentId>(i), static_cast<stclip::SegmentId>(j)});
  return make_network(streets, edges);
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("stclip_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixtures
