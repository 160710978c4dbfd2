#include "stclip/road_graph.hpp"

#include <algorithm>
#include <fstream>
#include <queue>
#include <set>
#include <unordered_set>

#include "stclip/csv.hpp"
#include "stclip/error.hpp"

namespace stclip {

namespace fs = std::filesystem;

bool ShortestPathTree::reached(std::size_t v) const { return std::isfinite(cost.at(v)); }

std::vector<std::size_t> ShortestPathTree::path_to(std::size_t v) const {
  std::vector<std::size_t> path;
  if (!reached(v)) return path;
  for (std::int64_t cur = static_cast<std::int64_t>(v); cur >= 0; cur = parent[cur]) {
    path.push_back(static_cast<std::size_t>(cur));
    if (static_cast<std::size_t>(cur) == source) break;
  }
  std::reverse(path.begin(), path.end());
  return path;
}

RoadNetwork RoadNetwork::build(std::vector<SegmentProfile> profiles, const std::vector<Edge>& edges,
                               std::unordered_map<SegmentId, Polyline> geometries) {
  RoadNetwork net;
  const std::size_t n = profiles.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = profiles[i];
    if (!net.index_.emplace(p.segment_id, i).second) {
      throw IntegrityError("duplicate segment_id " + std::to_string(p.segment_id));
    }
    if (!(p.road_length > 0.0)) {
      throw IntegrityError("segment " + std::to_string(p.segment_id) + " has road_length <= 0");
    }
  }
  net.out_.assign(n, {});
  net.in_.assign(n, {});
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& e : edges) {
    auto a = net.index_.find(e.from);
    auto b = net.index_.find(e.to);
    if (a == net.index_.end() || b == net.index_.end()) {
      throw IntegrityError("edge (" + std::to_string(e.from) + "," + std::to_string(e.to) +
                           ") references an unknown segment");
    }
    if (!seen.emplace(a->second, b->second).second) continue;
    net.out_[a->second].push_back(b->second);
    net.in_[b->second].push_back(a->second);
  }
  net.edge_count_ = seen.size();
  auto by_id = [&profiles](std::size_t x, std::size_t y) {
    return profiles[x].segment_id < profiles[y].segment_id;
  };
  for (std::size_t i = 0; i < n; ++i) {
    std::sort(net.out_[i].begin(), net.out_[i].end(), by_id);
    std::sort(net.in_[i].begin(), net.in_[i].end(), by_id);
    const int derived = static_cast<int>(net.out_[i].size());
    if (profiles[i].out_degree >= 0 && profiles[i].out_degree != derived) {
      net.warnings_.push_back("segment " + std::to_string(profiles[i].segment_id) +
                              ": out_degree " + std::to_string(profiles[i].out_degree) +
                              " replaced by edge count " + std::to_string(derived));
    }
    profiles[i].out_degree = derived;
  }
  net.geometry_.assign(n, {});
  for (auto& [id, line] : geometries) {
    auto it = net.index_.find(id);
    if (it == net.index_.end()) {
      throw IntegrityError("geometry for unknown segment " + std::to_string(id));
    }
    if (line.size() < 2) {
      throw IntegrityError("geometry of segment " + std::to_string(id) + " has < 2 points");
    }
    net.geometry_[it->second] = std::move(line);
  }
  net.profiles_ = std::move(profiles);
  return net;
}

std::size_t RoadNetwork::index_of(SegmentId id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw LookupError("unknown segment id " + std::to_string(id));
  return it->second;
}

bool RoadNetwork::adjacent(std::size_t from, std::size_t to) const {
  const auto& succ = out_.at(from);
  return std::find(succ.begin(), succ.end(), to) != succ.end();
}

std::vector<Edge> RoadNetwork::edges() const {
  std::vector<Edge> out;
  out.reserve(edge_count_);
  for (std::size_t i = 0; i < size(); ++i)
    for (std::size_t j : out_[i]) out.push_back({id_of(i), id_of(j)});
  return out;
}

ShortestPathTree RoadNetwork::shortest_paths(std::size_t source, double bound) const {
  ShortestPathTree tree;
  tree.source = source;
  tree.cost.assign(size(), HUGE_VAL);
  tree.parent.assign(size(), -1);
  tree.cost.at(source) = 0.0;
  using Item = std::pair<double, SegmentId>;  // (cost, segment id) orders ties by id
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  std::vector<char> done(size(), 0);
  pq.push({0.0, id_of(source)});
  while (!pq.empty()) {
    auto [c, id] = pq.top();
    pq.pop();
    const std::size_t u = index_.at(id);
    if (done[u]) continue;
    done[u] = 1;
    for (std::size_t v : out_[u]) {
      const double nc = c + profiles_[v].road_length;
      if (nc > bound) continue;
      const bool better = nc < tree.cost[v];
      const bool tie = nc == tree.cost[v] && tree.parent[v] >= 0 && !done[v] &&
                       id_of(u) < id_of(static_cast<std::size_t>(tree.parent[v]));
      if (v != source && (better || tie)) {
        tree.cost[v] = nc;
        tree.parent[v] = static_cast<std::int32_t>(u);
        if (better) pq.push({nc, id_of(v)});
      }
    }
  }
  return tree;
}

std::optional<double> shortest_path_length(const RoadNetwork& network, SegmentId from,
                                           SegmentId to) {
  const std::size_t a = network.index_of(from);
  const std::size_t b = network.index_of(to);
  if (a == b) return 0.0;
  const auto tree = network.shortest_paths(a);
  if (!tree.reached(b)) return std::nullopt;
  return tree.cost[b] - network.profile(b).road_length / 2.0 +
         network.profile(a).road_length / 2.0;
}

// ---- file I/O ---------------------------------------------------------------

namespace {

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  return os;
}

std::string where(const csv::Table& t, std::size_t row) {
  return t.source() + " line " + std::to_string(t.line_of(row));
}

}  // namespace

std::vector<SegmentProfile> load_segment_profiles(const fs::path& path) {
  const auto t = csv::Table::read(path);
  const std::size_t c_id = t.column("segment_id"), c_fc = t.column("function_class"),
                    c_ln = t.column("lane_number"), c_sc = t.column("speed_class"),
                    c_rl = t.column("road_length"), c_od = t.column("out_degree"),
                    c_tc = t.column("trajectory_count"), c_ms = t.column("medium_speed");
  const bool has_extra = t.has_column("other_attrs_json");
  const std::size_t c_ex = has_extra ? t.column("other_attrs_json") : 0;
  std::vector<SegmentProfile> out;
  std::unordered_set<SegmentId> ids;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    SegmentProfile p;
    p.segment_id = t.get_int(r, c_id);
    p.function_class = static_cast<int>(t.get_int(r, c_fc));
    p.lane_number = static_cast<int>(t.get_int(r, c_ln));
    p.speed_class = static_cast<int>(t.get_int(r, c_sc));
    p.road_length = t.get_double(r, c_rl);
    p.out_degree = static_cast<int>(t.get_int(r, c_od));
    p.trajectory_count = static_cast<int>(t.get_int(r, c_tc));
    p.medium_speed = t.get_double(r, c_ms);
    p.extra_attrs = has_extra ? t.cell(r, c_ex) : "/";
    const std::string w = where(t, r);
    if (!(p.road_length > 0.0)) throw IntegrityError(w + ": road_length must be positive");
    if (p.lane_number < 1) throw IntegrityError(w + ": lane_number must be >= 1");
    if (p.out_degree < 0 || p.trajectory_count < 0 || p.function_class < 0 || p.speed_class < 0) {
      throw IntegrityError(w + ": counts and classes must be >= 0");
    }
    if (p.medium_speed < 0.0) throw IntegrityError(w + ": medium_speed must be >= 0");
    if (!ids.insert(p.segment_id).second) {
      throw IntegrityError(w + ": duplicate segment_id " + std::to_string(p.segment_id));
    }
    out.push_back(std::move(p));
  }
  return out;
}

void write_segment_profiles(const fs::path& path, const std::vector<SegmentProfile>& profiles) {
  auto os = open_out(path);
  csv::write_row(os, {"segment_id", "function_class", "lane_number", "speed_class", "road_length",
                      "out_degree", "trajectory_count", "medium_speed", "other_attrs_json"});
  for (const auto& p : profiles) {
    csv::write_row(os, {std::to_string(p.segment_id), std::to_string(p.function_class),
                        std::to_string(p.lane_number), std::to_string(p.speed_class),
                        csv::format_double(p.road_length), std::to_string(p.out_degree),
                        std::to_string(p.trajectory_count), csv::format_double(p.medium_speed),
                        p.extra_attrs});
  }
}

std::vector<Edge> load_edges(const fs::path& path) {
  const auto t = csv::Table::read(path);
  const std::size_t c_from = t.column("from_id"), c_to = t.column("to_id");
  std::vector<Edge> out;
  out.reserve(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) out.push_back({t.get_int(r, c_from), t.get_int(r, c_to)});
  return out;
}

void write_edges(const fs::path& path, const std::vector<Edge>& edges) {
  auto os = open_out(path);
  csv::write_row(os, {"from_id", "to_id"});
  for (const auto& e : edges) csv::write_row(os, {std::to_string(e.from), std::to_string(e.to)});
}

std::string format_linestring(const Polyline& line) {
  std::string s = "LINESTRING(";
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (i) s += ", ";
    s += csv::format_double(line[i].lon) + " " + csv::format_double(line[i].lat);
  }
  s += ")";
  return s;
}

Polyline parse_linestring(const std::string& text, const std::string& where) {
  const auto open = text.find('(');
  const auto close = text.rfind(')');
  if (open == std::string::npos || close == std::string::npos || close < open ||
      text.substr(0, open).find("LINESTRING") == std::string::npos) {
    throw ParseError(where + ": expected LINESTRING(lon lat, ...)");
  }
  Polyline line;
  for (const auto& pt : csv::split(std::string_view(text).substr(open + 1, close - open - 1), ',')) {
    const auto sp = pt.find(' ');
    if (sp == std::string::npos) throw ParseError(where + ": bad coordinate '" + pt + "'");
    line.push_back({csv::parse_double(pt.substr(0, sp), where),
                    csv::parse_double(std::string_view(pt).substr(pt.find_first_not_of(' ', sp)),
                                      where)});
  }
  return line;
}

std::unordered_map<SegmentId, Polyline> load_geometry(const fs::path& path) {
  const auto t = csv::Table::read(path);
  const std::size_t c_id = t.column("segment_id"), c_geom = t.column("geometry");
  std::unordered_map<SegmentId, Polyline> out;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const SegmentId id = t.get_int(r, c_id);
    if (!out.emplace(id, parse_linestring(t.cell(r, c_geom), where(t, r))).second) {
      throw IntegrityError(where(t, r) + ": duplicate geometry for segment " + std::to_string(id));
    }
  }
  return out;
}

void write_geometry(const fs::path& path, const RoadNetwork& network) {
  auto os = open_out(path);
  csv::write_row(os, {"segment_id", "geometry"});
  for (std::size_t i = 0; i < network.size(); ++i) {
    if (!network.has_geometry(i)) continue;
    csv::write_row(os, {std::to_string(network.id_of(i)), format_linestring(network.geometry(i))});
  }
}

RoadNetwork load_road_network(const fs::path& dir) {
  return RoadNetwork::build(load_segment_profiles(dir / "segment_profile.csv"),
                            load_edges(dir / "edges.csv"),
                            load_geometry(dir / "segment_geometry.csv"));
}

void write_road_network(const fs::path& dir, const RoadNetwork& network) {
  write_segment_profiles(dir / "segment_profile.csv", network.profiles());
  write_edges(dir / "edges.csv", network.edges());
  write_geometry(dir / "segment_geometry.csv", network);
}

void validate_scene_record(const SceneSampleRecord& rec, const AspectSet& aspects) {
  const std::string w = "sample '" + rec.image_path + "'";
  if (rec.label_indices.size() != aspects.size() || rec.label_names.size() != aspects.size()) {
    throw IntegrityError(w + ": expected " + std::to_string(aspects.size()) + " labels");
  }
  for (std::size_t p = 0; p < aspects.size(); ++p) {
    const int k = rec.label_indices[p];
    if (k < 0 || static_cast<std::size_t>(k) >= aspects[p].words.size()) {
      throw IntegrityError(w + ": label index " + std::to_string(k) + " invalid for aspect " +
                           aspects[p].name);
    }
    if (aspects[p].words[static_cast<std::size_t>(k)] != rec.label_names[p]) {
      throw IntegrityError(w + ": label name '" + rec.label_names[p] + "' does not match index " +
                           std::to_string(k) + " of aspect " + aspects[p].name);
    }
  }
  if (std::find(rec.trajectory_segments.begin(), rec.trajectory_segments.end(),
                rec.image_to_segment) == rec.trajectory_segments.end()) {
    throw IntegrityError(w + ": image_to_segment not on trajectory_segments");
  }
}

std::vector<SceneSampleRecord> load_scene_records(const fs::path& dir, const AspectSet& aspects) {
  const auto labels = csv::Table::read(dir / "image_dataset.csv");
  const auto trajs = csv::Table::read(dir / "image_to_trajectory.csv");
  const std::size_t l_path = labels.column("image_path"), l_names = labels.column("label_name_list"),
                    l_idx = labels.column("label_index_list");
  const std::size_t t_path = trajs.column("image_path"), t_segs = trajs.column("trajectory_segments"),
                    t_img = trajs.column("image_to_segment");
  std::unordered_map<std::string, std::size_t> traj_row;
  for (std::size_t r = 0; r < trajs.rows(); ++r) {
    if (!traj_row.emplace(trajs.cell(r, t_path), r).second) {
      throw IntegrityError(where(trajs, r) + ": duplicate image_path");
    }
  }
  std::vector<SceneSampleRecord> out;
  std::unordered_set<std::string> seen;
  for (std::size_t r = 0; r < labels.rows(); ++r) {
    SceneSampleRecord rec;
    rec.image_path = labels.cell(r, l_path);
    if (!seen.insert(rec.image_path).second) {
      throw IntegrityError(where(labels, r) + ": duplicate image_path");
    }
    rec.label_names = csv::split(labels.cell(r, l_names), ';');
    for (const auto& s : csv::split(labels.cell(r, l_idx), ';')) {
      rec.label_indices.push_back(static_cast<int>(csv::parse_int(s, where(labels, r))));
    }
    auto it = traj_row.find(rec.image_path);
    if (it == traj_row.end()) {
      throw IntegrityError(where(labels, r) + ": no trajectory for '" + rec.image_path + "'");
    }
    const std::size_t tr = it->second;
    for (const auto& s : csv::split(trajs.cell(tr, t_segs), ';')) {
      rec.trajectory_segments.push_back(csv::parse_int(s, where(trajs, tr)));
    }
    rec.image_to_segment = trajs.get_int(tr, t_img);
    validate_scene_record(rec, aspects);
    out.push_back(std::move(rec));
  }
  return out;
}

void write_scene_records(const fs::path& dir, const std::vector<SceneSampleRecord>& records) {
  auto labels = open_out(dir / "image_dataset.csv");
  auto trajs = open_out(dir / "image_to_trajectory.csv");
  csv::write_row(labels, {"image_path", "label_name_list", "label_index_list"});
  csv::write_row(trajs, {"image_path", "trajectory_segments", "image_to_segment"});
  for (const auto& rec : records) {
    std::vector<std::string> idx, segs;
    for (int k : rec.label_indices) idx.push_back(std::to_string(k));
    for (SegmentId s : rec.trajectory_segments) segs.push_back(std::to_string(s));
    csv::write_row(labels, {rec.image_path, csv::join(rec.label_names, ';'), csv::join(idx, ';')});
    csv::write_row(trajs, {rec.image_path, csv::join(segs, ';'), std::to_string(rec.image_to_segment)});
  }
}

}  // namespace stclip
