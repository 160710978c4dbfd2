#include "stclip/map_match.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <set>
#include <thread>

#include "stclip/csv.hpp"
#include "stclip/error.hpp"

namespace stclip {

namespace fs = std::filesystem;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double segment_length(const RoadNetwork& net, std::size_t i) { return net.profile(i).road_length; }

}  // namespace

// ---- spatial index ------------------------------------------------------------

SpatialIndex SpatialIndex::build(const RoadNetwork& network, double cell_size) {
  if (!(cell_size > 0)) throw ConfigError("grid cell size must be positive");
  SpatialIndex idx;
  idx.network_ = &network;
  idx.cell_ = cell_size;

  double lon_lo = HUGE_VAL, lon_hi = -HUGE_VAL, lat_lo = HUGE_VAL, lat_hi = -HUGE_VAL;
  for (std::size_t i = 0; i < network.size(); ++i) {
    for (const auto& p : network.geometry(i)) {
      lon_lo = std::min(lon_lo, p.lon);
      lon_hi = std::max(lon_hi, p.lon);
      lat_lo = std::min(lat_lo, p.lat);
      lat_hi = std::max(lat_hi, p.lat);
    }
  }
  if (!std::isfinite(lon_lo)) throw DataError("road network has no segment geometry to index");
  idx.frame_ = LocalFrame((lon_lo + lon_hi) / 2, (lat_lo + lat_hi) / 2);

  idx.local_.resize(network.size());
  double x_lo = HUGE_VAL, x_hi = -HUGE_VAL, y_lo = HUGE_VAL, y_hi = -HUGE_VAL;
  for (std::size_t i = 0; i < network.size(); ++i) {
    for (const auto& p : network.geometry(i)) {
      const Point2 q = idx.frame_.to_local(p);
      idx.local_[i].push_back(q);
      x_lo = std::min(x_lo, q.x);
      x_hi = std::max(x_hi, q.x);
      y_lo = std::min(y_lo, q.y);
      y_hi = std::max(y_hi, q.y);
    }
  }
  idx.min_x_ = x_lo;
  idx.min_y_ = y_lo;
  idx.nx_ = static_cast<std::int64_t>(std::floor((x_hi - x_lo) / cell_size)) + 1;
  idx.ny_ = static_cast<std::int64_t>(std::floor((y_hi - y_lo) / cell_size)) + 1;
  idx.cells_.resize(static_cast<std::size_t>(idx.nx_ * idx.ny_));

  auto cell_of = [&](double v, double lo, std::int64_t n) {
    return std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor((v - lo) / cell_size)), 0,
                                    n - 1);
  };
  for (std::size_t i = 0; i < network.size(); ++i) {
    const auto& line = idx.local_[i];
    std::set<std::int64_t> covered;
    for (std::size_t s = 0; s + 1 < line.size(); ++s) {
      const auto cx0 = cell_of(std::min(line[s].x, line[s + 1].x), x_lo, idx.nx_);
      const auto cx1 = cell_of(std::max(line[s].x, line[s + 1].x), x_lo, idx.nx_);
      const auto cy0 = cell_of(std::min(line[s].y, line[s + 1].y), y_lo, idx.ny_);
      const auto cy1 = cell_of(std::max(line[s].y, line[s + 1].y), y_lo, idx.ny_);
      for (auto cx = cx0; cx <= cx1; ++cx)
        for (auto cy = cy0; cy <= cy1; ++cy) covered.insert(cy * idx.nx_ + cx);
    }
    for (auto c : covered) idx.cells_[static_cast<std::size_t>(c)].push_back(i);
  }
  return idx;
}

std::vector<std::size_t> SpatialIndex::nearby(Point2 p, double radius) const {
  std::vector<std::size_t> out;
  auto lo_hi = [&](double v, double lo, std::int64_t n) {
    const auto a = static_cast<std::int64_t>(std::floor((v - radius - lo) / cell_));
    const auto b = static_cast<std::int64_t>(std::floor((v + radius - lo) / cell_));
    return std::pair{std::max<std::int64_t>(a, 0), std::min<std::int64_t>(b, n - 1)};
  };
  const auto [x0, x1] = lo_hi(p.x, min_x_, nx_);
  const auto [y0, y1] = lo_hi(p.y, min_y_, ny_);
  for (auto cy = y0; cy <= y1; ++cy)
    for (auto cx = x0; cx <= x1; ++cx) {
      const auto& cell = cells_[static_cast<std::size_t>(cy * nx_ + cx)];
      out.insert(out.end(), cell.begin(), cell.end());
    }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

Candidate project_candidate(const SpatialIndex& index, std::size_t segment_index, LonLat point) {
  const auto& net = index.network();
  const auto proj = project_onto(index.local_geometry(segment_index), index.frame().to_local(point));
  Candidate c;
  c.segment_id = net.id_of(segment_index);
  c.segment_index = segment_index;
  c.projected_point = index.frame().to_lonlat(proj.point);
  c.perpendicular_distance = proj.distance;
  const double len = segment_length(net, segment_index);
  c.offset_along_segment =
      proj.length > 0 ? std::clamp(proj.arclength / proj.length * len, 0.0, len) : 0.0;
  return c;
}

std::vector<Candidate> candidate_segments(const SpatialIndex& index, LonLat point, double radius,
                                          std::size_t k) {
  if (!(radius > 0)) throw ConfigError("search radius must be positive");
  if (k == 0) throw ConfigError("candidate count k must be at least 1");
  const Point2 p = index.frame().to_local(point);
  std::vector<Candidate> out;
  for (std::size_t s : index.nearby(p, radius)) {
    if (index.local_geometry(s).size() < 2) continue;
    Candidate c = project_candidate(index, s, point);
    if (c.perpendicular_distance <= radius) out.push_back(c);
  }
  std::sort(out.begin(), out.end(), [](const Candidate& a, const Candidate& b) {
    if (a.perpendicular_distance != b.perpendicular_distance)
      return a.perpendicular_distance < b.perpendicular_distance;
    return a.segment_id < b.segment_id;
  });
  if (out.size() > k) out.resize(k);
  return out;
}

double emission_prob(const Candidate& c, double sigma) { return std::exp(log_emission_prob(c, sigma)); }

double log_emission_prob(const Candidate& c, double sigma) {
  if (!(sigma > 0)) throw ConfigError("emission sigma must be positive");
  const double d = c.perpendicular_distance;
  return -d * d / (2 * sigma * sigma);
}

// ---- routes -------------------------------------------------------------------

const ShortestPathTree& RouteCache::tree(std::size_t source) {
  auto it = trees_.find(source);
  if (it == trees_.end()) it = trees_.emplace(source, network_->shortest_paths(source)).first;
  return it->second;
}

std::optional<std::size_t> RouteCache::best_return(std::size_t source) {
  const auto& t = tree(source);
  std::optional<std::size_t> best;
  for (std::size_t p : network_->predecessors(source)) {
    if (!t.reached(p)) continue;
    if (!best || t.cost[p] < t.cost[*best]) best = p;  // predecessors are id-sorted
  }
  return best;
}

std::optional<double> RouteCache::route_distance(const Candidate& a, const Candidate& b) {
  const auto& net = *network_;
  const double la = segment_length(net, a.segment_index);
  if (a.segment_index == b.segment_index) {
    if (b.offset_along_segment >= a.offset_along_segment)
      return b.offset_along_segment - a.offset_along_segment;
    const auto p = best_return(a.segment_index);
    if (!p) return std::nullopt;
    return (la - a.offset_along_segment) + tree(a.segment_index).cost[*p] + b.offset_along_segment;
  }
  const auto& t = tree(a.segment_index);
  if (!t.reached(b.segment_index)) return std::nullopt;
  return (la - a.offset_along_segment) + t.cost[b.segment_index] -
         segment_length(net, b.segment_index) + b.offset_along_segment;
}

std::vector<std::pair<std::size_t, double>> RouteCache::route_entries(const Candidate& a,
                                                                      const Candidate& b) {
  const auto& net = *network_;
  const double head = segment_length(net, a.segment_index) - a.offset_along_segment;
  std::vector<std::pair<std::size_t, double>> out;
  if (a.segment_index == b.segment_index && b.offset_along_segment >= a.offset_along_segment)
    return out;
  const auto& t = tree(a.segment_index);
  std::vector<std::size_t> path;
  double tail_entry = 0.0;
  if (a.segment_index == b.segment_index) {
    const auto p = best_return(a.segment_index);
    if (!p) return out;
    path = t.path_to(*p);
    tail_entry = head + t.cost[*p];
  } else {
    path = t.path_to(b.segment_index);
  }
  for (std::size_t i = 1; i < path.size(); ++i)
    out.emplace_back(path[i], head + t.cost[path[i]] - segment_length(net, path[i]));
  if (a.segment_index == b.segment_index) out.emplace_back(a.segment_index, tail_entry);
  return out;
}

double transition_prob(RouteCache& routes, const Candidate& prev, const Candidate& next,
                       double great_circle) {
  const auto route = routes.route_distance(prev, next);
  if (!route) return 0.0;
  const double hi = std::max(great_circle, *route);
  if (hi <= 0) return 1.0;
  return std::min(great_circle, *route) / hi;
}

double ground_distance(const SpatialIndex& index, LonLat a, LonLat b) {
  return distance(index.frame().to_local(a), index.frame().to_local(b));
}

// ---- viterbi -----------------------------------------------------------------

LatticePath viterbi(const std::vector<std::vector<double>>& log_emission,
                    const std::vector<std::vector<std::vector<double>>>& log_transition,
                    const std::vector<std::vector<SegmentId>>& tie_keys) {
  const std::size_t steps = log_emission.size();
  LatticePath result;
  if (steps == 0) return result;
  for (std::size_t t = 0; t < steps; ++t)
    if (log_emission[t].empty()) throw MatchError("point " + std::to_string(t) + " has no candidates");

  std::vector<std::vector<std::size_t>> back(steps);
  std::vector<double> score = log_emission[0];
  for (std::size_t t = 1; t < steps; ++t) {
    const auto& keys_prev = tie_keys[t - 1];
    std::vector<double> next(log_emission[t].size(), kNegInf);
    back[t].assign(log_emission[t].size(), 0);
    bool any = false;
    for (std::size_t j = 0; j < next.size(); ++j) {
      double best = kNegInf;
      std::size_t arg = 0;
      bool found = false;
      for (std::size_t i = 0; i < score.size(); ++i) {
        const double v = score[i] + log_transition[t][i][j];
        if (v == kNegInf) continue;
        if (!found || v > best || (v == best && keys_prev[i] < keys_prev[arg])) {
          best = v;
          arg = i;
          found = true;
        }
      }
      if (found) {
        next[j] = best + log_emission[t][j];
        back[t][j] = arg;
        any = true;
      }
    }
    if (!any)
      throw MatchError("broken trajectory: no connected candidate pair reaches point " +
                       std::to_string(t));
    score = std::move(next);
  }

  std::size_t arg = 0;
  bool found = false;
  for (std::size_t j = 0; j < score.size(); ++j) {
    if (score[j] == kNegInf) continue;
    if (!found || score[j] > score[arg] ||
        (score[j] == score[arg] && tie_keys[steps - 1][j] < tie_keys[steps - 1][arg])) {
      arg = j;
      found = true;
    }
  }
  result.log_prob = score[arg];
  result.choice.assign(steps, 0);
  result.choice[steps - 1] = arg;
  for (std::size_t t = steps - 1; t > 0; --t) result.choice[t - 1] = back[t][result.choice[t]];
  return result;
}

std::vector<std::vector<SegmentId>> Lattice::tie_keys() const {
  std::vector<std::vector<SegmentId>> keys;
  for (const auto& step : candidates) {
    auto& k = keys.emplace_back();
    for (const auto& c : step) k.push_back(c.segment_id);
  }
  return keys;
}

Lattice build_lattice(const GpsTrajectory& traj, const SpatialIndex& index, RouteCache& routes,
                      const MatchParams& params) {
  Lattice lat;
  const std::size_t n = traj.points.size();
  lat.candidates.resize(n);
  lat.log_emission.resize(n);
  lat.log_transition.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    lat.candidates[t] = candidate_segments(index, traj.points[t].pos, params.radius, params.k);
    if (lat.candidates[t].empty())
      throw MatchError("trajectory " + std::to_string(traj.id) + " point " + std::to_string(t) +
                       " has no candidate within " + csv::format_double(params.radius) + " m");
    for (const auto& c : lat.candidates[t])
      lat.log_emission[t].push_back(log_emission_prob(c, params.sigma));
    if (t == 0) continue;
    const double gc = ground_distance(index, traj.points[t - 1].pos, traj.points[t].pos);
    auto& tr = lat.log_transition[t];
    tr.assign(lat.candidates[t - 1].size(), std::vector<double>(lat.candidates[t].size()));
    for (std::size_t i = 0; i < lat.candidates[t - 1].size(); ++i)
      for (std::size_t j = 0; j < lat.candidates[t].size(); ++j)
        tr[i][j] = std::log(transition_prob(routes, lat.candidates[t - 1][i], lat.candidates[t][j], gc));
  }
  return lat;
}

MatchResult viterbi_match(const GpsTrajectory& traj, const SpatialIndex& index,
                          const MatchParams& params) {
  MatchResult res;
  res.trajectory.id = traj.id;
  if (traj.points.empty()) return res;
  RouteCache routes(index.network());
  const Lattice lat = build_lattice(traj, index, routes, params);
  LatticePath path;
  try {
    path = viterbi(lat.log_emission, lat.log_transition, lat.tie_keys());
  } catch (const MatchError& e) {
    throw MatchError("trajectory " + std::to_string(traj.id) + ": " +
                     std::string(e.what()).substr(std::string("match error: ").size()));
  }
  res.log_prob = path.log_prob;
  for (std::size_t t = 0; t < path.choice.size(); ++t) res.chosen.push_back(lat.candidates[t][path.choice[t]]);

  auto& samples = res.trajectory.samples;
  samples.push_back({res.chosen[0].segment_id, traj.points[0].timestamp});
  for (std::size_t t = 1; t < res.chosen.size(); ++t) {
    const auto& a = res.chosen[t - 1];
    const auto& b = res.chosen[t];
    const double ta = traj.points[t - 1].timestamp, tb = traj.points[t].timestamp;
    const double total = routes.route_distance(a, b).value_or(0.0);
    for (const auto& [seg, entry] : routes.route_entries(a, b)) {
      const double ts = total > 0 ? ta + (tb - ta) * std::clamp(entry / total, 0.0, 1.0) : ta;
      samples.push_back({index.network().id_of(seg), ts});
    }
  }
  return res;
}

std::vector<SegmentTrajectory> match_all(const std::vector<GpsTrajectory>& trajs,
                                         const SpatialIndex& index, const MatchParams& params,
                                         unsigned threads) {
  std::vector<SegmentTrajectory> out(trajs.size());
  std::vector<std::exception_ptr> errors(trajs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < trajs.size(); i = next++) {
      try {
        out[i] = viterbi_match(trajs[i], index, params).trajectory;
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(trajs.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < threads; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

// ---- dynamic statistics -------------------------------------------------------

DynamicStatsTable::DynamicStatsTable(double window) : window_(window) {
  if (!(window > 0)) throw ConfigError("statistics window must be positive");
}

std::int64_t DynamicStatsTable::window_index(double timestamp) const {
  return static_cast<std::int64_t>(std::floor(timestamp / window_));
}

void DynamicStatsTable::set(SegmentId segment, std::int64_t window_index, DynamicStats stats) {
  cells_[{segment, window_index}] = stats;
}

DynamicStats DynamicStatsTable::lookup(const RoadNetwork& network, SegmentId segment,
                                       double timestamp) const {
  auto it = cells_.find({segment, window_index(timestamp)});
  if (it != cells_.end()) return it->second;
  return {0, static_cast<double>(network.profile(network.index_of(segment)).speed_class)};
}

DynamicStatsTable compute_dynamic_stats(const std::vector<SegmentTrajectory>& matched,
                                        const RoadNetwork& network, double window) {
  DynamicStatsTable table(window);
  struct Cell {
    std::set<std::int64_t> trajs;
    std::vector<double> speeds;
  };
  std::map<std::pair<SegmentId, std::int64_t>, Cell> cells;
  for (const auto& tr : matched) {
    for (std::size_t i = 0; i < tr.samples.size(); ++i) {
      const auto& s = tr.samples[i];
      auto& cell = cells[{s.segment_id, table.window_index(s.timestamp)}];
      cell.trajs.insert(tr.id);
      if (i + 1 == tr.samples.size()) continue;
      const double dwell = tr.samples[i + 1].timestamp - s.timestamp;
      if (!(dwell > 0)) continue;
      const double len = network.profile(network.index_of(s.segment_id)).road_length;
      cell.speeds.push_back(std::min(len / dwell * 3.6, kMaxSpeedKmh));
    }
  }
  for (auto& [key, cell] : cells) {
    DynamicStats st;
    st.trajectory_count = static_cast<int>(cell.trajs.size());
    auto& v = cell.speeds;
    if (v.empty()) {
      st.medium_speed = network.profile(network.index_of(key.first)).speed_class;
    } else {
      std::sort(v.begin(), v.end());
      const std::size_t m = v.size() / 2;
      st.medium_speed = v.size() % 2 ? v[m] : (v[m - 1] + v[m]) / 2;
    }
    table.set(key.first, key.second, st);
  }
  return table;
}

// ---- files --------------------------------------------------------------------

namespace {

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  return os;
}

}  // namespace

std::vector<GpsTrajectory> load_gps(const fs::path& path) {
  const auto t = csv::Table::read(path);
  const auto c_id = t.column("traj_id"), c_lon = t.column("lon"), c_lat = t.column("lat"),
             c_ts = t.column("timestamp");
  std::map<std::int64_t, GpsTrajectory> by_id;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const auto id = t.get_int(r, c_id);
    auto& tr = by_id[id];
    tr.id = id;
    tr.points.push_back({{t.get_double(r, c_lon), t.get_double(r, c_lat)}, t.get_double(r, c_ts)});
  }
  std::vector<GpsTrajectory> out;
  for (auto& [id, tr] : by_id) {
    std::stable_sort(tr.points.begin(), tr.points.end(),
                     [](const GpsPoint& a, const GpsPoint& b) { return a.timestamp < b.timestamp; });
    out.push_back(std::move(tr));
  }
  return out;
}

void write_gps(const fs::path& path, const std::vector<GpsTrajectory>& trajs) {
  auto os = open_out(path);
  csv::write_row(os, {"traj_id", "lon", "lat", "timestamp"});
  for (const auto& tr : trajs)
    for (const auto& p : tr.points)
      csv::write_row(os, {std::to_string(tr.id), csv::format_double(p.pos.lon),
                          csv::format_double(p.pos.lat), csv::format_double(p.timestamp)});
}

std::vector<SegmentTrajectory> load_matched(const fs::path& path) {
  const auto t = csv::Table::read(path);
  const auto c_id = t.column("traj_id"), c_seg = t.column("segment_id"), c_ts = t.column("timestamp");
  std::vector<SegmentTrajectory> out;
  std::map<std::int64_t, std::size_t> pos;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const auto id = t.get_int(r, c_id);
    auto it = pos.find(id);
    if (it == pos.end()) {
      it = pos.emplace(id, out.size()).first;
      out.push_back({id, {}});
    }
    auto& samples = out[it->second].samples;
    const double ts = t.get_double(r, c_ts);
    if (!samples.empty() && ts < samples.back().timestamp)
      throw IntegrityError(t.source() + " line " + std::to_string(t.line_of(r)) +
                           ": timestamps decrease within trajectory " + std::to_string(id));
    samples.push_back({t.get_int(r, c_seg), ts});
  }
  return out;
}

void write_matched(const fs::path& path, const std::vector<SegmentTrajectory>& trajs) {
  auto os = open_out(path);
  csv::write_row(os, {"traj_id", "segment_id", "timestamp"});
  for (const auto& tr : trajs)
    for (const auto& s : tr.samples)
      csv::write_row(os, {std::to_string(tr.id), std::to_string(s.segment_id),
                          csv::format_double(s.timestamp)});
}

DynamicStatsTable load_dynamic_stats(const fs::path& path, double window) {
  const auto t = csv::Table::read(path);
  const auto c_seg = t.column("segment_id"), c_w = t.column("window_start"),
             c_tc = t.column("trajectory_count"), c_ms = t.column("medium_speed");
  DynamicStatsTable table(window);
  for (std::size_t r = 0; r < t.rows(); ++r) {
    DynamicStats st{static_cast<int>(t.get_int(r, c_tc)), t.get_double(r, c_ms)};
    if (st.trajectory_count < 0 || st.medium_speed < 0 || st.medium_speed > kMaxSpeedKmh)
      throw IntegrityError(t.source() + " line " + std::to_string(t.line_of(r)) +
                           ": statistics out of range");
    table.set(t.get_int(r, c_seg), table.window_index(t.get_double(r, c_w)), st);
  }
  return table;
}

void write_dynamic_stats(const fs::path& path, const DynamicStatsTable& table) {
  auto os = open_out(path);
  csv::write_row(os, {"segment_id", "window_start", "trajectory_count", "medium_speed"});
  for (const auto& [key, st] : table.cells())
    csv::write_row(os, {std::to_string(key.first),
                        csv::format_double(static_cast<double>(key.second) * table.window()),
                        std::to_string(st.trajectory_count), csv::format_double(st.medium_speed)});
}

}  // namespace stclip
