#include "stclip/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "stclip/csv.hpp"
#include "stclip/error.hpp"
#include "stclip/seeding.hpp"

namespace stclip {

namespace fs = std::filesystem;

// ---- config -----------------------------------------------------------------------

void SynthConfig::validate() const {
  if (grid < 2) throw ConfigError("synth.grid must be at least 2");
  if (!(spacing > 0) || junction_jitter < 0 || junction_jitter >= 0.5 || lane_offset < 0)
    throw ConfigError("synth geometry settings out of range");
  if (latent_dim == 0) throw ConfigError("synth.latent_dim must be positive");
  if (latent_noise < 0 || speed_jitter < 0 || gps_noise < 0) throw ConfigError("noise scales must be >= 0");
  if (!(gps_interval > 0)) throw ConfigError("synth.gps_interval must be positive");
  if (static_affinity < 0 || static_affinity > 1 || label_coupling < 0 || label_coupling > 1)
    throw ConfigError("synth probabilities must lie in [0, 1]");
  for (const auto& b : access_bands)
    if (!(b.min_kmh > 0) || b.max_kmh < b.min_kmh || b.min_trajectories < 1 ||
        b.max_trajectories < b.min_trajectories)
      throw ConfigError("bad accessibility speed band");
  if (!(stats_window > 0)) throw ConfigError("synth.stats_window must be positive");
}

namespace {

std::string join_doubles(const std::vector<double>& v) {
  std::vector<std::string> parts;
  for (double x : v) parts.push_back(csv::format_double(x));
  return csv::join(parts, ';');
}

std::string format_bands(const std::vector<SpeedBand>& bands) {
  std::vector<std::string> parts;
  for (const auto& b : bands)
    parts.push_back(csv::format_double(b.min_kmh) + ":" + csv::format_double(b.max_kmh) + ":" +
                    std::to_string(b.min_trajectories) + ":" + std::to_string(b.max_trajectories));
  return csv::join(parts, ';');
}

std::vector<SpeedBand> parse_bands(const std::string& text) {
  std::vector<SpeedBand> out;
  for (const auto& part : csv::split(text, ';')) {
    const auto f = csv::split(part, ':');
    if (f.size() != 4) throw ConfigError("speed band '" + part + "' must be min:max:tmin:tmax");
    const std::string where = "config key 'synth.access_bands'";
    out.push_back({csv::parse_double(f[0], where), csv::parse_double(f[1], where),
                   static_cast<int>(csv::parse_int(f[2], where)), static_cast<int>(csv::parse_int(f[3], where))});
  }
  return out;
}

}  // namespace

std::map<std::string, std::string> SynthConfig::to_map() const {
  return {
      {"synth.seed", std::to_string(seed)},
      {"synth.grid", std::to_string(grid)},
      {"synth.spacing", csv::format_double(spacing)},
      {"synth.junction_jitter", csv::format_double(junction_jitter)},
      {"synth.lane_offset", csv::format_double(lane_offset)},
      {"synth.origin_lon", csv::format_double(origin.lon)},
      {"synth.origin_lat", csv::format_double(origin.lat)},
      {"synth.train_samples", std::to_string(train_samples)},
      {"synth.test_samples", std::to_string(test_samples)},
      {"synth.latent_dim", std::to_string(latent_dim)},
      {"synth.latent_noise", csv::format_double(latent_noise)},
      {"synth.latent_signal", join_doubles(latent_signal)},
      {"synth.static_affinity", csv::format_double(static_affinity)},
      {"synth.label_coupling", csv::format_double(label_coupling)},
      {"synth.access_bands", format_bands(access_bands)},
      {"synth.speed_jitter", csv::format_double(speed_jitter)},
      {"synth.gps_noise", csv::format_double(gps_noise)},
      {"synth.gps_interval", csv::format_double(gps_interval)},
      {"synth.start_time", csv::format_double(start_time)},
      {"synth.stats_window", csv::format_double(stats_window)},
  };
}

SynthConfig SynthConfig::from_map(const std::map<std::string, std::string>& kv, SynthConfig c) {
  auto num = [&](const char* key, double& out) {
    if (auto it = kv.find(key); it != kv.end()) out = csv::parse_double(it->second, std::string("config key '") + key + "'");
  };
  auto count = [&](const char* key, auto& out) {
    if (auto it = kv.find(key); it != kv.end()) {
      const auto n = csv::parse_int(it->second, std::string("config key '") + key + "'");
      if (n < 0) throw ConfigError(std::string("config key '") + key + "' must be non-negative");
      out = static_cast<std::remove_reference_t<decltype(out)>>(n);
    }
  };
  count("synth.seed", c.seed);
  count("synth.grid", c.grid);
  num("synth.spacing", c.spacing);
  num("synth.junction_jitter", c.junction_jitter);
  num("synth.lane_offset", c.lane_offset);
  num("synth.origin_lon", c.origin.lon);
  num("synth.origin_lat", c.origin.lat);
  count("synth.train_samples", c.train_samples);
  count("synth.test_samples", c.test_samples);
  count("synth.latent_dim", c.latent_dim);
  num("synth.latent_noise", c.latent_noise);
  if (auto it = kv.find("synth.latent_signal"); it != kv.end()) {
    c.latent_signal.clear();
    for (const auto& p : csv::split(it->second, ';'))
      c.latent_signal.push_back(csv::parse_double(p, "config key 'synth.latent_signal'"));
  }
  num("synth.static_affinity", c.static_affinity);
  num("synth.label_coupling", c.label_coupling);
  if (auto it = kv.find("synth.access_bands"); it != kv.end()) c.access_bands = parse_bands(it->second);
  num("synth.speed_jitter", c.speed_jitter);
  num("synth.gps_noise", c.gps_noise);
  num("synth.gps_interval", c.gps_interval);
  num("synth.start_time", c.start_time);
  num("synth.stats_window", c.stats_window);
  return c;
}

// ---- network ----------------------------------------------------------------------

RoadNetwork generate_network(const SynthConfig& config) {
  config.validate();
  auto rng = substream(config.seed, "synth.network");
  const int g = config.grid;
  const LocalFrame frame(config.origin.lon, config.origin.lat);
  std::uniform_real_distribution<double> jit(-config.junction_jitter * config.spacing,
                                             config.junction_jitter * config.spacing);
  std::vector<Point2> nodes;
  for (int r = 0; r < g; ++r)
    for (int c = 0; c < g; ++c) nodes.push_back({c * config.spacing + jit(rng), r * config.spacing + jit(rng)});

  std::uniform_int_distribution<int> fc(0, 4), lanes(1, 4), speed(2, 7);
  std::vector<SegmentProfile> profiles;
  std::unordered_map<SegmentId, Polyline> geometry;
  std::vector<std::pair<int, int>> ends;
  auto add_street = [&](int a, int b) {
    const int f = fc(rng), l = lanes(rng), s = 10 * speed(rng);
    for (auto [from, to] : {std::pair{a, b}, std::pair{b, a}}) {
      const Point2 p = nodes[from], q = nodes[to];
      const double len = distance(p, q);
      const Point2 right{(q.y - p.y) / len, -(q.x - p.x) / len};
      const double off = config.lane_offset / 2;
      const std::vector<Point2> line{{p.x + right.x * off, p.y + right.y * off},
                                     {q.x + right.x * off, q.y + right.y * off}};
      SegmentProfile prof;
      prof.segment_id = static_cast<SegmentId>(profiles.size());
      prof.function_class = f;
      prof.lane_number = l;
      prof.speed_class = s;
      prof.road_length = polyline_length(line);
      auto& geo = geometry[prof.segment_id];
      for (Point2 x : line) geo.push_back(frame.to_lonlat(x));
      profiles.push_back(prof);
      ends.emplace_back(from, to);
    }
  };
  for (int r = 0; r < g; ++r)
    for (int c = 0; c < g; ++c) {
      const int n = r * g + c;
      if (c + 1 < g) add_street(n, n + 1);
      if (r + 1 < g) add_street(n, n + g);
    }
  std::vector<std::vector<SegmentId>> leaving(nodes.size());
  for (std::size_t i = 0; i < ends.size(); ++i) leaving[ends[i].first].push_back(static_cast<SegmentId>(i));
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < ends.size(); ++i)
    for (SegmentId j : leaving[ends[i].second]) edges.push_back({static_cast<SegmentId>(i), j});
  return RoadNetwork::build(std::move(profiles), edges, std::move(geometry));
}

// ---- trajectories ------------------------------------------------------------------

namespace {

template <typename T>
const T& pick(const std::vector<T>& v, std::mt19937_64& rng) {
  return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}

// Neighbors through `links` that do not reverse along the same street.
std::vector<std::size_t> onward(const RoadNetwork& net, const std::vector<std::size_t>& links, std::size_t from) {
  std::vector<std::size_t> out;
  for (std::size_t j : links)
    if (net.id_of(j) != twin_segment(net.id_of(from))) out.push_back(j);
  return out.empty() ? links : out;
}

}  // namespace

std::vector<SegmentId> random_route(const RoadNetwork& network, std::size_t start_index, std::size_t length,
                                    std::mt19937_64& rng) {
  std::vector<SegmentId> route{network.id_of(start_index)};
  std::size_t at = start_index;
  while (route.size() < length) {
    const auto next = onward(network, network.successors(at), at);
    if (next.empty()) break;
    at = pick(next, rng);
    route.push_back(network.id_of(at));
  }
  return route;
}

GeneratedTrajectory render_route(const RoadNetwork& network, const std::vector<SegmentId>& route,
                                 const std::vector<double>& speeds_kmh, double start_time, std::int64_t id,
                                 const SynthConfig& config, std::mt19937_64& rng) {
  if (route.empty() || speeds_kmh.size() != route.size())
    throw ConfigError("route and speed list must be non-empty and of equal length");
  const LocalFrame frame(config.origin.lon, config.origin.lat);
  std::uniform_real_distribution<double> head(0.2, 0.4), tail(0.6, 0.8);
  std::normal_distribution<double> noise(0.0, config.gps_noise);

  struct Leg {
    std::vector<Point2> line;
    double from = 0, to = 0;  // arclength span driven
    double enter = 0, exit = 0;
    double speed = 0;         // m/s
  };
  std::vector<Leg> legs;
  double t = start_time;
  for (std::size_t i = 0; i < route.size(); ++i) {
    Leg leg;
    for (const auto& p : network.geometry(network.index_of(route[i]))) leg.line.push_back(frame.to_local(p));
    const double len = polyline_length(leg.line);
    leg.from = i == 0 ? head(rng) * len : 0.0;
    leg.to = i + 1 == route.size() ? tail(rng) * len : len;
    if (route.size() == 1 && leg.to < leg.from) std::swap(leg.from, leg.to);
    leg.speed = speeds_kmh[i] / 3.6;
    leg.enter = t;
    t += (leg.to - leg.from) / leg.speed;
    leg.exit = t;
    legs.push_back(std::move(leg));
  }

  GeneratedTrajectory out;
  out.route = route;
  out.gps.id = id;
  out.truth.id = id;
  for (std::size_t i = 0; i < legs.size(); ++i) out.truth.samples.push_back({route[i], legs[i].enter});
  std::size_t leg = 0;
  for (double ts = start_time; ts <= t; ts += config.gps_interval) {
    while (leg + 1 < legs.size() && ts >= legs[leg].exit) ++leg;
    const Leg& L = legs[leg];
    Point2 p = point_along(L.line, std::min(L.to, L.from + (ts - L.enter) * L.speed));
    if (config.gps_noise > 0) {
      p.x += noise(rng);
      p.y += noise(rng);
    }
    out.gps.points.push_back({frame.to_lonlat(p), ts});
  }
  return out;
}

std::vector<GeneratedTrajectory> generate_trajectories(const RoadNetwork& network, const SynthConfig& config,
                                                       std::size_t count, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> seg(0, network.size() - 1), len(3, 8);
  std::uniform_real_distribution<double> speed(20, 50);
  std::vector<GeneratedTrajectory> out;
  double t = config.start_time;
  for (std::size_t i = 0; i < count; ++i) {
    const auto route = random_route(network, seg(rng), len(rng), rng);
    std::vector<double> speeds(route.size(), speed(rng));
    out.push_back(render_route(network, route, speeds, t, static_cast<std::int64_t>(i), config, rng));
    t = out.back().gps.points.back().timestamp + 60;
  }
  return out;
}

// ---- scene samples ------------------------------------------------------------------

std::vector<std::vector<Tensor>> latent_centroids(const SynthConfig& config, const AspectSet& aspects) {
  auto rng = substream(config.seed, "synth.centroids");
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<std::vector<Tensor>> out(aspects.size());
  for (std::size_t p = 0; p < aspects.size(); ++p)
    for (std::size_t k = 0; k < aspects[p].words.size(); ++k) {
      Tensor c(1, config.latent_dim);
      for (auto& v : c.data()) v = n(rng);
      out[p].push_back(std::move(c));
    }
  return out;
}

ConceptLatents concept_latents(const SynthConfig& config, const AspectSet& aspects) {
  if (config.latent_signal.size() != aspects.size())
    throw ConfigError("synth.latent_signal needs one value per aspect");
  auto out = latent_centroids(config, aspects);
  for (std::size_t p = 0; p < out.size(); ++p)
    for (auto& c : out[p])
      for (auto& v : c.data()) v *= config.latent_signal[p];
  return out;
}

namespace {

constexpr std::size_t kScene = 0, kWidth = 2, kAccess = 3;

// Static properties that agree with the scene / width labels; -1 = any.
int scene_function_class(std::size_t scene) {
  static const int fc[] = {4, 0, 3, 2, -1};
  return scene < 5 ? fc[scene] : -1;
}

bool width_fits_lanes(std::size_t width, int lanes) {
  switch (width) {
    case 0: return lanes >= 3;
    case 1: return lanes == 2;
    case 2: return lanes == 1;
    default: return true;
  }
}

std::vector<std::size_t> draw_labels(const SynthConfig& c, const AspectSet& aspects, std::mt19937_64& rng) {
  std::vector<std::size_t> y(aspects.size());
  std::uniform_real_distribution<double> u(0, 1);
  for (std::size_t p = 0; p < aspects.size(); ++p)
    y[p] = std::uniform_int_distribution<std::size_t>(0, aspects[p].words.size() - 1)(rng);
  if (aspects.size() == 4) {
    // Congestion tends to come with crowded scenes and narrow roads.
    static const std::size_t scene_for[] = {0, 1, 3};
    static const std::size_t width_for[] = {0, 1, 2};
    const std::size_t a = y[kAccess];
    if (a < 3 && u(rng) < c.label_coupling) y[kScene] = scene_for[a];
    if (a < 3 && u(rng) < c.label_coupling) y[kWidth] = width_for[a];
  }
  return y;
}

std::size_t choose_image_segment(const RoadNetwork& net, const SynthConfig& c, const std::vector<std::size_t>& y,
                                 std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  if (y.size() == 4 && u(rng) < c.static_affinity) {
    const int fc = scene_function_class(y[kScene]);
    std::vector<std::size_t> both, scene_only;
    for (std::size_t i = 0; i < net.size(); ++i) {
      const auto& p = net.profile(i);
      const bool fc_ok = fc < 0 || p.function_class == fc;
      if (fc_ok) scene_only.push_back(i);
      if (fc_ok && width_fits_lanes(y[kWidth], p.lane_number)) both.push_back(i);
    }
    if (!both.empty()) return pick(both, rng);
    if (!scene_only.empty()) return pick(scene_only, rng);
  }
  return std::uniform_int_distribution<std::size_t>(0, net.size() - 1)(rng);
}

// Two segments before the image segment, two after, no U-turns.
std::vector<SegmentId> route_through(const RoadNetwork& net, std::size_t center, std::mt19937_64& rng) {
  std::vector<std::size_t> back;
  std::size_t at = center;
  for (int k = 0; k < 2; ++k) {
    std::vector<std::size_t> prev;
    for (std::size_t j : net.predecessors(at))
      if (net.id_of(j) != twin_segment(net.id_of(at))) prev.push_back(j);
    if (prev.empty()) prev = net.predecessors(at);
    if (prev.empty()) break;
    at = pick(prev, rng);
    back.push_back(at);
  }
  std::vector<SegmentId> route;
  for (auto it = back.rbegin(); it != back.rend(); ++it) route.push_back(net.id_of(*it));
  const auto forward = random_route(net, center, 3, rng);
  route.insert(route.end(), forward.begin(), forward.end());
  return route;
}

}  // namespace

SyntheticWorld generate_world(const SynthConfig& config, const AspectSet& aspects) {
  config.validate();
  if (config.latent_signal.size() != aspects.size())
    throw ConfigError("synth.latent_signal needs one value per aspect");
  if (aspects.size() == 4 && config.access_bands.size() != aspects[kAccess].words.size())
    throw ConfigError("synth.access_bands needs one band per accessibility class");

  SyntheticWorld w;
  w.network = generate_network(config);
  w.stats = DynamicStatsTable(config.stats_window);
  const auto centroids = latent_centroids(config, aspects);
  auto label_rng = substream(config.seed, "synth.labels");
  auto traffic_rng = substream(config.seed, "synth.traffic");
  auto latent_rng = substream(config.seed, "synth.latents");
  std::normal_distribution<double> latent_noise(0.0, config.latent_noise);
  std::normal_distribution<double> speed_noise(0.0, config.speed_jitter);
  std::uniform_real_distribution<double> start_offset(30, 240);

  const std::size_t total = config.train_samples + config.test_samples;
  const auto first_window = static_cast<std::int64_t>(std::floor(config.start_time / config.stats_window)) + 1;
  std::int64_t traj_id = 0;
  for (std::size_t i = 0; i < total; ++i) {
    const auto y = draw_labels(config, aspects, label_rng);
    const std::size_t center = choose_image_segment(w.network, config, y, label_rng);
    const auto route = route_through(w.network, center, traffic_rng);
    const SpeedBand band = aspects.size() == 4 ? config.access_bands[y[kAccess]] : SpeedBand{};
    const int count = std::uniform_int_distribution<int>(band.min_trajectories, band.max_trajectories)(traffic_rng);
    const double window_start = static_cast<double>(first_window + static_cast<std::int64_t>(i)) * config.stats_window;

    double image_time = 0;
    for (int k = 0; k < count; ++k) {
      const double base = std::uniform_real_distribution<double>(band.min_kmh, band.max_kmh)(traffic_rng);
      std::vector<double> speeds;
      for (std::size_t s = 0; s < route.size(); ++s)
        speeds.push_back(std::clamp(base * std::exp(speed_noise(traffic_rng)), 2.0, 150.0));
      auto traj = render_route(w.network, route, speeds, window_start + start_offset(traffic_rng), traj_id++, config,
                               traffic_rng);
      if (k == 0) {
        const SegmentId img = w.network.id_of(center);
        for (std::size_t s = 0; s < route.size(); ++s)
          if (route[s] == img) {
            const double enter = traj.truth.samples[s].timestamp;
            const double exit = s + 1 < route.size() ? traj.truth.samples[s + 1].timestamp
                                                     : traj.gps.points.back().timestamp;
            image_time = 0.5 * (enter + exit);
            break;
          }
      }
      w.trajectories.push_back(std::move(traj));
    }

    SceneSampleRecord rec;
    char name[32];
    std::snprintf(name, sizeof name, "images/%05zu.jpg", i);
    rec.image_path = name;
    for (std::size_t p = 0; p < aspects.size(); ++p) {
      rec.label_names.push_back(aspects[p].words[y[p]]);
      rec.label_indices.push_back(static_cast<int>(y[p]));
    }
    rec.trajectory_segments = route;
    rec.image_to_segment = w.network.id_of(center);
    w.records.push_back(std::move(rec));

    SceneLatent lat;
    lat.image_path = name;
    lat.timestamp = image_time;
    lat.split = i < config.train_samples ? "train" : "test";
    lat.latent = Tensor(1, config.latent_dim);
    for (std::size_t p = 0; p < aspects.size(); ++p)
      for (std::size_t j = 0; j < config.latent_dim; ++j)
        lat.latent[j] += config.latent_signal[p] * centroids[p][y[p]][j];
    if (config.latent_noise > 0)
      for (auto& v : lat.latent.data()) v += latent_noise(latent_rng);
    w.latents.push_back(std::move(lat));
  }

  std::vector<SegmentTrajectory> truths;
  for (const auto& t : w.trajectories) truths.push_back(t.truth);
  w.stats = compute_dynamic_stats(truths, w.network, config.stats_window);
  w.concepts = concept_latents(config, aspects);
  return w;
}

// ---- files ----------------------------------------------------------------------------

void write_scene_latents(const fs::path& path, const std::vector<SceneLatent>& latents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  csv::write_row(os, {"image_path", "timestamp", "split", "latent"});
  for (const auto& l : latents) {
    std::vector<std::string> vals;
    for (double v : l.latent.data()) vals.push_back(csv::format_double(v));
    csv::write_row(os, {l.image_path, csv::format_double(l.timestamp), l.split, csv::join(vals, ';')});
  }
}

std::vector<SceneLatent> load_scene_latents(const fs::path& path) {
  const auto t = csv::Table::read(path);
  const std::size_t c_path = t.column("image_path"), c_ts = t.column("timestamp"), c_split = t.column("split"),
                    c_lat = t.column("latent");
  std::vector<SceneLatent> out;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    SceneLatent l;
    l.image_path = t.cell(r, c_path);
    l.timestamp = t.get_double(r, c_ts);
    l.split = t.cell(r, c_split);
    const std::string where = t.source() + ":" + std::to_string(t.line_of(r));
    if (l.split != "train" && l.split != "test") throw ParseError(where + ": split must be train or test");
    std::vector<double> vals;
    for (const auto& v : csv::split(t.cell(r, c_lat), ';')) vals.push_back(csv::parse_double(v, where));
    if (!out.empty() && vals.size() != out.front().latent.cols())
      throw IntegrityError(where + ": latent width differs from earlier rows");
    l.latent = Tensor::row_vector(std::move(vals));
    out.push_back(std::move(l));
  }
  return out;
}

void write_concepts(const fs::path& path, const ConceptLatents& concepts, const AspectSet& aspects) {
  if (concepts.size() != aspects.size()) throw ShapeError("concept latents do not match the aspect set");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  csv::write_row(os, {"aspect", "word", "latent"});
  for (std::size_t p = 0; p < aspects.size(); ++p) {
    if (concepts[p].size() != aspects[p].words.size())
      throw ShapeError("aspect '" + aspects[p].name + "' has the wrong number of concept latents");
    for (std::size_t k = 0; k < concepts[p].size(); ++k) {
      std::vector<std::string> vals;
      for (double v : concepts[p][k].data()) vals.push_back(csv::format_double(v));
      csv::write_row(os, {aspects[p].name, aspects[p].words[k], csv::join(vals, ';')});
    }
  }
}

ConceptLatents load_concepts(const fs::path& path, const AspectSet& aspects) {
  const auto t = csv::Table::read(path);
  const std::size_t c_aspect = t.column("aspect"), c_word = t.column("word"), c_lat = t.column("latent");
  ConceptLatents out(aspects.size());
  for (std::size_t p = 0; p < aspects.size(); ++p) out[p].resize(aspects[p].words.size());
  std::size_t width = 0;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const std::string where = t.source() + ":" + std::to_string(t.line_of(r));
    const std::string& a = t.cell(r, c_aspect);
    const std::string& w = t.cell(r, c_word);
    std::size_t p = 0;
    while (p < aspects.size() && aspects[p].name != a) ++p;
    if (p == aspects.size()) throw IntegrityError(where + ": unknown aspect '" + a + "'");
    std::size_t k = 0;
    while (k < aspects[p].words.size() && aspects[p].words[k] != w) ++k;
    if (k == aspects[p].words.size()) throw IntegrityError(where + ": unknown word '" + w + "' for aspect '" + a + "'");
    if (!out[p][k].empty()) throw IntegrityError(where + ": duplicate concept " + a + "/" + w);
    std::vector<double> vals;
    for (const auto& v : csv::split(t.cell(r, c_lat), ';')) vals.push_back(csv::parse_double(v, where));
    if (width && vals.size() != width) throw IntegrityError(where + ": latent width differs from earlier rows");
    width = vals.size();
    out[p][k] = Tensor(1, width, std::move(vals));
  }
  for (std::size_t p = 0; p < aspects.size(); ++p)
    for (std::size_t k = 0; k < out[p].size(); ++k)
      if (out[p][k].empty())
        throw IntegrityError(path.string() + ": no concept for " + aspects[p].name + "/" + aspects[p].words[k]);
  return out;
}

void write_world(const fs::path& dir, const SyntheticWorld& world, const AspectSet& aspects) {
  fs::create_directories(dir);
  write_road_network(dir, world.network);
  write_scene_records(dir, world.records);
  std::vector<GpsTrajectory> gps;
  std::vector<SegmentTrajectory> truths;
  for (const auto& t : world.trajectories) {
    gps.push_back(t.gps);
    truths.push_back(t.truth);
  }
  write_gps(dir / "gps.csv", gps);
  write_matched(dir / "matched.csv", truths);
  write_dynamic_stats(dir / "dynamic_stats.csv", world.stats);
  write_scene_latents(dir / "scene_latents.csv", world.latents);
  write_concepts(dir / "concepts.csv", world.concepts, aspects);
}

}  // namespace stclip
