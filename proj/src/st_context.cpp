#include "stclip/st_context.hpp"

#include <algorithm>
#include <cmath>

#include "stclip/error.hpp"

namespace stclip {

std::size_t discretize(double value, const std::vector<double>& edges) {
  if (edges.empty()) throw ConfigError("bin boundary list is empty");
  for (std::size_t i = 1; i < edges.size(); ++i)
    if (!(edges[i] > edges[i - 1])) throw ConfigError("bin boundaries must be strictly increasing");
  const auto it = std::upper_bound(edges.begin(), edges.end(), value);
  if (it == edges.begin()) return 0;
  return static_cast<std::size_t>(it - edges.begin()) - 1;
}

const std::vector<double>& road_length_bins() {
  static const std::vector<double> edges = [] {
    std::vector<double> e;
    for (int i = 0; i < 16; ++i) e.push_back(0.5 + i * (3.5 / 16));
    return e;
  }();
  return edges;
}

const std::vector<double>& trajectory_count_bins() {
  static const std::vector<double> edges{0, 1, 6, 21, 51};
  return edges;
}

const std::vector<double>& medium_speed_bins() {
  static const std::vector<double> edges{0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100};
  return edges;
}

PropertyVocab PropertyVocab::from_network(const RoadNetwork& network) {
  PropertyVocab v;
  v.segments = std::max<std::size_t>(network.size(), 1);
  for (const auto& p : network.profiles()) {
    v.function_classes = std::max<std::size_t>(v.function_classes, p.function_class + 1);
    v.lane_numbers = std::max<std::size_t>(v.lane_numbers, p.lane_number + 1);
    v.speed_classes = std::max<std::size_t>(v.speed_classes, p.speed_class + 1);
    v.out_degrees = std::max<std::size_t>(v.out_degrees, std::max(p.out_degree, 0) + 1);
  }
  return v;
}

SegmentCategories categorize(const RoadNetwork& network, std::size_t segment_index,
                             const DynamicStats& stats) {
  const auto& p = network.profile(segment_index);
  SegmentCategories c;
  c.id = segment_index;
  c.function_class = static_cast<std::size_t>(p.function_class);
  c.lane_number = static_cast<std::size_t>(p.lane_number);
  c.speed_class = static_cast<std::size_t>(p.speed_class);
  c.road_length = discretize(std::log10(p.road_length), road_length_bins());
  c.out_degree = static_cast<std::size_t>(std::max(p.out_degree, 0));
  c.trajectory_count = discretize(stats.trajectory_count, trajectory_count_bins());
  c.medium_speed = discretize(stats.medium_speed, medium_speed_bins());
  return c;
}

PropertyTables make_property_tables(ParamStore& store, const PropertyVocab& vocab, std::size_t dim,
                                    std::mt19937_64& rng) {
  PropertyTables t;
  t.dim = dim;
  auto table = [&](const std::string& name, std::size_t rows) {
    return &store.add("context.embed." + name, gaussian(rows, dim, kEmbeddingInitStd, rng), false);
  };
  t.id = table("id", vocab.segments);
  t.function_class = table("function_class", vocab.function_classes);
  t.lane_number = table("lane_number", vocab.lane_numbers);
  t.speed_class = table("speed_class", vocab.speed_classes);
  t.road_length = table("road_length", road_length_bins().size());
  t.out_degree = table("out_degree", vocab.out_degrees);
  t.trajectory_count = table("trajectory_count", trajectory_count_bins().size());
  t.medium_speed = table("medium_speed", medium_speed_bins().size());
  return t;
}

Var embed_static(Tape& tape, const PropertyTables& t, const SegmentCategories& c) {
  const Var parts[] = {
      gather_row(tape.param(*t.id), c.id),
      gather_row(tape.param(*t.function_class), c.function_class),
      gather_row(tape.param(*t.lane_number), c.lane_number),
      gather_row(tape.param(*t.speed_class), c.speed_class),
      gather_row(tape.param(*t.road_length), c.road_length),
      gather_row(tape.param(*t.out_degree), c.out_degree),
  };
  return concat_cols(parts);
}

Var embed_dynamic(Tape& tape, const PropertyTables& t, const SegmentCategories& c) {
  const Var parts[] = {
      gather_row(tape.param(*t.trajectory_count), c.trajectory_count),
      gather_row(tape.param(*t.medium_speed), c.medium_speed),
  };
  return concat_cols(parts);
}

FusionParams make_fusion(ParamStore& store, std::size_t in_dim, std::size_t out_dim,
                         std::mt19937_64& rng) {
  FusionParams f;
  f.weight = &store.add("context.fusion.weight",
                        gaussian(in_dim, out_dim, 1.0 / std::sqrt(static_cast<double>(in_dim)), rng), false);
  f.bias = &store.add("context.fusion.bias", Tensor(1, out_dim), false);
  return f;
}

Var fuse_segment_features(Tape& tape, const FusionParams& f, Var static_part, Var dynamic_part) {
  const Var parts[] = {static_part, dynamic_part};
  Var x = concat_cols(parts);
  return tanh(add_row(matmul(x, tape.param(*f.weight)), tape.param(*f.bias)));
}

std::vector<std::optional<std::size_t>> tracklet_positions(std::size_t length, std::size_t image_index,
                                                           std::size_t window) {
  if (image_index >= length)
    throw LookupError("image position " + std::to_string(image_index) +
                      " is outside a trajectory of length " + std::to_string(length));
  std::vector<std::optional<std::size_t>> out;
  for (std::size_t k = 0; k < 2 * window + 1; ++k) {
    const auto pos = static_cast<std::int64_t>(image_index + k) - static_cast<std::int64_t>(window);
    if (pos < 0 || pos >= static_cast<std::int64_t>(length))
      out.emplace_back(std::nullopt);
    else
      out.emplace_back(static_cast<std::size_t>(pos));
  }
  return out;
}

Tracklet build_tracklet(Tape& tape, std::size_t length, std::size_t image_index, std::size_t window,
                        std::size_t dim, const std::function<Var(std::size_t)>& feature_fn) {
  const auto positions = tracklet_positions(length, image_index, window);
  Tracklet t;
  t.center = window;
  std::vector<Var> rows;
  for (const auto& pos : positions) {
    t.valid.push_back(pos.has_value());
    rows.push_back(pos ? feature_fn(*pos) : tape.constant(Tensor(1, dim)));
  }
  t.rows = concat_rows(rows);
  return t;
}

Var encode_tracklet(Tape& tape, const EncoderParams& enc, const Tracklet& tracklet) {
  // Features are scaled by sqrt(D) so the unit-amplitude positions do not
  // swamp them.
  const double gain = std::sqrt(static_cast<double>(tracklet.rows.cols()));
  Var x = add(scale(tracklet.rows, gain), tape.constant(sinusoidal_positions(tracklet.rows.rows(), tracklet.rows.cols())));
  return run_encoder(tape, enc, x, &tracklet.valid, tracklet.center);
}

}  // namespace stclip
