#include <gtest/gtest.h>

#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>

#include "stclip/error.hpp"
#include "stclip/dataset.hpp"
#include "stclip/synth.hpp"

using namespace stclip;

namespace {

std::size_t reachable_from(const RoadNetwork& net, std::size_t start) {
  std::vector<bool> seen(net.size(), false);
  std::deque<std::size_t> queue{start};
  seen[start] = true;
  std::size_t n = 1;
  while (!queue.empty()) {
    const std::size_t v = queue.front();
    queue.pop_front();
    for (std::size_t w : net.successors(v))
      if (!seen[w]) {
        seen[w] = true;
        ++n;
        queue.push_back(w);
      }
  }
  return n;
}

const SyntheticWorld& default_world() {
  static const SyntheticWorld w = generate_world(SynthConfig{}, traffic_scene_aspects());
  return w;
}

double cosine(const Tensor& a, const Tensor& b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return d / std::sqrt(na * nb);
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST(Network, TwoByTwoGrid) {
  SynthConfig c;
  c.grid = 2;
  const auto net = generate_network(c);
  EXPECT_EQ(net.size(), 8u);
  for (std::size_t i = 0; i < net.size(); ++i) {
    const SegmentId id = net.profile(i).segment_id;
    EXPECT_TRUE(net.contains(twin_segment(id)));
    EXPECT_TRUE(net.adjacent(i, net.index_of(twin_segment(id))));
    EXPECT_EQ(reachable_from(net, i), net.size());
  }
}

TEST(Network, DefaultGridIsStronglyConnected) {
  const auto& net = default_world().network;
  EXPECT_EQ(net.size(), 2u * 2u * 8u * 7u);
  for (std::size_t i = 0; i < net.size(); i += 17) EXPECT_EQ(reachable_from(net, i), net.size());
}

TEST(Network, SeedDeterminism) {
  SynthConfig a;
  a.seed = 5;
  const auto n1 = generate_network(a), n2 = generate_network(a);
  ASSERT_EQ(n1.size(), n2.size());
  bool all_same = true;
  for (std::size_t i = 0; i < n1.size(); ++i) {
    const auto &p = n1.profile(i), &q = n2.profile(i);
    all_same &= p.segment_id == q.segment_id && p.lane_number == q.lane_number && p.speed_class == q.speed_class &&
                p.road_length == q.road_length && p.function_class == q.function_class;
  }
  EXPECT_TRUE(all_same);
  a.seed = 6;
  const auto n3 = generate_network(a);
  bool differs = false;
  for (std::size_t i = 0; i < n1.size(); ++i) differs |= n1.profile(i).road_length != n3.profile(i).road_length;
  EXPECT_TRUE(differs);
}

TEST(Trajectories, NoiselessFixesLieOnTheirRoute) {
  SynthConfig c;
  const auto net = generate_network(c);
  std::mt19937_64 rng(2);
  const auto trajs = generate_trajectories(net, c, 20, rng);
  const LocalFrame frame(c.origin.lon, c.origin.lat);
  for (const auto& t : trajs) {
    ASSERT_GE(t.gps.points.size(), 2u);
    for (std::size_t i = 0; i + 1 < t.route.size(); ++i)
      EXPECT_TRUE(net.adjacent(net.index_of(t.route[i]), net.index_of(t.route[i + 1])));
    for (const auto& p : t.gps.points) {
      double best = HUGE_VAL;
      for (SegmentId s : t.route) {
        std::vector<Point2> line;
        for (const auto& q : net.geometry(net.index_of(s))) line.push_back(frame.to_local(q));
        best = std::min(best, project_onto(line, frame.to_local(p.pos)).distance);
      }
      EXPECT_LT(best, 1e-6);
    }
  }
}

TEST(Trajectories, TimestampsIncreaseAtTheConfiguredInterval) {
  SynthConfig c;
  const auto net = generate_network(c);
  std::mt19937_64 rng(3);
  for (const auto& t : generate_trajectories(net, c, 10, rng)) {
    for (std::size_t i = 1; i < t.gps.points.size(); ++i)
      EXPECT_NEAR(t.gps.points[i].timestamp - t.gps.points[i - 1].timestamp, c.gps_interval, 1e-9);
    ASSERT_EQ(t.truth.samples.size(), t.route.size());
    for (std::size_t i = 1; i < t.truth.samples.size(); ++i)
      EXPECT_LT(t.truth.samples[i - 1].timestamp, t.truth.samples[i].timestamp);
  }
}

TEST(World, LabelListsAreTheTableOneWords) {
  const auto aspects = traffic_scene_aspects();
  ASSERT_EQ(aspects.size(), 4u);
  EXPECT_EQ(class_counts(aspects), (std::vector<std::size_t>{5, 4, 4, 3}));
  EXPECT_EQ(aspects[3].words, (std::vector<std::string>{"easy", "hard", "extremely hard"}));
}

TEST(World, EveryClassHasSixteenTrainingSamples) {
  const auto& w = default_world();
  const auto aspects = traffic_scene_aspects();
  std::vector<std::vector<std::size_t>> train(4), test(4);
  for (std::size_t p = 0; p < 4; ++p) {
    train[p].assign(aspects[p].words.size(), 0);
    test[p].assign(aspects[p].words.size(), 0);
  }
  std::size_t n_train = 0;
  for (std::size_t i = 0; i < w.records.size(); ++i) {
    const bool is_train = w.latents[i].split == "train";
    n_train += is_train;
    for (std::size_t p = 0; p < 4; ++p) ++(is_train ? train : test)[p][w.records[i].label_indices[p]];
  }
  EXPECT_EQ(n_train, SynthConfig{}.train_samples);
  EXPECT_EQ(w.records.size(), SynthConfig{}.train_samples + SynthConfig{}.test_samples);
  for (std::size_t p = 0; p < 4; ++p)
    for (std::size_t k = 0; k < train[p].size(); ++k) {
      EXPECT_GE(train[p][k], 16u) << aspects[p].name << "/" << aspects[p].words[k];
      EXPECT_GT(test[p][k], 0u) << aspects[p].name << "/" << aspects[p].words[k];
    }
}

TEST(World, SeedDeterminism) {
  SynthConfig c;
  c.seed = 11;
  c.train_samples = 40;
  c.test_samples = 20;
  const auto aspects = traffic_scene_aspects();
  const auto a = generate_world(c, aspects), b = generate_world(c, aspects);
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].label_indices, b.records[i].label_indices);
    EXPECT_EQ(a.records[i].trajectory_segments, b.records[i].trajectory_segments);
    EXPECT_EQ(a.latents[i].latent.data(), b.latents[i].latent.data());
    EXPECT_EQ(a.latents[i].timestamp, b.latents[i].timestamp);
  }
  ASSERT_EQ(a.trajectories.size(), b.trajectories.size());
  for (std::size_t i = 0; i < a.trajectories.size(); ++i) EXPECT_EQ(a.trajectories[i].truth, b.trajectories[i].truth);
}

TEST(World, ZeroNoiseGivesIdenticalLatentsForIdenticalLabels) {
  SynthConfig c;
  c.latent_noise = 0;
  c.train_samples = 200;
  c.test_samples = 0;
  const auto w = generate_world(c, traffic_scene_aspects());
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < w.records.size(); ++i)
    for (std::size_t j = i + 1; j < w.records.size(); ++j) {
      const bool same = w.records[i].label_indices == w.records[j].label_indices;
      if (same) {
        ++pairs;
        EXPECT_EQ(w.latents[i].latent.data(), w.latents[j].latent.data());
      } else {
        EXPECT_NE(w.latents[i].latent.data(), w.latents[j].latent.data());
      }
    }
  EXPECT_GT(pairs, 0u);
}

TEST(World, AccessibilityDrivesObservedSpeed) {
  const auto& w = default_world();
  const auto data = dataset_from_world(w, traffic_scene_aspects());
  std::vector<double> lo(3, HUGE_VAL), hi(3, 0);
  for (const auto& s : data.samples) {
    const auto a = static_cast<std::size_t>(s.record.label_indices[3]);
    const double ms = data.stats.lookup(data.network, s.record.image_to_segment, s.image.timestamp).medium_speed;
    lo[a] = std::min(lo[a], ms);
    hi[a] = std::max(hi[a], ms);
  }
  EXPECT_LT(hi[2], lo[0]);
}

TEST(World, ImageGlobalsSeparateByLabel) {
  const auto& w = default_world();
  const auto aspects = traffic_scene_aspects();
  const auto m = ModelState::init(ModelConfig::desk(), aspects);
  std::vector<Tensor> g;
  for (std::size_t i = 0; i < 100; ++i) g.push_back(encode_image_stub(m.image_stub(), w.latents[i].latent).global);
  for (std::size_t p = 0; p < 3; ++p) {
    double intra = 0, inter = 0;
    std::size_t ni = 0, ne = 0;
    for (std::size_t i = 0; i < g.size(); ++i)
      for (std::size_t j = i + 1; j < g.size(); ++j) {
        const double c = cosine(g[i], g[j]);
        if (w.records[i].label_indices[p] == w.records[j].label_indices[p]) {
          intra += c;
          ++ni;
        } else {
          inter += c;
          ++ne;
        }
      }
    EXPECT_LT(inter / ne, intra / ni) << aspects[p].name;
  }
}

TEST(World, ConceptsAreScaledCentroids) {
  SynthConfig c;
  const auto aspects = traffic_scene_aspects();
  const auto cent = latent_centroids(c, aspects);
  const auto conc = concept_latents(c, aspects);
  for (std::size_t p = 0; p < 4; ++p)
    for (std::size_t k = 0; k < cent[p].size(); ++k)
      for (std::size_t j = 0; j < c.latent_dim; ++j)
        EXPECT_DOUBLE_EQ(conc[p][k][j], c.latent_signal[p] * cent[p][k][j]);
}

TEST(World, ConfigValidation) {
  SynthConfig c;
  c.latent_noise = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.grid = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.latent_signal = {1, 1};
  EXPECT_THROW(generate_world(c, traffic_scene_aspects()), ConfigError);
}

TEST(World, ConfigMapRoundTrip) {
  SynthConfig c;
  c.seed = 9;
  c.grid = 5;
  c.gps_noise = 4.5;
  c.latent_signal = {0.5, 0.25, 1, 2};
  c.access_bands[1].max_kmh = 27;
  const auto back = SynthConfig::from_map(c.to_map(), SynthConfig{});
  EXPECT_EQ(back.to_map(), c.to_map());
  EXPECT_EQ(back.grid, 5);
  EXPECT_EQ(back.latent_signal, c.latent_signal);
  EXPECT_DOUBLE_EQ(back.access_bands[1].max_kmh, 27);
}

TEST(Files, WorldRoundTripsThroughTheLoaders) {
  SynthConfig c;
  c.grid = 4;
  c.train_samples = 48;
  c.test_samples = 16;
  const auto aspects = traffic_scene_aspects();
  const auto w = generate_world(c, aspects);
  const auto dir = scratch("stclip_world");
  write_world(dir, w, aspects);
  for (const char* f : {"segment_profile.csv", "edges.csv", "segment_geometry.csv", "gps.csv", "matched.csv",
                        "dynamic_stats.csv", "scene_latents.csv", "concepts.csv"})
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;

  const auto loaded = load_dataset(dir, aspects);
  const auto direct = dataset_from_world(w, aspects);
  ASSERT_EQ(loaded.samples.size(), direct.samples.size());
  EXPECT_EQ(loaded.network.size(), w.network.size());
  ASSERT_TRUE(loaded.concepts.has_value());
  for (std::size_t p = 0; p < 4; ++p)
    for (std::size_t k = 0; k < aspects[p].words.size(); ++k)
      for (std::size_t j = 0; j < c.latent_dim; ++j)
        EXPECT_NEAR((*loaded.concepts)[p][k][j], w.concepts[p][k][j], 1e-12);
  for (std::size_t i = 0; i < loaded.samples.size(); ++i) {
    const auto &a = loaded.samples[i], &b = direct.samples[i];
    EXPECT_EQ(a.record.image_path, b.record.image_path);
    EXPECT_EQ(a.record.label_indices, b.record.label_indices);
    EXPECT_EQ(a.record.trajectory_segments, b.record.trajectory_segments);
    EXPECT_EQ(a.image.split, b.image.split);
    EXPECT_NEAR(a.image.timestamp, b.image.timestamp, 1e-6);
    for (std::size_t j = 0; j < c.latent_dim; ++j) EXPECT_NEAR(a.image.latent[j], b.image.latent[j], 1e-12);
    const auto ca = context_for(loaded, a, 1), cb = context_for(direct, b, 1);
    for (std::size_t r = 0; r < 3; ++r) {
      ASSERT_EQ(ca.rows[r].has_value(), cb.rows[r].has_value());
      if (ca.rows[r]) EXPECT_EQ(ca.rows[r]->medium_speed, cb.rows[r]->medium_speed);
    }
  }
  std::filesystem::remove_all(dir);
}

TEST(Files, ConceptFileErrors) {
  const AspectSet aspects{{"width", {"narrow", "wide"}}};
  const auto dir = scratch("stclip_concepts");
  std::filesystem::create_directories(dir);
  const auto path = dir / "concepts.csv";
  const auto write = [&](const std::string& body) {
    std::ofstream(path) << "aspect,word,latent\n" << body;
  };

  write("width,narrow,1;2\nwidth,wide,3;4\n");
  const auto ok = load_concepts(path, aspects);
  ASSERT_EQ(ok.size(), 1u);
  EXPECT_EQ(ok[0][1].data(), (std::vector<double>{3, 4}));

  write("width,narrow,1;2\n");
  EXPECT_THROW(load_concepts(path, aspects), IntegrityError);
  write("width,narrow,1;2\nwidth,narrow,1;2\nwidth,wide,3;4\n");
  EXPECT_THROW(load_concepts(path, aspects), IntegrityError);
  write("width,narrow,1;2\nwidth,wide,3\n");
  EXPECT_THROW(load_concepts(path, aspects), IntegrityError);
  write("width,narrow,1;2\nwidth,huge,3;4\n");
  EXPECT_THROW(load_concepts(path, aspects), IntegrityError);
  write("scene,narrow,1;2\nwidth,wide,3;4\n");
  EXPECT_THROW(load_concepts(path, aspects), IntegrityError);

  ConceptLatents c{{Tensor::row_vector({0.5, -1}), Tensor::row_vector({2, 0.25})}};
  write_concepts(path, c, aspects);
  const auto back = load_concepts(path, aspects);
  EXPECT_EQ(back[0][0].data(), c[0][0].data());
  EXPECT_EQ(back[0][1].data(), c[0][1].data());
  std::filesystem::remove_all(dir);
}

TEST(Alignment, LowersTheLossAndKeepsClassWordsFrozen) {
  SynthConfig c;
  c.train_samples = 16;
  c.test_samples = 0;
  const auto aspects = traffic_scene_aspects();
  const auto w = generate_world(c, aspects);
  auto m = ModelState::init(ModelConfig::desk(), aspects);
  AlignmentOptions few;
  few.steps = 1;
  auto m1 = ModelState::init(ModelConfig::desk(), aspects);
  const double first = align_backbone(m1, w.concepts, few);
  const double last = align_backbone(m, w.concepts);
  EXPECT_LT(last, first);
  EXPECT_LT(last, 0.5);
  for (const auto& row : m.class_words().words)
    for (const auto* p : row) {
      EXPECT_TRUE(p->frozen);
      for (double g : p->grad.data()) EXPECT_EQ(g, 0.0);
    }
  ConceptLatents short_list = w.concepts;
  short_list[0].pop_back();
  EXPECT_THROW(align_backbone(m, short_list), ShapeError);
}
