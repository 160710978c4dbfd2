#pragma once

// Independent reference implementations used by the unit and acceptance
// suites. Deliberately naive.

#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "fixtures.hpp"
#include "stclip/map_match.hpp"

namespace oracles {

/// Exhaustive enumeration of every candidate path; returns the best total
/// log-probability (or -inf when every path is broken).
inline double brute_force_lattice(const stclip::GpsTrajectory& traj, const stclip::SpatialIndex& index,
                                  const stclip::MatchParams& params) {
  std::vector<std::vector<stclip::Candidate>> cands;
  for (const auto& p : traj.points)
    cands.push_back(stclip::candidate_segments(index, p.pos, params.radius, params.k));
  stclip::RouteCache routes(index.network());
  double best = -std::numeric_limits<double>::infinity();
  std::vector<std::size_t> pick(cands.size());
  std::function<void(std::size_t)> rec = [&](std::size_t t) {
    if (t == cands.size()) {
      double lp = 0.0;
      for (std::size_t s = 0; s < pick.size(); ++s) {
        lp += std::log(stclip::emission_prob(cands[s][pick[s]], params.sigma));
        if (s == 0) continue;
        const double gc = stclip::ground_distance(index, traj.points[s - 1].pos, traj.points[s].pos);
        lp += std::log(stclip::transition_prob(routes, cands[s - 1][pick[s - 1]], cands[s][pick[s]], gc));
      }
      best = std::max(best, lp);
      return;
    }
    for (std::size_t i = 0; i < cands[t].size(); ++i) {
      pick[t] = i;
      rec(t + 1);
    }
  };
  rec(0);
  return best;
}

/// Random small instance: a jittered 3x3 grid and up to 5 points scattered
/// along a random walk, each with at least one candidate.
struct ViterbiInstance {
  stclip::RoadNetwork network;
  stclip::GpsTrajectory traj;
};

inline ViterbiInstance random_viterbi_instance(std::mt19937_64& rng) {
  ViterbiInstance inst;
  inst.network = fixtures::grid_network(3, 120.0, &rng);
  const auto index = stclip::SpatialIndex::build(inst.network, 100.0);
  std::uniform_int_distribution<int> npts(1, 5);
  std::uniform_real_distribution<double> ux(-30.0, 270.0);
  std::normal_distribution<double> step(0.0, 60.0);
  const int n = npts(rng);
  stclip::Point2 p{ux(rng), ux(rng)};
  double ts = 1000.0;
  while (static_cast<int>(inst.traj.points.size()) < n) {
    const auto ll = fixtures::kFrame.to_lonlat(p);
    if (!stclip::candidate_segments(index, ll, 100.0, 4).empty()) {
      inst.traj.points.push_back({ll, ts});
      ts += 10.0;
    }
    p.x += step(rng);
    p.y += step(rng);
    p.x = std::clamp(p.x, -30.0, 270.0);
    p.y = std::clamp(p.y, -30.0, 270.0);
  }
  return inst;
}

}  // namespace oracles
