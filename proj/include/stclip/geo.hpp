#pragma once

// Planar geometry in a local meter frame anchored at a reference lon/lat.
// Equirectangular: adequate at city scale, and exact for the synthetic
// generator, which uses the same mapping in reverse.

#include <algorithm>
#include <cmath>
#include <numbers>

#include "stclip/road_graph.hpp"

namespace stclip {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

inline double distance(Point2 a, Point2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

class LocalFrame {
 public:
  static constexpr double kEarthRadius = 6371008.8;

  LocalFrame() = default;
  LocalFrame(double lon0, double lat0)
      : lon0_(lon0), lat0_(lat0), cos0_(std::cos(lat0 * std::numbers::pi / 180.0)) {}

  Point2 to_local(LonLat p) const {
    constexpr double k = std::numbers::pi / 180.0 * kEarthRadius;
    return {(p.lon - lon0_) * k * cos0_, (p.lat - lat0_) * k};
  }
  LonLat to_lonlat(Point2 p) const {
    constexpr double k = std::numbers::pi / 180.0 * kEarthRadius;
    return {lon0_ + p.x / (k * cos0_), lat0_ + p.y / k};
  }

  double lon0() const { return lon0_; }
  double lat0() const { return lat0_; }

 private:
  double lon0_ = 0.0;
  double lat0_ = 0.0;
  double cos0_ = 1.0;
};

struct PolylineProjection {
  Point2 point;
  double distance = 0.0;   // perpendicular distance to the polyline
  double arclength = 0.0;  // along the polyline, up to the projected point
  double length = 0.0;     // total polyline length
};

/// Closest point on a polyline; ties go to the earliest piece.
inline PolylineProjection project_onto(const std::vector<Point2>& line, Point2 p) {
  PolylineProjection best;
  best.distance = HUGE_VAL;
  double walked = 0.0;
  for (std::size_t i = 0; i + 1 < line.size(); ++i) {
    const Point2 a = line[i], b = line[i + 1];
    const double dx = b.x - a.x, dy = b.y - a.y;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const Point2 q{a.x + t * dx, a.y + t * dy};
    const double d = distance(p, q);
    const double piece = std::sqrt(len2);
    if (d < best.distance) {
      best.point = q;
      best.distance = d;
      best.arclength = walked + t * piece;
    }
    walked += piece;
  }
  best.length = walked;
  if (line.size() == 1) {
    best.point = line[0];
    best.distance = distance(p, line[0]);
  }
  return best;
}

/// Point at a given arclength along a polyline (clamped to its ends).
inline Point2 point_along(const std::vector<Point2>& line, double s) {
  if (line.empty()) return {};
  if (s <= 0) return line.front();
  for (std::size_t i = 0; i + 1 < line.size(); ++i) {
    const double piece = distance(line[i], line[i + 1]);
    if (s <= piece && piece > 0) {
      const double t = s / piece;
      return {line[i].x + t * (line[i + 1].x - line[i].x), line[i].y + t * (line[i + 1].y - line[i].y)};
    }
    s -= piece;
  }
  return line.back();
}

inline double polyline_length(const std::vector<Point2>& line) {
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < line.size(); ++i) s += distance(line[i], line[i + 1]);
  return s;
}

}  // namespace stclip
