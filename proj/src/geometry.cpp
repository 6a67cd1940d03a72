#include "hydra/geometry.hpp"

#include <algorithm>
#include <limits>
#include <numbers>

namespace hydra {

double normalize_angle(double a) {
  constexpr double kPi = std::numbers::pi;
  if (a > -kPi && a <= kPi) return a;
  a = std::remainder(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  return a;
}

Pose compose(const Pose& frame, const Pose& local) {
  const double c = std::cos(frame.heading);
  const double s = std::sin(frame.heading);
  return {frame.x + c * local.x - s * local.y, frame.y + s * local.x + c * local.y,
          normalize_angle(frame.heading + local.heading)};
}

Pose relative(const Pose& frame, const Pose& world) {
  const double c = std::cos(frame.heading);
  const double s = std::sin(frame.heading);
  const double dx = world.x - frame.x;
  const double dy = world.y - frame.y;
  return {c * dx + s * dy, -s * dx + c * dy, normalize_angle(world.heading - frame.heading)};
}

Vec2 to_world(const Pose& frame, Vec2 local) {
  const double c = std::cos(frame.heading);
  const double s = std::sin(frame.heading);
  return {frame.x + c * local.x - s * local.y, frame.y + s * local.x + c * local.y};
}

std::array<Vec2, 4> OrientedBox::corners() const {
  const Vec2 f{std::cos(heading), std::sin(heading)};
  const Vec2 l{-f.y, f.x};
  const Vec2 df = half_length * f;
  const Vec2 dl = half_width * l;
  return {center + df - dl, center + df + dl, center - df + dl, center - df - dl};
}

namespace {

void project_box(const std::array<Vec2, 4>& c, Vec2 axis, double& lo, double& hi) {
  lo = hi = dot(c[0], axis);
  for (int i = 1; i < 4; ++i) {
    const double v = dot(c[i], axis);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
}

int orientation(Vec2 a, Vec2 b, Vec2 c) {
  const double v = cross(b - a, c - a);
  if (v > 0.0) return 1;
  if (v < 0.0) return -1;
  return 0;
}

bool on_segment(Vec2 a, Vec2 b, Vec2 p) {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) &&
         std::min(a.y, b.y) <= p.y && p.y <= std::max(a.y, b.y);
}

}  // namespace

bool boxes_intersect(const OrientedBox& a, const OrientedBox& b) {
  const auto ca = a.corners();
  const auto cb = b.corners();
  const std::array<Vec2, 4> axes = {
      Vec2{std::cos(a.heading), std::sin(a.heading)},
      Vec2{-std::sin(a.heading), std::cos(a.heading)},
      Vec2{std::cos(b.heading), std::sin(b.heading)},
      Vec2{-std::sin(b.heading), std::cos(b.heading)},
  };
  for (const Vec2& axis : axes) {
    double alo, ahi, blo, bhi;
    project_box(ca, axis, alo, ahi);
    project_box(cb, axis, blo, bhi);
    if (ahi < blo || bhi < alo) return false;
  }
  return true;
}

bool segments_intersect(Vec2 p1, Vec2 p2, Vec2 q1, Vec2 q2) {
  const int o1 = orientation(p1, p2, q1);
  const int o2 = orientation(p1, p2, q2);
  const int o3 = orientation(q1, q2, p1);
  const int o4 = orientation(q1, q2, p2);
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && on_segment(p1, p2, q1)) return true;
  if (o2 == 0 && on_segment(p1, p2, q2)) return true;
  if (o3 == 0 && on_segment(q1, q2, p1)) return true;
  if (o4 == 0 && on_segment(q1, q2, p2)) return true;
  return false;
}

bool Polygon::contains(Vec2 p) const {
  bool inside = false;
  const std::size_t n = vertices_.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Vec2 a = vertices_[i];
    const Vec2 b = vertices_[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (p.x < x_cross) inside = !inside;
    }
  }
  return inside;
}

double Polygon::signed_area() const {
  double a = 0.0;
  const std::size_t n = vertices_.size();
  for (std::size_t i = 0; i < n; ++i) a += cross(vertices_[i], vertices_[(i + 1) % n]);
  return 0.5 * a;
}

bool Polygon::is_simple() const {
  const std::size_t n = vertices_.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 a1 = vertices_[i];
    const Vec2 a2 = vertices_[(i + 1) % n];
    if (a1 == a2) return false;
    for (std::size_t j = i + 1; j < n; ++j) {
      const Vec2 b1 = vertices_[j];
      const Vec2 b2 = vertices_[(j + 1) % n];
      const bool adjacent = (j == i + 1) || (i == 0 && j == n - 1);
      if (adjacent) {
        // Adjacent edges may only share their common vertex: reject folds.
        const Vec2 shared = (j == i + 1) ? a2 : a1;
        const Vec2 other_a = (j == i + 1) ? a1 : a2;
        const Vec2 other_b = (j == i + 1) ? b2 : b1;
        if (orientation(shared, other_a, other_b) == 0 &&
            dot(other_a - shared, other_b - shared) > 0.0)
          return false;
        continue;
      }
      if (segments_intersect(a1, a2, b1, b2)) return false;
    }
  }
  return true;
}

double point_segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  const Vec2 ab = b - a;
  const double len2 = dot(ab, ab);
  double t = len2 > 0.0 ? dot(p - a, ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return norm(p - (a + t * ab));
}

double Polygon::boundary_distance(Vec2 p) const {
  double best = std::numeric_limits<double>::infinity();
  const std::size_t n = vertices_.size();
  for (std::size_t i = 0; i < n; ++i)
    best = std::min(best, point_segment_distance(p, vertices_[i], vertices_[(i + 1) % n]));
  return best;
}

namespace {
constexpr double kProjectionTie = 1e-9;  // metres
}  // namespace

PolylineProjection project_onto_polyline(std::span<const Vec2> line, Vec2 p) {
  PolylineProjection best;
  best.distance = std::numeric_limits<double>::infinity();
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < line.size(); ++i) {
    const Vec2 a = line[i];
    const Vec2 ab = line[i + 1] - a;
    const double len2 = dot(ab, ab);
    const double len = std::sqrt(len2);
    double t = len2 > 0.0 ? std::clamp(dot(p - a, ab) / len2, 0.0, 1.0) : 0.0;
    const Vec2 q = a + t * ab;
    const double d = norm(p - q);
    // Distances within kProjectionTie count as ties so that the earliest
    // segment wins regardless of rounding, e.g. on the bisector of a bend.
    if (d < best.distance - kProjectionTie) {
      best.distance = d;
      best.arc_length = acc + t * len;
      best.tangent = std::atan2(ab.y, ab.x);
      const double side = cross(ab, p - a);
      best.lateral = side >= 0.0 ? d : -d;
    }
    acc += len;
  }
  return best;
}

}  // namespace hydra
