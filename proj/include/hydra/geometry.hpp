#pragma once

#include <array>
#include <cmath>
#include <span>
#include <vector>

namespace hydra {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(Vec2 a, Vec2 b) = default;
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }

// Wraps an angle into (-pi, pi].
double normalize_angle(double a);

struct Pose {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;

  Vec2 position() const { return {x, y}; }
  friend bool operator==(const Pose&, const Pose&) = default;
};

// `local` expressed in `frame` -> world coordinates.
Pose compose(const Pose& frame, const Pose& local);
// World pose -> coordinates relative to `frame`.
Pose relative(const Pose& frame, const Pose& world);
Vec2 to_world(const Pose& frame, Vec2 local);

struct Footprint {
  double half_length = 2.4;
  double half_width = 1.0;
  friend bool operator==(const Footprint&, const Footprint&) = default;
};

struct OrientedBox {
  Vec2 center;
  double heading = 0.0;
  double half_length = 0.0;
  double half_width = 0.0;

  static OrientedBox at(const Pose& p, const Footprint& f) {
    return {p.position(), p.heading, f.half_length, f.half_width};
  }
  // Counter-clockwise: front-right, front-left, rear-left, rear-right.
  std::array<Vec2, 4> corners() const;
};

// Separating-axis test. Touching boxes count as intersecting.
bool boxes_intersect(const OrientedBox& a, const OrientedBox& b);

// Closed-segment intersection, including collinear overlap.
bool segments_intersect(Vec2 p1, Vec2 p2, Vec2 q1, Vec2 q2);

class Polygon {
 public:
  Polygon() = default;
  explicit Polygon(std::vector<Vec2> vertices) : vertices_(std::move(vertices)) {}

  const std::vector<Vec2>& vertices() const { return vertices_; }
  std::size_t size() const { return vertices_.size(); }

  // Crossing-number test; points exactly on the boundary are unspecified.
  bool contains(Vec2 p) const;
  double signed_area() const;
  // No two non-adjacent edges touch and adjacent edges meet only at their
  // shared vertex.
  bool is_simple() const;
  // Smallest distance from p to any edge.
  double boundary_distance(Vec2 p) const;

 private:
  std::vector<Vec2> vertices_;
};

struct PolylineProjection {
  double arc_length = 0.0;  // along the polyline from its first vertex
  double lateral = 0.0;     // signed, positive to the left
  double tangent = 0.0;     // heading of the closest segment
  double distance = 0.0;
};

// Closest point on the polyline; ties resolve to the smallest arc length.
PolylineProjection project_onto_polyline(std::span<const Vec2> line, Vec2 p);

double point_segment_distance(Vec2 p, Vec2 a, Vec2 b);

}  // namespace hydra
