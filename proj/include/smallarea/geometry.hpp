#pragma once

#include <algorithm>
#include <limits>
#include <string>
#include <vector>

namespace smallarea {

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

/// Closed ring: front() == back(), at least 4 vertices.
using Ring = std::vector<Point>;

/// rings[0] is the outer boundary; any further rings are holes.
struct Polygon {
  std::vector<Ring> rings;

  friend bool operator==(const Polygon&, const Polygon&) = default;
};

/// A Polygon feature is stored as a MultiPolygon with one part.
using MultiPolygon = std::vector<Polygon>;

struct BoundingBox {
  double min_x = std::numeric_limits<double>::infinity();
  double min_y = std::numeric_limits<double>::infinity();
  double max_x = -std::numeric_limits<double>::infinity();
  double max_y = -std::numeric_limits<double>::infinity();

  void extend(const Point& p) {
    min_x = std::min(min_x, p.x);
    min_y = std::min(min_y, p.y);
    max_x = std::max(max_x, p.x);
    max_y = std::max(max_y, p.y);
  }

  bool contains(const Point& p, double tol = 0.0) const {
    return p.x >= min_x - tol && p.x <= max_x + tol && p.y >= min_y - tol && p.y <= max_y + tol;
  }

  bool intersects(const BoundingBox& o, double tol = 0.0) const {
    return !(o.min_x > max_x + tol || o.max_x < min_x - tol || o.min_y > max_y + tol ||
             o.max_y < min_y - tol);
  }
};

inline BoundingBox bounding_box(const MultiPolygon& mp) {
  BoundingBox box;
  for (const auto& poly : mp)
    for (const auto& ring : poly.rings)
      for (const auto& p : ring) box.extend(p);
  return box;
}

enum class GeometryKind { block_group, zone };

struct Feature {
  std::string id;
  MultiPolygon parts;

  friend bool operator==(const Feature&, const Feature&) = default;
};

struct GeometrySet {
  GeometryKind kind = GeometryKind::block_group;
  std::vector<Feature> features;

  const Feature* find(const std::string& id) const {
    auto it = std::find_if(features.begin(), features.end(),
                           [&](const Feature& f) { return f.id == id; });
    return it == features.end() ? nullptr : &*it;
  }
  std::size_t size() const { return features.size(); }
};

}  // namespace smallarea
