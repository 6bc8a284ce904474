#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "smallarea/error.hpp"
#include "smallarea/geometry.hpp"
#include "smallarea/ingest.hpp"
#include "smallarea/text.hpp"

namespace smallarea {

// ---------------------------------------------------------------------------
// Centroids and containment
// ---------------------------------------------------------------------------

namespace detail {

struct AreaMoments {
  double area = 0.0;  // signed, shoelace
  double mx = 0.0;    // area * centroid.x
  double my = 0.0;
};

inline AreaMoments ring_moments(const Ring& ring, const Point& origin) {
  AreaMoments m;
  for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
    const double x0 = ring[i].x - origin.x, y0 = ring[i].y - origin.y;
    const double x1 = ring[i + 1].x - origin.x, y1 = ring[i + 1].y - origin.y;
    const double cross = x0 * y1 - x1 * y0;
    m.area += cross;
    m.mx += (x0 + x1) * cross;
    m.my += (y0 + y1) * cross;
  }
  m.area *= 0.5;
  m.mx /= 6.0;
  m.my /= 6.0;
  return m;
}

// Outer rings count positive, holes negative, whatever their winding.
inline AreaMoments polygon_moments(const Polygon& poly, const Point& origin) {
  AreaMoments total;
  for (std::size_t r = 0; r < poly.rings.size(); ++r) {
    AreaMoments m = ring_moments(poly.rings[r], origin);
    const bool hole = r > 0;
    if ((m.area < 0.0) != hole) {
      m.area = -m.area;
      m.mx = -m.mx;
      m.my = -m.my;
    }
    total.area += m.area;
    total.mx += m.mx;
    total.my += m.my;
  }
  return total;
}

}  // namespace detail

inline double area(const MultiPolygon& mp) {
  double a = 0.0;
  for (const auto& poly : mp) a += detail::polygon_moments(poly, Point{}).area;
  return a;
}

/// Area-weighted centroid. Moments are accumulated relative to the first
/// vertex so large projected coordinates keep their precision.
inline Point centroid(const MultiPolygon& mp, const std::string& id = {}) {
  if (mp.empty() || mp.front().rings.empty() || mp.front().rings.front().empty())
    throw Error(ErrorCode::ZeroArea, id);
  const Point origin = mp.front().rings.front().front();
  detail::AreaMoments total;
  for (const auto& poly : mp) {
    const auto m = detail::polygon_moments(poly, origin);
    total.area += m.area;
    total.mx += m.mx;
    total.my += m.my;
  }
  if (std::abs(total.area) < 1e-12) throw Error(ErrorCode::ZeroArea, id);
  return {origin.x + total.mx / total.area, origin.y + total.my / total.area};
}

inline Point centroid(const Polygon& poly, const std::string& id = {}) { return centroid(MultiPolygon{poly}, id); }

namespace detail {

inline double segment_distance(const Point& p, const Point& a, const Point& b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = 0.0;
  if (len2 > 0.0) t = std::clamp(((p.x - a.x) * dx + (p.y - a.y) * dy) / len2, 0.0, 1.0);
  const double ex = a.x + t * dx - p.x, ey = a.y + t * dy - p.y;
  return std::sqrt(ex * ex + ey * ey);
}

inline bool on_boundary(const Point& p, const Polygon& poly, double tol) {
  for (const auto& ring : poly.rings)
    for (std::size_t i = 0; i + 1 < ring.size(); ++i)
      if (segment_distance(p, ring[i], ring[i + 1]) <= tol) return true;
  return false;
}

// Even-odd crossing test over all rings (holes handled by parity).
inline bool inside_even_odd(const Point& p, const Polygon& poly) {
  bool inside = false;
  for (const auto& ring : poly.rings) {
    for (std::size_t i = 0, j = ring.size() - 1; i < ring.size(); j = i++) {
      const Point& a = ring[i];
      const Point& b = ring[j];
      if ((a.y > p.y) != (b.y > p.y)) {
        const double x_cross = (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x;
        if (p.x < x_cross) inside = !inside;
      }
    }
  }
  return inside;
}

}  // namespace detail

enum class Containment { outside, boundary, interior };

inline Containment locate(const Point& p, const MultiPolygon& mp, double tol = 1e-12) {
  bool boundary = false;
  for (const auto& poly : mp) {
    if (detail::on_boundary(p, poly, tol)) {
      boundary = true;
      continue;
    }
    if (detail::inside_even_odd(p, poly)) return Containment::interior;
  }
  return boundary ? Containment::boundary : Containment::outside;
}

/// Even-odd rule; points on the boundary count as inside.
inline bool point_in_polygon(const Point& p, const MultiPolygon& mp, double tol = 1e-12) {
  return locate(p, mp, tol) != Containment::outside;
}

inline bool point_in_polygon(const Point& p, const Polygon& poly, double tol = 1e-12) {
  return point_in_polygon(p, MultiPolygon{poly}, tol);
}

// ---------------------------------------------------------------------------
// Contiguity
// ---------------------------------------------------------------------------

struct AdjacencyList {
  std::vector<std::string> ids;                       // feature id per index
  std::vector<std::vector<std::size_t>> neighbors;    // sorted, symmetric, irreflexive

  std::size_t size() const { return neighbors.size(); }

  std::vector<std::size_t> islands() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < neighbors.size(); ++i)
      if (neighbors[i].empty()) out.push_back(i);
    return out;
  }

  friend bool operator==(const AdjacencyList&, const AdjacencyList&) = default;
};

struct ContiguityOptions {
  double snap_tolerance = 1e-9;
};

namespace detail {

struct SnapKey {
  std::int64_t x;
  std::int64_t y;
  friend bool operator==(const SnapKey&, const SnapKey&) = default;
};

struct SnapKeyHash {
  std::size_t operator()(const SnapKey& k) const noexcept {
    return std::hash<std::int64_t>()(k.x) * 1000003u ^ std::hash<std::int64_t>()(k.y);
  }
};

inline SnapKey snap(const Point& p, double tau) {
  return {static_cast<std::int64_t>(std::llround(p.x / tau)), static_cast<std::int64_t>(std::llround(p.y / tau))};
}

// True when some vertex of `a` lies within tol of the boundary of `b`.
inline bool vertex_touches(const MultiPolygon& a, const MultiPolygon& b, const BoundingBox& b_box, double tol) {
  for (const auto& poly : a)
    for (const auto& ring : poly.rings)
      for (const auto& p : ring) {
        if (!b_box.contains(p, tol)) continue;
        for (const auto& bp : b)
          if (on_boundary(p, bp, tol)) return true;
      }
  return false;
}

inline bool vertex_strictly_inside(const MultiPolygon& a, const MultiPolygon& b, const BoundingBox& b_box,
                                   double tol) {
  for (const auto& poly : a)
    for (const auto& ring : poly.rings)
      for (const auto& p : ring)
        if (b_box.contains(p) && locate(p, b, tol) == Containment::interior) return true;
  return false;
}

}  // namespace detail

/// Queen (order-1) contiguity: two features are neighbours when their
/// boundaries share at least one point, up to the snapping tolerance.
/// Shared snapped vertices are found by hashing; bounding-box candidate
/// pairs without a shared vertex are then tested for vertex-on-edge contact
/// (T-junctions). Pairs whose interiors appear to overlap produce a warning.
inline AdjacencyList queen_contiguity(const GeometrySet& geoms, const ContiguityOptions& opts = {},
                                      Warnings* warnings = nullptr) {
  const std::size_t n = geoms.features.size();
  const double tau = opts.snap_tolerance;
  AdjacencyList adj;
  adj.neighbors.assign(n, {});
  for (const auto& f : geoms.features) adj.ids.push_back(f.id);

  std::vector<BoundingBox> boxes(n);
  for (std::size_t i = 0; i < n; ++i) boxes[i] = bounding_box(geoms.features[i].parts);

  std::vector<std::set<std::size_t>> nb(n);

  std::unordered_map<detail::SnapKey, std::vector<std::size_t>, detail::SnapKeyHash> vertex_owners;
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& poly : geoms.features[i].parts)
      for (const auto& ring : poly.rings)
        for (const auto& p : ring) {
          auto& owners = vertex_owners[detail::snap(p, tau)];
          if (owners.empty() || owners.back() != i) owners.push_back(i);
        }
  for (const auto& [key, owners] : vertex_owners)
    for (std::size_t a = 0; a < owners.size(); ++a)
      for (std::size_t b = a + 1; b < owners.size(); ++b) {
        nb[owners[a]].insert(owners[b]);
        nb[owners[b]].insert(owners[a]);
      }

  // Sweep over x for bounding-box candidates.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return boxes[a].min_x < boxes[b].min_x || (boxes[a].min_x == boxes[b].min_x && a < b);
  });
  for (std::size_t oi = 0; oi < n; ++oi) {
    const std::size_t i = order[oi];
    for (std::size_t oj = oi + 1; oj < n; ++oj) {
      const std::size_t j = order[oj];
      if (boxes[j].min_x > boxes[i].max_x + tau) break;
      if (!boxes[i].intersects(boxes[j], tau)) continue;
      const auto& gi = geoms.features[i].parts;
      const auto& gj = geoms.features[j].parts;
      if (!nb[i].count(j)) {
        if (detail::vertex_touches(gi, gj, boxes[j], tau) || detail::vertex_touches(gj, gi, boxes[i], tau)) {
          nb[i].insert(j);
          nb[j].insert(i);
        }
      }
      if (warnings != nullptr &&
          (detail::vertex_strictly_inside(gi, gj, boxes[j], tau) || detail::vertex_strictly_inside(gj, gi, boxes[i], tau)))
        warn(warnings, "interiors intersect: " + geoms.features[i].id + " / " + geoms.features[j].id);
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    nb[i].erase(i);
    adj.neighbors[i].assign(nb[i].begin(), nb[i].end());
  }
  for (std::size_t i : adj.islands()) warn(warnings, "island: " + adj.ids[i]);
  return adj;
}

enum class LatticeContiguity { rook, queen };

/// Adjacency of a rows x cols grid of cells, indexed row-major.
inline AdjacencyList lattice_adjacency(std::size_t rows, std::size_t cols, LatticeContiguity kind) {
  AdjacencyList adj;
  adj.neighbors.assign(rows * cols, {});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      adj.ids.push_back(fmt::format("r{:04}c{:04}", r, c));
      auto& list = adj.neighbors[r * cols + c];
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          if (dr == 0 && dc == 0) continue;
          if (kind == LatticeContiguity::rook && dr != 0 && dc != 0) continue;
          const auto rr = static_cast<long long>(r) + dr, cc = static_cast<long long>(c) + dc;
          if (rr < 0 || cc < 0 || rr >= static_cast<long long>(rows) || cc >= static_cast<long long>(cols)) continue;
          list.push_back(static_cast<std::size_t>(rr) * cols + static_cast<std::size_t>(cc));
        }
      std::sort(list.begin(), list.end());
    }
  return adj;
}

/// Unit-square polygons for a rows x cols lattice; ids match lattice_adjacency.
inline GeometrySet lattice_geometry(std::size_t rows, std::size_t cols) {
  GeometrySet set;
  set.kind = GeometryKind::block_group;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const double x = static_cast<double>(c), y = static_cast<double>(r);
      Ring ring = {{x, y}, {x + 1, y}, {x + 1, y + 1}, {x, y + 1}, {x, y}};
      set.features.push_back({fmt::format("r{:04}c{:04}", r, c), {Polygon{{ring}}}});
    }
  return set;
}

// ---------------------------------------------------------------------------
// Weights
// ---------------------------------------------------------------------------

struct WeightEntry {
  std::size_t col;
  double weight;
  friend bool operator==(const WeightEntry&, const WeightEntry&) = default;
};

struct WeightsMatrix {
  std::vector<std::vector<WeightEntry>> rows;
  bool row_standardized = false;
  std::vector<std::size_t> islands;

  std::size_t size() const { return rows.size(); }

  double total_weight() const {
    double s = 0.0;
    for (const auto& row : rows)
      for (const auto& e : row) s += e.weight;
    return s;
  }

  std::size_t nonzeros() const {
    std::size_t k = 0;
    for (const auto& row : rows) k += row.size();
    return k;
  }

  /// W * v
  Eigen::VectorXd lag(const Eigen::VectorXd& v) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      double s = 0.0;
      for (const auto& e : rows[i]) s += e.weight * v[static_cast<Eigen::Index>(e.col)];
      out[static_cast<Eigen::Index>(i)] = s;
    }
    return out;
  }

  Eigen::MatrixXd dense() const {
    const auto n = static_cast<Eigen::Index>(rows.size());
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (const auto& e : rows[i]) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(e.col)) = e.weight;
    return m;
  }

  friend bool operator==(const WeightsMatrix&, const WeightsMatrix&) = default;
};

namespace detail {
inline std::vector<std::size_t> empty_rows(const std::vector<std::vector<WeightEntry>>& rows) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (rows[i].empty()) out.push_back(i);
  return out;
}
}  // namespace detail

/// Binary contiguity weights (1 for each neighbour).
inline WeightsMatrix binary_weights(const AdjacencyList& adj) {
  WeightsMatrix w;
  w.rows.resize(adj.size());
  for (std::size_t i = 0; i < adj.size(); ++i)
    for (std::size_t j : adj.neighbors[i]) w.rows[i].push_back({j, 1.0});
  w.islands = detail::empty_rows(w.rows);
  return w;
}

/// weight(i, j) = 1 / deg(i); islands keep empty rows.
inline WeightsMatrix row_standardize(const AdjacencyList& adj) {
  WeightsMatrix w;
  w.row_standardized = true;
  w.rows.resize(adj.size());
  for (std::size_t i = 0; i < adj.size(); ++i) {
    const double deg = static_cast<double>(adj.neighbors[i].size());
    for (std::size_t j : adj.neighbors[i]) w.rows[i].push_back({j, 1.0 / deg});
  }
  w.islands = detail::empty_rows(w.rows);
  return w;
}

/// Restricts W to the rows/columns flagged in `keep`, renumbering them in
/// order. A row-standardized matrix is re-standardized over the retained
/// neighbours.
inline WeightsMatrix subset_weights(const WeightsMatrix& w, const std::vector<bool>& keep) {
  if (keep.size() != w.size()) throw Error(ErrorCode::DimensionMismatch, "keep mask length differs from W");
  std::vector<std::size_t> new_index(w.size(), w.size());
  std::size_t m = 0;
  for (std::size_t i = 0; i < w.size(); ++i)
    if (keep[i]) new_index[i] = m++;

  WeightsMatrix out;
  out.row_standardized = w.row_standardized;
  out.rows.resize(m);
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!keep[i]) continue;
    auto& row = out.rows[new_index[i]];
    double sum = 0.0;
    for (const auto& e : w.rows[i])
      if (keep[e.col]) {
        row.push_back({new_index[e.col], e.weight});
        sum += e.weight;
      }
    if (w.row_standardized && sum > 0.0)
      for (auto& e : row) e.weight /= sum;
  }
  out.islands = detail::empty_rows(out.rows);
  return out;
}

/// Sparse triplet text: header "n standardized", then one "i j weight" line
/// per entry. Weights use shortest round-trip formatting.
inline std::string write_weights(const WeightsMatrix& w) {
  std::string out = fmt::format("{} {}\n", w.size(), w.row_standardized ? 1 : 0);
  for (std::size_t i = 0; i < w.rows.size(); ++i)
    for (const auto& e : w.rows[i]) out += fmt::format("{} {} {}\n", i, e.col, e.weight);
  return out;
}

inline WeightsMatrix parse_weights(std::string_view content) {
  const auto lines = text::data_lines(content);
  if (lines.empty()) throw Error(ErrorCode::MalformedInput, "weights file has no header");
  auto fields_of = [](std::string_view line) {
    std::vector<std::string> out;
    for (auto& f : text::split_fields(line, ' '))
      if (!f.empty()) out.push_back(f);
    return out;
  };
  auto to_index = [](const std::string& s, std::size_t line) {
    auto v = text::parse_number(s);
    if (!v || is_missing(*v) || *v < 0 || std::floor(*v) != *v)
      throw Error(ErrorCode::MalformedInput, "weights line " + std::to_string(line) + ": bad index '" + s + "'");
    return static_cast<std::size_t>(*v);
  };
  const auto header = fields_of(lines.front());
  if (header.size() != 2) throw Error(ErrorCode::MalformedInput, "weights header must be 'n standardized'");
  WeightsMatrix w;
  w.rows.resize(to_index(header[0], 0));
  w.row_standardized = to_index(header[1], 0) != 0;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const auto f = fields_of(lines[li]);
    if (f.size() != 3) throw Error(ErrorCode::MalformedInput, "weights line " + std::to_string(li));
    const std::size_t i = to_index(f[0], li), j = to_index(f[1], li);
    auto weight = text::parse_number(f[2]);
    if (i >= w.size() || j >= w.size() || !weight || is_missing(*weight))
      throw Error(ErrorCode::MalformedInput, "weights line " + std::to_string(li));
    w.rows[i].push_back({j, *weight});
  }
  w.islands = detail::empty_rows(w.rows);
  return w;
}

// ---------------------------------------------------------------------------
// Zone assignment
// ---------------------------------------------------------------------------

struct ZoneAssignment {
  std::vector<std::string> zones;                  // all zone ids, sorted
  std::map<std::string, std::string> zone_of;      // geoid -> zone id
  std::vector<std::string> unassigned;             // geoids, sorted

  std::size_t count(const std::string& zone) const {
    return static_cast<std::size_t>(
        std::count_if(zone_of.begin(), zone_of.end(), [&](const auto& kv) { return kv.second == zone; }));
  }
  bool has_zone(const std::string& zone) const {
    return std::binary_search(zones.begin(), zones.end(), zone);
  }
};

/// Assigns each block group to the zone containing its centroid. A centroid
/// interior to two zones is an error; a centroid lying only on zone
/// boundaries goes to the smallest such zone id.
inline ZoneAssignment assign_to_zones(const StudyArea& area) {
  ZoneAssignment asg;
  std::vector<const Feature*> zones;
  for (const auto& z : area.zones.features) zones.push_back(&z);
  std::sort(zones.begin(), zones.end(), [](const Feature* a, const Feature* b) { return a->id < b->id; });
  std::vector<BoundingBox> boxes;
  for (const auto* z : zones) {
    asg.zones.push_back(z->id);
    boxes.push_back(bounding_box(z->parts));
  }

  for (const auto& bg : area.blockgroups) {
    const Point c = centroid(bg.geometry.parts, bg.geoid());
    std::vector<std::string> interior, boundary;
    for (std::size_t k = 0; k < zones.size(); ++k) {
      if (!boxes[k].contains(c, 1e-12)) continue;
      switch (locate(c, zones[k]->parts)) {
        case Containment::interior: interior.push_back(zones[k]->id); break;
        case Containment::boundary: boundary.push_back(zones[k]->id); break;
        case Containment::outside: break;
      }
    }
    if (interior.size() > 1) throw Error(ErrorCode::AmbiguousAssignment, bg.geoid());
    if (interior.size() == 1) {
      asg.zone_of[bg.geoid()] = interior.front();
    } else if (!boundary.empty()) {
      asg.zone_of[bg.geoid()] = boundary.front();
    } else {
      asg.unassigned.push_back(bg.geoid());
    }
  }
  std::sort(asg.unassigned.begin(), asg.unassigned.end());
  return asg;
}

inline std::string write_assignment(const ZoneAssignment& asg, char delimiter = ',') {
  std::string out = text::join_row({"geoid", "zone"}, delimiter);
  for (const auto& [geoid, zone] : asg.zone_of) out += text::join_row({geoid, zone}, delimiter);
  for (const auto& geoid : asg.unassigned) out += text::join_row({geoid, ""}, delimiter);
  return out;
}

inline ZoneAssignment parse_assignment(std::string_view content, char delimiter = ',') {
  const auto lines = text::data_lines(content);
  if (lines.empty()) throw Error(ErrorCode::MalformedInput, "assignment file has no header");
  ZoneAssignment asg;
  std::set<std::string> zones;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const auto f = text::split_fields(lines[li], delimiter);
    if (f.size() != 2 || f[0].empty()) throw Error(ErrorCode::MalformedInput, "assignment row " + std::to_string(li));
    if (f[1].empty()) {
      asg.unassigned.push_back(f[0]);
    } else {
      asg.zone_of[f[0]] = f[1];
      zones.insert(f[1]);
    }
  }
  asg.zones.assign(zones.begin(), zones.end());
  std::sort(asg.unassigned.begin(), asg.unassigned.end());
  return asg;
}

// ---------------------------------------------------------------------------
// Moran's I
// ---------------------------------------------------------------------------

/// I = (n / S0) * z'Wz / z'z over the non-missing entries. Missing rows are
/// dropped and W is restricted (and re-standardized when applicable) to the
/// retained set.
inline double morans_i(std::span<const double> values, const WeightsMatrix& w) {
  if (values.size() != w.size()) throw Error(ErrorCode::DimensionMismatch, "series length differs from W");
  std::vector<bool> keep(values.size());
  std::vector<double> kept;
  for (std::size_t i = 0; i < values.size(); ++i) {
    keep[i] = !is_missing(values[i]);
    if (keep[i]) kept.push_back(values[i]);
  }
  if (kept.size() < 2) throw Error(ErrorCode::InsufficientData, "Moran's I needs at least 2 values");
  const WeightsMatrix sub = kept.size() == values.size() ? w : subset_weights(w, keep);

  const double mean = std::accumulate(kept.begin(), kept.end(), 0.0) / static_cast<double>(kept.size());
  Eigen::VectorXd z(static_cast<Eigen::Index>(kept.size()));
  for (std::size_t i = 0; i < kept.size(); ++i) z[static_cast<Eigen::Index>(i)] = kept[i] - mean;
  const double zz = z.squaredNorm();
  if (zz == 0.0) throw Error(ErrorCode::ConstantSeries, "Moran's I of a constant series");
  const double s0 = sub.total_weight();
  if (s0 == 0.0) throw Error(ErrorCode::InsufficientData, "weights matrix has no neighbour pairs");
  return (static_cast<double>(kept.size()) / s0) * z.dot(sub.lag(z)) / zz;
}

}  // namespace smallarea
