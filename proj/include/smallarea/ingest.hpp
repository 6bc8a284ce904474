#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "smallarea/error.hpp"
#include "smallarea/geometry.hpp"
#include "smallarea/text.hpp"

namespace smallarea {

// ---------------------------------------------------------------------------
// Attribute table
// ---------------------------------------------------------------------------

enum class CountField : std::size_t {
  population,
  households,
  households_poverty,
  households_snap,
  pop_white,
  pop_black,
  housing_units,
  vacant_units,
  renter_units,
  owner_units,
  mortgaged_units,
  units_pre1939,
  pop_25plus,
  pop_25plus_no_hs,
  civilian_labor_force,
  unemployed,
};

inline constexpr std::size_t kCountFieldCount = 16;

inline constexpr std::array<std::string_view, kCountFieldCount> kCountFieldNames = {
    "population",     "households",      "households_poverty", "households_snap",
    "pop_white",      "pop_black",       "housing_units",      "vacant_units",
    "renter_units",   "owner_units",     "mortgaged_units",    "units_pre1939",
    "pop_25plus",     "pop_25plus_no_hs", "civilian_labor_force", "unemployed",
};

inline constexpr std::string_view field_name(CountField f) {
  return kCountFieldNames[static_cast<std::size_t>(f)];
}

/// One block group's raw ACS counts. Missing cells are NaN.
struct RawRecord {
  std::string geoid;
  std::array<double, kCountFieldCount> counts{};

  double operator[](CountField f) const { return counts[static_cast<std::size_t>(f)]; }
  double& operator[](CountField f) { return counts[static_cast<std::size_t>(f)]; }
};

struct RawAttributeTable {
  std::vector<RawRecord> rows;

  std::size_t size() const { return rows.size(); }

  std::size_t missing_cells() const {
    std::size_t n = 0;
    for (const auto& r : rows)
      for (double v : r.counts) n += is_missing(v) ? 1 : 0;
    return n;
  }

  const RawRecord* find(const std::string& geoid) const {
    auto it = std::find_if(rows.begin(), rows.end(), [&](const RawRecord& r) { return r.geoid == geoid; });
    return it == rows.end() ? nullptr : &*it;
  }
};

/// Maps each logical field ("geoid", "population", ...) to the column header
/// used in the input file. Unmapped fields default to their logical name.
class AttributeSchema {
 public:
  AttributeSchema() = default;

  static AttributeSchema from_json(const nlohmann::json& j) {
    AttributeSchema schema;
    if (!j.is_object()) throw Error(ErrorCode::MalformedInput, "schema must be a JSON object");
    for (const auto& [logical, column] : j.items()) {
      if (!is_known_field(logical))
        throw Error(ErrorCode::MalformedInput, "unknown schema field '" + logical + "'");
      if (!column.is_string())
        throw Error(ErrorCode::MalformedInput, "schema column for '" + logical + "' must be a string");
      schema.columns_[logical] = column.get<std::string>();
    }
    return schema;
  }

  void set(const std::string& logical, std::string column) { columns_[logical] = std::move(column); }

  std::string column_for(std::string_view logical) const {
    auto it = columns_.find(std::string(logical));
    return it == columns_.end() ? std::string(logical) : it->second;
  }

 private:
  static bool is_known_field(const std::string& name) {
    if (name == "geoid") return true;
    return std::find(kCountFieldNames.begin(), kCountFieldNames.end(), name) != kCountFieldNames.end();
  }

  std::map<std::string, std::string> columns_;
};

namespace detail {

struct PartWhole {
  CountField part;
  CountField whole;
};

inline constexpr std::array<PartWhole, 11> kPartWhole = {{
    {CountField::households_poverty, CountField::households},
    {CountField::households_snap, CountField::households},
    {CountField::pop_white, CountField::population},
    {CountField::pop_black, CountField::population},
    {CountField::vacant_units, CountField::housing_units},
    {CountField::renter_units, CountField::housing_units},
    {CountField::owner_units, CountField::housing_units},
    {CountField::mortgaged_units, CountField::owner_units},
    {CountField::units_pre1939, CountField::housing_units},
    {CountField::pop_25plus_no_hs, CountField::pop_25plus},
    {CountField::unemployed, CountField::civilian_labor_force},
}};

inline void check_counts(const RawRecord& r) {
  auto fail = [&](std::string what) {
    throw Error(ErrorCode::InconsistentCounts, "geoid " + r.geoid + ": " + what);
  };
  for (const auto& pw : kPartWhole) {
    const double part = r[pw.part];
    const double whole = r[pw.whole];
    if (!is_missing(part) && !is_missing(whole) && part > whole)
      fail(std::string(field_name(pw.part)) + " exceeds " + std::string(field_name(pw.whole)));
  }
  const double white = r[CountField::pop_white], black = r[CountField::pop_black];
  const double pop = r[CountField::population];
  if (!is_missing(white) && !is_missing(black) && !is_missing(pop) && white + black > pop)
    fail("pop_white + pop_black exceeds population");
  const double renters = r[CountField::renter_units], owners = r[CountField::owner_units];
  const double units = r[CountField::housing_units];
  if (!is_missing(renters) && !is_missing(owners) && !is_missing(units) && renters + owners > units)
    fail("renter_units + owner_units exceeds housing_units");
}

}  // namespace detail

/// Parses delimited ACS attribute text. Blank cells and negative values
/// (ACS annotation sentinels such as -666666666) become missing. Rows are
/// never dropped: any structural problem raises.
inline RawAttributeTable parse_attribute_table(std::string_view content, const AttributeSchema& schema,
                                               char delimiter = ',') {
  const auto lines = text::data_lines(content);
  if (lines.empty()) throw Error(ErrorCode::MalformedInput, "attribute table has no header row");

  const auto header = text::split_fields(lines.front(), delimiter);
  auto locate = [&](std::string_view logical) -> std::size_t {
    const std::string column = schema.column_for(logical);
    auto it = std::find(header.begin(), header.end(), column);
    if (it == header.end()) throw Error(ErrorCode::MissingColumn, column);
    return static_cast<std::size_t>(it - header.begin());
  };

  const std::size_t geoid_col = locate("geoid");
  std::array<std::size_t, kCountFieldCount> cols{};
  for (std::size_t f = 0; f < kCountFieldCount; ++f) cols[f] = locate(kCountFieldNames[f]);

  RawAttributeTable table;
  std::set<std::string> seen;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const auto fields = text::split_fields(lines[li], delimiter);
    if (fields.size() != header.size())
      throw Error(ErrorCode::MalformedInput, "row " + std::to_string(li) + " has " +
                                                 std::to_string(fields.size()) + " fields, header has " +
                                                 std::to_string(header.size()));
    RawRecord rec;
    rec.geoid = fields[geoid_col];
    if (rec.geoid.empty()) throw Error(ErrorCode::EmptyGeoid, "row " + std::to_string(li));
    if (!seen.insert(rec.geoid).second) throw Error(ErrorCode::DuplicateGeoid, rec.geoid);
    for (std::size_t f = 0; f < kCountFieldCount; ++f) {
      auto value = text::parse_number(fields[cols[f]]);
      if (!value)
        throw Error(ErrorCode::MalformedNumber, "row " + std::to_string(li) + ", column " + header[cols[f]]);
      rec.counts[f] = (!is_missing(*value) && *value < 0.0) ? kMissing : *value;
    }
    detail::check_counts(rec);
    table.rows.push_back(std::move(rec));
  }
  return table;
}

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

namespace detail {

inline Ring parse_ring(const nlohmann::json& coords, const std::string& id, Warnings* warnings) {
  if (!coords.is_array()) throw Error(ErrorCode::NotAPolygon, id);
  Ring ring;
  ring.reserve(coords.size() + 1);
  for (const auto& c : coords) {
    if (!c.is_array() || c.size() < 2 || !c[0].is_number() || !c[1].is_number())
      throw Error(ErrorCode::MalformedInput, "bad coordinate in feature " + id);
    ring.push_back({c[0].get<double>(), c[1].get<double>()});
  }
  if (!ring.empty() && !(ring.front() == ring.back())) {
    ring.push_back(ring.front());
    warn(warnings, "UnclosedRingRepaired: " + id);
  }
  if (ring.size() < 4) throw Error(ErrorCode::DegenerateRing, id);
  return ring;
}

inline Polygon parse_polygon(const nlohmann::json& rings, const std::string& id, Warnings* warnings) {
  if (!rings.is_array() || rings.empty()) throw Error(ErrorCode::NotAPolygon, id);
  Polygon poly;
  for (const auto& r : rings) poly.rings.push_back(parse_ring(r, id, warnings));
  return poly;
}

inline std::string id_to_string(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
  return {};
}

}  // namespace detail

/// Reads a GeoJSON FeatureCollection of Polygon / MultiPolygon features.
/// Open rings are closed (with a warning); rings that still have fewer than
/// four vertices are rejected.
inline GeometrySet parse_geometries(std::string_view content, const std::string& id_property,
                                    GeometryKind kind, Warnings* warnings = nullptr) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(content);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::MalformedInput, std::string("GeoJSON: ") + e.what());
  }
  if (!doc.is_object() || doc.value("type", "") != "FeatureCollection" || !doc.contains("features") ||
      !doc["features"].is_array())
    throw Error(ErrorCode::MalformedInput, "expected a GeoJSON FeatureCollection");

  GeometrySet set;
  set.kind = kind;
  std::set<std::string> seen;
  const auto& features = doc["features"];
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto& feat = features[i];
    std::string id;
    if (feat.contains("properties") && feat["properties"].is_object() &&
        feat["properties"].contains(id_property))
      id = detail::id_to_string(feat["properties"][id_property]);
    if (id.empty()) throw Error(ErrorCode::MissingIdProperty, "feature index " + std::to_string(i));
    if (!seen.insert(id).second) throw Error(ErrorCode::DuplicateId, id);

    if (!feat.contains("geometry") || !feat["geometry"].is_object()) throw Error(ErrorCode::NotAPolygon, id);
    const auto& geom = feat["geometry"];
    const std::string type = geom.value("type", "");
    Feature out{id, {}};
    if (type == "Polygon") {
      out.parts.push_back(detail::parse_polygon(geom["coordinates"], id, warnings));
    } else if (type == "MultiPolygon") {
      if (!geom["coordinates"].is_array() || geom["coordinates"].empty()) throw Error(ErrorCode::NotAPolygon, id);
      for (const auto& p : geom["coordinates"]) out.parts.push_back(detail::parse_polygon(p, id, warnings));
    } else {
      throw Error(ErrorCode::NotAPolygon, id);
    }
    set.features.push_back(std::move(out));
  }
  return set;
}

inline nlohmann::json geometry_to_json(const MultiPolygon& mp) {
  auto ring_json = [](const Ring& ring) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : ring) arr.push_back({p.x, p.y});
    return arr;
  };
  auto poly_json = [&](const Polygon& poly) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : poly.rings) arr.push_back(ring_json(r));
    return arr;
  };
  if (mp.size() == 1) return {{"type", "Polygon"}, {"coordinates", poly_json(mp.front())}};
  nlohmann::json parts = nlohmann::json::array();
  for (const auto& poly : mp) parts.push_back(poly_json(poly));
  return {{"type", "MultiPolygon"}, {"coordinates", parts}};
}

inline std::string write_geometries(const GeometrySet& set, const std::string& id_property) {
  nlohmann::json fc = {{"type", "FeatureCollection"}, {"features", nlohmann::json::array()}};
  for (const auto& f : set.features) {
    fc["features"].push_back({{"type", "Feature"},
                              {"properties", {{id_property, f.id}}},
                              {"geometry", geometry_to_json(f.parts)}});
  }
  return fc.dump() + "\n";
}

// ---------------------------------------------------------------------------
// Join
// ---------------------------------------------------------------------------

struct BlockGroup {
  RawRecord attributes;
  Feature geometry;

  const std::string& geoid() const { return attributes.geoid; }
};

/// Block groups sorted by geoid, plus the zone layer.
struct StudyArea {
  std::vector<BlockGroup> blockgroups;
  GeometrySet zones;
};

struct JoinReport {
  std::vector<std::string> rows_without_geometry;
  std::vector<std::string> geometries_without_row;

  bool empty() const { return rows_without_geometry.empty() && geometries_without_row.empty(); }
};

struct JoinResult {
  StudyArea area;
  JoinReport report;
};

inline JoinResult join_study_area(const RawAttributeTable& table, const GeometrySet& bg_geoms,
                                  const GeometrySet& zones) {
  if (bg_geoms.kind != GeometryKind::block_group)
    throw Error(ErrorCode::InvalidArgument, "block-group geometry set has the wrong kind");
  if (zones.kind != GeometryKind::zone) throw Error(ErrorCode::InvalidArgument, "zone geometry set has the wrong kind");

  std::unordered_map<std::string, const Feature*> by_id;
  for (const auto& f : bg_geoms.features) by_id.emplace(f.id, &f);

  JoinResult result;
  std::set<std::string> matched;
  for (const auto& row : table.rows) {
    auto it = by_id.find(row.geoid);
    if (it == by_id.end()) {
      result.report.rows_without_geometry.push_back(row.geoid);
      continue;
    }
    result.area.blockgroups.push_back({row, *it->second});
    matched.insert(row.geoid);
  }
  for (const auto& f : bg_geoms.features)
    if (!matched.count(f.id)) result.report.geometries_without_row.push_back(f.id);

  if (result.area.blockgroups.empty())
    throw Error(ErrorCode::EmptyJoin, "no geoid is shared by the attribute table and the geometry");

  std::sort(result.area.blockgroups.begin(), result.area.blockgroups.end(),
            [](const BlockGroup& a, const BlockGroup& b) { return a.geoid() < b.geoid(); });
  std::sort(result.report.rows_without_geometry.begin(), result.report.rows_without_geometry.end());
  std::sort(result.report.geometries_without_row.begin(), result.report.geometries_without_row.end());

  result.area.zones = zones;
  std::sort(result.area.zones.features.begin(), result.area.zones.features.end(),
            [](const Feature& a, const Feature& b) { return a.id < b.id; });
  return result;
}

}  // namespace smallarea
