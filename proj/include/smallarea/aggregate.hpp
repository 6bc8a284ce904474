#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "smallarea/derive.hpp"
#include "smallarea/error.hpp"
#include "smallarea/ingest.hpp"
#include "smallarea/spatial.hpp"
#include "smallarea/text.hpp"

namespace smallarea {

/// Linear interpolation between order statistics at h = (n - 1) p + 1
/// (1-based). `sorted` must be ascending and non-empty.
inline double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) return kMissing;
  const double pos = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

/// Quantiles of the non-missing values of `values`.
inline std::vector<double> quantiles(std::span<const double> values, std::span<const double> probs) {
  std::vector<double> v;
  for (double x : values)
    if (!is_missing(x)) v.push_back(x);
  std::sort(v.begin(), v.end());
  std::vector<double> out;
  for (double p : probs) out.push_back(quantile_sorted(v, p));
  return out;
}

inline const std::vector<double>& default_quartile_probs() {
  static const std::vector<double> probs = {0.25, 0.5, 0.75};
  return probs;
}

struct ZoneStat {
  std::size_t n_bg = 0;        // block groups assigned to the zone
  std::size_t n_valid = 0;     // of those, non-missing for this variable
  std::vector<double> values;  // quantiles, parallel to ZoneQuantiles::probs
  double min = kMissing;
  double max = kMissing;
  double zone_aggregate = kMissing;
};

struct ZoneQuantiles {
  std::vector<double> probs;
  std::vector<std::string> zones;      // sorted
  std::vector<std::string> variables;  // table order
  std::map<std::pair<std::string, std::string>, ZoneStat> cells;

  const ZoneStat& at(const std::string& zone, const std::string& variable) const {
    auto it = cells.find({zone, variable});
    if (it == cells.end()) {
      if (!std::binary_search(zones.begin(), zones.end(), zone)) throw Error(ErrorCode::UnknownZone, zone);
      throw Error(ErrorCode::MissingVariable, variable);
    }
    return it->second;
  }

  double quantile(const std::string& zone, const std::string& variable, double p) const {
    auto it = std::find(probs.begin(), probs.end(), p);
    if (it == probs.end()) throw Error(ErrorCode::InvalidArgument, fmt::format("probability {} not computed", p));
    return at(zone, variable).values[static_cast<std::size_t>(it - probs.begin())];
  }

  double q25(const std::string& z, const std::string& v) const { return quantile(z, v, 0.25); }
  double q50(const std::string& z, const std::string& v) const { return quantile(z, v, 0.5); }
  double q75(const std::string& z, const std::string& v) const { return quantile(z, v, 0.75); }
};

namespace detail {

// Sums member counts per zone; a field is missing for the zone when any
// member is missing it.
inline RawAttributeTable zone_totals(const RawAttributeTable& raw, const ZoneAssignment& asg) {
  std::map<std::string, RawRecord> totals;
  for (const auto& zone : asg.zones) {
    RawRecord rec;
    rec.geoid = zone;
    rec.counts.fill(0.0);
    totals.emplace(zone, rec);
  }
  for (const auto& row : raw.rows) {
    auto it = asg.zone_of.find(row.geoid);
    if (it == asg.zone_of.end()) continue;
    auto& t = totals.at(it->second);
    for (std::size_t f = 0; f < kCountFieldCount; ++f) t.counts[f] += row.counts[f];  // NaN propagates
  }
  RawAttributeTable out;
  for (auto& [zone, rec] : totals) out.rows.push_back(rec);
  return out;
}

inline void check_assignment(const ZoneAssignment& asg) {
  for (const auto& [geoid, zone] : asg.zone_of)
    if (!asg.has_zone(zone)) throw Error(ErrorCode::UnknownZone, zone);
}

}  // namespace detail

/// Per-zone quantiles of each variable over the zone's member block groups.
/// When `raw` is given, zone_aggregate holds the percentage recomputed from
/// the zone's summed counts (for the derived percentage variables only).
inline ZoneQuantiles zone_quantiles(const VariableTable& vars, const ZoneAssignment& asg,
                                    std::span<const double> probs = default_quartile_probs(),
                                    const RawAttributeTable* raw = nullptr) {
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!(probs[i] > 0.0 && probs[i] < 1.0))
      throw Error(ErrorCode::InvalidArgument, fmt::format("probability {} outside (0, 1)", probs[i]));
    if (i > 0 && probs[i] <= probs[i - 1]) throw Error(ErrorCode::InvalidArgument, "probabilities must be ascending");
  }
  detail::check_assignment(asg);

  ZoneQuantiles zq;
  zq.probs.assign(probs.begin(), probs.end());
  zq.zones = asg.zones;
  std::sort(zq.zones.begin(), zq.zones.end());
  zq.variables = vars.names();

  std::map<std::string, std::vector<std::size_t>> members;
  for (const auto& zone : zq.zones) members[zone];
  for (std::size_t r = 0; r < vars.rows(); ++r) {
    auto it = asg.zone_of.find(vars.geoids()[r]);
    if (it != asg.zone_of.end()) members[it->second].push_back(r);
  }

  VariableTable aggregates;
  if (raw != nullptr) aggregates = derive_all(detail::zone_totals(*raw, asg));

  for (const auto& zone : zq.zones) {
    const auto& rows = members[zone];
    const std::size_t n_bg = asg.count(zone);
    for (const auto& name : zq.variables) {
      const auto col = vars.column(name);
      std::vector<double> v;
      for (std::size_t r : rows)
        if (!is_missing(col[r])) v.push_back(col[r]);
      std::sort(v.begin(), v.end());
      ZoneStat st;
      st.n_bg = n_bg;
      st.n_valid = v.size();
      for (double p : zq.probs) st.values.push_back(quantile_sorted(v, p));
      if (!v.empty()) {
        st.min = v.front();
        st.max = v.back();
      }
      if (raw != nullptr && aggregates.has(name)) st.zone_aggregate = aggregates.column(name)[aggregates.row_of(zone)];
      zq.cells.emplace(std::make_pair(zone, name), std::move(st));
    }
  }
  return zq;
}

enum class RankDirection { descending, ascending };

struct ZoneRank {
  std::string zone;
  std::size_t rank = 0;  // dense, 1-based
  double median = kMissing;
  bool missing = false;
};

/// Dense ranking of zones by median; ties share a rank, zones with a missing
/// median come last (flagged, with a rank one past the last real one).
inline std::vector<ZoneRank> rank_zones(const ZoneQuantiles& zq, const std::string& variable,
                                        RankDirection direction = RankDirection::descending) {
  if (std::find(zq.variables.begin(), zq.variables.end(), variable) == zq.variables.end())
    throw Error(ErrorCode::MissingVariable, variable);
  std::vector<ZoneRank> out;
  for (const auto& zone : zq.zones) {
    const double m = zq.q50(zone, variable);
    out.push_back({zone, 0, m, is_missing(m)});
  }
  std::stable_sort(out.begin(), out.end(), [&](const ZoneRank& a, const ZoneRank& b) {
    if (a.missing != b.missing) return !a.missing;
    if (a.missing) return false;
    return direction == RankDirection::descending ? a.median > b.median : a.median < b.median;
  });
  std::size_t rank = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i].missing) {
      out[i].rank = rank + 1;
      continue;
    }
    if (i == 0 || out[i].median != out[i - 1].median) ++rank;
    out[i].rank = rank;
  }
  return out;
}

struct ComparisonRow {
  std::string zone;
  std::string variable;
  bool q25_exceeds_ref = false;
  bool median_exceeds_ref = false;
  bool q75_exceeds_ref = false;
  std::size_t rank_by_median = 0;  // descending dense rank
};

struct ReferenceComparison {
  std::string reference_zone;
  std::vector<ComparisonRow> rows;  // zone-major, variables in table order

  const ComparisonRow& at(const std::string& zone, const std::string& variable) const {
    auto it = std::find_if(rows.begin(), rows.end(),
                           [&](const ComparisonRow& r) { return r.zone == zone && r.variable == variable; });
    if (it == rows.end()) throw Error(ErrorCode::UnknownZone, zone);
    return *it;
  }
};

/// Strict > comparison of each zone's quartiles against the reference
/// zone's median.
inline ReferenceComparison compare_to_reference(const ZoneQuantiles& zq, const std::string& ref_zone) {
  if (!std::binary_search(zq.zones.begin(), zq.zones.end(), ref_zone)) throw Error(ErrorCode::UnknownZone, ref_zone);
  ReferenceComparison cmp;
  cmp.reference_zone = ref_zone;
  std::map<std::pair<std::string, std::string>, std::size_t> ranks;
  for (const auto& name : zq.variables) {
    if (is_missing(zq.q50(ref_zone, name)))
      throw Error(ErrorCode::InsufficientData, "reference zone " + ref_zone + " has no median for " + name);
    for (const auto& r : rank_zones(zq, name)) ranks[{r.zone, name}] = r.rank;
  }
  for (const auto& zone : zq.zones)
    for (const auto& name : zq.variables) {
      const double ref = zq.q50(ref_zone, name);
      auto exceeds = [&](double v) { return !is_missing(v) && v > ref; };
      cmp.rows.push_back({zone, name, exceeds(zq.q25(zone, name)), exceeds(zq.q50(zone, name)),
                          exceeds(zq.q75(zone, name)), ranks[{zone, name}]});
    }
  return cmp;
}

struct PopulationRow {
  std::string zone;
  std::size_t n_bg = 0;
  double bg_pop_sum = 0.0;
  double zone_pop = kMissing;
  double pct_of_total = kMissing;
  bool flagged = false;  // zone population zero or unknown
};

/// 100 * (sum of member block-group populations) / zone population.
inline std::vector<PopulationRow> population_consistency(const RawAttributeTable& raw, const ZoneAssignment& asg,
                                                         const std::map<std::string, double>& zone_pops) {
  detail::check_assignment(asg);
  std::map<std::string, PopulationRow> rows;
  for (const auto& zone : asg.zones) rows[zone].zone = zone;
  for (const auto& r : raw.rows) {
    auto it = asg.zone_of.find(r.geoid);
    if (it == asg.zone_of.end()) continue;
    auto& row = rows[it->second];
    ++row.n_bg;
    const double pop = r[CountField::population];
    if (!is_missing(pop)) row.bg_pop_sum += pop;
  }
  std::vector<PopulationRow> out;
  for (auto& [zone, row] : rows) {
    auto it = zone_pops.find(zone);
    if (it != zone_pops.end()) row.zone_pop = it->second;
    if (is_missing(row.zone_pop) || row.zone_pop == 0.0) {
      row.flagged = true;
    } else {
      row.pct_of_total = 100.0 * row.bg_pop_sum / row.zone_pop;
    }
    out.push_back(row);
  }
  return out;
}

/// Two-column "zone,population" table.
inline std::map<std::string, double> parse_zone_populations(std::string_view content, char delimiter = ',') {
  const auto lines = text::data_lines(content);
  std::map<std::string, double> out;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const auto f = text::split_fields(lines[li], delimiter);
    if (f.size() != 2 || f[0].empty()) throw Error(ErrorCode::MalformedInput, "zone population row " + std::to_string(li));
    auto v = text::parse_number(f[1]);
    if (!v) throw Error(ErrorCode::MalformedNumber, "zone population row " + std::to_string(li));
    out[f[0]] = *v;
  }
  return out;
}

// -- reports -----------------------------------------------------------------

/// zone, variable, n_bg, q25, q50, q75, zone_aggregate, rank (descending
/// median), ordered by zone then variable.
inline std::string write_zone_report(const ZoneQuantiles& zq, std::string_view comment = {}, char delimiter = ',') {
  std::string out(comment);
  out += text::join_row({"zone", "variable", "n_bg", "q25", "q50", "q75", "zone_aggregate", "rank"}, delimiter);
  std::map<std::pair<std::string, std::string>, std::size_t> ranks;
  for (const auto& name : zq.variables)
    for (const auto& r : rank_zones(zq, name)) ranks[{r.zone, name}] = r.rank;
  std::vector<std::string> variables = zq.variables;
  std::sort(variables.begin(), variables.end());
  for (const auto& zone : zq.zones)
    for (const auto& name : variables) {
      const auto& st = zq.at(zone, name);
      out += text::join_row({zone, name, std::to_string(st.n_bg), text::format_number(zq.q25(zone, name)),
                             text::format_number(zq.q50(zone, name)), text::format_number(zq.q75(zone, name)),
                             text::format_number(st.zone_aggregate), std::to_string(ranks[{zone, name}])},
                            delimiter);
    }
  return out;
}

inline std::string write_comparison_report(const ReferenceComparison& cmp, std::string_view comment = {},
                                           char delimiter = ',') {
  std::string out(comment);
  out += text::join_row({"zone", "variable", "reference_zone", "q25_exceeds_ref", "median_exceeds_ref",
                         "q75_exceeds_ref", "rank_by_median"},
                        delimiter);
  auto b = [](bool v) { return std::string(v ? "1" : "0"); };
  for (const auto& r : cmp.rows)
    out += text::join_row({r.zone, r.variable, cmp.reference_zone, b(r.q25_exceeds_ref), b(r.median_exceeds_ref),
                           b(r.q75_exceeds_ref), std::to_string(r.rank_by_median)},
                          delimiter);
  return out;
}

/// Percentages rounded to one decimal.
inline std::string write_population_report(const std::vector<PopulationRow>& rows, std::string_view comment = {},
                                           char delimiter = ',') {
  std::string out(comment);
  out += text::join_row({"zone", "n_bg", "zone_pop", "bg_pop", "pct_of_total", "flagged"}, delimiter);
  for (const auto& r : rows)
    out += text::join_row({r.zone, std::to_string(r.n_bg), text::format_number(r.zone_pop),
                           text::format_number(r.bg_pop_sum), text::format_fixed(r.pct_of_total, 1),
                           r.flagged ? "1" : "0"},
                          delimiter);
  return out;
}

}  // namespace smallarea
