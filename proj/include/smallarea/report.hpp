#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "smallarea/aggregate.hpp"
#include "smallarea/econometrics.hpp"
#include "smallarea/error.hpp"
#include "smallarea/geometry.hpp"
#include "smallarea/ingest.hpp"

namespace smallarea {

// ---------------------------------------------------------------------------
// Classification
// ---------------------------------------------------------------------------

inline const std::vector<double>& default_break_probs() {
  static const std::vector<double> probs = {0.10, 0.25, 0.50, 0.75};
  return probs;
}

/// Map breaks at the given quantiles (same interpolation as zone
/// quantiles). Tied breaks are collapsed with a warning.
inline std::vector<double> quantile_breaks(std::span<const double> values,
                                           std::span<const double> probs = default_break_probs(),
                                           Warnings* warnings = nullptr) {
  std::vector<double> v;
  for (double x : values)
    if (!is_missing(x)) v.push_back(x);
  if (v.size() < 2) throw Error(ErrorCode::InsufficientData, "quantile breaks need at least 2 values");
  std::sort(v.begin(), v.end());
  std::vector<double> breaks;
  for (double p : probs) breaks.push_back(quantile_sorted(v, p));
  const auto before = breaks.size();
  breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());
  if (breaks.size() != before)
    warn(warnings, fmt::format("collapsed {} tied break(s)", before - breaks.size()));
  return breaks;
}

struct ClassifiedSeries {
  std::vector<std::string> geoids;
  std::vector<double> values;
  std::vector<int> class_index;  // 0..breaks.size(); -1 for missing values
  std::vector<double> breaks;
  std::string source_city;       // where the breaks came from
};

/// Class = number of breaks strictly below the value, so a value equal to a
/// break falls in the lower class.
inline ClassifiedSeries classify(const std::vector<std::string>& geoids, std::span<const double> values,
                                 std::vector<double> breaks, std::string source_city = {}) {
  if (geoids.size() != values.size()) throw Error(ErrorCode::DimensionMismatch, "geoids and values differ");
  for (std::size_t i = 1; i < breaks.size(); ++i)
    if (!(breaks[i] > breaks[i - 1])) throw Error(ErrorCode::InvalidArgument, "breaks must be strictly ascending");
  ClassifiedSeries out{geoids, std::vector<double>(values.begin(), values.end()), {}, std::move(breaks),
                       std::move(source_city)};
  for (double v : values) {
    if (is_missing(v)) {
      out.class_index.push_back(-1);
    } else {
      out.class_index.push_back(
          static_cast<int>(std::lower_bound(out.breaks.begin(), out.breaks.end(), v) - out.breaks.begin()));
    }
  }
  return out;
}

struct BreakSet {
  std::string source_city;
  std::vector<double> probs;
  std::vector<double> breaks;
};

inline std::string breaks_to_json(const BreakSet& b) {
  nlohmann::ordered_json j;
  j["source_city"] = b.source_city;
  j["probs"] = b.probs;
  j["breaks"] = b.breaks;
  return j.dump(2) + "\n";
}

inline BreakSet breaks_from_json(std::string_view content) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(content);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::MalformedInput, std::string("breaks: ") + e.what());
  }
  if (!j.is_object() || !j.contains("breaks") || !j["breaks"].is_array())
    throw Error(ErrorCode::MalformedInput, "breaks file needs a 'breaks' array");
  BreakSet b;
  b.source_city = j.value("source_city", "");
  b.breaks = j["breaks"].get<std::vector<double>>();
  if (j.contains("probs")) b.probs = j["probs"].get<std::vector<double>>();
  return b;
}

inline std::string write_classified(const ClassifiedSeries& c, std::string_view value_name = "value",
                                    std::string_view comment = {}, char delimiter = ',') {
  std::string out(comment);
  out += text::join_row({"geoid", std::string(value_name), "class", "breaks_from"}, delimiter);
  for (std::size_t i = 0; i < c.geoids.size(); ++i)
    out += text::join_row({c.geoids[i], text::format_number(c.values[i]), std::to_string(c.class_index[i]),
                           c.source_city},
                          delimiter);
  return out;
}

struct NamedSeries {
  std::string name;
  std::vector<double> values;  // aligned with the classified geoids
};

/// FeatureCollection with properties {geoid, value, class, breaks_from,
/// extras...}; missing numbers are written as null.
inline std::string export_geojson(const ClassifiedSeries& classified, const GeometrySet& geoms,
                                  const std::vector<NamedSeries>& extra = {},
                                  const nlohmann::ordered_json& manifest = nullptr) {
  for (const auto& e : extra)
    if (e.values.size() != classified.geoids.size())
      throw Error(ErrorCode::DimensionMismatch, "extra series " + e.name + " is not aligned");
  std::unordered_map<std::string, const Feature*> by_id;
  for (const auto& f : geoms.features) by_id.emplace(f.id, &f);

  auto number = [](double v) { return is_missing(v) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(v); };
  nlohmann::ordered_json fc;
  fc["type"] = "FeatureCollection";
  if (!manifest.is_null()) fc["manifest"] = manifest;
  fc["features"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < classified.geoids.size(); ++i) {
    auto it = by_id.find(classified.geoids[i]);
    if (it == by_id.end()) throw Error(ErrorCode::MissingGeometry, classified.geoids[i]);
    nlohmann::ordered_json props;
    props["geoid"] = classified.geoids[i];
    props["value"] = number(classified.values[i]);
    props["class"] = classified.class_index[i];
    props["breaks_from"] = classified.source_city;
    for (const auto& e : extra) props[e.name] = number(e.values[i]);
    nlohmann::ordered_json feat;
    feat["type"] = "Feature";
    feat["properties"] = props;
    feat["geometry"] = nlohmann::ordered_json::parse(geometry_to_json(it->second->parts).dump());
    fc["features"].push_back(std::move(feat));
  }
  return fc.dump() + "\n";
}

// ---------------------------------------------------------------------------
// SVG panels
// ---------------------------------------------------------------------------

namespace svg {

inline std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

inline std::string num(double v) { return text::format_fixed(v, 2); }

inline std::string open(double width, double height, std::string_view comment) {
  std::string out = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out += fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n",
      num(width), num(height), num(width), num(height));
  if (!comment.empty()) {
    std::string c(comment);
    for (std::size_t pos = c.find("--"); pos != std::string::npos; pos = c.find("--")) c.replace(pos, 2, "- -");
    out += "<!-- " + c + " -->\n";
  }
  out += "<rect x=\"0\" y=\"0\" width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  return out;
}

}  // namespace svg

/// Horizontal value axis shared by the quantile panel and its tests.
struct PanelScale {
  double domain_min = 0.0;
  double domain_max = 1.0;
  double left = 90.0;
  double width = 520.0;

  double x(double v) const { return left + (v - domain_min) / (domain_max - domain_min) * width; }
};

/// Axis runs from min(0, smallest value) to the largest value drawn.
inline PanelScale quantile_panel_scale(const ZoneQuantiles& zq, const std::string& variable) {
  double lo = 0.0, hi = -std::numeric_limits<double>::infinity();
  for (const auto& zone : zq.zones) {
    const auto& st = zq.at(zone, variable);
    for (double v : st.values)
      if (!is_missing(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    if (!is_missing(st.zone_aggregate)) {
      lo = std::min(lo, st.zone_aggregate);
      hi = std::max(hi, st.zone_aggregate);
    }
  }
  if (!(hi > lo)) hi = lo + 1.0;
  return PanelScale{lo, hi};
}

/// One row per zone (highest median first): squares at q25 / median / q75,
/// an asterisk at the zone aggregate and a vertical line at the reference
/// zone's median.
inline std::string render_quantile_panel(const ZoneQuantiles& zq, const std::string& variable,
                                         const std::string& ref_zone, std::string_view comment = {}) {
  const PanelScale scale = quantile_panel_scale(zq, variable);
  const auto order = rank_zones(zq, variable, RankDirection::descending);
  constexpr double top = 40.0, row_h = 18.0, marker = 7.0;
  const double height = top + row_h * static_cast<double>(order.size()) + 40.0;
  const double width = scale.left + scale.width + 30.0;

  std::string out = svg::open(width, height, comment);
  out += fmt::format("<text class=\"title\" x=\"{}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n",
                     svg::num(scale.left), svg::escape(variable));
  const double axis_y = top + row_h * static_cast<double>(order.size()) + 5.0;
  out += fmt::format("<line class=\"axis\" x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n",
                     svg::num(scale.left), svg::num(axis_y), svg::num(scale.left + scale.width));
  out += fmt::format(
      "<text class=\"tick\" x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{}</text>\n",
      svg::num(scale.left), svg::num(axis_y + 15.0), svg::num(scale.domain_min));
  out += fmt::format(
      "<text class=\"tick\" x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{}</text>\n",
      svg::num(scale.left + scale.width), svg::num(axis_y + 15.0), svg::num(scale.domain_max));

  for (std::size_t r = 0; r < order.size(); ++r) {
    const auto& zone = order[r].zone;
    const auto& st = zq.at(zone, variable);
    const double cy = top + row_h * (static_cast<double>(r) + 0.5);
    out += fmt::format(
        "<text class=\"zone\" x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>\n",
        svg::num(scale.left - 8.0), svg::num(cy + 4.0), svg::escape(zone));
    const double q25 = zq.q25(zone, variable), q75 = zq.q75(zone, variable);
    if (!is_missing(q25) && !is_missing(q75))
      out += fmt::format("<line class=\"iqr\" x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"gray\"/>\n",
                         svg::num(scale.x(q25)), svg::num(cy), svg::num(scale.x(q75)));
    for (double p : {0.25, 0.5, 0.75}) {
      const double v = zq.quantile(zone, variable, p);
      if (is_missing(v)) continue;
      out += fmt::format(
          "<rect class=\"q\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
          svg::num(scale.x(v) - marker / 2.0), svg::num(cy - marker / 2.0), svg::num(marker), svg::num(marker));
    }
    if (!is_missing(st.zone_aggregate))
      out += fmt::format(
          "<text class=\"agg\" x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">*</text>\n",
          svg::num(scale.x(st.zone_aggregate)), svg::num(cy + 5.0));
  }

  const double ref = zq.q50(ref_zone, variable);
  if (!is_missing(ref))
    out += fmt::format("<line class=\"ref\" x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"red\"/>\n",
                       svg::num(scale.x(ref)), svg::num(top), svg::num(axis_y));
  out += "</svg>\n";
  return out;
}

/// Zone residual means in id order with horizontal lines at the global
/// mean +/- 2 standard deviations.
inline std::string render_residual_panel(const ResidualSummary& groups, std::string_view title = "Residuals",
                                         std::string_view comment = {}) {
  constexpr double left = 60.0, top = 40.0, plot_w = 560.0, plot_h = 300.0;
  double lo = std::min(groups.band_lo, 0.0), hi = std::max(groups.band_hi, 0.0);
  for (const auto& z : groups.zones) {
    lo = std::min(lo, z.mean);
    hi = std::max(hi, z.mean);
  }
  if (!(hi > lo)) {
    lo -= 1.0;
    hi += 1.0;
  }
  auto y_of = [&](double v) { return top + (hi - v) / (hi - lo) * plot_h; };
  const double nz = static_cast<double>(std::max<std::size_t>(groups.zones.size(), 1));

  std::string out = svg::open(left + plot_w + 20.0, top + plot_h + 60.0, comment);
  out += fmt::format("<text class=\"title\" x=\"{}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n",
                     svg::num(left), svg::escape(title));
  out += fmt::format("<line class=\"zero\" x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"gray\"/>\n",
                     svg::num(left), svg::num(y_of(0.0)), svg::num(left + plot_w));
  for (double band : {groups.band_lo, groups.band_hi})
    out += fmt::format(
        "<line class=\"band\" x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\" stroke-dasharray=\"4 3\"/>\n",
        svg::num(left), svg::num(y_of(band)), svg::num(left + plot_w));
  for (std::size_t i = 0; i < groups.zones.size(); ++i) {
    const auto& z = groups.zones[i];
    const double cx = left + (static_cast<double>(i) + 0.5) * plot_w / nz;
    out += fmt::format("<circle class=\"zone-mean\" cx=\"{}\" cy=\"{}\" r=\"4\" fill=\"black\"/>\n", svg::num(cx),
                       svg::num(y_of(z.mean)));
    out += fmt::format(
        "<text class=\"zone\" x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"9\" text-anchor=\"end\" "
        "transform=\"rotate(-90 {} {})\">{}</text>\n",
        svg::num(cx + 3.0), svg::num(top + plot_h + 8.0), svg::num(cx + 3.0), svg::num(top + plot_h + 8.0),
        svg::escape(z.zone));
  }
  out += "</svg>\n";
  return out;
}

}  // namespace smallarea
