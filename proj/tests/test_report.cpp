#include <numeric>
#include <random>
#include <regex>

#include <gtest/gtest.h>

#include "smallarea/ingest.hpp"
#include "smallarea/report.hpp"
#include "support/oracles.hpp"

using namespace smallarea;

namespace {

std::size_t count_of(const std::string& haystack, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = haystack.find(needle); pos != std::string::npos; pos = haystack.find(needle, pos + 1)) ++n;
  return n;
}

ZoneQuantiles two_zones() {
  VariableTable t({"a1", "a2", "a3", "b1", "b2"});
  t.add_column("V", {10, 20, 30, 5, 15});
  ZoneAssignment asg;
  asg.zones = {"A", "B"};
  asg.zone_of = {{"a1", "A"}, {"a2", "A"}, {"a3", "A"}, {"b1", "B"}, {"b2", "B"}};
  return zone_quantiles(t, asg);
}

}  // namespace

TEST(QuantileBreaks, Examples) {
  std::vector<double> hundred(100);
  std::iota(hundred.begin(), hundred.end(), 1.0);
  const std::vector<double> quartiles = {0.25, 0.75};
  EXPECT_EQ(quantile_breaks(hundred, quartiles), (std::vector<double>{25.75, 75.25}));
  const std::vector<double> half = {0.5};
  EXPECT_EQ(quantile_breaks(std::vector<double>{1, 2, 3}, half), std::vector<double>{2.0});

  Warnings w;
  const auto collapsed = quantile_breaks(std::vector<double>(10, 4.0), default_break_probs(), &w);
  EXPECT_EQ(collapsed, std::vector<double>{4.0});
  EXPECT_EQ(w.size(), 1u);
}

TEST(Classify, LeftClosedRule) {
  const auto c = classify({"a", "b", "c", "d", "e"}, std::vector<double>{0.5, 1.0, 1.5, 9.0, kMissing}, {1.0, 2.0});
  EXPECT_EQ(c.class_index, (std::vector<int>{0, 0, 1, 2, -1}));
  EXPECT_THROW(classify({"a"}, std::vector<double>{1.0}, {2.0, 1.0}), Error);
}

TEST(Classify, ProportionsFollowBreaks) {
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> u(0, 1000);
  for (int k = 0; k < 20; ++k) {
    const std::size_t n = 50 + static_cast<std::size_t>(k) * 37;
    std::vector<double> v(n);
    std::vector<std::string> g(n);
    for (std::size_t i = 0; i < n; ++i) {
      v[i] = u(rng);
      g[i] = std::to_string(i);
    }
    const auto& probs = default_break_probs();
    const auto c = classify(g, v, quantile_breaks(v, probs));
    std::vector<std::size_t> counts(probs.size() + 1, 0);
    for (int cls : c.class_index) ++counts[static_cast<std::size_t>(cls)];
    std::size_t cum = 0;
    for (std::size_t j = 0; j < probs.size(); ++j) {
      cum += counts[j];
      EXPECT_LE(std::abs(static_cast<double>(cum) - probs[j] * static_cast<double>(n)), 1.0) << n << " " << j;
    }
  }
}

TEST(Breaks, JsonRoundTrip) {
  const BreakSet b{"Milwaukee", {0.1, 0.25}, {-0.5, 0.125}};
  const auto back = breaks_from_json(breaks_to_json(b));
  EXPECT_EQ(back.source_city, b.source_city);
  EXPECT_EQ(back.breaks, b.breaks);
  EXPECT_EQ(back.probs, b.probs);
}

TEST(ExportGeoJSON, ClassAndNullProperties) {
  GeometrySet g{GeometryKind::block_group, {oracle::rectangle("a", 0, 0, 1, 1), oracle::rectangle("b", 1, 0, 2, 1)}};
  const auto c = classify({"a", "b"}, std::vector<double>{5.0, 0.0}, {1.0, 2.0}, "src");
  ASSERT_EQ(c.class_index[0], 2);
  const auto out = nlohmann::json::parse(export_geojson(c, g, {{"extra", {1.5, kMissing}}}));
  EXPECT_EQ(out["features"][0]["properties"]["class"], 2);
  EXPECT_EQ(out["features"][0]["properties"]["breaks_from"], "src");
  EXPECT_TRUE(out["features"][1]["properties"]["extra"].is_null());
  EXPECT_EQ(out["features"][0]["properties"]["extra"], 1.5);
}

TEST(ExportGeoJSON, LosslessRoundTrip) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-180, 180);
  GeometrySet g;
  std::vector<std::string> ids;
  std::vector<double> values;
  for (int i = 0; i < 20; ++i) {
    const double x = u(rng), y = u(rng) / 2;
    g.features.push_back(oracle::rectangle(fmt::format("f{}", i), x, y, x + 0.1234567891234, y + 1e-7));
    ids.push_back(g.features.back().id);
    values.push_back(u(rng));
  }
  const auto c = classify(ids, values, quantile_breaks(values));
  const std::string json = export_geojson(c, g);
  const auto back = parse_geometries(json, "geoid", GeometryKind::block_group);
  const auto props = nlohmann::json::parse(json);
  ASSERT_EQ(back.size(), g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto& a = g.features[i].parts[0].rings[0];
    const auto& b = back.features[i].parts[0].rings[0];
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
      EXPECT_EQ(a[k].x, b[k].x);
      EXPECT_EQ(a[k].y, b[k].y);
    }
    EXPECT_EQ(props["features"][i]["properties"]["class"].get<int>(), c.class_index[i]);
    EXPECT_EQ(props["features"][i]["properties"]["value"].get<double>(), values[i]);
  }
}

TEST(ExportGeoJSON, MissingGeometry) {
  const auto c = classify({"zz"}, std::vector<double>{1.0}, {});
  EXPECT_THROW(export_geojson(c, GeometrySet{}), Error);
}

TEST(QuantilePanel, MarkerCountAndDeterminism) {
  const auto zq = two_zones();
  const auto svg = render_quantile_panel(zq, "V", "A", "test");
  EXPECT_EQ(count_of(svg, "class=\"q\""), 2u * 3u);
  EXPECT_EQ(count_of(svg, "class=\"ref\""), 1u);
  EXPECT_EQ(svg, render_quantile_panel(zq, "V", "A", "test"));
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
}

TEST(QuantilePanel, ReferenceLineAtReferenceMedian) {
  const auto zq = two_zones();
  const auto scale = quantile_panel_scale(zq, "V");
  const auto svg = render_quantile_panel(zq, "V", "A");
  const std::string x = svg::num(scale.x(20.0));
  EXPECT_NE(svg.find("class=\"ref\" x1=\"" + x + "\""), std::string::npos) << svg;
}

TEST(ResidualPanel, ZeroResidualsAndSingleZone) {
  ZoneAssignment asg;
  asg.zones = {"A"};
  asg.zone_of = {{"a", "A"}, {"b", "A"}};
  const auto zero = group_residuals({"a", "b"}, std::vector<double>{0, 0}, asg);
  const auto svg = render_residual_panel(zero);
  EXPECT_EQ(count_of(svg, "class=\"band\""), 2u);
  EXPECT_EQ(count_of(svg, "class=\"zone-mean\""), 1u);
  // both band lines and the zero line share one y coordinate
  std::regex y_attr(R"re(class="(?:band|zero)"[^>]*y1="([0-9.\-]+)")re");
  std::set<std::string> ys;
  for (std::sregex_iterator it(svg.begin(), svg.end(), y_attr), end; it != end; ++it) ys.insert((*it)[1]);
  EXPECT_EQ(ys.size(), 1u) << svg;
  // single zone centred horizontally: cx = 60 + 560 / 2
  EXPECT_NE(svg.find("cx=\"340.00\""), std::string::npos) << svg;
}
