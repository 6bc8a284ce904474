#pragma once

// Synthetic city: a rows x cols grid of unit-square block groups, square
// zones of zone_size x zone_size cells, and ACS-style counts driven by a
// spatially smoothed hardship factor.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace fixture {

struct CityOptions {
  std::size_t rows = 12;
  std::size_t cols = 12;
  std::size_t zone_size = 4;
  std::uint64_t seed = 1;
  std::string prefix = "55079";
  std::size_t zone_base = 53201;
  bool acs_headers = true;  // census-style column names mapped by a schema
};

struct CityFiles {
  std::string attributes;
  std::string schema;
  std::string bg_geojson;
  std::string zone_geojson;
  std::string zone_pops;
};

inline const std::vector<std::pair<std::string, std::string>>& acs_columns() {
  static const std::vector<std::pair<std::string, std::string>> cols = {
      {"geoid", "GEOID"},
      {"population", "B01003_001E"},
      {"households", "B17017_001E"},
      {"households_poverty", "B17017_002E"},
      {"households_snap", "B22010_002E"},
      {"pop_white", "B02001_002E"},
      {"pop_black", "B02001_003E"},
      {"housing_units", "B25002_001E"},
      {"vacant_units", "B25002_003E"},
      {"renter_units", "B25003_003E"},
      {"owner_units", "B25003_002E"},
      {"mortgaged_units", "B25081_002E"},
      {"units_pre1939", "B25034_011E"},
      {"pop_25plus", "B15003_001E"},
      {"pop_25plus_no_hs", "B15003_NOHS"},
      {"civilian_labor_force", "B23025_003E"},
      {"unemployed", "B23025_005E"},
  };
  return cols;
}

inline std::string bg_geoid(const CityOptions& o, std::size_t r, std::size_t c) {
  return fmt::format("{}{:07}", o.prefix, r * o.cols + c);
}

inline std::string zone_id(const CityOptions& o, std::size_t zr, std::size_t zc) {
  const std::size_t zcols = (o.cols + o.zone_size - 1) / o.zone_size;
  return fmt::format("{}", o.zone_base + zr * zcols + zc);
}

inline nlohmann::json square(double x0, double y0, double x1, double y1) {
  return nlohmann::json::array({nlohmann::json::array({{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}, {x0, y0}})});
}

inline CityFiles make_city(const CityOptions& o) {
  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const std::size_t n = o.rows * o.cols;

  // Hardship factor: gradient plus smoothed noise.
  std::vector<double> noise(n);
  for (auto& v : noise) v = unif(rng) - 0.5;
  std::vector<double> factor(n);
  for (std::size_t r = 0; r < o.rows; ++r)
    for (std::size_t c = 0; c < o.cols; ++c) {
      double s = 0.0;
      int k = 0;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const long rr = static_cast<long>(r) + dr, cc = static_cast<long>(c) + dc;
          if (rr < 0 || cc < 0 || rr >= static_cast<long>(o.rows) || cc >= static_cast<long>(o.cols)) continue;
          s += noise[static_cast<std::size_t>(rr) * o.cols + static_cast<std::size_t>(cc)];
          ++k;
        }
      const double gradient = 1.0 - static_cast<double>(r + c) / static_cast<double>(o.rows + o.cols - 2);
      factor[r * o.cols + c] = 2.0 * gradient - 1.0 + 1.5 * s / k;
    }

  auto share = [&](double base, double slope, double f) {
    const double z = base + slope * f + 0.4 * (unif(rng) - 0.5);
    return 1.0 / (1.0 + std::exp(-z));
  };
  auto take = [](double whole, double p) { return std::round(whole * p); };

  std::vector<std::string> header;
  for (const auto& [logical, column] : acs_columns()) header.push_back(o.acs_headers ? column : logical);
  std::string csv;
  for (std::size_t i = 0; i < header.size(); ++i) csv += (i ? "," : "") + header[i];
  csv += "\n";

  nlohmann::json bg = {{"type", "FeatureCollection"}, {"features", nlohmann::json::array()}};
  std::vector<double> population(n);
  for (std::size_t r = 0; r < o.rows; ++r)
    for (std::size_t c = 0; c < o.cols; ++c) {
      const std::size_t i = r * o.cols + c;
      const double f = factor[i];
      const double pop = 600.0 + std::round(900.0 * unif(rng));
      const double hh = std::round(pop / (2.2 + 0.6 * unif(rng)));
      const double hu = std::round(hh / (1.0 - 0.3 * share(-1.5, 1.2, f)));
      const double renters = take(hh, share(0.0, 1.0, f));
      const double owners = hh - renters;
      const double black = take(pop, share(-0.5, 2.0, f));
      const double white = take(pop - black, share(0.5, 0.5, -f));
      const double p25 = std::round(pop * (0.55 + 0.1 * unif(rng)));
      const double lf = std::round(pop * (0.45 + 0.1 * unif(rng)));
      const std::vector<double> counts = {
          pop,
          hh,
          take(hh, share(-1.2, 1.0, f)),
          take(hh, share(-1.0, 1.1, f)),
          white,
          black,
          hu,
          hu - hh,
          renters,
          owners,
          take(owners, share(0.5, -0.8, f)),
          take(hu, share(-1.0, 0.6, f)),
          p25,
          take(p25, share(-1.8, 0.9, f)),
          lf,
          take(lf, share(-2.3, 0.9, f)),
      };
      population[i] = pop;
      std::string line = bg_geoid(o, r, c);
      for (double v : counts) line += fmt::format(",{}", v);
      csv += line + "\n";

      const double x = static_cast<double>(c), y = static_cast<double>(r);
      bg["features"].push_back({{"type", "Feature"},
                                {"properties", {{"GEOID", bg_geoid(o, r, c)}}},
                                {"geometry", {{"type", "Polygon"}, {"coordinates", square(x, y, x + 1, y + 1)}}}});
    }

  nlohmann::json zones = {{"type", "FeatureCollection"}, {"features", nlohmann::json::array()}};
  std::string pops = "zone,population\n";
  const std::size_t zrows = (o.rows + o.zone_size - 1) / o.zone_size;
  const std::size_t zcols = (o.cols + o.zone_size - 1) / o.zone_size;
  for (std::size_t zr = 0; zr < zrows; ++zr)
    for (std::size_t zc = 0; zc < zcols; ++zc) {
      const double x0 = static_cast<double>(zc * o.zone_size), y0 = static_cast<double>(zr * o.zone_size);
      const double x1 = static_cast<double>(std::min(o.cols, (zc + 1) * o.zone_size));
      const double y1 = static_cast<double>(std::min(o.rows, (zr + 1) * o.zone_size));
      zones["features"].push_back({{"type", "Feature"},
                                   {"properties", {{"ZCTA", zone_id(o, zr, zc)}}},
                                   {"geometry", {{"type", "Polygon"}, {"coordinates", square(x0, y0, x1, y1)}}}});
      double sum = 0.0;
      for (std::size_t r = zr * o.zone_size; r < std::min(o.rows, (zr + 1) * o.zone_size); ++r)
        for (std::size_t c = zc * o.zone_size; c < std::min(o.cols, (zc + 1) * o.zone_size); ++c)
          sum += population[r * o.cols + c];
      pops += fmt::format("{},{}\n", zone_id(o, zr, zc), std::round(sum * (0.8 + 0.4 * unif(rng))));
    }

  nlohmann::json schema = nlohmann::json::object();
  if (o.acs_headers)
    for (const auto& [logical, column] : acs_columns()) schema[logical] = column;

  return {csv, schema.dump(2) + "\n", bg.dump() + "\n", zones.dump() + "\n", pops};
}

inline void write_text(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << content;
}

/// Writes the city files plus config.json into `dir`; returns the config path.
inline std::filesystem::path write_city(const std::filesystem::path& dir, const CityOptions& o,
                                        const std::string& reference_zone = "53206") {
  const CityFiles f = make_city(o);
  write_text(dir / "attributes.csv", f.attributes);
  write_text(dir / "schema.json", f.schema);
  write_text(dir / "blockgroups.geojson", f.bg_geojson);
  write_text(dir / "zones.geojson", f.zone_geojson);
  write_text(dir / "zone_populations.csv", f.zone_pops);
  nlohmann::json cfg = {{"attributes", "attributes.csv"},
                        {"schema", "schema.json"},
                        {"bg_geometry", "blockgroups.geojson"},
                        {"bg_id_property", "GEOID"},
                        {"zone_geometry", "zones.geojson"},
                        {"zone_id_property", "ZCTA"},
                        {"zone_populations", "zone_populations.csv"},
                        {"reference_zone", reference_zone},
                        {"city", "fixture-city"},
                        {"out", "out"}};
  write_text(dir / "config.json", cfg.dump(2) + "\n");
  return dir / "config.json";
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("smallarea_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace fixture
