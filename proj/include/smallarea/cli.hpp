#pragma once

// Subcommand front end: derive, weights, quantiles, index, transfer,
// regress, simulate. Every command writes its outputs plus a manifest
// (tool version, input and output SHA-256) into the output directory.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <Eigen/Dense>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "smallarea/aggregate.hpp"
#include "smallarea/derive.hpp"
#include "smallarea/econometrics.hpp"
#include "smallarea/error.hpp"
#include "smallarea/ingest.hpp"
#include "smallarea/report.hpp"
#include "smallarea/simulate.hpp"
#include "smallarea/spatial.hpp"
#include "smallarea/stats.hpp"

namespace smallarea::cli {

inline constexpr std::string_view kToolName = "smallarea";
inline constexpr std::string_view kToolVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4 };

/// Configuration or invocation problem (exit code 2).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownZone:
    case ErrorCode::MissingVariable:
    case ErrorCode::InvalidArgument:
      return kUsage;
    case ErrorCode::ConstantSeries:
    case ErrorCode::ZeroVariance:
    case ErrorCode::DegenerateMatrix:
    case ErrorCode::RankDeficient:
    case ErrorCode::NonConvergent:
      return kNumeric;
    default:
      return kData;
  }
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

struct Preset {
  std::string name;
  std::string index_name;
  std::vector<std::string> columns;
};

inline const std::vector<Preset>& presets() {
  static const std::vector<Preset> all = {
      {"index-5", "PC5", {"PERCVAC", "PERCSNAP", "PERCRENT", "PERCBLACK", "PERCPOV"}},
      {"index-6", "PC6", {"PERCVAC", "PERCSNAP", "PERCRENT", "PERCBLACK", "PERCPOV", "PERCMORTG"}},
      {"deprivation-3", "PC4", {"PERCVAC", "PERCUNEMP", "PERCNOHS"}},
  };
  return all;
}

inline const Preset& find_preset(const std::string& name) {
  for (const auto& p : presets())
    if (p.name == name) return p;
  throw UsageError("unknown preset '" + name + "' (expected index-5, index-6 or deprivation-3)");
}

// ---------------------------------------------------------------------------
// Files, hashing, manifest
// ---------------------------------------------------------------------------

inline std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 failed");
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", md[i]);
  return hex;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read input file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Tracks inputs read and outputs written by one command.
class Run {
 public:
  Run(std::string command, std::filesystem::path out_dir) : command_(std::move(command)), out_dir_(std::move(out_dir)) {}

  std::string read(const std::filesystem::path& path) {
    std::string content = read_file(path);
    inputs_.emplace_back(path.generic_string(), sha256_hex(content));
    return content;
  }

  void note(std::string key, nlohmann::ordered_json value) { notes_[std::move(key)] = std::move(value); }

  /// One-line description used as a header comment in reports.
  std::string summary() const {
    std::string s = fmt::format("{} {} {}", kToolName, kToolVersion, command_);
    for (const auto& [path, hash] : inputs_) s += fmt::format(" | {} sha256={}", path, hash);
    return s;
  }
  std::string csv_comment() const { return "# " + summary() + "\n"; }

  nlohmann::ordered_json manifest_json() const {
    nlohmann::ordered_json j;
    j["tool"] = kToolName;
    j["version"] = kToolVersion;
    j["command"] = command_;
    j["inputs"] = nlohmann::ordered_json::array();
    for (const auto& [path, hash] : inputs_) j["inputs"].push_back({{"path", path}, {"sha256", hash}});
    return j;
  }

  void write(const std::string& name, const std::string& content) {
    const auto path = out_dir_ / name;
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw UsageError("cannot write output file: " + path.string());
    out << content;
    outputs_.emplace_back(name, sha256_hex(content));
  }

  void finish() {
    nlohmann::ordered_json j = manifest_json();
    if (!notes_.empty()) j["notes"] = notes_;
    j["outputs"] = nlohmann::ordered_json::array();
    for (const auto& [path, hash] : outputs_) j["outputs"].push_back({{"path", path}, {"sha256", hash}});
    const auto path = out_dir_ / fmt::format("manifest_{}.json", command_);
    std::filesystem::create_directories(out_dir_);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw UsageError("cannot write output file: " + path.string());
    out << j.dump(2) << "\n";
  }

  const std::filesystem::path& out_dir() const { return out_dir_; }

 private:
  std::string command_;
  std::filesystem::path out_dir_;
  std::vector<std::pair<std::string, std::string>> inputs_;
  std::vector<std::pair<std::string, std::string>> outputs_;
  nlohmann::ordered_json notes_ = nlohmann::ordered_json::object();
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Paths in a config file are resolved relative to the file's directory.
/// Command-line flags take precedence over config values.
struct RunConfig {
  std::optional<std::filesystem::path> attributes;
  std::optional<std::filesystem::path> schema;
  nlohmann::json schema_inline;
  std::optional<std::filesystem::path> bg_geometry;
  std::optional<std::filesystem::path> zone_geometry;
  std::optional<std::filesystem::path> zone_populations;
  char delimiter = ',';
  std::string bg_id_property = "GEOID";
  std::string zone_id_property = "ZCTA";
  std::string reference_zone;
  std::vector<double> probs = {0.25, 0.5, 0.75};
  std::string city = "source";
  std::filesystem::path out = "out";
  std::uint64_t seed = 7;
};

inline RunConfig load_config(const std::filesystem::path& path) {
  const std::string content = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(content);
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError("config " + path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw UsageError("config " + path.string() + " must be a JSON object");
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) { return std::filesystem::path(p).is_absolute() ? std::filesystem::path(p) : base / p; };

  RunConfig cfg;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "attributes") cfg.attributes = resolve(value.get<std::string>());
      else if (key == "schema") {
        if (value.is_string()) cfg.schema = resolve(value.get<std::string>());
        else cfg.schema_inline = value;
      } else if (key == "bg_geometry") cfg.bg_geometry = resolve(value.get<std::string>());
      else if (key == "zone_geometry") cfg.zone_geometry = resolve(value.get<std::string>());
      else if (key == "zone_populations") cfg.zone_populations = resolve(value.get<std::string>());
      else if (key == "delimiter") {
        const auto d = value.get<std::string>();
        if (d == "tab" || d == "\t") cfg.delimiter = '\t';
        else if (d.size() == 1) cfg.delimiter = d[0];
        else throw UsageError("delimiter must be a single character or \"tab\"");
      } else if (key == "bg_id_property") cfg.bg_id_property = value.get<std::string>();
      else if (key == "zone_id_property") cfg.zone_id_property = value.get<std::string>();
      else if (key == "reference_zone") cfg.reference_zone = value.get<std::string>();
      else if (key == "probs") cfg.probs = value.get<std::vector<double>>();
      else if (key == "city") cfg.city = value.get<std::string>();
      else if (key == "out") cfg.out = resolve(value.get<std::string>());
      else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
      else throw UsageError("config: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("config " + path.string() + ": " + e.what());
  }
  return cfg;
}

template <typename T>
const T& require(const std::optional<T>& v, std::string_view what) {
  if (!v) throw UsageError(fmt::format("missing required input: {} (set it in the config file)", what));
  return *v;
}

// ---------------------------------------------------------------------------
// Pipeline pieces shared by the commands
// ---------------------------------------------------------------------------

inline AttributeSchema load_schema(Run& run, const RunConfig& cfg) {
  if (cfg.schema) {
    const std::string content = run.read(*cfg.schema);
    try {
      return AttributeSchema::from_json(nlohmann::json::parse(content));
    } catch (const nlohmann::json::parse_error& e) {
      throw UsageError("schema " + cfg.schema->string() + ": " + e.what());
    }
  }
  if (!cfg.schema_inline.is_null()) return AttributeSchema::from_json(cfg.schema_inline);
  return AttributeSchema{};
}

inline RawAttributeTable load_attributes(Run& run, const RunConfig& cfg) {
  const auto& path = require(cfg.attributes, "attributes");
  const std::string content = run.read(path);
  const AttributeSchema schema = load_schema(run, cfg);
  return parse_attribute_table(content, schema, cfg.delimiter);
}

inline GeometrySet load_geometry(Run& run, const std::filesystem::path& path, const std::string& id_property,
                                 GeometryKind kind, Warnings* warnings) {
  return parse_geometries(run.read(path), id_property, kind, warnings);
}

struct LoadedArea {
  RawAttributeTable raw;
  JoinResult joined;
  ZoneAssignment assignment;
};

inline LoadedArea load_area(Run& run, const RunConfig& cfg, Warnings* warnings) {
  LoadedArea a;
  a.raw = load_attributes(run, cfg);
  const auto bg = load_geometry(run, require(cfg.bg_geometry, "bg_geometry"), cfg.bg_id_property,
                                GeometryKind::block_group, warnings);
  const auto zones = load_geometry(run, require(cfg.zone_geometry, "zone_geometry"), cfg.zone_id_property,
                                   GeometryKind::zone, warnings);
  a.joined = join_study_area(a.raw, bg, zones);
  a.assignment = assign_to_zones(a.joined.area);
  return a;
}

/// Raw table restricted to the joined block groups (sorted by geoid).
inline RawAttributeTable joined_table(const StudyArea& area) {
  RawAttributeTable t;
  for (const auto& bg : area.blockgroups) t.rows.push_back(bg.attributes);
  return t;
}

inline std::string join_report_text(const JoinReport& r, const std::string& comment) {
  std::string out = comment + text::join_row({"geoid", "side"}, ',');
  for (const auto& id : r.rows_without_geometry) out += text::join_row({id, "attributes_only"}, ',');
  for (const auto& id : r.geometries_without_row) out += text::join_row({id, "geometry_only"}, ',');
  return out;
}

/// "path" or "path:column"; the default column is the first non-geoid one.
inline IndexSeries load_series(Run& run, const std::string& arg) {
  std::string path = arg, column;
  const auto colon = arg.rfind(':');
  if (colon != std::string::npos && colon > 1) {
    path = arg.substr(0, colon);
    column = arg.substr(colon + 1);
  }
  const VariableTable t = parse_variable_table(run.read(path));
  if (column.empty()) {
    if (t.names().empty()) throw UsageError("series file " + path + " has no value column");
    column = t.names().front();
  }
  if (!t.has(column)) throw Error(ErrorCode::MissingVariable, column + " in " + path);
  return IndexSeries::from_table(t, column);
}

struct LoadedWeights {
  WeightsMatrix w;
  std::vector<std::string> ids;  // empty when no sidecar exists
};

inline LoadedWeights load_weights(Run& run, const std::filesystem::path& path) {
  LoadedWeights lw;
  lw.w = parse_weights(run.read(path));
  auto ids_path = path;
  ids_path += ".ids";
  if (std::filesystem::exists(ids_path)) {
    const std::string content = run.read(ids_path);
    for (auto line : text::data_lines(content)) lw.ids.emplace_back(text::trim(line));
    if (lw.ids.size() != lw.w.size())
      throw Error(ErrorCode::DimensionMismatch, "weights id list length differs from the matrix size");
  }
  return lw;
}

inline std::string ids_text(const std::vector<std::string>& ids) {
  std::string out;
  for (const auto& id : ids) out += id + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

struct Options {
  std::string config;
  std::string out;
  std::string preset;
  std::string reference_zone;
  std::string model;
  std::string weights;
  std::string breaks_from;
  std::string coefficients;
  std::string target;
  std::string dependent;
  std::string independent;
  std::string assignment;
  std::optional<std::uint64_t> seed;
  bool binary = false;
  std::size_t rows = 20;
  std::size_t cols = 20;
  double rho = 0.5;
  double alpha = 0.0;
  double beta = 1.0;
  double sigma = 0.1;
};

inline RunConfig effective_config(const Options& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_config(o.config);
  if (!o.out.empty()) cfg.out = o.out;
  if (!o.reference_zone.empty()) cfg.reference_zone = o.reference_zone;
  if (o.seed) cfg.seed = *o.seed;
  return cfg;
}

inline void cmd_derive(const Options& o, std::ostream& log) {
  const RunConfig cfg = effective_config(o);
  Run run("derive", cfg.out);
  const RawAttributeTable raw = load_attributes(run, cfg);
  const VariableTable vars = derive_all(raw);
  run.write("variables.csv", write_variable_table(vars, ',', run.csv_comment()));
  nlohmann::ordered_json missing = nlohmann::ordered_json::object();
  for (const auto& name : vars.names()) missing[name] = vars.missing_count(name);
  run.note("columns", vars.names());
  run.note("rows", vars.rows());
  run.note("missing_cells", missing);
  run.finish();
  log << fmt::format("derived {} variables for {} block groups\n", vars.cols(), vars.rows());
}

inline void cmd_weights(const Options& o, std::ostream& log) {
  const RunConfig cfg = effective_config(o);
  Run run("weights", cfg.out);
  Warnings warnings;
  const auto geoms = load_geometry(run, require(cfg.bg_geometry, "bg_geometry"), cfg.bg_id_property,
                                   GeometryKind::block_group, &warnings);
  GeometrySet sorted = geoms;
  std::sort(sorted.features.begin(), sorted.features.end(), [](const Feature& a, const Feature& b) { return a.id < b.id; });
  const AdjacencyList adj = queen_contiguity(sorted, {}, &warnings);
  const WeightsMatrix w = o.binary ? binary_weights(adj) : row_standardize(adj);
  run.write("weights.txt", write_weights(w));
  run.write("weights.txt.ids", ids_text(adj.ids));
  std::vector<std::string> islands;
  for (std::size_t i : adj.islands()) islands.push_back(adj.ids[i]);
  run.note("n", adj.size());
  run.note("row_standardized", w.row_standardized);
  run.note("islands", islands);
  run.note("warnings", warnings);
  run.finish();
  log << fmt::format("weights: {} block groups, {} links, {} islands\n", adj.size(), w.nonzeros(), islands.size());
}

inline void cmd_quantiles(const Options& o, std::ostream& log) {
  const RunConfig cfg = effective_config(o);
  if (cfg.reference_zone.empty()) throw UsageError("a reference zone is required (--reference-zone)");
  Run run("quantiles", cfg.out);
  Warnings warnings;
  const LoadedArea area = load_area(run, cfg, &warnings);
  if (!area.assignment.has_zone(cfg.reference_zone))
    throw UsageError("reference zone '" + cfg.reference_zone + "' is not in the zone geometry");

  const RawAttributeTable raw = joined_table(area.joined.area);
  const VariableTable vars = derive_all(raw);
  const ZoneQuantiles zq = zone_quantiles(vars, area.assignment, cfg.probs, &raw);
  const std::string comment = run.csv_comment();
  run.write("zone_quantiles.csv", write_zone_report(zq, comment));
  run.write("assignment.csv", comment + write_assignment(area.assignment));
  run.write("join_report.csv", join_report_text(area.joined.report, comment));
  if (std::find(zq.probs.begin(), zq.probs.end(), 0.5) != zq.probs.end()) {
    run.write("comparison.csv", write_comparison_report(compare_to_reference(zq, cfg.reference_zone), comment));
    for (const auto& name : vars.names())
      run.write("panels/" + name + ".svg", render_quantile_panel(zq, name, cfg.reference_zone, run.summary()));
  }
  if (cfg.zone_populations) {
    const auto pops = parse_zone_populations(run.read(*cfg.zone_populations));
    run.write("population.csv", write_population_report(population_consistency(raw, area.assignment, pops), comment));
  }
  run.note("unassigned", area.assignment.unassigned);
  run.note("warnings", warnings);
  run.finish();
  log << fmt::format("quantiles: {} zones x {} variables\n", zq.zones.size(), zq.variables.size());
}

inline void cmd_index(const Options& o, std::ostream& log) {
  if (o.preset.empty()) throw UsageError("--preset is required (index-5, index-6 or deprivation-3)");
  const Preset& preset = find_preset(o.preset);
  const RunConfig cfg = effective_config(o);
  Run run("index-" + preset.name, cfg.out);
  Warnings warnings;

  std::optional<LoadedArea> area;
  RawAttributeTable raw;
  if (cfg.bg_geometry && cfg.zone_geometry) {
    area = load_area(run, cfg, &warnings);
    raw = joined_table(area->joined.area);
  } else {
    raw = load_attributes(run, cfg);
  }
  const VariableTable vars = derive_all(raw);
  const std::string comment = run.csv_comment();
  const std::string stem = preset.name;

  const Standardized z = standardize(vars, preset.columns);
  const PCAResult pc = pca(z);
  const IndexSeries scores = score_index(z, pc, 1, preset.index_name);
  const TransferCoefficients coef = fit_transfer(scores, vars, preset.columns);

  run.write(stem + "_spearman.csv", write_correlation_report(spearman_matrix(vars, preset.columns), comment));
  run.write(stem + "_loadings.csv", write_loadings_report(pc, comment));
  run.write(stem + "_eigenvalues.csv", write_eigenvalue_report(pc, comment));
  run.write(stem + "_scores.csv", write_variable_table(scores.to_table(), ',', comment));
  run.write(stem + "_transfer.json", transfer_to_json(coef));

  // Map breaks come from the reference zone's block groups when zones are
  // available, else from every scored block group.
  std::vector<double> break_source;
  if (area && !cfg.reference_zone.empty()) {
    if (!area->assignment.has_zone(cfg.reference_zone))
      throw UsageError("reference zone '" + cfg.reference_zone + "' is not in the zone geometry");
    for (std::size_t i = 0; i < scores.size(); ++i) {
      auto it = area->assignment.zone_of.find(scores.geoids[i]);
      if (it != area->assignment.zone_of.end() && it->second == cfg.reference_zone) break_source.push_back(scores.scores[i]);
    }
  } else {
    break_source = scores.scores;
  }
  const auto& probs = default_break_probs();
  BreakSet breaks{cfg.city, probs, quantile_breaks(break_source, probs, &warnings)};
  run.write(stem + "_breaks.json", breaks_to_json(breaks));
  const ClassifiedSeries classified = classify(scores.geoids, scores.scores, breaks.breaks, cfg.city);
  run.write(stem + "_classified.csv", write_classified(classified, preset.index_name, comment));

  if (area) {
    GeometrySet bg;
    bg.kind = GeometryKind::block_group;
    for (const auto& b : area->joined.area.blockgroups) bg.features.push_back(b.geometry);
    run.write(stem + "_map.geojson", export_geojson(classified, bg, {}, nlohmann::ordered_json(run.manifest_json())));
    const ZoneQuantiles zq = zone_quantiles(scores.to_table(), area->assignment, cfg.probs);
    if (!cfg.reference_zone.empty() && std::find(zq.probs.begin(), zq.probs.end(), 0.5) != zq.probs.end())
      run.write(stem + "_panel.svg", render_quantile_panel(zq, preset.index_name, cfg.reference_zone, run.summary()));
    run.write(stem + "_zone_quantiles.csv", write_zone_report(zq, comment));
  }

  nlohmann::ordered_json ev = nlohmann::ordered_json::array();
  for (Eigen::Index k = 0; k < pc.eigenvalues.size(); ++k) ev.push_back(pc.eigenvalues[k]);
  run.note("eigenvalues", ev);
  run.note("retained_components", pc.retained_count());
  run.note("fit_rows", z.fit_rows.size());
  run.note("excluded_rows", z.excluded_rows.size());
  run.note("warnings", warnings);
  run.finish();
  log << fmt::format("{}: {} components retained, first eigenvalue {:.3f}\n", preset.name, pc.retained_count(),
                     pc.eigenvalues[0]);
}

inline void cmd_transfer(const Options& o, std::ostream& log) {
  if (o.coefficients.empty()) throw UsageError("--coefficients is required");
  if (o.target.empty()) throw UsageError("--target is required");
  const RunConfig cfg = effective_config(o);
  Run run("transfer", cfg.out);
  const TransferCoefficients coef = transfer_from_json(run.read(o.coefficients));
  const VariableTable target = parse_variable_table(run.read(o.target));
  const IndexSeries scores = apply_transfer(coef, target, "score");

  Warnings warnings;
  BreakSet breaks;
  if (!o.breaks_from.empty()) {
    breaks = breaks_from_json(run.read(o.breaks_from));
  } else {
    breaks = {"target", default_break_probs(), quantile_breaks(scores.scores, default_break_probs(), &warnings)};
  }
  const ClassifiedSeries classified = classify(scores.geoids, scores.scores, breaks.breaks, breaks.source_city);
  run.write("transfer_scores.csv", write_classified(classified, "score", run.csv_comment()));
  run.note("breaks_from", breaks.source_city);
  run.note("breaks", breaks.breaks);
  run.note("warnings", warnings);
  run.finish();
  log << fmt::format("transfer: scored {} block groups (breaks from {})\n", scores.size(), breaks.source_city);
}

inline void cmd_regress(const Options& o, std::ostream& log) {
  if (o.model != "ols" && o.model != "spatial") throw UsageError("--model must be 'ols' or 'spatial'");
  if (o.dependent.empty() || o.independent.empty()) throw UsageError("--dependent and --independent are required");
  if (o.model == "spatial" && o.weights.empty()) throw UsageError("--model spatial requires --weights");
  const RunConfig cfg = effective_config(o);
  Run run("regress-" + o.model, cfg.out);

  const IndexSeries dep = load_series(run, o.dependent);
  const IndexSeries indep = load_series(run, o.independent);
  std::optional<LoadedWeights> lw;
  if (!o.weights.empty()) lw = load_weights(run, o.weights);

  // Observation order follows the weights ids when present, else the
  // dependent series sorted by geoid.
  std::vector<std::string> geoids;
  if (lw && !lw->ids.empty()) {
    geoids = lw->ids;
  } else {
    geoids = dep.geoids;
    std::sort(geoids.begin(), geoids.end());
    if (lw && geoids.size() != lw->w.size())
      throw Error(ErrorCode::DimensionMismatch, "series length differs from the weights matrix size");
  }
  std::unordered_map<std::string, double> ymap, xmap;
  for (std::size_t i = 0; i < dep.size(); ++i) ymap[dep.geoids[i]] = dep.scores[i];
  for (std::size_t i = 0; i < indep.size(); ++i) xmap[indep.geoids[i]] = indep.scores[i];
  const auto n = static_cast<Eigen::Index>(geoids.size());
  Eigen::VectorXd y(n);
  Eigen::MatrixXd x(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& g = geoids[static_cast<std::size_t>(i)];
    y[i] = ymap.count(g) ? ymap[g] : kMissing;
    x(i, 0) = xmap.count(g) ? xmap[g] : kMissing;
  }

  const std::vector<std::string> names = {"intercept", indep.name};
  Warnings warnings;
  Eigen::VectorXd residuals;
  nlohmann::ordered_json report;
  if (o.model == "ols") {
    const OLSFit fit = ols(y, x);
    residuals = fit.residuals;
    report = nlohmann::ordered_json::parse(fit_to_json(fit, names));
  } else {
    const SpatialLagFit fit = spatial_lag_ml(y, x, lw->w, {}, &warnings);
    residuals = fit.residuals;
    report = nlohmann::ordered_json::parse(fit_to_json(fit, names));
  }
  std::vector<double> ys(y.data(), y.data() + n), xs(x.data(), x.data() + n);
  report["spearman_y_x"] = spearman(ys, xs);
  if (lw) {
    std::vector<double> rs(residuals.data(), residuals.data() + n);
    try {
      report["residual_morans_i"] = morans_i(rs, lw->w);
    } catch (const Error&) {
      report["residual_morans_i"] = nullptr;
    }
  }
  report["manifest"] = run.manifest_json();
  run.write("fit_" + o.model + ".json", report.dump(2) + "\n");
  run.write("residuals_" + o.model + ".csv", write_residuals(geoids, residuals, run.csv_comment()));

  ZoneAssignment asg;
  if (!o.assignment.empty()) {
    asg = parse_assignment(run.read(o.assignment));
  } else {
    asg.zones = {"all"};
    for (const auto& g : geoids) asg.zone_of[g] = "all";
  }
  std::vector<double> rs(residuals.data(), residuals.data() + n);
  const ResidualSummary groups = group_residuals(geoids, rs, asg);
  const std::string title = o.model == "ols" ? "OLS residuals by zone" : "Spatial lag residuals by zone";
  run.write("residuals_" + o.model + ".svg", render_residual_panel(groups, title, run.summary()));
  run.note("warnings", warnings);
  run.finish();
  log << fmt::format("regress ({}): slope {:.4f}\n", o.model, report["coefficients"][indep.name].get<double>());
}

inline void cmd_simulate(const Options& o, std::ostream& log) {
  const RunConfig cfg = effective_config(o);
  if (o.rows == 0 || o.cols == 0) throw UsageError("--rows and --cols must be positive");
  Run run("simulate", cfg.out);
  const AdjacencyList adj = lattice_adjacency(o.rows, o.cols, LatticeContiguity::queen);
  const WeightsMatrix w = row_standardize(adj);
  const SimulatedSample s = simulate_spatial_lag(w, {o.rho, o.alpha, o.beta, o.sigma}, cfg.seed);

  VariableTable t(adj.ids);
  t.add_column("y", std::vector<double>(s.y.data(), s.y.data() + s.y.size()));
  t.add_column("x", std::vector<double>(s.x.data(), s.x.data() + s.x.size()));
  run.write("sim_data.csv", write_variable_table(t, ',', run.csv_comment()));
  run.write("sim_weights.txt", write_weights(w));
  run.write("sim_weights.txt.ids", ids_text(adj.ids));
  run.write("sim_lattice.geojson", write_geometries(lattice_geometry(o.rows, o.cols), "GEOID"));
  run.note("rows", o.rows);
  run.note("cols", o.cols);
  run.note("rho", o.rho);
  run.note("alpha", o.alpha);
  run.note("beta", o.beta);
  run.note("sigma", o.sigma);
  run.note("seed", cfg.seed);
  run.finish();
  log << fmt::format("simulated {} observations (rho = {})\n", adj.size(), o.rho);
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

/// Parses `args` (without the program name) and runs one subcommand.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Small-area socioeconomic indicators, indices and spatial regressions", std::string(kToolName)};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON run configuration");
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--seed", o.seed, "random seed");
  };

  auto* derive = app.add_subcommand("derive", "derive percentage variables from ACS counts");
  common(derive);
  auto* weights = app.add_subcommand("weights", "build Queen contiguity weights from block-group polygons");
  common(weights);
  weights->add_flag("--binary", o.binary, "write binary instead of row-standardized weights");
  auto* quant = app.add_subcommand("quantiles", "per-zone quantiles, rankings and distribution panels");
  common(quant);
  quant->add_option("--reference-zone", o.reference_zone, "zone used as the comparison reference");
  auto* index = app.add_subcommand("index", "principal-component index and transfer coefficients");
  common(index);
  index->add_option("--preset", o.preset, "index-5 | index-6 | deprivation-3");
  index->add_option("--reference-zone", o.reference_zone, "zone whose block groups define map breaks");
  auto* transfer = app.add_subcommand("transfer", "score another city with fitted transfer coefficients");
  common(transfer);
  transfer->add_option("--coefficients", o.coefficients, "transfer coefficient JSON");
  transfer->add_option("--target", o.target, "target variable table (geoid + percentage columns)");
  transfer->add_option("--breaks-from", o.breaks_from, "breaks JSON written by the index command");
  auto* regress = app.add_subcommand("regress", "OLS or spatial lag regression of one index on another");
  common(regress);
  regress->add_option("--model", o.model, "ols | spatial")->required();
  regress->add_option("--dependent", o.dependent, "series file[:column]");
  regress->add_option("--independent", o.independent, "series file[:column]");
  regress->add_option("--weights", o.weights, "weights triplet file");
  regress->add_option("--assignment", o.assignment, "geoid,zone file for residual grouping");
  regress->add_option("--reference-zone", o.reference_zone, "unused; accepted for config symmetry");
  auto* simulate = app.add_subcommand("simulate", "synthetic spatial lag data on a Queen lattice");
  common(simulate);
  simulate->add_option("--rows", o.rows, "lattice rows");
  simulate->add_option("--cols", o.cols, "lattice columns");
  simulate->add_option("--rho", o.rho, "spatial autoregressive parameter");
  simulate->add_option("--alpha", o.alpha, "intercept");
  simulate->add_option("--beta", o.beta, "slope");
  simulate->add_option("--sigma", o.sigma, "innovation standard deviation");

  std::vector<std::string> argv_store = {std::string(kToolName)};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (derive->parsed()) cmd_derive(o, out);
    else if (weights->parsed()) cmd_weights(o, out);
    else if (quant->parsed()) cmd_quantiles(o, out);
    else if (index->parsed()) cmd_index(o, out);
    else if (transfer->parsed()) cmd_transfer(o, out);
    else if (regress->parsed()) cmd_regress(o, out);
    else if (simulate->parsed()) cmd_simulate(o, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kOk;
}

}  // namespace smallarea::cli
