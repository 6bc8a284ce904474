#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "smallarea/error.hpp"
#include "smallarea/ingest.hpp"
#include "smallarea/text.hpp"

namespace smallarea {

namespace var {
inline constexpr std::string_view pov = "PERCPOV";
inline constexpr std::string_view snap = "PERCSNAP";
inline constexpr std::string_view white = "PERCWHITE";
inline constexpr std::string_view black = "PERCBLACK";
inline constexpr std::string_view vac = "PERCVAC";
inline constexpr std::string_view rent = "PERCRENT";
inline constexpr std::string_view mortg = "PERCMORTG";
inline constexpr std::string_view pre1939 = "PERC1939";
inline constexpr std::string_view unemp = "PERCUNEMP";
inline constexpr std::string_view nohs = "PERCNOHS";
}  // namespace var

/// Column order produced by derive_variables.
inline const std::vector<std::string>& socioeconomic_variables() {
  static const std::vector<std::string> names = {
      std::string(var::pov),  std::string(var::snap), std::string(var::white),  std::string(var::black),
      std::string(var::vac),  std::string(var::rent), std::string(var::mortg), std::string(var::pre1939)};
  return names;
}

/// Column order produced by derive_deprivation_inputs.
inline const std::vector<std::string>& deprivation_variables() {
  static const std::vector<std::string> names = {std::string(var::vac), std::string(var::unemp),
                                                 std::string(var::nohs)};
  return names;
}

/// Named real-valued columns keyed by geoid. Missing cells are NaN.
class VariableTable {
 public:
  VariableTable() = default;
  explicit VariableTable(std::vector<std::string> geoids) : geoids_(std::move(geoids)) {}

  const std::vector<std::string>& geoids() const { return geoids_; }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t rows() const { return geoids_.size(); }
  std::size_t cols() const { return names_.size(); }

  bool has(std::string_view name) const { return index_of(name) < names_.size(); }

  std::span<const double> column(std::string_view name) const {
    const std::size_t i = index_of(name);
    if (i >= names_.size()) throw Error(ErrorCode::MissingVariable, std::string(name));
    return columns_[i];
  }

  void add_column(std::string name, std::vector<double> values) {
    if (values.size() != geoids_.size())
      throw Error(ErrorCode::DimensionMismatch, "column " + name + " length differs from row count");
    if (has(name)) throw Error(ErrorCode::InvalidArgument, "duplicate column " + name);
    names_.push_back(std::move(name));
    columns_.push_back(std::move(values));
  }

  std::size_t missing_count(std::string_view name) const {
    auto col = column(name);
    return static_cast<std::size_t>(std::count_if(col.begin(), col.end(), is_missing));
  }

  /// Row index for a geoid, or rows() when absent.
  std::size_t row_of(const std::string& geoid) const {
    auto it = std::find(geoids_.begin(), geoids_.end(), geoid);
    return static_cast<std::size_t>(it - geoids_.begin());
  }

  /// New table holding only the named columns, in the given order.
  VariableTable select(const std::vector<std::string>& names) const {
    VariableTable out(geoids_);
    for (const auto& n : names) {
      auto col = column(n);
      out.add_column(n, std::vector<double>(col.begin(), col.end()));
    }
    return out;
  }

  /// Appends the columns of `other` (same geoid order required).
  void merge(const VariableTable& other) {
    if (other.geoids_ != geoids_) throw Error(ErrorCode::DimensionMismatch, "geoid order differs");
    for (std::size_t i = 0; i < other.names_.size(); ++i) {
      if (!has(other.names_[i])) add_column(other.names_[i], other.columns_[i]);
    }
  }

 private:
  std::size_t index_of(std::string_view name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    return static_cast<std::size_t>(it - names_.begin());
  }

  std::vector<std::string> geoids_;
  std::vector<std::string> names_;
  std::vector<std::vector<double>> columns_;
};

/// 100 * numerator / denominator; missing when either input is missing or the
/// denominator is zero.
inline double percent(double numerator, double denominator) {
  if (is_missing(numerator) || is_missing(denominator) || denominator == 0.0) return kMissing;
  return 100.0 * numerator / denominator;
}

namespace detail {

inline double occupied_units(const RawRecord& r) {
  const double renters = r[CountField::renter_units];
  const double owners = r[CountField::owner_units];
  if (is_missing(renters) || is_missing(owners)) return kMissing;
  return renters + owners;
}

inline double vacancy_rate(const RawRecord& r) {
  return percent(r[CountField::vacant_units], r[CountField::housing_units]);
}

inline std::vector<std::string> geoids_of(const RawAttributeTable& t) {
  std::vector<std::string> ids;
  ids.reserve(t.rows.size());
  for (const auto& r : t.rows) ids.push_back(r.geoid);
  return ids;
}

}  // namespace detail

/// The eight socioeconomic percentages. Tenure shares use occupied units
/// (renter + owner) as denominator; the pre-1939 share uses housing units.
inline VariableTable derive_variables(const RawAttributeTable& table) {
  const std::size_t n = table.rows.size();
  std::vector<double> pov(n), snap(n), white(n), black(n), vac(n), rent(n), mortg(n), old(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = table.rows[i];
    pov[i] = percent(r[CountField::households_poverty], r[CountField::households]);
    snap[i] = percent(r[CountField::households_snap], r[CountField::households]);
    white[i] = percent(r[CountField::pop_white], r[CountField::population]);
    black[i] = percent(r[CountField::pop_black], r[CountField::population]);
    vac[i] = detail::vacancy_rate(r);
    rent[i] = percent(r[CountField::renter_units], detail::occupied_units(r));
    mortg[i] = percent(r[CountField::mortgaged_units], detail::occupied_units(r));
    old[i] = percent(r[CountField::units_pre1939], r[CountField::housing_units]);
  }
  VariableTable out(detail::geoids_of(table));
  out.add_column(std::string(var::pov), std::move(pov));
  out.add_column(std::string(var::snap), std::move(snap));
  out.add_column(std::string(var::white), std::move(white));
  out.add_column(std::string(var::black), std::move(black));
  out.add_column(std::string(var::vac), std::move(vac));
  out.add_column(std::string(var::rent), std::move(rent));
  out.add_column(std::string(var::mortg), std::move(mortg));
  out.add_column(std::string(var::pre1939), std::move(old));
  return out;
}

inline VariableTable derive_deprivation_inputs(const RawAttributeTable& table) {
  const std::size_t n = table.rows.size();
  std::vector<double> vac(n), unemp(n), nohs(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = table.rows[i];
    vac[i] = detail::vacancy_rate(r);
    unemp[i] = percent(r[CountField::unemployed], r[CountField::civilian_labor_force]);
    nohs[i] = percent(r[CountField::pop_25plus_no_hs], r[CountField::pop_25plus]);
  }
  VariableTable out(detail::geoids_of(table));
  out.add_column(std::string(var::vac), std::move(vac));
  out.add_column(std::string(var::unemp), std::move(unemp));
  out.add_column(std::string(var::nohs), std::move(nohs));
  return out;
}

/// All ten columns: the eight socioeconomic variables followed by
/// PERCUNEMP and PERCNOHS.
inline VariableTable derive_all(const RawAttributeTable& table) {
  VariableTable out = derive_variables(table);
  out.merge(derive_deprivation_inputs(table));
  return out;
}

// -- delimited text I/O ------------------------------------------------------

inline std::string write_variable_table(const VariableTable& table, char delimiter = ',',
                                        std::string_view comment = {}) {
  std::string out(comment);
  std::vector<std::string> header = {"geoid"};
  header.insert(header.end(), table.names().begin(), table.names().end());
  out += text::join_row(header, delimiter);
  for (std::size_t i = 0; i < table.rows(); ++i) {
    std::vector<std::string> row = {table.geoids()[i]};
    for (const auto& name : table.names()) row.push_back(text::format_number(table.column(name)[i]));
    out += text::join_row(row, delimiter);
  }
  return out;
}

/// Reads a table written by write_variable_table (first column must be
/// `geoid`; '#' lines are skipped).
inline VariableTable parse_variable_table(std::string_view content, char delimiter = ',') {
  const auto lines = text::data_lines(content);
  if (lines.empty()) throw Error(ErrorCode::MalformedInput, "variable table has no header row");
  const auto header = text::split_fields(lines.front(), delimiter);
  if (header.empty() || header.front() != "geoid") throw Error(ErrorCode::MissingColumn, "geoid");

  std::vector<std::string> geoids;
  std::vector<std::vector<double>> cols(header.size() - 1);
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const auto fields = text::split_fields(lines[li], delimiter);
    if (fields.size() != header.size())
      throw Error(ErrorCode::MalformedInput, "row " + std::to_string(li) + " has the wrong field count");
    if (fields[0].empty()) throw Error(ErrorCode::EmptyGeoid, "row " + std::to_string(li));
    if (std::find(geoids.begin(), geoids.end(), fields[0]) != geoids.end())
      throw Error(ErrorCode::DuplicateGeoid, fields[0]);
    geoids.push_back(fields[0]);
    for (std::size_t c = 1; c < fields.size(); ++c) {
      auto v = text::parse_number(fields[c]);
      if (!v) throw Error(ErrorCode::MalformedNumber, "row " + std::to_string(li) + ", column " + header[c]);
      cols[c - 1].push_back(*v);
    }
  }
  VariableTable table(std::move(geoids));
  for (std::size_t c = 1; c < header.size(); ++c) table.add_column(header[c], std::move(cols[c - 1]));
  return table;
}

}  // namespace smallarea
