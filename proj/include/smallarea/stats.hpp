#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "smallarea/derive.hpp"
#include "smallarea/error.hpp"
#include "smallarea/linalg.hpp"
#include "smallarea/text.hpp"

namespace smallarea {

// ---------------------------------------------------------------------------
// Rank correlation
// ---------------------------------------------------------------------------

/// 1-based ranks; tied values receive the average of the ranks they span.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i + 1;
    while (j < order.size() && v[order[j]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = avg;
    i = j;
  }
  return ranks;
}

inline double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::DimensionMismatch, "series lengths differ");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) throw Error(ErrorCode::ConstantSeries, "correlation of a constant series");
  return sab / std::sqrt(saa * sbb);
}

struct PairedSample {
  std::vector<double> x;
  std::vector<double> y;
};

inline PairedSample complete_pairs(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorCode::DimensionMismatch, "series lengths differ");
  PairedSample s;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!is_missing(x[i]) && !is_missing(y[i])) {
      s.x.push_back(x[i]);
      s.y.push_back(y[i]);
    }
  return s;
}

/// Spearman's rho over pairwise-complete observations: Pearson correlation
/// of average ranks (ranks recomputed on the retained pairs).
inline double spearman(std::span<const double> x, std::span<const double> y) {
  const auto s = complete_pairs(x, y);
  if (s.x.size() < 3)
    throw Error(ErrorCode::InsufficientPairs, std::to_string(s.x.size()) + " complete pairs");
  return pearson(average_ranks(s.x), average_ranks(s.y));
}

struct CorrelationMatrix {
  std::vector<std::string> variables;
  Eigen::MatrixXd values;
  Eigen::MatrixXi n_pairs;

  double at(const std::string& a, const std::string& b) const {
    auto idx = [&](const std::string& n) {
      auto it = std::find(variables.begin(), variables.end(), n);
      if (it == variables.end()) throw Error(ErrorCode::MissingVariable, n);
      return static_cast<Eigen::Index>(it - variables.begin());
    };
    return values(idx(a), idx(b));
  }
};

inline CorrelationMatrix spearman_matrix(const VariableTable& vars, std::vector<std::string> columns = {}) {
  if (columns.empty()) columns = vars.names();
  const auto p = static_cast<Eigen::Index>(columns.size());
  CorrelationMatrix cm;
  cm.variables = columns;
  cm.values = Eigen::MatrixXd::Identity(p, p);
  cm.n_pairs = Eigen::MatrixXi::Zero(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    const auto ci = vars.column(columns[static_cast<std::size_t>(i)]);
    cm.n_pairs(i, i) = static_cast<int>(ci.size() - static_cast<std::size_t>(std::count_if(ci.begin(), ci.end(), is_missing)));
    for (Eigen::Index j = i + 1; j < p; ++j) {
      const auto cj = vars.column(columns[static_cast<std::size_t>(j)]);
      const auto pairs = complete_pairs(ci, cj);
      if (pairs.x.size() < 3)
        throw Error(ErrorCode::InsufficientPairs,
                    columns[static_cast<std::size_t>(i)] + " x " + columns[static_cast<std::size_t>(j)]);
      const double rho = pearson(average_ranks(pairs.x), average_ranks(pairs.y));
      cm.values(i, j) = cm.values(j, i) = rho;
      cm.n_pairs(i, j) = cm.n_pairs(j, i) = static_cast<int>(pairs.x.size());
    }
  }
  return cm;
}

inline std::string write_correlation_report(const CorrelationMatrix& cm, std::string_view comment = {},
                                            char delimiter = ',') {
  std::string out(comment);
  std::vector<std::string> header = {"variable"};
  header.insert(header.end(), cm.variables.begin(), cm.variables.end());
  out += text::join_row(header, delimiter);
  for (std::size_t i = 0; i < cm.variables.size(); ++i) {
    std::vector<std::string> row = {cm.variables[i]};
    for (std::size_t j = 0; j < cm.variables.size(); ++j)
      row.push_back(text::format_fixed(cm.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)), 3));
    out += text::join_row(row, delimiter);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Standardization and PCA
// ---------------------------------------------------------------------------

struct Standardized {
  std::vector<std::string> columns;
  std::vector<std::string> geoids;      // every input row
  std::vector<double> means;            // over the fitting rows
  std::vector<double> sds;              // n - 1 denominator
  std::vector<std::size_t> fit_rows;    // rows with no missing selected column
  std::vector<std::size_t> excluded_rows;
  Eigen::MatrixXd z;                    // all rows; NaN where the input is missing

  Eigen::MatrixXd fit_matrix() const {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(fit_rows.size()), z.cols());
    for (std::size_t i = 0; i < fit_rows.size(); ++i)
      m.row(static_cast<Eigen::Index>(i)) = z.row(static_cast<Eigen::Index>(fit_rows[i]));
    return m;
  }

  /// x = mean + z * sd
  double unstandardize(std::size_t row, std::size_t col) const {
    return means[col] + z(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(col)) * sds[col];
  }
};

/// z-scores of the selected columns. Means and standard deviations come from
/// the rows that are complete in every selected column; other rows are
/// excluded from fitting and listed.
inline Standardized standardize(const VariableTable& vars, const std::vector<std::string>& columns) {
  Standardized s;
  s.columns = columns;
  s.geoids = vars.geoids();
  const std::size_t n = vars.rows(), p = columns.size();
  std::vector<std::span<const double>> cols;
  for (const auto& c : columns) cols.push_back(vars.column(c));

  for (std::size_t r = 0; r < n; ++r) {
    bool complete = true;
    for (const auto& c : cols) complete = complete && !is_missing(c[r]);
    (complete ? s.fit_rows : s.excluded_rows).push_back(r);
  }
  if (s.fit_rows.size() < 2) throw Error(ErrorCode::InsufficientData, "fewer than 2 complete rows");

  s.z.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  const double m = static_cast<double>(s.fit_rows.size());
  for (std::size_t j = 0; j < p; ++j) {
    double mean = 0.0;
    for (std::size_t r : s.fit_rows) mean += cols[j][r];
    mean /= m;
    double ss = 0.0;
    for (std::size_t r : s.fit_rows) ss += (cols[j][r] - mean) * (cols[j][r] - mean);
    const double sd = std::sqrt(ss / (m - 1.0));
    if (!(sd > 0.0)) throw Error(ErrorCode::ZeroVariance, columns[j]);
    s.means.push_back(mean);
    s.sds.push_back(sd);
    for (std::size_t r = 0; r < n; ++r)
      s.z(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = (cols[j][r] - mean) / sd;
  }
  return s;
}

struct PCAResult {
  std::vector<std::string> variables;
  Eigen::VectorXd eigenvalues;  // descending
  Eigen::MatrixXd loadings;     // variables x components, unit-norm columns
  std::size_t n_obs = 0;

  /// Kaiser rule: eigenvalue > 1.
  bool retained(std::size_t component) const { return eigenvalues[static_cast<Eigen::Index>(component)] > 1.0; }
  std::size_t retained_count() const {
    return static_cast<std::size_t>((eigenvalues.array() > 1.0).count());
  }
};

/// Index of the variable whose loading is forced non-negative: PERCSNAP when
/// present, else the first variable.
inline std::size_t sign_anchor(const std::vector<std::string>& variables) {
  auto it = std::find(variables.begin(), variables.end(), var::snap);
  return it == variables.end() ? 0 : static_cast<std::size_t>(it - variables.begin());
}

/// Eigendecomposition of a correlation matrix, eigenvalues descending and
/// loadings sign-anchored.
inline PCAResult pca_from_correlation(const Eigen::MatrixXd& corr, std::vector<std::string> variables,
                                      std::size_t n_obs) {
  const Eigen::Index p = corr.rows();
  if (corr.cols() != p || static_cast<std::size_t>(p) != variables.size())
    throw Error(ErrorCode::DimensionMismatch, "correlation matrix shape");
  if (!corr.allFinite()) throw Error(ErrorCode::DegenerateMatrix, "non-finite correlation");
  if ((corr - corr.transpose()).cwiseAbs().maxCoeff() > 1e-9) throw Error(ErrorCode::DegenerateMatrix, "not symmetric");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(corr);
  if (es.info() != Eigen::Success) throw Error(ErrorCode::DegenerateMatrix, "eigendecomposition failed");
  if (es.eigenvalues().minCoeff() < -1e-9 * static_cast<double>(p))
    throw Error(ErrorCode::DegenerateMatrix, "not positive semidefinite");

  PCAResult out;
  out.variables = std::move(variables);
  out.n_obs = n_obs;
  out.eigenvalues.resize(p);
  out.loadings.resize(p, p);
  const std::size_t anchor = sign_anchor(out.variables);
  for (Eigen::Index k = 0; k < p; ++k) {
    const Eigen::Index src = p - 1 - k;  // solver returns ascending order
    out.eigenvalues[k] = es.eigenvalues()[src];
    Eigen::VectorXd v = es.eigenvectors().col(src).normalized();
    if (v[static_cast<Eigen::Index>(anchor)] < 0.0) v = -v;
    out.loadings.col(k) = v;
  }
  return out;
}

/// Correlation-matrix PCA of standardized data (z'z / (n - 1)).
inline PCAResult pca(const Standardized& s) {
  const Eigen::MatrixXd z = s.fit_matrix();
  const auto n = static_cast<std::size_t>(z.rows());
  if (n <= static_cast<std::size_t>(z.cols()))
    throw Error(ErrorCode::InsufficientData, "PCA needs more observations than variables");
  if (!z.allFinite()) throw Error(ErrorCode::DegenerateMatrix, "missing cells in the fitting sample");
  Eigen::MatrixXd corr = (z.transpose() * z) / (static_cast<double>(n) - 1.0);
  corr = 0.5 * (corr + corr.transpose());
  return pca_from_correlation(corr, s.columns, n);
}

inline std::string write_loadings_report(const PCAResult& r, std::string_view comment = {}, char delimiter = ',') {
  std::string out(comment);
  std::vector<std::string> header = {"variable"};
  for (Eigen::Index k = 0; k < r.loadings.cols(); ++k) header.push_back(fmt::format("PC{}", k + 1));
  out += text::join_row(header, delimiter);
  for (std::size_t i = 0; i < r.variables.size(); ++i) {
    std::vector<std::string> row = {r.variables[i]};
    for (Eigen::Index k = 0; k < r.loadings.cols(); ++k)
      row.push_back(text::format_fixed(r.loadings(static_cast<Eigen::Index>(i), k), 6));
    out += text::join_row(row, delimiter);
  }
  return out;
}

inline std::string write_eigenvalue_report(const PCAResult& r, std::string_view comment = {}, char delimiter = ',') {
  std::string out(comment);
  out += text::join_row({"component", "eigenvalue", "proportion", "retained"}, delimiter);
  const double total = r.eigenvalues.sum();
  for (Eigen::Index k = 0; k < r.eigenvalues.size(); ++k)
    out += text::join_row({fmt::format("PC{}", k + 1), text::format_fixed(r.eigenvalues[k], 6),
                           text::format_fixed(r.eigenvalues[k] / total, 6),
                           r.retained(static_cast<std::size_t>(k)) ? "1" : "0"},
                          delimiter);
  return out;
}

// ---------------------------------------------------------------------------
// Index series
// ---------------------------------------------------------------------------

struct IndexSeries {
  std::string name;
  std::vector<std::string> geoids;
  std::vector<double> scores;  // NaN where not computable

  std::size_t size() const { return geoids.size(); }

  VariableTable to_table() const {
    VariableTable t(geoids);
    t.add_column(name, scores);
    return t;
  }

  static IndexSeries from_table(const VariableTable& t, const std::string& column) {
    auto col = t.column(column);
    return {column, t.geoids(), std::vector<double>(col.begin(), col.end())};
  }
};

/// Principal-component score (1-based `component`), rescaled to unit
/// variance over the fitting rows. Rows with missing inputs score NaN.
inline IndexSeries score_index(const Standardized& s, const PCAResult& r, std::size_t component = 1,
                               std::string name = "index") {
  if (component < 1 || component > static_cast<std::size_t>(r.loadings.cols()))
    throw Error(ErrorCode::InvalidArgument, "component out of range");
  if (r.variables != s.columns) throw Error(ErrorCode::DimensionMismatch, "PCA variables differ from standardized columns");
  const Eigen::VectorXd v = r.loadings.col(static_cast<Eigen::Index>(component - 1));
  const Eigen::VectorXd raw = s.z * v;

  double mean = 0.0;
  for (std::size_t i : s.fit_rows) mean += raw[static_cast<Eigen::Index>(i)];
  mean /= static_cast<double>(s.fit_rows.size());
  double ss = 0.0;
  for (std::size_t i : s.fit_rows) ss += (raw[static_cast<Eigen::Index>(i)] - mean) * (raw[static_cast<Eigen::Index>(i)] - mean);
  const double sd = std::sqrt(ss / (static_cast<double>(s.fit_rows.size()) - 1.0));
  if (!(sd > 0.0)) throw Error(ErrorCode::ZeroVariance, "component score");

  IndexSeries out{std::move(name), s.geoids, std::vector<double>(s.geoids.size())};
  for (std::size_t i = 0; i < out.scores.size(); ++i) out.scores[i] = raw[static_cast<Eigen::Index>(i)] / sd;
  return out;
}

// ---------------------------------------------------------------------------
// Index transfer
// ---------------------------------------------------------------------------

struct TransferCoefficients {
  double intercept = 0.0;
  std::vector<std::pair<std::string, double>> slopes;  // per percentage point
  double r2 = kMissing;
  std::size_t n = 0;
};

/// OLS of the index scores on the raw percentage columns (with intercept),
/// over rows where the score and every column are present.
inline TransferCoefficients fit_transfer(const IndexSeries& scores, const VariableTable& vars,
                                         const std::vector<std::string>& columns) {
  std::unordered_map<std::string, std::size_t> row_of;
  for (std::size_t i = 0; i < vars.rows(); ++i) row_of.emplace(vars.geoids()[i], i);
  std::vector<std::span<const double>> cols;
  for (const auto& c : columns) cols.push_back(vars.column(c));

  std::vector<std::size_t> index_rows, var_rows;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (is_missing(scores.scores[i])) continue;
    auto it = row_of.find(scores.geoids[i]);
    if (it == row_of.end()) continue;
    bool complete = true;
    for (const auto& c : cols) complete = complete && !is_missing(c[it->second]);
    if (!complete) continue;
    index_rows.push_back(i);
    var_rows.push_back(it->second);
  }
  const auto n = static_cast<Eigen::Index>(index_rows.size());
  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(columns.size()));
  Eigen::VectorXd y(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    y[r] = scores.scores[index_rows[static_cast<std::size_t>(r)]];
    for (std::size_t c = 0; c < cols.size(); ++c) x(r, static_cast<Eigen::Index>(c)) = cols[c][var_rows[static_cast<std::size_t>(r)]];
  }
  const Eigen::MatrixXd design = linalg::with_intercept(x);
  const Eigen::VectorXd beta = linalg::least_squares(design, y);

  TransferCoefficients out;
  out.intercept = beta[0];
  for (std::size_t c = 0; c < columns.size(); ++c) out.slopes.emplace_back(columns[c], beta[static_cast<Eigen::Index>(c + 1)]);
  const Eigen::VectorXd resid = y - design * beta;
  const double sst = (y.array() - y.mean()).square().sum();
  out.r2 = sst > 0.0 ? 1.0 - resid.squaredNorm() / sst : kMissing;
  out.n = static_cast<std::size_t>(n);
  return out;
}

/// fitted = intercept + sum(slope * variable); missing inputs give NaN.
inline IndexSeries apply_transfer(const TransferCoefficients& coef, const VariableTable& vars,
                                  std::string name = "index") {
  std::vector<std::span<const double>> cols;
  for (const auto& [var_name, slope] : coef.slopes) {
    if (!vars.has(var_name)) throw Error(ErrorCode::MissingVariable, var_name);
    cols.push_back(vars.column(var_name));
  }
  IndexSeries out{std::move(name), vars.geoids(), std::vector<double>(vars.rows())};
  for (std::size_t r = 0; r < vars.rows(); ++r) {
    double s = coef.intercept;
    for (std::size_t c = 0; c < cols.size(); ++c) s += coef.slopes[c].second * cols[c][r];
    out.scores[r] = s;  // NaN propagates
  }
  return out;
}

inline std::string transfer_to_json(const TransferCoefficients& coef) {
  nlohmann::ordered_json j;
  j["intercept"] = coef.intercept;
  j["slopes"] = nlohmann::ordered_json::object();
  for (const auto& [name, slope] : coef.slopes) j["slopes"][name] = slope;
  if (!is_missing(coef.r2)) j["r2"] = coef.r2;
  if (coef.n > 0) j["n"] = coef.n;
  return j.dump(2) + "\n";
}

inline TransferCoefficients transfer_from_json(std::string_view content) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(content);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::MalformedInput, std::string("coefficients: ") + e.what());
  }
  if (!j.is_object() || !j.contains("intercept") || !j["intercept"].is_number() || !j.contains("slopes") ||
      !j["slopes"].is_object())
    throw Error(ErrorCode::MalformedInput, "coefficients need 'intercept' and 'slopes'");
  TransferCoefficients coef;
  coef.intercept = j["intercept"].get<double>();
  for (const auto& [name, value] : j["slopes"].items()) {
    if (!value.is_number()) throw Error(ErrorCode::MalformedInput, "slope for " + name + " is not a number");
    coef.slopes.emplace_back(name, value.get<double>());
  }
  if (j.contains("r2") && j["r2"].is_number()) coef.r2 = j["r2"].get<double>();
  if (j.contains("n") && j["n"].is_number_unsigned()) coef.n = j["n"].get<std::size_t>();
  return coef;
}

/// Spearman correlation of two index series over their shared, non-missing
/// geoids.
inline double index_correlation(const IndexSeries& a, const IndexSeries& b) {
  std::unordered_map<std::string, double> bmap;
  for (std::size_t i = 0; i < b.size(); ++i) bmap.emplace(b.geoids[i], b.scores[i]);
  std::vector<double> x, y;
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto it = bmap.find(a.geoids[i]);
    if (it == bmap.end()) continue;
    x.push_back(a.scores[i]);
    y.push_back(it->second);
  }
  return spearman(x, y);
}

}  // namespace smallarea
