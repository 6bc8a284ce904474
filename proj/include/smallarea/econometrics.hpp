#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "smallarea/error.hpp"
#include "smallarea/linalg.hpp"
#include "smallarea/spatial.hpp"
#include "smallarea/text.hpp"

namespace smallarea {

// ---------------------------------------------------------------------------
// Complete-case selection shared by both estimators
// ---------------------------------------------------------------------------

namespace detail {

struct CompleteCases {
  std::vector<bool> keep;
  std::vector<std::size_t> rows;
  Eigen::VectorXd y;
  Eigen::MatrixXd design;  // intercept + regressors
};

inline CompleteCases complete_cases(const Eigen::VectorXd& y, const Eigen::MatrixXd& regressors) {
  if (regressors.rows() != y.size()) throw Error(ErrorCode::DimensionMismatch, "regressor rows differ from y");
  CompleteCases cc;
  cc.keep.assign(static_cast<std::size_t>(y.size()), false);
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (std::isfinite(y[i]) && regressors.row(i).allFinite()) {
      cc.keep[static_cast<std::size_t>(i)] = true;
      cc.rows.push_back(static_cast<std::size_t>(i));
    }
  }
  const auto m = static_cast<Eigen::Index>(cc.rows.size());
  cc.y.resize(m);
  Eigen::MatrixXd x(m, regressors.cols());
  for (Eigen::Index r = 0; r < m; ++r) {
    cc.y[r] = y[static_cast<Eigen::Index>(cc.rows[static_cast<std::size_t>(r)])];
    x.row(r) = regressors.row(static_cast<Eigen::Index>(cc.rows[static_cast<std::size_t>(r)]));
  }
  cc.design = linalg::with_intercept(x);
  return cc;
}

inline Eigen::VectorXd scatter(const Eigen::VectorXd& values, const std::vector<std::size_t>& rows, Eigen::Index n) {
  Eigen::VectorXd out = Eigen::VectorXd::Constant(n, kMissing);
  for (std::size_t r = 0; r < rows.size(); ++r) out[static_cast<Eigen::Index>(rows[r])] = values[static_cast<Eigen::Index>(r)];
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// OLS
// ---------------------------------------------------------------------------

struct OLSFit {
  Eigen::VectorXd coefficients;  // intercept first
  Eigen::VectorXd se;
  double r2 = 0.0;
  double sigma2 = 0.0;           // SSE / (n - k)
  Eigen::VectorXd residuals;     // aligned with the input; NaN for dropped rows
  std::size_t n = 0;

  double alpha() const { return coefficients[0]; }
  double beta(Eigen::Index k = 0) const { return coefficients[k + 1]; }
};

/// y = alpha + X beta + e by least squares; classical standard errors.
/// `regressors` excludes the intercept column. Rows with any missing value
/// are dropped.
inline OLSFit ols(const Eigen::VectorXd& y, const Eigen::MatrixXd& regressors) {
  const auto cc = detail::complete_cases(y, regressors);
  const Eigen::MatrixXd& x = cc.design;
  OLSFit fit;
  fit.coefficients = linalg::least_squares(x, cc.y);
  const Eigen::VectorXd e = cc.y - x * fit.coefficients;
  fit.n = static_cast<std::size_t>(cc.y.size());
  const double dof = static_cast<double>(x.rows() - x.cols());
  fit.sigma2 = e.squaredNorm() / dof;
  const Eigen::MatrixXd xtx_inv = (x.transpose() * x).ldlt().solve(Eigen::MatrixXd::Identity(x.cols(), x.cols()));
  fit.se = (fit.sigma2 * xtx_inv.diagonal()).cwiseSqrt();
  const double sst = (cc.y.array() - cc.y.mean()).square().sum();
  fit.r2 = sst > 0.0 ? std::clamp(1.0 - e.squaredNorm() / sst, 0.0, 1.0) : 0.0;
  fit.residuals = detail::scatter(e, cc.rows, y.size());
  return fit;
}

// ---------------------------------------------------------------------------
// Spectrum and log-determinant
// ---------------------------------------------------------------------------

struct WeightsSpectrum {
  std::vector<std::complex<double>> eigenvalues;
  bool real = true;  // computed through a symmetric similarity transform
  double lambda_min = 0.0;
  double lambda_max = 0.0;
};

namespace detail {

// Symmetric pattern with one weight per row: W = C A, A symmetric, so
// W is similar to the symmetric matrix sqrt(w_ij * w_ji).
inline bool symmetrizable(const WeightsMatrix& w) {
  std::map<std::pair<std::size_t, std::size_t>, double> entries;
  for (std::size_t i = 0; i < w.rows.size(); ++i) {
    for (const auto& e : w.rows[i]) {
      if (e.weight <= 0.0 || e.weight != w.rows[i].front().weight) return false;
      entries[{i, e.col}] = e.weight;
    }
  }
  for (const auto& [ij, v] : entries)
    if (!entries.count({ij.second, ij.first})) return false;
  return true;
}

}  // namespace detail

/// Dense eigenvalues of W.
inline WeightsSpectrum spectrum(const WeightsMatrix& w) {
  WeightsSpectrum s;
  const auto n = static_cast<Eigen::Index>(w.size());
  if (n == 0) return s;
  if (detail::symmetrizable(w)) {
    Eigen::MatrixXd sym = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t i = 0; i < w.rows.size(); ++i)
      for (const auto& e : w.rows[i]) {
        double back = 0.0;
        for (const auto& f : w.rows[e.col])
          if (f.col == i) back = f.weight;
        sym(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(e.col)) = std::sqrt(e.weight * back);
      }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw Error(ErrorCode::NonConvergent, "eigenvalues of W");
    for (Eigen::Index i = 0; i < n; ++i) s.eigenvalues.emplace_back(es.eigenvalues()[i], 0.0);
  } else {
    Eigen::EigenSolver<Eigen::MatrixXd> es(w.dense(), false);
    if (es.info() != Eigen::Success) throw Error(ErrorCode::NonConvergent, "eigenvalues of W");
    s.real = false;
    for (Eigen::Index i = 0; i < n; ++i) s.eigenvalues.push_back(es.eigenvalues()[i]);
  }
  s.lambda_min = s.eigenvalues.front().real();
  s.lambda_max = s.eigenvalues.front().real();
  for (const auto& l : s.eigenvalues) {
    s.lambda_min = std::min(s.lambda_min, l.real());
    s.lambda_max = std::max(s.lambda_max, l.real());
  }
  return s;
}

/// ln|I - rho W| = sum ln|1 - rho lambda_i|.
inline double log_det(const WeightsSpectrum& s, double rho) {
  double total = 0.0;
  for (const auto& l : s.eigenvalues) total += std::log(std::abs(1.0 - rho * l));
  return total;
}

/// Open interval on which I - rho W stays non-singular: (1/lambda_min,
/// 1/lambda_max), with -1 / 1 used when no eigenvalue of that sign exists.
inline std::pair<double, double> rho_bounds(const WeightsSpectrum& s) {
  constexpr double eps = 1e-12;
  const double lo = s.lambda_min < -eps ? 1.0 / s.lambda_min : -1.0;
  const double hi = s.lambda_max > eps ? 1.0 / s.lambda_max : 1.0;
  return {lo, hi};
}

// ---------------------------------------------------------------------------
// Spatial lag maximum likelihood
// ---------------------------------------------------------------------------

struct SpatialLagOptions {
  std::size_t grid_points = 401;
  double tolerance = 1e-6;
  bool standard_errors = true;
  /// Precomputed eigenvalues of W; used only when no rows are dropped.
  const WeightsSpectrum* spectrum = nullptr;
};

struct SpatialLagFit {
  double rho = 0.0;
  double rho_se = kMissing;
  Eigen::VectorXd coefficients;  // intercept first
  Eigen::VectorXd se;
  double sigma2 = 0.0;           // SSE / n
  double loglik = 0.0;
  double pseudo_r2 = kMissing;   // squared correlation of (rho W y + X beta) with y
  Eigen::VectorXd residuals;     // innovations, aligned with the input
  std::pair<double, double> rho_bounds{-1.0, 1.0};
  std::size_t n = 0;
  std::size_t islands = 0;

  double alpha() const { return coefficients[0]; }
  double beta(Eigen::Index k = 0) const { return coefficients[k + 1]; }
};

/// Concentrated log-likelihood of y = rho W y + X beta + e over rho, for
/// complete data. X includes the intercept column.
class SpatialLagProblem {
 public:
  SpatialLagProblem(Eigen::VectorXd y, Eigen::MatrixXd design, WeightsMatrix w,
                    const WeightsSpectrum* precomputed = nullptr)
      : y_(std::move(y)), x_(std::move(design)), w_(std::move(w)) {
    if (static_cast<std::size_t>(y_.size()) != w_.size())
      throw Error(ErrorCode::DimensionMismatch, "W does not match the number of observations");
    spectrum_ = precomputed != nullptr ? *precomputed : spectrum(w_);
    wy_ = w_.lag(y_);
    qr_.compute(x_);
    qr_.setThreshold(1e-10);
    if (x_.rows() <= x_.cols()) throw Error(ErrorCode::InsufficientData, "need more observations than regressors");
    if (qr_.rank() < x_.cols()) throw Error(ErrorCode::RankDeficient, "design matrix is singular");
    e0_ = y_ - x_ * qr_.solve(y_);
    el_ = wy_ - x_ * qr_.solve(wy_);
  }

  std::size_t n() const { return static_cast<std::size_t>(y_.size()); }
  const WeightsSpectrum& weights_spectrum() const { return spectrum_; }
  std::pair<double, double> bounds() const { return rho_bounds(spectrum_); }

  double sse(double rho) const { return (e0_ - rho * el_).squaredNorm(); }

  double loglik(double rho) const {
    const double nn = static_cast<double>(n());
    return -0.5 * nn * (std::log(2.0 * std::numbers::pi) + 1.0) - 0.5 * nn * std::log(sse(rho) / nn) +
           log_det(spectrum_, rho);
  }

  /// beta(rho) = (X'X)^-1 X' (y - rho W y)
  Eigen::VectorXd coefficients(double rho) const { return qr_.solve(y_ - rho * wy_); }

  Eigen::VectorXd innovations(double rho, const Eigen::VectorXd& beta) const {
    const Eigen::VectorXd target = y_ - rho * wy_;
    return target - x_ * beta;
  }

  /// Grid search over the interior of the bounds followed by golden-section
  /// refinement around the best grid point.
  double maximize(const SpatialLagOptions& opts, double* best_loglik = nullptr) const {
    const auto [lo, hi] = bounds();
    const std::size_t g = std::max<std::size_t>(opts.grid_points, 3);
    auto grid = [&](std::size_t k) { return lo + (hi - lo) * static_cast<double>(k + 1) / static_cast<double>(g + 1); };

    std::size_t best = 0;
    double best_ll = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < g; ++k) {
      const double ll = loglik(grid(k));
      if (ll > best_ll) {
        best_ll = ll;
        best = k;
      }
    }
    double a = best == 0 ? lo : grid(best - 1);
    double b = best + 1 == g ? hi : grid(best + 1);
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = b - inv_phi * (b - a), d = a + inv_phi * (b - a);
    double fc = loglik(c), fd = loglik(d);
    while (b - a > opts.tolerance) {
      if (fc > fd) {
        b = d;
        d = c;
        fd = fc;
        c = b - inv_phi * (b - a);
        fc = loglik(c);
      } else {
        a = c;
        c = d;
        fc = fd;
        d = a + inv_phi * (b - a);
        fd = loglik(d);
      }
    }
    double rho = 0.5 * (a + b);
    double ll = loglik(rho);
    if (best_ll > ll) {
      rho = grid(best);
      ll = best_ll;
    }
    if (rho - lo < opts.tolerance || hi - rho < opts.tolerance)
      throw Error(ErrorCode::NonConvergent, fmt::format("likelihood maximum at the rho bound ({})", rho));
    if (best_loglik != nullptr) *best_loglik = ll;
    return rho;
  }

  /// Asymptotic covariance of (beta, sigma2, rho) from the inverse of the
  /// information matrix.
  Eigen::MatrixXd covariance(double rho, const Eigen::VectorXd& beta, double sigma2) const {
    const Eigen::Index n = x_.rows(), k = x_.cols();
    const Eigen::MatrixXd wd = w_.dense();
    const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n) - rho * wd;
    const Eigen::MatrixXd wa = a.partialPivLu().solve(wd);  // W A^-1 (W and A commute)
    const Eigen::VectorXd wxb = wa * (x_ * beta);
    const double tr_wa = wa.trace();
    const double tr_wa2 = wa.cwiseProduct(wa.transpose()).sum();
    const double tr_wtw = wa.squaredNorm();

    Eigen::MatrixXd info = Eigen::MatrixXd::Zero(k + 2, k + 2);
    info.topLeftCorner(k, k) = x_.transpose() * x_ / sigma2;
    info.block(0, k + 1, k, 1) = x_.transpose() * wxb / sigma2;
    info.block(k + 1, 0, 1, k) = info.block(0, k + 1, k, 1).transpose();
    info(k, k) = static_cast<double>(n) / (2.0 * sigma2 * sigma2);
    info(k, k + 1) = info(k + 1, k) = tr_wa / sigma2;
    info(k + 1, k + 1) = tr_wa2 + tr_wtw + wxb.squaredNorm() / sigma2;
    return info.inverse();
  }

 private:
  Eigen::VectorXd y_;
  Eigen::MatrixXd x_;
  WeightsMatrix w_;
  WeightsSpectrum spectrum_;
  Eigen::VectorXd wy_;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_;
  Eigen::VectorXd e0_;
  Eigen::VectorXd el_;
};

/// Maximum-likelihood spatial lag regression y = rho W y + alpha + X beta + e.
/// Rows with missing y or X are dropped and W is restricted to the rest.
inline SpatialLagFit spatial_lag_ml(const Eigen::VectorXd& y, const Eigen::MatrixXd& regressors,
                                    const WeightsMatrix& w, const SpatialLagOptions& opts = {},
                                    Warnings* warnings = nullptr) {
  if (static_cast<std::size_t>(y.size()) != w.size())
    throw Error(ErrorCode::DimensionMismatch, "W does not match the number of observations");
  const auto cc = detail::complete_cases(y, regressors);
  const bool dropped = cc.rows.size() != static_cast<std::size_t>(y.size());
  const WeightsMatrix sub = dropped ? subset_weights(w, cc.keep) : w;
  const WeightsSpectrum* spec = dropped ? nullptr : opts.spectrum;

  SpatialLagFit fit;
  fit.n = cc.rows.size();
  fit.islands = sub.islands.size();
  if (fit.islands > 0) warn(warnings, fmt::format("IslandsPresent: {} observations without neighbours", fit.islands));

  SpatialLagProblem problem(cc.y, cc.design, sub, spec);
  fit.rho_bounds = problem.bounds();
  if (sub.nonzeros() == 0) {
    fit.rho = 0.0;
    fit.loglik = problem.loglik(0.0);
  } else {
    fit.rho = problem.maximize(opts, &fit.loglik);
  }
  fit.coefficients = problem.coefficients(fit.rho);
  const Eigen::VectorXd e = problem.innovations(fit.rho, fit.coefficients);
  fit.sigma2 = e.squaredNorm() / static_cast<double>(fit.n);
  fit.residuals = detail::scatter(e, cc.rows, y.size());

  const Eigen::VectorXd fitted = cc.y - e;
  const double sf = (fitted.array() - fitted.mean()).square().sum();
  const double sy = (cc.y.array() - cc.y.mean()).square().sum();
  if (sf > 0.0 && sy > 0.0) {
    const double cov = ((fitted.array() - fitted.mean()) * (cc.y.array() - cc.y.mean())).sum();
    fit.pseudo_r2 = cov * cov / (sf * sy);
  }

  const auto k = cc.design.cols();
  if (opts.standard_errors) {
    const Eigen::MatrixXd cov = problem.covariance(fit.rho, fit.coefficients, fit.sigma2);
    fit.se = cov.diagonal().head(k).cwiseMax(0.0).cwiseSqrt();
    if (sub.nonzeros() > 0) fit.rho_se = std::sqrt(std::max(0.0, cov(k + 1, k + 1)));
  } else {
    fit.se = Eigen::VectorXd::Constant(k, kMissing);
  }
  return fit;
}

/// Innovation residuals e = y - rho W y - X beta, on the same complete-case
/// subset the fit used.
inline Eigen::VectorXd residuals_spatial(const SpatialLagFit& fit, const Eigen::VectorXd& y,
                                         const Eigen::MatrixXd& regressors, const WeightsMatrix& w) {
  const auto cc = detail::complete_cases(y, regressors);
  const bool dropped = cc.rows.size() != static_cast<std::size_t>(y.size());
  const WeightsMatrix sub = dropped ? subset_weights(w, cc.keep) : w;
  const Eigen::VectorXd target = cc.y - fit.rho * sub.lag(cc.y);
  const Eigen::VectorXd e = target - cc.design * fit.coefficients;
  return detail::scatter(e, cc.rows, y.size());
}

// ---------------------------------------------------------------------------
// Residuals by zone
// ---------------------------------------------------------------------------

struct ZoneResidual {
  std::string zone;
  std::size_t n = 0;
  double mean = 0.0;
  double sd = 0.0;       // n - 1 denominator; 0 for a single member
  double band_lo = 0.0;  // mean - 2 sd_overall
  double band_hi = 0.0;  // mean + 2 sd_overall
};

struct ResidualSummary {
  std::vector<ZoneResidual> zones;  // ordered by zone id
  std::size_t n = 0;
  double mean = 0.0;
  double sd = 0.0;
  double band_lo = 0.0;  // global mean - 2 sd
  double band_hi = 0.0;
};

namespace detail {
inline std::pair<double, double> mean_sd(const std::vector<double>& v) {
  if (v.empty()) return {kMissing, kMissing};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  if (v.size() < 2) return {m, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / (static_cast<double>(v.size()) - 1.0))};
}
}  // namespace detail

/// Per-zone residual means with bands at +/- 2 overall standard deviations.
/// Missing residuals and unassigned block groups are skipped.
inline ResidualSummary group_residuals(const std::vector<std::string>& geoids, std::span<const double> residuals,
                                       const ZoneAssignment& asg) {
  if (geoids.size() != residuals.size()) throw Error(ErrorCode::DimensionMismatch, "geoids and residuals differ");
  std::map<std::string, std::vector<double>> by_zone;
  std::vector<double> all;
  for (std::size_t i = 0; i < geoids.size(); ++i) {
    if (is_missing(residuals[i])) continue;
    auto it = asg.zone_of.find(geoids[i]);
    if (it == asg.zone_of.end()) continue;
    by_zone[it->second].push_back(residuals[i]);
    all.push_back(residuals[i]);
  }
  ResidualSummary out;
  out.n = all.size();
  std::tie(out.mean, out.sd) = detail::mean_sd(all);
  if (all.empty()) return out;
  out.band_lo = out.mean - 2.0 * out.sd;
  out.band_hi = out.mean + 2.0 * out.sd;
  for (const auto& [zone, values] : by_zone) {
    ZoneResidual z;
    z.zone = zone;
    z.n = values.size();
    std::tie(z.mean, z.sd) = detail::mean_sd(values);
    z.band_lo = z.mean - 2.0 * out.sd;
    z.band_hi = z.mean + 2.0 * out.sd;
    out.zones.push_back(z);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

inline std::string fit_to_json(const OLSFit& fit, const std::vector<std::string>& names) {
  nlohmann::ordered_json j;
  j["model"] = "ols";
  j["coefficients"] = nlohmann::ordered_json::object();
  j["se"] = nlohmann::ordered_json::object();
  for (Eigen::Index i = 0; i < fit.coefficients.size(); ++i) {
    const std::string& name = names.at(static_cast<std::size_t>(i));
    j["coefficients"][name] = fit.coefficients[i];
    j["se"][name] = fit.se[i];
  }
  j["alpha"] = fit.alpha();
  j["beta"] = fit.beta(0);
  j["r2"] = fit.r2;
  j["sigma2"] = fit.sigma2;
  j["n"] = fit.n;
  j["islands"] = 0;
  return j.dump(2) + "\n";
}

inline std::string fit_to_json(const SpatialLagFit& fit, const std::vector<std::string>& names) {
  nlohmann::ordered_json j;
  j["model"] = "spatial_lag";
  j["coefficients"] = nlohmann::ordered_json::object();
  j["se"] = nlohmann::ordered_json::object();
  for (Eigen::Index i = 0; i < fit.coefficients.size(); ++i) {
    const std::string& name = names.at(static_cast<std::size_t>(i));
    j["coefficients"][name] = fit.coefficients[i];
    j["se"][name] = is_missing(fit.se[i]) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(fit.se[i]);
  }
  j["alpha"] = fit.alpha();
  j["beta"] = fit.beta(0);
  j["rho"] = fit.rho;
  j["rho_se"] = is_missing(fit.rho_se) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(fit.rho_se);
  j["rho_bounds"] = {fit.rho_bounds.first, fit.rho_bounds.second};
  j["loglik"] = fit.loglik;
  j["pseudo_r2"] = is_missing(fit.pseudo_r2) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(fit.pseudo_r2);
  j["sigma2"] = fit.sigma2;
  j["n"] = fit.n;
  j["islands"] = fit.islands;
  return j.dump(2) + "\n";
}

inline std::string write_residuals(const std::vector<std::string>& geoids, const Eigen::VectorXd& residuals,
                                   std::string_view comment = {}, char delimiter = ',') {
  std::string out(comment);
  out += text::join_row({"geoid", "residual"}, delimiter);
  for (std::size_t i = 0; i < geoids.size(); ++i)
    out += text::join_row({geoids[i], text::format_number(residuals[static_cast<Eigen::Index>(i)])}, delimiter);
  return out;
}

}  // namespace smallarea
