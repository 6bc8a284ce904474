#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

#include "smallarea/econometrics.hpp"
#include "smallarea/error.hpp"
#include "smallarea/spatial.hpp"

namespace smallarea {

struct SpatialLagProcess {
  double rho = 0.5;
  double alpha = 0.0;
  double beta = 1.0;
  double sigma = 0.1;
};

struct SimulatedSample {
  Eigen::VectorXd x;
  Eigen::VectorXd eps;
  Eigen::VectorXd y;
};

/// Draws x ~ N(0, 1), e ~ N(0, sigma^2) and solves (I - rho W) y = alpha +
/// beta x + e. Raises InvalidArgument when rho is outside the open interval
/// on which I - rho W is non-singular.
inline SimulatedSample simulate_spatial_lag(const WeightsMatrix& w, const SpatialLagProcess& process,
                                            std::uint64_t seed, const WeightsSpectrum* spec = nullptr) {
  const WeightsSpectrum owned = spec == nullptr ? spectrum(w) : WeightsSpectrum{};
  const auto [lo, hi] = rho_bounds(spec == nullptr ? owned : *spec);
  if (!(process.rho > lo && process.rho < hi))
    throw Error(ErrorCode::InvalidArgument, fmt::format("rho {} outside ({}, {})", process.rho, lo, hi));
  if (!(process.sigma >= 0.0)) throw Error(ErrorCode::InvalidArgument, "sigma must be non-negative");

  const auto n = static_cast<Eigen::Index>(w.size());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  SimulatedSample s;
  s.x.resize(n);
  s.eps.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) s.x[i] = normal(rng);
  for (Eigen::Index i = 0; i < n; ++i) s.eps[i] = process.sigma * normal(rng);

  const Eigen::VectorXd rhs = (process.alpha + process.beta * s.x.array()).matrix() + s.eps;
  const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n) - process.rho * w.dense();
  s.y = a.partialPivLu().solve(rhs);
  return s;
}

}  // namespace smallarea
