#include <cstring>
#include <random>

#include <gtest/gtest.h>

#include "smallarea/stats.hpp"
#include "support/oracles.hpp"

using namespace smallarea;

namespace {

VariableTable table(const std::vector<std::pair<std::string, std::vector<double>>>& cols) {
  std::vector<std::string> g;
  for (std::size_t i = 0; i < cols.front().second.size(); ++i) g.push_back(fmt::format("g{:04}", i));
  VariableTable t(g);
  for (const auto& [name, v] : cols) t.add_column(name, v);
  return t;
}

VariableTable random_table(std::mt19937_64& rng, std::size_t n, std::size_t p, bool ties, bool missing) {
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<std::string> g;
  for (std::size_t i = 0; i < n; ++i) g.push_back(fmt::format("g{:04}", i));
  VariableTable t(g);
  std::vector<double> common(n);
  for (auto& c : common) c = z(rng);
  for (std::size_t j = 0; j < p; ++j) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) {
      v[i] = 0.6 * common[i] + z(rng);
      if (ties) v[i] = std::round(v[i] * 2.0) / 2.0;
      if (missing && u(rng) < 0.05) v[i] = kMissing;
    }
    t.add_column(fmt::format("V{}", j), v);
  }
  return t;
}

// Transfer coefficients for the five-variable index.
TransferCoefficients five_variable_coefficients() {
  TransferCoefficients c;
  c.intercept = -3.498;
  c.slopes = {{"PERCVAC", 0.042}, {"PERCSNAP", 0.025}, {"PERCRENT", 0.019}, {"PERCBLACK", 0.011}, {"PERCPOV", 0.026}};
  return c;
}

}  // namespace

TEST(Spearman, HandExamples) {
  EXPECT_DOUBLE_EQ(spearman(std::vector<double>{1, 2, 3}, std::vector<double>{2, 4, 6}), 1.0);
  // 1 - 6 * sum(d^2) / (n (n^2 - 1)) with d = (0, -1, 1, 0)
  const double expected = 1.0 - 6.0 * 2.0 / (4.0 * 15.0);
  EXPECT_NEAR(spearman(std::vector<double>{1, 2, 3, 4}, std::vector<double>{1, 3, 2, 4}), expected, 1e-15);
  EXPECT_NEAR(expected, 0.8, 1e-15);
}

TEST(Spearman, InsufficientPairs) {
  EXPECT_THROW(spearman(std::vector<double>{1, 2, kMissing}, std::vector<double>{1, kMissing, 3}), Error);
}

TEST(SpearmanMatrix, MatchesBruteForceOracle) {
  std::mt19937_64 rng(101);
  for (int k = 0; k < 10; ++k) {
    const auto t = random_table(rng, 200, 6, true, true);
    const auto cm = spearman_matrix(t);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 6; ++j) {
        const auto a = t.column(t.names()[i]), b = t.column(t.names()[j]);
        const double o = i == j ? 1.0
                                : oracle::brute_spearman(std::vector<double>(a.begin(), a.end()),
                                                         std::vector<double>(b.begin(), b.end()));
        EXPECT_NEAR(cm.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)), o, 1e-12);
      }
    EXPECT_EQ(cm.values, cm.values.transpose());
  }
}

TEST(Spearman, InvariantUnderMonotoneMaps) {
  std::mt19937_64 rng(55);
  std::normal_distribution<double> z;
  for (int k = 0; k < 20; ++k) {
    std::vector<double> x(80), y(80);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = std::round(z(rng) * 3);
      y[i] = x[i] + z(rng);
    }
    const double base = spearman(x, y);
    std::vector<double> fx(x.size()), gy(y.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      fx[i] = std::exp(0.3 * x[i]) + 2.0;
      gy[i] = y[i] * y[i] * y[i] - 7.0;
    }
    EXPECT_NEAR(spearman(fx, gy), base, 1e-12);
  }
}

TEST(Standardize, ZScores) {
  const auto s = standardize(table({{"A", {2, 4, 6}}}), {"A"});
  EXPECT_DOUBLE_EQ(s.z(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(s.z(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(s.z(2, 0), 1.0);
  EXPECT_THROW(standardize(table({{"A", {3, 3, 3}}}), {"A"}), Error);
}

TEST(Standardize, ExcludesIncompleteRows) {
  const auto s = standardize(table({{"A", {1, 2, 3, kMissing}}, {"B", {5, 4, 7, 1}}}), {"A", "B"});
  EXPECT_EQ(s.fit_rows.size(), 3u);
  EXPECT_EQ(s.excluded_rows, std::vector<std::size_t>{3});
  EXPECT_DOUBLE_EQ(s.means[1], 16.0 / 3.0);
}

TEST(PCA, PerfectlyCorrelated) {
  Eigen::MatrixXd c(2, 2);
  c << 1, 1, 1, 1;
  const auto r = pca_from_correlation(c, {"A", "B"}, 10);
  EXPECT_NEAR(r.eigenvalues[0], 2.0, 1e-12);
  EXPECT_NEAR(r.eigenvalues[1], 0.0, 1e-12);
  EXPECT_NEAR(r.loadings(0, 0), 1 / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(r.loadings(1, 0), 1 / std::sqrt(2.0), 1e-12);
}

TEST(PCA, ClosedFormTwoByTwo) {
  Eigen::MatrixXd c(2, 2);
  c << 1, 0.5, 0.5, 1;
  const auto r = pca_from_correlation(c, {"A", "B"}, 10);
  EXPECT_NEAR(r.eigenvalues[0], 1.5, 1e-12);
  EXPECT_NEAR(r.eigenvalues[1], 0.5, 1e-12);
  EXPECT_EQ(r.retained_count(), 1u);
}

TEST(PCA, RandomDataInvariants) {
  std::mt19937_64 rng(77);
  for (int k = 0; k < 20; ++k) {
    const auto t = random_table(rng, 150, 5, false, false);
    const auto s = standardize(t, t.names());
    const auto r = pca(s);
    EXPECT_NEAR(r.eigenvalues.sum(), 5.0, 1e-9);
    const Eigen::MatrixXd gram = r.loadings.transpose() * r.loadings;
    EXPECT_LT((gram - Eigen::MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-9);
    const Eigen::MatrixXd z = s.fit_matrix();
    const Eigen::MatrixXd corr = z.transpose() * z / (static_cast<double>(z.rows()) - 1.0);
    const Eigen::MatrixXd rebuilt = r.loadings * r.eigenvalues.asDiagonal() * r.loadings.transpose();
    EXPECT_LT((rebuilt - corr).cwiseAbs().maxCoeff(), 1e-9);
    for (Eigen::Index i = 1; i < 5; ++i) EXPECT_GE(r.eigenvalues[i - 1], r.eigenvalues[i]);
  }
}

TEST(PCA, SnapLoadingNonNegative) {
  std::mt19937_64 rng(9);
  auto t = random_table(rng, 100, 3, false, false);
  std::vector<double> snap(t.rows());
  for (std::size_t i = 0; i < t.rows(); ++i) snap[i] = -t.column("V0")[i];
  t.add_column("PERCSNAP", snap);
  const auto r = pca(standardize(t, t.names()));
  for (Eigen::Index k = 0; k < r.loadings.cols(); ++k) EXPECT_GE(r.loadings(3, k), 0.0);
}

TEST(ScoreIndex, ZeroRowScoresZeroAndDeterministic) {
  const auto t = table({{"A", {1, 2, 3, 2}}, {"B", {2, 1, 3, 2}}});
  const auto s = standardize(t, {"A", "B"});
  const auto r = pca(s);
  const auto a = score_index(s, r);
  EXPECT_NEAR(a.scores[3], 0.0, 1e-15);
  const auto b = score_index(standardize(t, {"A", "B"}), pca(standardize(t, {"A", "B"})));
  EXPECT_EQ(std::memcmp(a.scores.data(), b.scores.data(), a.scores.size() * sizeof(double)), 0);
}

TEST(Transfer, KnownCoefficientArithmetic) {
  const auto vars = table({{"PERCVAC", {10, 0, 10}},
                           {"PERCSNAP", {20, 0, kMissing}},
                           {"PERCRENT", {50, 0, 50}},
                           {"PERCBLACK", {80, 0, 80}},
                           {"PERCPOV", {30, 0, 30}}});
  const auto s = apply_transfer(five_variable_coefficients(), vars);
  // -3.498 + 0.42 + 0.50 + 0.95 + 0.88 + 0.78
  EXPECT_NEAR(s.scores[0], 0.032, 1e-9);
  EXPECT_DOUBLE_EQ(s.scores[1], -3.498);
  EXPECT_TRUE(is_missing(s.scores[2]));
}

TEST(Transfer, MissingVariable) {
  EXPECT_THROW(apply_transfer(five_variable_coefficients(), table({{"PERCVAC", {1.0}}})), Error);
}

TEST(Transfer, Affine) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0, 100);
  const auto c = five_variable_coefficients();
  for (int k = 0; k < 20; ++k) {
    std::vector<std::pair<std::string, std::vector<double>>> x, y, xy;
    for (const auto& [name, slope] : c.slopes) {
      const double a = u(rng), b = u(rng);
      x.push_back({name, {a}});
      y.push_back({name, {b}});
      xy.push_back({name, {a + b}});
    }
    const double lhs = apply_transfer(c, table(xy)).scores[0] - apply_transfer(c, table(y)).scores[0];
    const double rhs = apply_transfer(c, table(x)).scores[0] - c.intercept;
    EXPECT_NEAR(lhs, rhs, 1e-12);
  }
}

TEST(Transfer, FitRecoversExactRelationAndRoundTrips) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 100);
  std::vector<double> a(50), b(50), y(50);
  for (std::size_t i = 0; i < 50; ++i) {
    a[i] = u(rng);
    b[i] = u(rng);
    y[i] = -1.5 + 0.04 * a[i] - 0.02 * b[i];
  }
  const auto vars = table({{"A", a}, {"B", b}});
  const auto coef = fit_transfer(IndexSeries{"y", vars.geoids(), y}, vars, {"A", "B"});
  EXPECT_NEAR(coef.intercept, -1.5, 1e-10);
  EXPECT_NEAR(coef.slopes[0].second, 0.04, 1e-12);
  EXPECT_NEAR(coef.slopes[1].second, -0.02, 1e-12);
  const auto back = transfer_from_json(transfer_to_json(coef));
  EXPECT_EQ(back.intercept, coef.intercept);
  EXPECT_EQ(back.slopes, coef.slopes);
}

TEST(Transfer, DuplicateColumnIsRankDeficient) {
  const auto vars = table({{"A", {1, 2, 3, 4, 5}}, {"B", {1, 2, 3, 4, 5}}});
  try {
    fit_transfer(IndexSeries{"y", vars.geoids(), {1, 3, 2, 5, 4}}, vars, {"A", "B"});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::RankDeficient);
  }
}

TEST(IndexCorrelation, IdenticalAndReversed) {
  IndexSeries a{"a", {"x", "y", "z", "w"}, {1, 5, 2, 8}};
  IndexSeries b{"b", {"x", "y", "z", "w"}, {-1, -5, -2, -8}};
  EXPECT_DOUBLE_EQ(index_correlation(a, a), 1.0);
  EXPECT_DOUBLE_EQ(index_correlation(a, b), -1.0);
}
