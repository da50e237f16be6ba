#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "sva/objectives.hpp"

using sva::Clustering;
using sva::FeatureAllocation;
using Column = FeatureAllocation::Column;

namespace {

Eigen::MatrixXd randomMatrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = g(rng);
  return m;
}

Clustering randomClustering(Eigen::Index n, int k, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> u(0, k - 1);
  std::vector<int> labels(n);
  for (auto& l : labels) l = u(rng);
  labels[0] = 0;  // keep label 0 occupied so fromLabels yields no empty column
  return sva::canonicalize(FeatureAllocation::fromLabels(labels));
}

FeatureAllocation randomDistinctAllocation(Eigen::Index n, int k, std::mt19937_64& rng) {
  std::bernoulli_distribution bit(0.5);
  while (true) {
    std::vector<Column> cols;
    for (int j = 0; j < k; ++j) {
      Column c(n, 0);
      for (Eigen::Index i = 0; i < n; ++i) c[i] = bit(rng);
      cols.push_back(std::move(c));
    }
    const FeatureAllocation z = sva::canonicalize(FeatureAllocation(n, cols));
    if (z.featureCount() == k && !z.hasDuplicateColumns()) return z;
  }
}

}  // namespace

TEST_CASE("clustering objective examples") {
  Eigen::MatrixXd x(2, 1);
  x << 0, 2;
  // Two singleton clusters at the points.
  // Canonical column order puts the (0,1) cluster first, so the means rows
  // are (2, 0), not (0, 2).
  const Clustering singles = sva::canonicalize(FeatureAllocation::fromLabels({0, 1}));
  Eigen::MatrixXd a_singles(2, 1);
  a_singles << 2, 0;
  CHECK(sva::dp_means_objective(x, singles, a_singles, 1.0).total() == doctest::Approx(1.0));
  // One cluster at the midpoint.
  const Clustering joint = FeatureAllocation::fromLabels({0, 0});
  Eigen::MatrixXd a_joint(1, 1);
  a_joint << 1;
  const auto b = sva::dp_means_objective(x, joint, a_joint, 1.0);
  CHECK(b.fit == doctest::Approx(2.0));
  CHECK(b.penalty == doctest::Approx(0.0));
  // Single point at its own mean.
  Eigen::MatrixXd one(1, 1);
  one << 5;
  CHECK(sva::dp_means_objective(one, FeatureAllocation::fromLabels({0}), one, 2.0).total() ==
        doctest::Approx(0.0));
}

TEST_CASE("clustering penalty flag shifts the penalty by one unit") {
  Eigen::MatrixXd x(3, 2);
  x << 1, 2, 3, 4, 5, 6;
  const Clustering c = sva::canonicalize(FeatureAllocation::fromLabels({0, 1, 0}));
  const auto a = sva::optimal_means(x, c);
  const auto off = sva::dp_means_objective(x, c, a, 2.0, sva::ClusterPenalty::kOffsetByOne);
  const auto all = sva::dp_means_objective(x, c, a, 2.0, sva::ClusterPenalty::kAllClusters);
  CHECK(all.penalty - off.penalty == doctest::Approx(2.0));
  CHECK(all.fit == doctest::Approx(off.fit));
}

TEST_CASE("feature objective examples") {
  Eigen::MatrixXd x(1, 2);
  x << 1, 1;
  CHECK(sva::bp_means_objective(x, FeatureAllocation(1), Eigen::MatrixXd(0, 2), 1.0).total() ==
        doctest::Approx(2.0));

  Eigen::MatrixXd x2(2, 1);
  x2 << 1, 3;
  const FeatureAllocation z(2, {Column{1, 1}, Column{0, 1}});
  Eigen::MatrixXd a(2, 1);
  a << 1, 2;
  const auto b = sva::bp_means_objective(x2, z, a, 0.5);
  CHECK(b.fit == doctest::Approx(0.0));
  CHECK(b.total() == doctest::Approx(1.0));
}

TEST_CASE("feature objective at perfect reconstruction counts only the penalty") {
  std::mt19937_64 rng(3);
  const FeatureAllocation z = randomDistinctAllocation(5, 3, rng);
  const Eigen::MatrixXd a = randomMatrix(3, 2, rng);
  const Eigen::MatrixXd x = z.toDense() * a;
  CHECK(sva::bp_means_objective(x, z, a, 1.0).total() == doctest::Approx(3.0));
}

TEST_CASE("collapsed clustering objective examples") {
  Eigen::MatrixXd x(2, 1);
  x << 0, 2;
  const Clustering singles = sva::canonicalize(FeatureAllocation::fromLabels({0, 1}));
  const auto s = sva::collapsed_dp_objective(x, singles, 3.0);
  CHECK(s.fit == doctest::Approx(0.0));
  CHECK(s.penalty == doctest::Approx(3.0));
  const auto j = sva::collapsed_dp_objective(x, FeatureAllocation::fromLabels({0, 0}), 3.0);
  CHECK(j.fit == doctest::Approx(2.0));
}

TEST_CASE("collapsed clustering: sum form equals trace form") {
  std::mt19937_64 rng(17);
  for (int t = 0; t < 100; ++t) {
    const Eigen::MatrixXd x = randomMatrix(5, 2, rng);
    const Clustering c = randomClustering(5, 3, rng);
    const double sum_form = sva::collapsed_dp_objective(x, c, 1.0).fit;
    const double trace_form = sva::collapsed_fit_trace(x, c);
    CHECK(sum_form == doctest::Approx(trace_form).epsilon(1e-10));
  }
}

TEST_CASE("collapsed feature objective examples") {
  Eigen::MatrixXd x(2, 2);
  x << 1, 2, 3, 4;
  CHECK(sva::collapsed_bp_objective(x, FeatureAllocation(2), 1.0).fit ==
        doctest::Approx(x.squaredNorm()));
  const auto full = sva::collapsed_bp_objective(x, FeatureAllocation::identity(2), 1.0);
  CHECK(full.fit == doctest::Approx(0.0));
  CHECK(full.penalty == doctest::Approx(2.0));

  Eigen::MatrixXd x2(2, 1);
  x2 << 1, 3;
  const FeatureAllocation z(2, {Column{1, 1}, Column{0, 1}});
  CHECK(sva::collapsed_bp_objective(x2, z, 1.0).fit == doctest::Approx(0.0));
}

TEST_CASE("collapsed feature objective equals refit feature objective") {
  std::mt19937_64 rng(29);
  for (int t = 0; t < 100; ++t) {
    const Eigen::MatrixXd x = randomMatrix(6, 3, rng);
    const FeatureAllocation z = randomDistinctAllocation(6, 3, rng);
    const double collapsed = sva::collapsed_bp_objective(x, z, 0.7).total();
    const double refit =
        sva::bp_means_objective(x, z, sva::optimal_means(x, z), 0.7).total();
    CHECK(collapsed == doctest::Approx(refit).epsilon(1e-10));
  }
}

TEST_CASE("fixed-count feature objective") {
  Eigen::MatrixXd x(2, 1);
  x << -1, 1;
  const FeatureAllocation z(2, {Column{0, 1}});
  Eigen::MatrixXd a(1, 1);
  a << 1;
  CHECK(sva::k_features_objective(x, z, a) == doctest::Approx(1.0));
  // Enumeration of all four 1-column patterns confirms 1 is the best.
  for (int pattern = 0; pattern < 4; ++pattern) {
    std::vector<Column> cols;
    Column c{static_cast<std::uint8_t>(pattern & 1), static_cast<std::uint8_t>(pattern >> 1)};
    cols.push_back(c);
    const FeatureAllocation cand(2, cols);
    Eigen::MatrixXd best_a(1, 1);
    if (cand.columnSum(0) > 0)
      best_a = sva::optimal_means(x, sva::canonicalize(cand));
    const FeatureAllocation cc = sva::canonicalize(cand);
    const double obj = cc.featureCount() > 0 ? sva::k_features_objective(x, cc, best_a)
                                             : x.squaredNorm();
    CHECK(obj >= 1.0 - 1e-12);
  }
}

TEST_CASE("capped objectives agree with their uncapped forms under the cap") {
  std::mt19937_64 rng(31);
  for (int t = 0; t < 50; ++t) {
    const Eigen::MatrixXd x = randomMatrix(5, 2, rng);
    const Clustering c = randomClustering(5, 3, rng);
    const Eigen::MatrixXd ac = sva::optimal_means(x, c);
    CHECK(sva::finite_cluster_objective(x, c, ac, 1.3, 5).total() ==
          doctest::Approx(sva::dp_means_objective(x, c, ac, 1.3).total()));
    const FeatureAllocation z = randomDistinctAllocation(5, 2, rng);
    const Eigen::MatrixXd az = sva::optimal_means(x, z);
    CHECK(sva::finite_feature_objective(x, z, az, 1.3, 5).total() ==
          doctest::Approx(sva::bp_means_objective(x, z, az, 1.3).total()));
  }
  // Cap violations are rejected.
  const Eigen::MatrixXd x = randomMatrix(4, 1, rng);
  const Clustering c = randomClustering(4, 3, rng);
  if (c.featureCount() > 1)
    CHECK_THROWS_AS(
        sva::finite_cluster_objective(x, c, sva::optimal_means(x, c), 1.0, 1),
        std::invalid_argument);
}

TEST_CASE("clustering and feature objectives differ by one penalty unit on one-hot Z") {
  std::mt19937_64 rng(37);
  const Eigen::MatrixXd x = randomMatrix(6, 2, rng);
  const Clustering c = randomClustering(6, 3, rng);
  const Eigen::MatrixXd a = sva::optimal_means(x, c);
  const double dp = sva::dp_means_objective(x, c, a, 2.0).total();
  const double bp = sva::bp_means_objective(x, c, a, 2.0).total();
  CHECK(bp - dp == doctest::Approx(2.0));
}

TEST_CASE("scale-aware clustering objective") {
  std::mt19937_64 rng(41);
  const Eigen::MatrixXd x = randomMatrix(8, 2, rng);
  const Clustering c = randomClustering(8, 2, rng);
  const Eigen::MatrixXd a = sva::optimal_means(x, c);
  const double lambda2 = 1.5;

  sva::MahalanobisParams identity;
  identity.phi = Eigen::MatrixXd::Identity(2, 2);
  identity.nu = 2.0;
  identity.sigmas.assign(c.featureCount(), Eigen::MatrixXd::Identity(2, 2));
  const auto id_obj = sva::mahalanobis_objective(x, c, a, identity, lambda2);
  CHECK(id_obj.fit == doctest::Approx(sva::dp_means_objective(x, c, a, lambda2).fit));
  CHECK(id_obj.penalty == doctest::Approx(0.0));

  // Sigma = c I scales the fit by 1/c and adds lambda2 K D log c.
  const double scale = 3.0;
  sva::MahalanobisParams scaled = identity;
  for (auto& s : scaled.sigmas) s *= scale;
  const auto sc_obj = sva::mahalanobis_objective(x, c, a, scaled, lambda2);
  CHECK(sc_obj.fit == doctest::Approx(id_obj.fit / scale));
  CHECK(sc_obj.penalty ==
        doctest::Approx(lambda2 * static_cast<double>(c.featureCount()) * 2.0 *
                        std::log(scale)));

  // The scatter/lambda2 update is the stationary covariance choice.
  sva::MahalanobisParams stat = identity;
  for (Eigen::Index k = 0; k < c.featureCount(); ++k) {
    Eigen::MatrixXd scatter = Eigen::MatrixXd::Zero(2, 2);
    for (Eigen::Index i = 0; i < 8; ++i) {
      if (!c(i, k)) continue;
      const Eigen::VectorXd d = (x.row(i) - a.row(k)).transpose();
      scatter += d * d.transpose();
    }
    stat.sigmas[k] = scatter / lambda2;
  }
  const double at_stat = sva::mahalanobis_objective(x, c, a, stat, lambda2).total();
  for (double factor : {0.5, 2.0}) {
    sva::MahalanobisParams perturbed = stat;
    for (auto& s : perturbed.sigmas) s *= factor;
    CHECK(sva::mahalanobis_objective(x, c, a, perturbed, lambda2).total() >
          at_stat - 1e-9);
  }
}

TEST_CASE("least-squares means update") {
  std::mt19937_64 rng(43);
  const Eigen::MatrixXd x = randomMatrix(3, 2, rng);
  CHECK((sva::optimal_means(x, FeatureAllocation::identity(3)) - x).cwiseAbs().maxCoeff() <
        1e-12);
  const FeatureAllocation ones(3, {Column{1, 1, 1}});
  CHECK((sva::optimal_means(x, ones) - x.colwise().mean()).cwiseAbs().maxCoeff() < 1e-12);

  Eigen::MatrixXd x2(2, 1);
  x2 << 1, 3;
  const FeatureAllocation z(2, {Column{1, 1}, Column{0, 1}});
  const Eigen::MatrixXd a = sva::optimal_means(x2, z);
  CHECK(a(0, 0) == doctest::Approx(1.0));
  CHECK(a(1, 0) == doctest::Approx(2.0));

  const FeatureAllocation dup(2, {Column{1, 0}, Column{1, 0}});
  CHECK_THROWS_AS(sva::optimal_means(x2, dup), std::invalid_argument);
}

TEST_CASE("means update is a local minimum of the trace fit") {
  std::mt19937_64 rng(47);
  const Eigen::MatrixXd x = randomMatrix(6, 2, rng);
  const FeatureAllocation z = randomDistinctAllocation(6, 3, rng);
  const Eigen::MatrixXd a = sva::optimal_means(x, z);
  const double at_opt = sva::k_features_objective(x, z, a);
  for (int t = 0; t < 100; ++t) {
    Eigen::MatrixXd delta = randomMatrix(a.rows(), a.cols(), rng);
    delta *= 1e-3 / delta.norm();
    CHECK(sva::k_features_objective(x, z, a + delta) >= at_opt - 1e-12);
  }
}

TEST_CASE("trace fit gradient matches finite differences") {
  std::mt19937_64 rng(53);
  const Eigen::MatrixXd x = randomMatrix(6, 2, rng);
  const FeatureAllocation z = randomDistinctAllocation(6, 3, rng);
  const Eigen::MatrixXd a = randomMatrix(3, 2, rng);
  const Eigen::MatrixXd grad = sva::trace_fit_gradient(x, z, a);
  const double h = 1e-6;
  for (Eigen::Index r = 0; r < a.rows(); ++r)
    for (Eigen::Index col = 0; col < a.cols(); ++col) {
      Eigen::MatrixXd hi = a, lo = a;
      hi(r, col) += h;
      lo(r, col) -= h;
      const double fd =
          (sva::k_features_objective(x, z, hi) - sva::k_features_objective(x, z, lo)) /
          (2.0 * h);
      CHECK(grad(r, col) == doctest::Approx(fd).epsilon(1e-6));
    }
}

TEST_CASE("asymptotic ratios approach one for all four models") {
  Eigen::MatrixXd x(3, 2);
  x << -2.4, -0.9, 2.2, 0.1, -1.4, 2.1;
  const Clustering c = sva::canonicalize(FeatureAllocation::fromLabels({0, 1, 1}));
  const FeatureAllocation z(3, {Column{1, 1, 0}, Column{0, 1, 1}});
  const std::vector<double> grid{1e-2, 1e-3, 1e-4, 1e-5};
  const double lambda2 = 1.0, rho2 = 0.5;
  const Eigen::MatrixXd ac = sva::optimal_means(x, c);
  const Eigen::MatrixXd az = sva::optimal_means(x, z);

  auto check_monotone = [&](sva::ModelKind model, const sva::FeatureAllocation& alloc,
                            const Eigen::MatrixXd* a) {
    const auto gaps = sva::asymptotic_gap(model, x, alloc, a, lambda2, grid, rho2);
    REQUIRE(gaps.size() == 4);
    double prev = std::numeric_limits<double>::infinity();
    for (const auto& [s2, ratio] : gaps) {
      const double err = std::abs(ratio - 1.0);
      CHECK(err < prev);
      prev = err;
    }
    CHECK(std::abs(gaps.back().second - 1.0) < 1e-2);
  };
  check_monotone(sva::ModelKind::CrpMixture, c, &ac);
  check_monotone(sva::ModelKind::IbpLinearGaussian, z, &az);
  check_monotone(sva::ModelKind::CollapsedCrp, c, nullptr);
  check_monotone(sva::ModelKind::CollapsedIbp, z, nullptr);
}

TEST_CASE("asymptotic verifier validates its grid") {
  Eigen::MatrixXd x(2, 1);
  x << 0, 2;
  const Clustering c = FeatureAllocation::fromLabels({0, 0});
  const Eigen::MatrixXd a = sva::optimal_means(x, c);
  CHECK_THROWS_AS(
      sva::asymptotic_gap(sva::ModelKind::CrpMixture, x, c, &a, 1.0, {1e-3, 1e-2}, 1.0),
      std::invalid_argument);
}
