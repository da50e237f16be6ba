#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "sva/allocation.hpp"
#include "sva/objectives.hpp"
#include "sva/priors.hpp"

// Brute-force global optimizers and a quadrature check. Exponential-time by
// design; used for testing and acceptance only.

namespace sva {

// Every set partition of {0..N-1} exactly once, as restricted-growth label
// vectors turned into canonical clusterings. Bell(N) results.
inline std::vector<Clustering> enumerate_partitions(Eigen::Index n) {
  if (n < 1 || n > 10) throw std::invalid_argument("enumerate_partitions: need 1 <= N <= 10");
  std::vector<Clustering> out;
  std::vector<int> labels(n, 0);
  std::function<void(Eigen::Index, int)> rec = [&](Eigen::Index i, int max_label) {
    if (i == n) {
      out.push_back(canonicalize(FeatureAllocation::fromLabels(labels)));
      return;
    }
    for (int l = 0; l <= max_label + 1; ++l) {
      labels[i] = l;
      rec(i + 1, std::max(max_label, l));
    }
  };
  rec(0, -1);
  return out;
}

// Every canonical feature allocation with 0 <= K+ <= k_max: multisets of
// non-zero binary columns, emitted in canonical (sorted) order.
inline std::vector<FeatureAllocation> enumerate_feature_allocations(Eigen::Index n,
                                                                    Eigen::Index k_max) {
  if (n < 1 || n > 4 || k_max < 0 || k_max > 3)
    throw std::invalid_argument("enumerate_feature_allocations: need N <= 4, Kmax <= 3");
  std::vector<FeatureAllocation::Column> patterns;
  for (std::uint32_t bits = 1; bits < (1u << n); ++bits) {
    FeatureAllocation::Column c(n);
    // Row 0 in the high bit so increasing integer order matches the
    // lexicographic canonical column order.
    for (Eigen::Index i = 0; i < n; ++i) c[i] = (bits >> (n - 1 - i)) & 1u;
    patterns.push_back(std::move(c));
  }
  std::vector<FeatureAllocation> out;
  std::vector<FeatureAllocation::Column> cols;
  std::function<void(std::size_t)> rec = [&](std::size_t start) {
    out.emplace_back(n, cols);
    if (static_cast<Eigen::Index>(cols.size()) == k_max) return;
    for (std::size_t p = start; p < patterns.size(); ++p) {
      cols.push_back(patterns[p]);
      rec(p);  // multiset: the same pattern may repeat
      cols.pop_back();
    }
  };
  rec(0);
  return out;
}

// Global minimum of the penalized clustering objective by exhaustive
// partition search, with empirical cluster means.
inline std::pair<Clustering, double> oracle_dp_optimum(const DataMatrix& x, double lambda2) {
  if (x.rows() > 8) throw std::invalid_argument("oracle_dp_optimum: N must be <= 8");
  Clustering best;
  double best_obj = std::numeric_limits<double>::infinity();
  for (const Clustering& c : enumerate_partitions(x.rows())) {
    const double obj = collapsed_dp_objective(x, c, lambda2).total();
    if (obj < best_obj) {
      best_obj = obj;
      best = c;
    }
  }
  return {best, best_obj};
}

// Global minimum of the penalized feature objective over the enumerated
// family, with A set to the least-squares optimum per candidate. Candidates
// with duplicate columns are skipped: merging them never hurts, so some
// duplicate-free candidate is at least as good.
inline std::pair<FeatureAllocation, double> oracle_bp_optimum(const DataMatrix& x, double lambda2,
                                                              Eigen::Index k_max) {
  FeatureAllocation best(x.rows());
  double best_obj = x.squaredNorm();
  for (const FeatureAllocation& z : enumerate_feature_allocations(x.rows(), k_max)) {
    if (z.featureCount() == 0 || z.hasDuplicateColumns()) continue;
    // Distinct columns can still be linearly dependent (singular Gram); any
    // such candidate is dominated by a full-rank subset spanning the same
    // space with a smaller penalty, so it is safe to skip.
    double obj = 0.0;
    try {
      obj = collapsed_bp_objective(x, z, lambda2).total();
    } catch (const std::invalid_argument&) {
      continue;
    }
    if (obj < best_obj) {
      best_obj = obj;
      best = z;
    }
  }
  return {best, best_obj};
}

// log of integral p(X|Z,A) p(A) dA on a tensor-product Simpson grid with
// log-sum-exp accumulation. Dimensionality K+ * D must stay at most 4.
inline double collapsed_likelihood_quadrature(const DataMatrix& x, const FeatureAllocation& z,
                                              double sigma2, double rho2) {
  const Eigen::Index k = z.featureCount();
  const Eigen::Index d = x.cols();
  const Eigen::Index dims = k * d;
  if (dims > 4)
    throw std::invalid_argument("collapsed_likelihood_quadrature: K+ * D must be <= 4");
  if (dims == 0) {
    const double nd = static_cast<double>(x.rows()) * static_cast<double>(d);
    return -0.5 * nd * (detail::kLog2Pi + std::log(sigma2)) - x.squaredNorm() / (2.0 * sigma2);
  }

  const double half_width = 8.0 * std::sqrt(rho2) + 2.0 * x.cwiseAbs().maxCoeff();
  const Eigen::Index points = dims == 1 ? 4001 : dims == 2 ? 801 : dims == 3 ? 161 : 81;
  const double h = 2.0 * half_width / static_cast<double>(points - 1);
  auto simpson_log_w = [&](Eigen::Index i) {
    if (i == 0 || i == points - 1) return 0.0;
    return i % 2 == 1 ? std::log(4.0) : std::log(2.0);
  };

  const Eigen::MatrixXd zd = z.toDense();
  std::vector<Eigen::Index> idx(dims, 0);
  double log_sum = -std::numeric_limits<double>::infinity();
  MeansMatrix a(k, d);
  while (true) {
    double log_w = 0.0;
    for (Eigen::Index m = 0; m < dims; ++m) {
      a(m / d, m % d) = -half_width + h * static_cast<double>(idx[m]);
      log_w += simpson_log_w(idx[m]);
    }
    const double log_val = log_linear_gaussian_likelihood(x, z, a, sigma2) +
                           log_means_prior(a, rho2) + log_w;
    if (log_val > log_sum)
      log_sum = log_val + std::log1p(std::exp(log_sum - log_val));
    else
      log_sum += std::log1p(std::exp(log_val - log_sum));

    Eigen::Index m = 0;
    while (m < dims && ++idx[m] == points) idx[m++] = 0;
    if (m == dims) break;
  }
  return log_sum + static_cast<double>(dims) * std::log(h / 3.0);
}

}  // namespace sva
