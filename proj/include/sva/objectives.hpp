#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "sva/allocation.hpp"
#include "sva/params.hpp"
#include "sva/priors.hpp"

// Exact evaluators for the limiting objectives, the closed-form mean update,
// and the numeric verifier connecting each objective to its Bayesian joint.

namespace sva {

enum class ClusterPenalty {
  kOffsetByOne,  // (K+ - 1) lambda2, the EPPF-derived form
  kAllClusters,  // K+ lambda2; same minimizers, exposed for comparison
};

namespace detail {

inline void requireConformable(const DataMatrix& x, const FeatureAllocation& z,
                               const MeansMatrix& a, const char* where) {
  if (z.rows() != x.rows() || z.featureCount() != a.rows() ||
      (a.rows() > 0 && a.cols() != x.cols()))
    throw std::invalid_argument(std::string(where) + ": dimension mismatch");
}

inline double traceFit(const DataMatrix& x, const FeatureAllocation& z, const MeansMatrix& a) {
  Eigen::MatrixXd resid = x;
  if (z.featureCount() > 0) resid -= z.toDense() * a;
  return resid.squaredNorm();
}

}  // namespace detail

// Sum-of-squares clustering objective with a lambda2 penalty per cluster
// after the first.
inline ObjectiveBreakdown dp_means_objective(const DataMatrix& x, const Clustering& c,
                                             const MeansMatrix& a, double lambda2,
                                             ClusterPenalty penalty = ClusterPenalty::kOffsetByOne) {
  requireClustering(c, "dp_means_objective");
  detail::requireConformable(x, c, a, "dp_means_objective");
  ObjectiveBreakdown out;
  out.fit = detail::traceFit(x, c, a);
  const double k = static_cast<double>(c.featureCount());
  out.penalty = lambda2 * (penalty == ClusterPenalty::kOffsetByOne ? k - 1.0 : k);
  return out;
}

// Trace reconstruction objective with a lambda2 penalty per feature.
inline ObjectiveBreakdown bp_means_objective(const DataMatrix& x, const FeatureAllocation& z,
                                             const MeansMatrix& a, double lambda2) {
  detail::requireConformable(x, z, a, "bp_means_objective");
  ObjectiveBreakdown out;
  out.fit = detail::traceFit(x, z, a);
  out.penalty = lambda2 * static_cast<double>(z.featureCount());
  return out;
}

// Collapsed clustering objective: per-cluster scatter around the empirical
// cluster means. Also computable as tr(X'(I - Z(Z'Z)^{-1}Z')X); see
// collapsed_fit_trace below for that route.
inline ObjectiveBreakdown collapsed_dp_objective(const DataMatrix& x, const Clustering& c,
                                                 double lambda2) {
  requireClustering(c, "collapsed_dp_objective");
  if (c.rows() != x.rows())
    throw std::invalid_argument("collapsed_dp_objective: dimension mismatch");
  ObjectiveBreakdown out;
  for (Eigen::Index k = 0; k < c.featureCount(); ++k) {
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(x.cols());
    Eigen::Index count = 0;
    for (Eigen::Index i = 0; i < c.rows(); ++i)
      if (c(i, k)) {
        mean += x.row(i);
        ++count;
      }
    mean /= static_cast<double>(count);
    for (Eigen::Index i = 0; i < c.rows(); ++i)
      if (c(i, k)) out.fit += (x.row(i) - mean).squaredNorm();
  }
  out.penalty = lambda2 * (static_cast<double>(c.featureCount()) - 1.0);
  return out;
}

// Projection-residual fit tr(X'(I - Z(Z'Z)^{-1}Z')X), via Cholesky of the
// Gram matrix. Requires distinct non-empty columns.
inline double collapsed_fit_trace(const DataMatrix& x, const FeatureAllocation& z) {
  if (z.rows() != x.rows())
    throw std::invalid_argument("collapsed_fit_trace: dimension mismatch");
  double fit = x.squaredNorm();
  if (z.featureCount() > 0) {
    const Eigen::MatrixXd zd = z.toDense();
    const Eigen::MatrixXd gram = zd.transpose() * zd;
    Eigen::LLT<Eigen::MatrixXd> llt(gram);
    if (llt.info() != Eigen::Success)
      throw std::invalid_argument("collapsed_fit_trace: singular Gram (duplicate or empty columns)");
    const Eigen::MatrixXd ztx = zd.transpose() * x;
    fit -= (ztx.array() * llt.solve(ztx).array()).sum();
  }
  return fit;
}

inline ObjectiveBreakdown collapsed_bp_objective(const DataMatrix& x, const FeatureAllocation& z,
                                                 double lambda2) {
  ObjectiveBreakdown out;
  out.fit = collapsed_fit_trace(x, z);
  out.penalty = lambda2 * static_cast<double>(z.featureCount());
  return out;
}

// Plain trace fit with no penalty; the fixed-K feature analogue of K-means.
inline double k_features_objective(const DataMatrix& x, const FeatureAllocation& z,
                                   const MeansMatrix& a) {
  detail::requireConformable(x, z, a, "k_features_objective");
  return detail::traceFit(x, z, a);
}

inline ObjectiveBreakdown finite_cluster_objective(const DataMatrix& x, const Clustering& c,
                                                   const MeansMatrix& a, double lambda2,
                                                   Eigen::Index cap_k) {
  if (c.featureCount() > cap_k)
    throw std::invalid_argument("finite_cluster_objective: K+ exceeds cap");
  ObjectiveBreakdown out = dp_means_objective(x, c, a, lambda2);
  out.penalty = lambda2 * (static_cast<double>(std::min(cap_k, c.featureCount())) - 1.0);
  return out;
}

inline ObjectiveBreakdown finite_feature_objective(const DataMatrix& x, const FeatureAllocation& z,
                                                   const MeansMatrix& a, double lambda2,
                                                   Eigen::Index cap_k) {
  if (z.featureCount() > cap_k)
    throw std::invalid_argument("finite_feature_objective: K+ exceeds cap");
  ObjectiveBreakdown out = bp_means_objective(x, z, a, lambda2);
  out.penalty = lambda2 * static_cast<double>(std::min(cap_k, z.featureCount()));
  return out;
}

// Mahalanobis clustering objective:
//   sum_k sum_{n in k} (x_n - mu_k)' Sigma_k^{-1} (x_n - mu_k)
//     + lambda2 sum_k log|Sigma_k|
// The penalty may be negative; ObjectiveBreakdown's usual nonnegativity does
// not hold for this evaluator.
inline ObjectiveBreakdown mahalanobis_objective(const DataMatrix& x, const Clustering& c,
                                                const MeansMatrix& a, const MahalanobisParams& mp,
                                                double lambda2) {
  requireClustering(c, "mahalanobis_objective");
  detail::requireConformable(x, c, a, "mahalanobis_objective");
  if (static_cast<Eigen::Index>(mp.sigmas.size()) != c.featureCount())
    throw std::invalid_argument("mahalanobis_objective: one Sigma per cluster required");
  ObjectiveBreakdown out;
  for (Eigen::Index k = 0; k < c.featureCount(); ++k) {
    Eigen::LLT<Eigen::MatrixXd> llt(mp.sigmas[k]);
    if (llt.info() != Eigen::Success)
      throw std::invalid_argument("mahalanobis_objective: Sigma_k not positive definite");
    for (Eigen::Index i = 0; i < c.rows(); ++i) {
      if (!c(i, k)) continue;
      const Eigen::VectorXd d = (x.row(i) - a.row(k)).transpose();
      out.fit += d.dot(llt.solve(d));
    }
    out.penalty +=
        lambda2 * 2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
  }
  return out;
}

// Least-squares mean update A = (Z'Z)^{-1} Z'X via Cholesky solve.
inline MeansMatrix optimal_means(const DataMatrix& x, const FeatureAllocation& z) {
  if (z.featureCount() < 1) throw std::invalid_argument("optimal_means: K+ must be >= 1");
  if (z.rows() != x.rows()) throw std::invalid_argument("optimal_means: dimension mismatch");
  const Eigen::MatrixXd zd = z.toDense();
  const Eigen::MatrixXd gram = zd.transpose() * zd;
  Eigen::LLT<Eigen::MatrixXd> llt(gram);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("optimal_means: singular Gram (duplicate or empty columns)");
  return llt.solve(zd.transpose() * x);
}

// Gradient of the trace fit with respect to A (used by tests as a
// finite-difference cross-check): -2 Z'(X - ZA).
inline Eigen::MatrixXd trace_fit_gradient(const DataMatrix& x, const FeatureAllocation& z,
                                          const MeansMatrix& a) {
  detail::requireConformable(x, z, a, "trace_fit_gradient");
  const Eigen::MatrixXd zd = z.toDense();
  return -2.0 * zd.transpose() * (x - zd * a);
}

// For each sigma2 in a decreasing grid, the ratio of -2 sigma2 times the
// exact negative log joint (with theta or gamma tied to sigma2 through
// lambda2) to the matching limiting objective. The ratios approach 1 as
// sigma2 -> 0.
inline std::vector<std::pair<double, double>> asymptotic_gap(
    ModelKind model, const DataMatrix& x, const FeatureAllocation& z, const MeansMatrix* a,
    double lambda2, const std::vector<double>& sigma2_grid, double rho2) {
  double limiting = 0.0;
  switch (model) {
    case ModelKind::CrpMixture:
      limiting = dp_means_objective(x, z, *a, lambda2).total();
      break;
    case ModelKind::IbpLinearGaussian:
      limiting = bp_means_objective(x, z, *a, lambda2).total();
      break;
    case ModelKind::CollapsedCrp:
      limiting = collapsed_dp_objective(x, z, lambda2).total();
      break;
    case ModelKind::CollapsedIbp:
      limiting = collapsed_bp_objective(x, z, lambda2).total();
      break;
    default:
      throw std::invalid_argument("asymptotic_gap: unsupported model");
  }
  if (limiting == 0.0)
    throw std::invalid_argument("asymptotic_gap: limiting objective is zero on this instance");
  for (std::size_t i = 1; i < sigma2_grid.size(); ++i)
    if (!(sigma2_grid[i] < sigma2_grid[i - 1]))
      throw std::invalid_argument("asymptotic_gap: sigma2 grid must be strictly decreasing");

  std::vector<std::pair<double, double>> out;
  out.reserve(sigma2_grid.size());
  for (double s2 : sigma2_grid) {
    const Hyperparams hp(lambda2, s2, rho2);
    const double nll = joint_neg_log(model, x, z, a, hp);
    out.emplace_back(s2, 2.0 * s2 * nll / limiting);
  }
  return out;
}

}  // namespace sva
