#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#include "sva/allocation.hpp"
#include "sva/params.hpp"

// Exact log-probabilities for the generative models whose small-variance
// limits produce the penalized objectives in objectives.hpp. Everything is
// computed with std::lgamma in log space; the *_logparam variants accept the
// log of theta/gamma directly so the asymptotic regime (log param ~ -1/sigma2)
// stays finite.

namespace sva {

enum class ModelKind {
  CrpMixture,
  IbpLinearGaussian,
  CollapsedCrp,
  CollapsedIbp,
  FiniteDirichletMultinomial,
  FiniteBetaBernoulli,
};

namespace detail {
constexpr double kLog2Pi = 1.8378770664093454836;
}

// CRP exchangeable partition probability function:
//   theta^(K-1) * Gamma(theta+1)/Gamma(theta+N) * prod_k (S_k - 1)!
inline double log_eppf_logparam(const Clustering& c, double log_theta) {
  requireClustering(c, "log_eppf");
  const double theta = std::exp(log_theta);
  const Eigen::Index n = c.rows();
  const Eigen::Index k_plus = c.featureCount();
  double out = static_cast<double>(k_plus - 1) * log_theta + std::lgamma(theta + 1.0) -
               std::lgamma(theta + static_cast<double>(n));
  for (Eigen::Index k = 0; k < k_plus; ++k)
    out += std::lgamma(static_cast<double>(c.columnSum(k)));
  return out;
}

inline double log_eppf(const Clustering& c, double theta) {
  if (theta <= 0.0) throw std::invalid_argument("log_eppf: theta must be > 0");
  return log_eppf_logparam(c, std::log(theta));
}

// IBP exchangeable feature probability function:
//   gamma^K exp(-gamma H_N) / prod_h Ktilde_h!
//     * prod_k (S_k - 1)! (N - S_k)! / N!
inline double log_efpf_logparam(const FeatureAllocation& z, double log_gamma) {
  const double gamma = std::exp(log_gamma);
  const Eigen::Index n = z.rows();
  if (n < 1) throw std::invalid_argument("log_efpf: N must be >= 1");
  double harmonic = 0.0;
  for (Eigen::Index i = 1; i <= n; ++i) harmonic += 1.0 / static_cast<double>(i);
  double out = static_cast<double>(z.featureCount()) * log_gamma - gamma * harmonic;
  for (Eigen::Index m : z.uniqueColumnMultiplicities())
    out -= std::lgamma(static_cast<double>(m) + 1.0);
  const double lg_n1 = std::lgamma(static_cast<double>(n) + 1.0);
  for (Eigen::Index k = 0; k < z.featureCount(); ++k) {
    const double s = static_cast<double>(z.columnSum(k));
    if (s < 1.0) throw std::invalid_argument("log_efpf: empty feature column");
    out += std::lgamma(s) + std::lgamma(static_cast<double>(n) - s + 1.0) - lg_n1;
  }
  return out;
}

inline double log_efpf(const FeatureAllocation& z, double gamma) {
  if (gamma <= 0.0) throw std::invalid_argument("log_efpf: gamma must be > 0");
  return log_efpf_logparam(z, std::log(gamma));
}

// Linear-Gaussian likelihood:
//   -(ND/2) log(2 pi sigma2) - tr[(X-ZA)'(X-ZA)] / (2 sigma2)
inline double log_linear_gaussian_likelihood(const DataMatrix& x, const FeatureAllocation& z,
                                             const MeansMatrix& a, double sigma2) {
  if (sigma2 <= 0.0) throw std::invalid_argument("log_linear_gaussian_likelihood: sigma2 must be > 0");
  if (z.rows() != x.rows() || z.featureCount() != a.rows() ||
      (a.rows() > 0 && a.cols() != x.cols()))
    throw std::invalid_argument("log_linear_gaussian_likelihood: dimension mismatch");
  const double nd = static_cast<double>(x.rows()) * static_cast<double>(x.cols());
  Eigen::MatrixXd resid = x;
  if (z.featureCount() > 0) resid -= z.toDense() * a;
  return -0.5 * nd * (detail::kLog2Pi + std::log(sigma2)) -
         resid.squaredNorm() / (2.0 * sigma2);
}

// Marginal likelihood with the means integrated out. With M = Z'Z + (sigma2/rho2) I_K:
//   log p(X|Z) = -(ND/2) log(2 pi) - ((N-K)D/2) log sigma2 - (KD/2) log rho2
//                - (D/2) log|M| - tr(X'(I - Z M^{-1} Z')X) / (2 sigma2)
// Evaluated through a Cholesky factorization of M; requires distinct columns.
inline double log_collapsed_likelihood(const DataMatrix& x, const FeatureAllocation& z,
                                       double sigma2, double rho2) {
  if (sigma2 <= 0.0 || rho2 <= 0.0)
    throw std::invalid_argument("log_collapsed_likelihood: variances must be > 0");
  if (z.rows() != x.rows())
    throw std::invalid_argument("log_collapsed_likelihood: dimension mismatch");
  const double n = static_cast<double>(x.rows());
  const double d = static_cast<double>(x.cols());
  const double k = static_cast<double>(z.featureCount());
  double quad = x.squaredNorm();
  double log_det_m = 0.0;
  if (z.featureCount() > 0) {
    const Eigen::MatrixXd zd = z.toDense();
    Eigen::MatrixXd m = zd.transpose() * zd;
    m.diagonal().array() += sigma2 / rho2;
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("log_collapsed_likelihood: regularized Gram not SPD");
    const Eigen::MatrixXd ztx = zd.transpose() * x;
    quad -= (ztx.array() * llt.solve(ztx).array()).sum();
    log_det_m = 2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
  }
  return -0.5 * n * d * detail::kLog2Pi - 0.5 * (n - k) * d * std::log(sigma2) -
         0.5 * k * d * std::log(rho2) - 0.5 * d * log_det_m - quad / (2.0 * sigma2);
}

// Dirichlet-multinomial clustering prior over K labeled clusters:
//   Gamma(K theta)/Gamma(N + K theta) * prod_k Gamma(S_k + theta)/Gamma(theta)
// Empty clusters contribute a unit factor. Stable form uses
// lgamma(x) = lgamma(x+1) - log x for the two small arguments.
inline double log_dirichlet_multinomial_prior_logparam(const Clustering& c, double log_theta,
                                                       Eigen::Index cap_k) {
  requireClustering(c, "log_dirichlet_multinomial_prior");
  if (c.featureCount() > cap_k)
    throw std::invalid_argument("log_dirichlet_multinomial_prior: K+ exceeds cap");
  const double theta = std::exp(log_theta);
  const double n = static_cast<double>(c.rows());
  const double k = static_cast<double>(cap_k);
  double out = std::lgamma(k * theta + 1.0) - std::log(k) - log_theta -
               std::lgamma(n + k * theta);
  for (Eigen::Index j = 0; j < c.featureCount(); ++j) {
    const double s = static_cast<double>(c.columnSum(j));
    out += std::lgamma(s + theta) - std::lgamma(theta + 1.0) + log_theta;
  }
  return out;
}

inline double log_dirichlet_multinomial_prior(const Clustering& c, double theta,
                                              Eigen::Index cap_k) {
  if (theta <= 0.0)
    throw std::invalid_argument("log_dirichlet_multinomial_prior: theta must be > 0");
  return log_dirichlet_multinomial_prior_logparam(c, std::log(theta), cap_k);
}

// Beta-Bernoulli feature prior over exactly K columns (absent columns all-zero):
//   prod_k Gamma(S_k + gamma) Gamma(N - S_k + 1) / Gamma(N + gamma + 1)
//          * Gamma(gamma + 1) / Gamma(gamma)
inline double log_beta_bernoulli_prior_logparam(const FeatureAllocation& z, double log_gamma,
                                                Eigen::Index cap_k) {
  if (z.featureCount() > cap_k)
    throw std::invalid_argument("log_beta_bernoulli_prior: K+ exceeds cap");
  const double gamma = std::exp(log_gamma);
  const double n = static_cast<double>(z.rows());
  double out = 0.0;
  for (Eigen::Index k = 0; k < z.featureCount(); ++k) {
    const double s = static_cast<double>(z.columnSum(k));
    if (s >= 1.0) {
      // Gamma(gamma+1)/Gamma(gamma) = gamma, folded in as log_gamma.
      out += std::lgamma(s + gamma) + log_gamma + std::lgamma(n - s + 1.0) -
             std::lgamma(n + gamma + 1.0);
    }
  }
  const std::vector<Eigen::Index> sums = z.columnSums();
  const Eigen::Index empty =
      cap_k - z.featureCount() +
      static_cast<Eigen::Index>(
          std::count_if(sums.begin(), sums.end(), [](Eigen::Index s) { return s == 0; }));
  out += static_cast<double>(empty) *
         (std::lgamma(gamma + 1.0) + std::lgamma(n + 1.0) - std::lgamma(n + gamma + 1.0));
  return out;
}

inline double log_beta_bernoulli_prior(const FeatureAllocation& z, double gamma,
                                       Eigen::Index cap_k) {
  if (gamma <= 0.0)
    throw std::invalid_argument("log_beta_bernoulli_prior: gamma must be > 0");
  return log_beta_bernoulli_prior_logparam(z, std::log(gamma), cap_k);
}

// iid zero-mean Gaussian prior on the mean rows: prod_k N(mu_k | 0, rho2 I_D).
inline double log_means_prior(const MeansMatrix& a, double rho2) {
  if (rho2 <= 0.0) throw std::invalid_argument("log_means_prior: rho2 must be > 0");
  const double kd = static_cast<double>(a.rows()) * static_cast<double>(a.cols());
  return -0.5 * kd * (detail::kLog2Pi + std::log(rho2)) - a.squaredNorm() / (2.0 * rho2);
}

// Negative log joint of the chosen generative model, assembled from the
// component log functions above. A is required iff the model is uncollapsed.
inline double joint_neg_log(ModelKind model, const DataMatrix& x, const FeatureAllocation& z,
                            const MeansMatrix* a, const Hyperparams& hp) {
  const bool needs_means = model != ModelKind::CollapsedCrp && model != ModelKind::CollapsedIbp;
  if (needs_means && a == nullptr)
    throw std::invalid_argument("joint_neg_log: model requires a means matrix");
  if (!needs_means && a != nullptr)
    throw std::invalid_argument("joint_neg_log: collapsed model takes no means matrix");
  switch (model) {
    case ModelKind::CrpMixture:
      return -(log_linear_gaussian_likelihood(x, z, *a, hp.sigma2) +
               log_eppf_logparam(z, hp.logTheta()) + log_means_prior(*a, hp.rho2));
    case ModelKind::IbpLinearGaussian:
      return -(log_linear_gaussian_likelihood(x, z, *a, hp.sigma2) +
               log_efpf_logparam(z, hp.logGamma()) + log_means_prior(*a, hp.rho2));
    case ModelKind::CollapsedCrp:
      return -(log_collapsed_likelihood(x, z, hp.sigma2, hp.rho2) +
               log_eppf_logparam(z, hp.logTheta()));
    case ModelKind::CollapsedIbp:
      return -(log_collapsed_likelihood(x, z, hp.sigma2, hp.rho2) +
               log_efpf_logparam(z, hp.logGamma()));
    case ModelKind::FiniteDirichletMultinomial: {
      if (!hp.cap_k) throw std::invalid_argument("joint_neg_log: finite model requires cap_k");
      return -(log_linear_gaussian_likelihood(x, z, *a, hp.sigma2) +
               log_dirichlet_multinomial_prior_logparam(z, hp.logTheta(), *hp.cap_k) +
               log_means_prior(*a, hp.rho2));
    }
    case ModelKind::FiniteBetaBernoulli: {
      if (!hp.cap_k) throw std::invalid_argument("joint_neg_log: finite model requires cap_k");
      return -(log_linear_gaussian_likelihood(x, z, *a, hp.sigma2) +
               log_beta_bernoulli_prior_logparam(z, hp.logGamma(), *hp.cap_k) +
               log_means_prior(*a, hp.rho2));
    }
  }
  throw std::logic_error("joint_neg_log: unknown model");
}

}  // namespace sva
