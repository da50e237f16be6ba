#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "sva/allocation.hpp"

namespace sva {

// Model hyperparameters. The CRP concentration theta and the IBP mass gamma
// are always derived from (lambda2, sigma2) as exp(-lambda2 / (2 sigma2));
// keeping them in log form avoids underflow for small sigma2.
struct Hyperparams {
  double lambda2 = 1.0;
  double sigma2 = 1.0;
  double rho2 = 1.0;
  std::optional<Eigen::Index> cap_k;

  Hyperparams() = default;
  Hyperparams(double lambda2_in, double sigma2_in, double rho2_in,
              std::optional<Eigen::Index> cap = std::nullopt)
      : lambda2(lambda2_in), sigma2(sigma2_in), rho2(rho2_in), cap_k(cap) {
    if (lambda2 <= 0.0) throw std::invalid_argument("Hyperparams: lambda2 must be > 0");
    if (sigma2 <= 0.0) throw std::invalid_argument("Hyperparams: sigma2 must be > 0");
    if (rho2 <= 0.0) throw std::invalid_argument("Hyperparams: rho2 must be > 0");
    if (cap_k && *cap_k < 1) throw std::invalid_argument("Hyperparams: cap_k must be >= 1");
  }

  double logTheta() const { return -lambda2 / (2.0 * sigma2); }
  double theta() const { return std::exp(logTheta()); }
  double logGamma() const { return -lambda2 / (2.0 * sigma2); }
  double gamma() const { return std::exp(logGamma()); }
};

// Per-cluster covariance model for the Mahalanobis objective.
struct MahalanobisParams {
  Eigen::MatrixXd phi;                 // inverse-Wishart scale, D x D SPD
  double nu = 0.0;                     // degrees of freedom, > D - 1
  std::vector<Eigen::MatrixXd> sigmas; // one SPD D x D matrix per cluster
};

struct ObjectiveBreakdown {
  double fit = 0.0;
  double penalty = 0.0;
  double total() const { return fit + penalty; }
};

struct SolverConfig {
  int max_iters = 500;
  double change_tol = 1e-12;  // minimum strict decrease to accept a structural change
  int restarts = 1;
  std::uint64_t base_seed = 0;
  int exhaustive_row_cap = 20;  // exact 2^K row update up to this many features
  int threads = 1;              // worker threads for restarts; result is thread-count independent
};

struct SolveResult {
  FeatureAllocation allocation;
  std::optional<MeansMatrix> means;  // absent for collapsed solvers
  ObjectiveBreakdown objective;
  std::vector<double> trace;  // objective total at the end of each iteration
  int iterations = 0;
  bool converged = false;
  std::uint64_t seed = 0;
};

}  // namespace sva
