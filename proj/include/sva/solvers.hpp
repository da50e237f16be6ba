#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <thread>
#include <utility>
#include <vector>

#include "sva/allocation.hpp"
#include "sva/objectives.hpp"
#include "sva/params.hpp"

// Coordinate-descent solvers for the penalized objectives, ++-style
// initialization, the stepwise model-selection wrapper, and a deterministic
// multi-restart executor. A single run is sequential with sweep order fixed
// to row 0..N-1; restarts are independent and may execute concurrently with
// a deterministic index-ordered reduction.

namespace sva {

enum class InitMode { kCluster, kFeature };

namespace detail {

inline Eigen::RowVectorXd columnMean(const DataMatrix& x) {
  return x.colwise().mean();
}

// Sample an index with probability proportional to w; uniform when all
// weights vanish.
inline Eigen::Index sampleProportional(const Eigen::VectorXd& w, std::mt19937_64& rng) {
  const double total = w.sum();
  if (total <= 0.0) {
    std::uniform_int_distribution<Eigen::Index> u(0, w.size() - 1);
    return u(rng);
  }
  std::uniform_real_distribution<double> u(0.0, total);
  double t = u(rng);
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    t -= w(i);
    if (t <= 0.0) return i;
  }
  return w.size() - 1;
}

// K-means++ seeding: first center uniform, then squared-distance sampling.
inline Eigen::MatrixXd seedCentersPlusPlus(const DataMatrix& x, Eigen::Index k,
                                           std::mt19937_64& rng) {
  const Eigen::Index n = x.rows();
  Eigen::MatrixXd centers(k, x.cols());
  std::uniform_int_distribution<Eigen::Index> u(0, n - 1);
  centers.row(0) = x.row(u(rng));
  Eigen::VectorXd d2 = (x.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (Eigen::Index c = 1; c < k; ++c) {
    centers.row(c) = x.row(sampleProportional(d2, rng));
    d2 = d2.cwiseMin((x.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }
  return centers;
}

inline std::vector<int> nearestLabels(const DataMatrix& x, const Eigen::MatrixXd& centers) {
  std::vector<int> labels(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Eigen::Index best = 0;
    (centers.rowwise() - x.row(i)).rowwise().squaredNorm().minCoeff(&best);
    labels[i] = static_cast<int>(best);
  }
  return labels;
}

struct InitState {
  Eigen::MatrixXd z;  // N x K, 0/1 entries
  Eigen::MatrixXd a;  // K x D
};

// Feature-mode ++ initialization: a base feature holding every row, then
// residual-proportional singleton proposals with greedy membership.
inline InitState featurePlusPlus(const DataMatrix& x, std::optional<Eigen::Index> cap_k,
                                 std::optional<double> lambda2, std::mt19937_64& rng) {
  const Eigen::Index n = x.rows();
  InitState st;
  st.z = Eigen::MatrixXd::Ones(n, 1);
  st.a = columnMean(x);
  while (!cap_k || st.z.cols() < *cap_k) {
    if (cap_k && st.z.cols() >= *cap_k) break;
    const Eigen::MatrixXd resid = x - st.z * st.a;
    const Eigen::VectorXd w = resid.rowwise().squaredNorm();
    const Eigen::Index pick = sampleProportional(w, rng);
    const Eigen::RowVectorXd a_new = resid.row(pick);
    Eigen::VectorXd member(n);
    for (Eigen::Index i = 0; i < n; ++i)
      member(i) = (resid.row(i) - a_new).squaredNorm() < resid.row(i).squaredNorm() ? 1.0 : 0.0;
    if (!cap_k) {
      // Grow-while-improving: accept only if the penalized objective drops.
      const double fit_old = resid.squaredNorm();
      double fit_new = 0.0;
      for (Eigen::Index i = 0; i < n; ++i)
        fit_new += member(i) > 0.0 ? (resid.row(i) - a_new).squaredNorm()
                                   : resid.row(i).squaredNorm();
      if (!(fit_new + *lambda2 < fit_old)) break;
    }
    st.z.conservativeResize(Eigen::NoChange, st.z.cols() + 1);
    st.z.col(st.z.cols() - 1) = member;
    st.a.conservativeResize(st.a.rows() + 1, Eigen::NoChange);
    st.a.row(st.a.rows() - 1) = a_new;
  }
  return st;
}

inline InitState clusterPlusPlus(const DataMatrix& x, Eigen::Index cap_k, std::mt19937_64& rng) {
  const Eigen::Index k = std::min<Eigen::Index>(cap_k, x.rows());
  InitState st;
  st.a = seedCentersPlusPlus(x, k, rng);
  st.z = Eigen::MatrixXd::Zero(x.rows(), k);
  const auto labels = nearestLabels(x, st.a);
  for (Eigen::Index i = 0; i < x.rows(); ++i) st.z(i, labels[i]) = 1.0;
  return st;
}

// Canonical (allocation, means) pair from dense working state; duplicate
// columns are merged and empties dropped.
inline std::pair<FeatureAllocation, MeansMatrix> finalizePair(const Eigen::MatrixXd& z,
                                                              const Eigen::MatrixXd& a) {
  return merge_duplicate_columns(FeatureAllocation::fromDense(z), a);
}

// Least-squares means that tolerate rank deficiency: distinct columns can
// still be linearly dependent mid-descent, in which case the minimum-norm
// solution attains the same fit as any other least-squares solution.
inline MeansMatrix leastSquaresMeans(const DataMatrix& x, const FeatureAllocation& z) {
  try {
    return optimal_means(x, z);
  } catch (const std::invalid_argument&) {
    return Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd>(z.toDense()).solve(x);
  }
}

}  // namespace detail

inline std::pair<FeatureAllocation, MeansMatrix> plusplus_init(
    const DataMatrix& x, InitMode mode, std::optional<Eigen::Index> cap_k,
    std::optional<double> lambda2, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  detail::InitState st;
  if (mode == InitMode::kFeature) {
    if (!cap_k && !lambda2)
      throw std::invalid_argument("plusplus_init: feature mode needs cap_k or lambda2");
    st = detail::featurePlusPlus(x, cap_k, lambda2, rng);
  } else {
    if (!cap_k) throw std::invalid_argument("plusplus_init: cluster mode needs cap_k");
    st = detail::clusterPlusPlus(x, *cap_k, rng);
  }
  return {FeatureAllocation::fromDense(st.z), st.a};
}

// Runs `run(seed)` for seeds base_seed .. base_seed + restarts - 1 and keeps
// the minimum-objective result; ties break toward the lowest run index, so
// the winner is independent of execution order.
template <typename RunFn>
SolveResult run_restarts(const SolverConfig& cfg, RunFn&& run) {
  if (cfg.restarts < 1) throw std::invalid_argument("run_restarts: restarts must be >= 1");
  std::vector<SolveResult> results(cfg.restarts);
  const int workers = std::max(1, std::min(cfg.threads, cfg.restarts));
  if (workers == 1) {
    for (int r = 0; r < cfg.restarts; ++r) results[r] = run(cfg.base_seed + r);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (int r = next.fetch_add(1); r < cfg.restarts; r = next.fetch_add(1))
          results[r] = run(cfg.base_seed + r);
      });
    for (auto& t : pool) t.join();
  }
  int best = 0;
  for (int r = 1; r < cfg.restarts; ++r)
    if (results[r].objective.total() < results[best].objective.total()) best = r;
  return results[best];
}

// ---------------------------------------------------------------------------
// DP-means

inline SolveResult dp_means_single(const DataMatrix& x, double lambda2, const SolverConfig& cfg,
                                   std::uint64_t seed) {
  const Eigen::Index n = x.rows();
  std::mt19937_64 rng(seed);
  std::vector<Eigen::RowVectorXd> means;
  if (seed == cfg.base_seed) {
    means.push_back(detail::columnMean(x));
  } else {
    std::uniform_int_distribution<Eigen::Index> uk(1, n);
    const Eigen::MatrixXd centers = detail::seedCentersPlusPlus(x, uk(rng), rng);
    for (Eigen::Index k = 0; k < centers.rows(); ++k) means.push_back(centers.row(k));
  }
  std::vector<int> assign(n, -1);

  SolveResult res;
  res.seed = seed;
  for (int it = 0; it < cfg.max_iters; ++it) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = (x.row(i) - means[0]).squaredNorm();
      for (std::size_t k = 1; k < means.size(); ++k) {
        const double d = (x.row(i) - means[k]).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = static_cast<int>(k);
        }
      }
      if (best_d > lambda2) {
        means.push_back(x.row(i));
        best = static_cast<int>(means.size()) - 1;
      }
      if (assign[i] != best) changed = true;
      assign[i] = best;
    }
    // Empirical means; relabel to drop empty clusters.
    std::vector<Eigen::RowVectorXd> sums(means.size(), Eigen::RowVectorXd::Zero(x.cols()));
    std::vector<Eigen::Index> counts(means.size(), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums[assign[i]] += x.row(i);
      ++counts[assign[i]];
    }
    std::vector<int> remap(means.size(), -1);
    means.clear();
    for (std::size_t k = 0; k < counts.size(); ++k)
      if (counts[k] > 0) {
        remap[k] = static_cast<int>(means.size());
        means.push_back(sums[k] / static_cast<double>(counts[k]));
      }
    for (Eigen::Index i = 0; i < n; ++i) assign[i] = remap[assign[i]];
    double fit = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) fit += (x.row(i) - means[assign[i]]).squaredNorm();
    res.trace.push_back(fit + lambda2 * (static_cast<double>(means.size()) - 1.0));
    res.iterations = it + 1;
    if (!changed) {
      res.converged = true;
      break;
    }
  }

  const Clustering alloc = canonicalize(FeatureAllocation::fromLabels(assign));
  res.means = optimal_means(x, alloc);  // empirical cluster means in canonical order
  res.allocation = alloc;
  res.objective = dp_means_objective(x, alloc, *res.means, lambda2);
  return res;
}

inline SolveResult dp_means(const DataMatrix& x, double lambda2, const SolverConfig& cfg) {
  return run_restarts(cfg, [&](std::uint64_t s) { return dp_means_single(x, lambda2, cfg, s); });
}

// ---------------------------------------------------------------------------
// Collapsed DP-means

inline SolveResult collapsed_dp_means_single(const DataMatrix& x, double lambda2,
                                             const SolverConfig& cfg, std::uint64_t seed) {
  const Eigen::Index n = x.rows();
  std::mt19937_64 rng(seed);
  std::vector<int> assign(n, 0);
  if (seed != cfg.base_seed) {
    std::uniform_int_distribution<int> uk(1, static_cast<int>(n));
    const int k_init = uk(rng);
    std::uniform_int_distribution<int> ul(0, k_init - 1);
    for (Eigen::Index i = 0; i < n; ++i) assign[i] = ul(rng);
  }
  std::vector<Eigen::RowVectorXd> sums;
  std::vector<Eigen::Index> counts;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int c = assign[i];
    if (c >= static_cast<int>(sums.size())) {
      sums.resize(c + 1, Eigen::RowVectorXd::Zero(x.cols()));
      counts.resize(c + 1, 0);
    }
    sums[c] += x.row(i);
    ++counts[c];
  }
  // Compact away clusters the random init left empty.
  auto compact = [&]() {
    std::vector<int> remap(sums.size(), -1);
    std::vector<Eigen::RowVectorXd> s2;
    std::vector<Eigen::Index> c2;
    for (std::size_t k = 0; k < sums.size(); ++k)
      if (counts[k] > 0) {
        remap[k] = static_cast<int>(s2.size());
        s2.push_back(sums[k]);
        c2.push_back(counts[k]);
      }
    for (Eigen::Index i = 0; i < n; ++i) assign[i] = remap[assign[i]];
    sums = std::move(s2);
    counts = std::move(c2);
  };
  compact();

  SolveResult res;
  res.seed = seed;
  for (int it = 0; it < cfg.max_iters; ++it) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      const int old = assign[i];
      const bool old_was_singleton = counts[old] == 1;
      sums[old] -= x.row(i);
      --counts[old];
      if (counts[old] == 0) {
        sums.erase(sums.begin() + old);
        counts.erase(counts.begin() + old);
        for (Eigen::Index j = 0; j < n; ++j)
          if (assign[j] > old) --assign[j];
        assign[i] = -1;
      }
      // Objective change of joining cluster k: (c/(c+1)) ||x - mean_k||^2.
      int best = -1;  // -1 = open a singleton, costing lambda2
      double best_delta = lambda2;
      for (std::size_t k = 0; k < counts.size(); ++k) {
        const double c = static_cast<double>(counts[k]);
        const double delta = c / (c + 1.0) * (x.row(i) - sums[k] / c).squaredNorm();
        if (delta < best_delta) {
          best_delta = delta;
          best = static_cast<int>(k);
        }
      }
      if (best < 0) {
        sums.push_back(x.row(i));
        counts.push_back(1);
        assign[i] = static_cast<int>(counts.size()) - 1;
        if (!old_was_singleton) changed = true;
      } else {
        sums[best] += x.row(i);
        ++counts[best];
        assign[i] = best;
        if (old_was_singleton || best != old) changed = true;
      }
    }
    double fit = x.squaredNorm();
    for (std::size_t k = 0; k < counts.size(); ++k)
      fit -= sums[k].squaredNorm() / static_cast<double>(counts[k]);
    res.trace.push_back(fit + lambda2 * (static_cast<double>(counts.size()) - 1.0));
    res.iterations = it + 1;
    if (!changed) {
      res.converged = true;
      break;
    }
  }

  const Clustering alloc = canonicalize(FeatureAllocation::fromLabels(assign));
  res.allocation = alloc;
  res.objective = collapsed_dp_objective(x, alloc, lambda2);
  return res;
}

inline SolveResult collapsed_dp_means(const DataMatrix& x, double lambda2,
                                      const SolverConfig& cfg) {
  return run_restarts(
      cfg, [&](std::uint64_t s) { return collapsed_dp_means_single(x, lambda2, cfg, s); });
}

// ---------------------------------------------------------------------------
// BP-means

inline SolveResult bp_means_single(const DataMatrix& x, double lambda2, const SolverConfig& cfg,
                                   std::uint64_t seed) {
  const Eigen::Index n = x.rows();
  std::mt19937_64 rng(seed);
  Eigen::MatrixXd z, a;
  if (seed == cfg.base_seed) {
    detail::InitState st = detail::featurePlusPlus(x, std::nullopt, lambda2, rng);
    z = std::move(st.z);
    a = std::move(st.a);
  } else {
    // Restarts diversify over basin structure: random feature count (possibly
    // zero) with uniform random memberships and least-squares means.
    std::uniform_int_distribution<Eigen::Index> uk(0, n);
    std::bernoulli_distribution bit(0.5);
    const Eigen::Index k0 = uk(rng);
    z = Eigen::MatrixXd::Zero(n, k0);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index k = 0; k < k0; ++k) z(i, k) = bit(rng) ? 1.0 : 0.0;
    auto [alloc0, merged0] = detail::finalizePair(z, Eigen::MatrixXd::Zero(k0, x.cols()));
    z = alloc0.toDense();
    a = alloc0.featureCount() > 0 ? detail::leastSquaresMeans(x, alloc0)
                                  : Eigen::MatrixXd(0, x.cols());
  }

  SolveResult res;
  res.seed = seed;
  for (int it = 0; it < cfg.max_iters; ++it) {
    bool changed = false;
    // Step 1: per-row membership flips against the current A, then a
    // singleton-feature proposal with mean equal to the row residual.
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::RowVectorXd r = x.row(i) - z.row(i) * a;
      for (Eigen::Index k = 0; k < z.cols(); ++k) {
        const Eigen::RowVectorXd r_off = r + z(i, k) * a.row(k);
        const double d_off = r_off.squaredNorm();
        const double d_on = (r_off - a.row(k)).squaredNorm();
        const double want = d_on < d_off ? 1.0 : 0.0;
        if (want != z(i, k)) {
          z(i, k) = want;
          r = want > 0.0 ? (r_off - a.row(k)).eval() : r_off;
          changed = true;
        }
      }
      if (r.squaredNorm() > lambda2 + cfg.change_tol) {
        z.conservativeResize(Eigen::NoChange, z.cols() + 1);
        z.col(z.cols() - 1).setZero();
        z(i, z.cols() - 1) = 1.0;
        a.conservativeResize(a.rows() + 1, Eigen::NoChange);
        a.row(a.rows() - 1) = r;
        changed = true;
      }
    }
    // Step 2: merge duplicate features, drop empties, refit the means.
    auto [alloc, merged_a] = detail::finalizePair(z, a);
    if (alloc.featureCount() != z.cols()) changed = true;
    Eigen::MatrixXd a_new;
    if (alloc.featureCount() > 0) {
      a_new = detail::leastSquaresMeans(x, alloc);
      if (merged_a.rows() != a_new.rows() ||
          (a_new - merged_a).cwiseAbs().maxCoeff() > cfg.change_tol)
        changed = true;
    } else {
      a_new.resize(0, x.cols());
    }
    z = alloc.toDense();
    a = std::move(a_new);
    res.trace.push_back((x - z * a).squaredNorm() +
                        lambda2 * static_cast<double>(z.cols()));
    res.iterations = it + 1;
    if (!changed) {
      res.converged = true;
      break;
    }
  }

  auto [alloc, merged_a] = detail::finalizePair(z, a);
  res.allocation = alloc;
  res.means = std::move(merged_a);
  res.objective = bp_means_objective(x, res.allocation, *res.means, lambda2);
  return res;
}

inline SolveResult bp_means(const DataMatrix& x, double lambda2, const SolverConfig& cfg) {
  return run_restarts(cfg, [&](std::uint64_t s) { return bp_means_single(x, lambda2, cfg, s); });
}

// ---------------------------------------------------------------------------
// Collapsed BP-means

namespace detail {

// Projection fit tr(X'X) - tr(B' G^+ B) through an eigendecomposition that
// tolerates rank deficiency (the row search can transiently make columns
// linearly dependent even when distinct).
inline double projectionFit(const Eigen::MatrixXd& gram, const Eigen::MatrixXd& ztx,
                            double tr_xx) {
  if (gram.rows() == 0) return tr_xx;
  Eigen::LLT<Eigen::MatrixXd> llt(gram);
  if (llt.info() == Eigen::Success)
    return tr_xx - (ztx.array() * llt.solve(ztx).array()).sum();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
  const double floor = 1e-10 * std::max(1.0, es.eigenvalues().maxCoeff());
  double fit = tr_xx;
  for (Eigen::Index j = 0; j < es.eigenvalues().size(); ++j) {
    if (es.eigenvalues()(j) <= floor) continue;
    fit -= (es.eigenvectors().col(j).transpose() * ztx).squaredNorm() / es.eigenvalues()(j);
  }
  return fit;
}

struct CollapsedZ {
  Eigen::Index n = 0;
  std::vector<FeatureAllocation::Column> cols;

  Eigen::Index featureCount() const { return static_cast<Eigen::Index>(cols.size()); }

  Eigen::MatrixXd gram() const {
    const Eigen::Index k = featureCount();
    Eigen::MatrixXd g(k, k);
    for (Eigen::Index p = 0; p < k; ++p)
      for (Eigen::Index q = p; q < k; ++q) {
        Eigen::Index s = 0;
        for (Eigen::Index i = 0; i < n; ++i) s += cols[p][i] & cols[q][i];
        g(p, q) = g(q, p) = static_cast<double>(s);
      }
    return g;
  }

  Eigen::MatrixXd ztx(const DataMatrix& x) const {
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(featureCount(), x.cols());
    for (Eigen::Index k = 0; k < featureCount(); ++k)
      for (Eigen::Index i = 0; i < n; ++i)
        if (cols[k][i]) b.row(k) += x.row(i);
    return b;
  }

  FeatureAllocation toAllocation() const { return FeatureAllocation(n, cols); }
};

// Score of a candidate row pattern for point i: duplicate and empty columns
// are dropped (the algorithm's redundancy rule), then fit + lambda2 * K.
inline double collapsedRowScore(const CollapsedZ& zc, const DataMatrix& x, Eigen::Index i,
                                const std::vector<std::uint8_t>& cand, double tr_xx,
                                double lambda2) {
  const Eigen::Index k_all = zc.featureCount();
  std::vector<Eigen::Index> keep;
  keep.reserve(k_all);
  for (Eigen::Index k = 0; k < k_all; ++k) {
    Eigen::Index off_sum = 0;
    for (Eigen::Index r = 0; r < zc.n; ++r)
      if (r != i) off_sum += zc.cols[k][r];
    if (off_sum == 0 && cand[k] == 0) continue;  // empty
    bool dup = false;
    for (Eigen::Index j : keep) {
      if (cand[j] != cand[k]) continue;
      bool same = true;
      for (Eigen::Index r = 0; r < zc.n && same; ++r)
        if (r != i && zc.cols[j][r] != zc.cols[k][r]) same = false;
      if (same) {
        dup = true;
        break;
      }
    }
    if (!dup) keep.push_back(k);
  }
  const Eigen::Index kk = static_cast<Eigen::Index>(keep.size());
  Eigen::MatrixXd g(kk, kk);
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(kk, x.cols());
  for (Eigen::Index p = 0; p < kk; ++p) {
    for (Eigen::Index q = p; q < kk; ++q) {
      Eigen::Index s = 0;
      for (Eigen::Index r = 0; r < zc.n; ++r)
        if (r != i) s += zc.cols[keep[p]][r] & zc.cols[keep[q]][r];
      s += cand[keep[p]] & cand[keep[q]];
      g(p, q) = g(q, p) = static_cast<double>(s);
    }
    for (Eigen::Index r = 0; r < zc.n; ++r)
      if (r != i && zc.cols[keep[p]][r]) b.row(p) += x.row(r);
    if (cand[keep[p]]) b.row(p) += x.row(i);
  }
  return projectionFit(g, b, tr_xx) + lambda2 * static_cast<double>(kk);
}

// Apply the chosen row and delete redundant (duplicate or empty) columns.
inline void applyRowAndDedup(CollapsedZ& zc, Eigen::Index i,
                             const std::vector<std::uint8_t>& cand) {
  for (Eigen::Index k = 0; k < zc.featureCount(); ++k) zc.cols[k][i] = cand[k];
  std::vector<FeatureAllocation::Column> out;
  for (auto& c : zc.cols) {
    if (std::all_of(c.begin(), c.end(), [](std::uint8_t v) { return v == 0; })) continue;
    if (std::find(out.begin(), out.end(), c) != out.end()) continue;
    out.push_back(std::move(c));
  }
  zc.cols = std::move(out);
}

}  // namespace detail

inline SolveResult collapsed_bp_means_single(const DataMatrix& x, double lambda2,
                                             const SolverConfig& cfg, std::uint64_t seed) {
  const Eigen::Index n = x.rows();
  const double tr_xx = x.squaredNorm();
  std::mt19937_64 rng(seed);

  detail::CollapsedZ zc;
  zc.n = n;
  if (seed == cfg.base_seed) {
    const detail::InitState st = detail::featurePlusPlus(x, std::nullopt, lambda2, rng);
    const FeatureAllocation init = canonicalize(FeatureAllocation::fromDense(st.z));
    for (Eigen::Index k = 0; k < init.featureCount(); ++k) {
      if (std::find(zc.cols.begin(), zc.cols.end(), init.column(k)) == zc.cols.end())
        zc.cols.push_back(init.column(k));
    }
  } else {
    // Restarts diversify over basin structure: random feature count (possibly
    // zero) with uniform random memberships; empties and duplicates dropped.
    std::uniform_int_distribution<Eigen::Index> uk(0, n);
    std::bernoulli_distribution bit(0.5);
    const Eigen::Index k0 = uk(rng);
    for (Eigen::Index k = 0; k < k0; ++k) {
      FeatureAllocation::Column c(n, 0);
      bool any = false;
      for (Eigen::Index i = 0; i < n; ++i) {
        c[i] = bit(rng) ? 1u : 0u;
        any = any || c[i];
      }
      if (any && std::find(zc.cols.begin(), zc.cols.end(), c) == zc.cols.end())
        zc.cols.push_back(std::move(c));
    }
  }

  const int exhaustive_cap = std::min(cfg.exhaustive_row_cap, 16);
  SolveResult res;
  res.seed = seed;
  for (int it = 0; it < cfg.max_iters; ++it) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index k = zc.featureCount();
      std::vector<std::uint8_t> current(k);
      for (Eigen::Index j = 0; j < k; ++j) current[j] = zc.cols[j][i];
      std::vector<std::uint8_t> best_row = current;
      double best = detail::collapsedRowScore(zc, x, i, current, tr_xx, lambda2);

      if (k <= exhaustive_cap) {
        std::vector<std::uint8_t> cand(k, 0);
        for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << k); ++mask) {
          for (Eigen::Index j = 0; j < k; ++j) cand[j] = (mask >> j) & 1u;
          const double s = detail::collapsedRowScore(zc, x, i, cand, tr_xx, lambda2);
          if (s < best - cfg.change_tol) {
            best = s;
            best_row = cand;
          }
        }
      } else {
        std::vector<std::uint8_t> cand = current;
        for (Eigen::Index j = 0; j < k; ++j) {
          cand[j] ^= 1u;
          const double s = detail::collapsedRowScore(zc, x, i, cand, tr_xx, lambda2);
          if (s < best - cfg.change_tol) {
            best = s;
            best_row = cand;
          } else {
            cand[j] ^= 1u;  // revert
          }
          cand = best_row;
        }
      }
      if (best_row != current) changed = true;
      const Eigen::Index before = zc.featureCount();
      detail::applyRowAndDedup(zc, i, best_row);
      if (zc.featureCount() != before) changed = true;

      // Singleton proposal for this row.
      FeatureAllocation::Column singleton(n, 0);
      singleton[i] = 1;
      if (std::find(zc.cols.begin(), zc.cols.end(), singleton) == zc.cols.end()) {
        detail::CollapsedZ trial = zc;
        trial.cols.push_back(singleton);
        const double cur_obj =
            detail::projectionFit(zc.gram(), zc.ztx(x), tr_xx) +
            lambda2 * static_cast<double>(zc.featureCount());
        const double new_obj =
            detail::projectionFit(trial.gram(), trial.ztx(x), tr_xx) +
            lambda2 * static_cast<double>(trial.featureCount());
        if (new_obj < cur_obj - cfg.change_tol) {
          zc = std::move(trial);
          changed = true;
        }
      }
    }
    res.trace.push_back(detail::projectionFit(zc.gram(), zc.ztx(x), tr_xx) +
                        lambda2 * static_cast<double>(zc.featureCount()));
    res.iterations = it + 1;
    if (!changed) {
      res.converged = true;
      break;
    }
  }

  // Drop any linearly dependent leftover columns: removal keeps the fit and
  // saves the penalty.
  bool pruned = true;
  while (pruned && zc.featureCount() > 0) {
    pruned = false;
    const double cur_fit = detail::projectionFit(zc.gram(), zc.ztx(x), tr_xx);
    for (Eigen::Index k = 0; k < zc.featureCount(); ++k) {
      detail::CollapsedZ trial = zc;
      trial.cols.erase(trial.cols.begin() + k);
      if (detail::projectionFit(trial.gram(), trial.ztx(x), tr_xx) <= cur_fit + 1e-9) {
        zc = std::move(trial);
        pruned = true;
        break;
      }
    }
  }

  res.allocation = canonicalize(zc.toAllocation());
  res.objective = collapsed_bp_objective(x, res.allocation, lambda2);
  return res;
}

inline SolveResult collapsed_bp_means(const DataMatrix& x, double lambda2,
                                      const SolverConfig& cfg) {
  return run_restarts(
      cfg, [&](std::uint64_t s) { return collapsed_bp_means_single(x, lambda2, cfg, s); });
}

// ---------------------------------------------------------------------------
// K-features

inline SolveResult k_features_single(const DataMatrix& x, Eigen::Index cap_k,
                                     const SolverConfig& cfg, std::uint64_t seed,
                                     const std::optional<std::pair<FeatureAllocation, MeansMatrix>>&
                                         init = std::nullopt) {
  if (cap_k < 1) throw std::invalid_argument("k_features: cap_k must be >= 1");
  const Eigen::Index n = x.rows();
  Eigen::MatrixXd z, a;
  if (init) {
    if (init->first.featureCount() != cap_k || init->second.rows() != cap_k)
      throw std::invalid_argument("k_features: init has wrong feature count");
    z = init->first.toDense();
    a = init->second;
  } else if (seed == cfg.base_seed) {
    std::mt19937_64 rng(seed);
    detail::InitState st = detail::featurePlusPlus(x, cap_k, std::nullopt, rng);
    z = std::move(st.z);
    a = std::move(st.a);
    while (z.cols() < cap_k) {  // degenerate data: pad with empty features
      z.conservativeResize(Eigen::NoChange, z.cols() + 1);
      z.col(z.cols() - 1).setZero();
      a.conservativeResize(a.rows() + 1, Eigen::NoChange);
      a.row(a.rows() - 1).setZero();
    }
  } else {
    // Restarts diversify with uniform random memberships; the first sweep
    // runs against zero means (a no-op) and step 2 then solves the means, so
    // this is equivalent to starting from the random Z's least-squares fit.
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution bit(0.5);
    z = Eigen::MatrixXd::Zero(n, cap_k);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index k = 0; k < cap_k; ++k) z(i, k) = bit(rng) ? 1.0 : 0.0;
    a = Eigen::MatrixXd::Zero(cap_k, x.cols());
  }

  SolveResult res;
  res.seed = seed;
  for (int it = 0; it < cfg.max_iters; ++it) {
    bool changed = false;
    // Step 1: independent per-row updates (exhaustive over 2^K up to the cap,
    // greedy coordinate descent beyond).
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::RowVectorXd r = x.row(i) - z.row(i) * a;
      if (cap_k <= cfg.exhaustive_row_cap) {
        double best = r.squaredNorm();
        std::uint64_t best_mask = 0, cur_mask = 0;
        for (Eigen::Index k = 0; k < cap_k; ++k)
          if (z(i, k) > 0.0) cur_mask |= std::uint64_t{1} << k;
        best_mask = cur_mask;
        // Gray-code walk keeps the candidate residual update O(D).
        Eigen::RowVectorXd rg = x.row(i);
        std::uint64_t gray_prev = 0;
        for (std::uint64_t j = 1; j < (std::uint64_t{1} << cap_k); ++j) {
          const std::uint64_t gray = j ^ (j >> 1);
          const std::uint64_t flip_bit = gray ^ gray_prev;
          const int k = std::countr_zero(flip_bit);
          if (gray & flip_bit)
            rg -= a.row(k);
          else
            rg += a.row(k);
          gray_prev = gray;
          const double d = rg.squaredNorm();
          if (d < best) {
            best = d;
            best_mask = gray;
          }
        }
        if (best_mask != cur_mask) {
          for (Eigen::Index k = 0; k < cap_k; ++k)
            z(i, k) = (best_mask >> k) & 1u ? 1.0 : 0.0;
          changed = true;
        }
      } else {
        bool flipped = true;
        while (flipped) {
          flipped = false;
          for (Eigen::Index k = 0; k < cap_k; ++k) {
            const Eigen::RowVectorXd r_off = r + z(i, k) * a.row(k);
            const double want = (r_off - a.row(k)).squaredNorm() < r_off.squaredNorm() ? 1.0 : 0.0;
            if (want != z(i, k)) {
              z(i, k) = want;
              r = want > 0.0 ? (r_off - a.row(k)).eval() : r_off;
              flipped = true;
              changed = true;
            }
          }
        }
      }
    }
    // Step 2: solve the means on the distinct non-empty columns, then map
    // back so Z keeps exactly cap_k columns.
    auto [alloc, merged_a] = detail::finalizePair(z, a);
    Eigen::MatrixXd a_new = Eigen::MatrixXd::Zero(cap_k, x.cols());
    if (alloc.featureCount() > 0) {
      const Eigen::MatrixXd solved = detail::leastSquaresMeans(x, alloc);
      std::vector<bool> used(alloc.featureCount(), false);
      for (Eigen::Index k = 0; k < cap_k; ++k) {
        FeatureAllocation::Column col(n);
        for (Eigen::Index i = 0; i < n; ++i) col[i] = static_cast<std::uint8_t>(z(i, k));
        for (Eigen::Index j = 0; j < alloc.featureCount(); ++j) {
          if (!used[j] && alloc.column(j) == col) {
            a_new.row(k) = solved.row(j);
            used[j] = true;
            break;
          }
        }
      }
    }
    if ((a_new - a).cwiseAbs().maxCoeff() > cfg.change_tol) changed = true;
    a = std::move(a_new);
    res.trace.push_back((x - z * a).squaredNorm());
    res.iterations = it + 1;
    if (!changed) {
      res.converged = true;
      break;
    }
  }

  auto [alloc, merged_a] = detail::finalizePair(z, a);
  res.allocation = alloc;
  res.means = std::move(merged_a);
  res.objective.fit = k_features_objective(x, res.allocation, *res.means);
  res.objective.penalty = 0.0;
  return res;
}

inline SolveResult k_features(const DataMatrix& x, Eigen::Index cap_k, const SolverConfig& cfg,
                              const std::optional<std::pair<FeatureAllocation, MeansMatrix>>&
                                  init = std::nullopt) {
  return run_restarts(cfg,
                      [&](std::uint64_t s) { return k_features_single(x, cap_k, cfg, s, init); });
}

// ---------------------------------------------------------------------------
// Stepwise K-features

// Runs K-features for K = 0, 1, 2, ... scoring each optimum by the penalized
// (per-feature lambda2) objective, and stops at the first K that fails to
// improve. Assumes the fit-vs-K curve has increasing increments; on
// non-convex curves the stop can fire early.
inline SolveResult stepwise_k_features(const DataMatrix& x, double lambda2,
                                       const SolverConfig& cfg) {
  SolveResult best;
  best.allocation = FeatureAllocation(x.rows());
  best.means = MeansMatrix(0, x.cols());
  best.objective.fit = x.squaredNorm();
  best.objective.penalty = 0.0;
  best.converged = true;
  best.seed = cfg.base_seed;
  double prev_score = best.objective.total();

  for (Eigen::Index k = 1; k <= x.rows(); ++k) {
    SolverConfig sub = cfg;
    sub.base_seed = cfg.base_seed + static_cast<std::uint64_t>(k) * cfg.restarts;
    SolveResult cand = k_features(x, k, sub);
    // Penalized score on the merged allocation (duplicates and empties cost
    // nothing after the merge).
    cand.objective = bp_means_objective(x, cand.allocation, *cand.means, lambda2);
    const double score = cand.objective.total();
    if (score < best.objective.total()) best = cand;
    if (!(score < prev_score - cfg.change_tol)) break;
    prev_score = score;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Mahalanobis K-means

inline std::pair<SolveResult, MahalanobisParams> mahalanobis_kmeans_single(
    const DataMatrix& x, Eigen::Index cap_k, double lambda2, const SolverConfig& cfg,
    std::uint64_t seed) {
  if (cap_k < 1) throw std::invalid_argument("mahalanobis_kmeans: cap_k must be >= 1");
  if (lambda2 <= 0.0) throw std::invalid_argument("mahalanobis_kmeans: lambda2 must be > 0");
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  const Eigen::Index k = std::min(cap_k, n);
  constexpr double kCovFloor = 1e-8;

  std::mt19937_64 rng(seed);
  Eigen::MatrixXd centers = detail::seedCentersPlusPlus(x, k, rng);
  std::vector<Eigen::MatrixXd> sigmas(k, Eigen::MatrixXd::Identity(d, d));
  std::vector<int> assign(n, -1);

  SolveResult res;
  res.seed = seed;
  for (int it = 0; it < cfg.max_iters; ++it) {
    bool changed = false;
    std::vector<Eigen::LLT<Eigen::MatrixXd>> llts;
    llts.reserve(k);
    for (Eigen::Index c = 0; c < k; ++c) llts.emplace_back(sigmas[c]);
    Eigen::VectorXd own_dist(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (Eigen::Index c = 0; c < k; ++c) {
        const Eigen::VectorXd diff = (x.row(i) - centers.row(c)).transpose();
        const double dist = diff.dot(llts[c].solve(diff));
        if (dist < best_d) {
          best_d = dist;
          best = static_cast<int>(c);
        }
      }
      if (assign[i] != best) changed = true;
      assign[i] = best;
      own_dist(i) = best_d;
    }
    // Re-seed empty clusters from the farthest point.
    std::vector<Eigen::Index> counts(k, 0);
    for (int c : assign) ++counts[c];
    for (Eigen::Index c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      Eigen::Index far = 0;
      double far_d = -1.0;
      for (Eigen::Index i = 0; i < n; ++i)
        if (counts[assign[i]] > 1 && own_dist(i) > far_d) {
          far_d = own_dist(i);
          far = i;
        }
      --counts[assign[far]];
      assign[far] = static_cast<int>(c);
      counts[c] = 1;
      own_dist(far) = 0.0;
      changed = true;
    }
    // Means, then per-cluster scatter / lambda2 with an eigenvalue floor.
    centers.setZero();
    for (Eigen::Index i = 0; i < n; ++i) centers.row(assign[i]) += x.row(i);
    for (Eigen::Index c = 0; c < k; ++c) centers.row(c) /= static_cast<double>(counts[c]);
    for (Eigen::Index c = 0; c < k; ++c) {
      Eigen::MatrixXd scatter = Eigen::MatrixXd::Zero(d, d);
      for (Eigen::Index i = 0; i < n; ++i) {
        if (assign[i] != c) continue;
        const Eigen::VectorXd diff = (x.row(i) - centers.row(c)).transpose();
        scatter += diff * diff.transpose();
      }
      Eigen::MatrixXd sig = scatter / lambda2;
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sig);
      const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(kCovFloor);
      sigmas[c] = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    }
    {
      double fit = 0.0, pen = 0.0;
      for (Eigen::Index c = 0; c < k; ++c) {
        Eigen::LLT<Eigen::MatrixXd> llt(sigmas[c]);
        for (Eigen::Index i = 0; i < n; ++i) {
          if (assign[i] != c) continue;
          const Eigen::VectorXd diff = (x.row(i) - centers.row(c)).transpose();
          fit += diff.dot(llt.solve(diff));
        }
        pen += lambda2 * 2.0 *
               Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
      }
      res.trace.push_back(fit + pen);
    }
    res.iterations = it + 1;
    if (!changed) {
      res.converged = true;
      break;
    }
  }

  // Canonical column order, permuting means and covariances alongside.
  const FeatureAllocation raw = FeatureAllocation::fromLabels(assign);
  std::vector<Eigen::Index> order(raw.featureCount());
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(),
            [&](Eigen::Index p, Eigen::Index q) { return raw.column(p) < raw.column(q); });
  std::vector<FeatureAllocation::Column> cols;
  Eigen::MatrixXd a_out(raw.featureCount(), d);
  MahalanobisParams mp;
  mp.phi = Eigen::MatrixXd::Identity(d, d);
  mp.nu = static_cast<double>(d);
  for (std::size_t j = 0; j < order.size(); ++j) {
    cols.push_back(raw.column(order[j]));
    a_out.row(static_cast<Eigen::Index>(j)) = centers.row(order[j]);
    mp.sigmas.push_back(sigmas[order[j]]);
  }
  res.allocation = FeatureAllocation(n, std::move(cols));
  res.means = std::move(a_out);
  res.objective = mahalanobis_objective(x, res.allocation, *res.means, mp, lambda2);
  return {std::move(res), std::move(mp)};
}

inline std::pair<SolveResult, MahalanobisParams> mahalanobis_kmeans(const DataMatrix& x,
                                                                    Eigen::Index cap_k,
                                                                    double lambda2,
                                                                    const SolverConfig& cfg) {
  std::vector<std::pair<SolveResult, MahalanobisParams>> results(cfg.restarts);
  for (int r = 0; r < cfg.restarts; ++r)
    results[r] = mahalanobis_kmeans_single(x, cap_k, lambda2, cfg, cfg.base_seed + r);
  int best = 0;
  for (int r = 1; r < cfg.restarts; ++r)
    if (results[r].first.objective.total() < results[best].first.objective.total()) best = r;
  return results[best];
}

}  // namespace sva
