#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

namespace sva {

using DataMatrix = Eigen::MatrixXd;
using MeansMatrix = Eigen::MatrixXd;

// Binary N x K feature allocation. Columns are features; entries are stored
// exactly as 0/1 bytes so column sums and duplicate detection are exact.
// A clustering is the special case where every row has exactly one 1.
//
// Canonical form: no all-zero columns, columns sorted lexicographically by
// their bit pattern read from row 0 to row N-1. Equality of canonical
// allocations is plain matrix equality.
class FeatureAllocation {
 public:
  using Column = std::vector<std::uint8_t>;

  FeatureAllocation() = default;

  explicit FeatureAllocation(Eigen::Index n_rows, std::vector<Column> columns = {})
      : n_rows_(n_rows), cols_(std::move(columns)) {
    if (n_rows_ < 0) throw std::invalid_argument("FeatureAllocation: negative row count");
    for (const auto& c : cols_) {
      if (static_cast<Eigen::Index>(c.size()) != n_rows_)
        throw std::invalid_argument("FeatureAllocation: column length mismatch");
      for (auto v : c)
        if (v > 1) throw std::invalid_argument("FeatureAllocation: entries must be 0/1");
    }
  }

  static FeatureAllocation fromDense(const Eigen::MatrixXd& z) {
    std::vector<Column> cols(z.cols());
    for (Eigen::Index k = 0; k < z.cols(); ++k) {
      cols[k].resize(z.rows());
      for (Eigen::Index i = 0; i < z.rows(); ++i) {
        const double v = z(i, k);
        if (v != 0.0 && v != 1.0)
          throw std::invalid_argument("FeatureAllocation: entries must be 0/1");
        cols[k][i] = static_cast<std::uint8_t>(v);
      }
    }
    return FeatureAllocation(z.rows(), std::move(cols));
  }

  static FeatureAllocation identity(Eigen::Index n) {
    std::vector<Column> cols(n, Column(n, 0));
    for (Eigen::Index i = 0; i < n; ++i) cols[i][i] = 1;
    return FeatureAllocation(n, std::move(cols));
  }

  // One-hot clustering from per-row labels 0..K-1.
  static FeatureAllocation fromLabels(const std::vector<int>& labels) {
    const Eigen::Index n = static_cast<Eigen::Index>(labels.size());
    int k_max = -1;
    for (int l : labels) {
      if (l < 0) throw std::invalid_argument("fromLabels: negative label");
      k_max = std::max(k_max, l);
    }
    std::vector<Column> cols(k_max + 1, Column(n, 0));
    for (Eigen::Index i = 0; i < n; ++i) cols[labels[i]][i] = 1;
    return FeatureAllocation(n, std::move(cols));
  }

  Eigen::Index rows() const { return n_rows_; }
  Eigen::Index featureCount() const { return static_cast<Eigen::Index>(cols_.size()); }

  std::uint8_t operator()(Eigen::Index i, Eigen::Index k) const { return cols_[k][i]; }
  const Column& column(Eigen::Index k) const { return cols_[k]; }
  const std::vector<Column>& columns() const { return cols_; }

  Eigen::Index columnSum(Eigen::Index k) const {
    return std::accumulate(cols_[k].begin(), cols_[k].end(), Eigen::Index{0});
  }

  std::vector<Eigen::Index> columnSums() const {
    std::vector<Eigen::Index> s(cols_.size());
    for (std::size_t k = 0; k < cols_.size(); ++k) s[k] = columnSum(k);
    return s;
  }

  Eigen::Index rowSum(Eigen::Index i) const {
    Eigen::Index s = 0;
    for (const auto& c : cols_) s += c[i];
    return s;
  }

  // Multiplicity of each distinct column pattern (the \tilde K_h of the EFPF).
  std::vector<Eigen::Index> uniqueColumnMultiplicities() const {
    std::vector<Column> sorted = cols_;
    std::sort(sorted.begin(), sorted.end());
    std::vector<Eigen::Index> mult;
    for (std::size_t k = 0; k < sorted.size(); ++k) {
      if (k == 0 || sorted[k] != sorted[k - 1])
        mult.push_back(1);
      else
        ++mult.back();
    }
    return mult;
  }

  bool hasDuplicateColumns() const {
    std::vector<Column> sorted = cols_;
    std::sort(sorted.begin(), sorted.end());
    return std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end();
  }

  bool isClustering() const {
    if (n_rows_ >= 1 && cols_.empty()) return false;
    for (Eigen::Index i = 0; i < n_rows_; ++i)
      if (rowSum(i) != 1) return false;
    return true;
  }

  // Cluster label of each row; valid only for clusterings.
  std::vector<int> labels() const {
    std::vector<int> l(n_rows_, -1);
    for (std::size_t k = 0; k < cols_.size(); ++k)
      for (Eigen::Index i = 0; i < n_rows_; ++i)
        if (cols_[k][i]) l[i] = static_cast<int>(k);
    return l;
  }

  Eigen::MatrixXd toDense() const {
    Eigen::MatrixXd z = Eigen::MatrixXd::Zero(n_rows_, featureCount());
    for (Eigen::Index k = 0; k < featureCount(); ++k)
      for (Eigen::Index i = 0; i < n_rows_; ++i) z(i, k) = cols_[k][i];
    return z;
  }

  bool operator==(const FeatureAllocation& other) const {
    return n_rows_ == other.n_rows_ && cols_ == other.cols_;
  }
  bool operator!=(const FeatureAllocation& other) const { return !(*this == other); }

  // Strict weak order for use as a map key.
  bool operator<(const FeatureAllocation& other) const {
    if (n_rows_ != other.n_rows_) return n_rows_ < other.n_rows_;
    return cols_ < other.cols_;
  }

 private:
  Eigen::Index n_rows_ = 0;
  std::vector<Column> cols_;
};

using Clustering = FeatureAllocation;

inline void requireClustering(const FeatureAllocation& z, const char* where) {
  if (!z.isClustering())
    throw std::invalid_argument(std::string(where) + ": allocation is not a clustering");
}

// Drops empty columns and sorts the remaining ones into canonical order.
// Duplicate columns are kept; merging them is merge_duplicate_columns' job.
inline FeatureAllocation canonicalize(const FeatureAllocation& z) {
  std::vector<FeatureAllocation::Column> cols;
  cols.reserve(z.featureCount());
  for (const auto& c : z.columns())
    if (std::any_of(c.begin(), c.end(), [](std::uint8_t v) { return v != 0; }))
      cols.push_back(c);
  std::stable_sort(cols.begin(), cols.end());
  return FeatureAllocation(z.rows(), std::move(cols));
}

// Collapses identical columns of Z into one, summing the paired mean rows,
// and drops empty columns with their mean rows. The reconstruction Z*A is
// unchanged. Output is in canonical column order.
inline std::pair<FeatureAllocation, MeansMatrix> merge_duplicate_columns(
    const FeatureAllocation& z, const MeansMatrix& a) {
  if (z.featureCount() != a.rows())
    throw std::invalid_argument("merge_duplicate_columns: Z columns / A rows mismatch");
  const Eigen::Index k_in = z.featureCount();
  std::vector<Eigen::Index> order(k_in);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index i, Eigen::Index j) {
    return z.column(i) < z.column(j);
  });

  std::vector<FeatureAllocation::Column> cols;
  std::vector<Eigen::VectorXd> means;
  for (Eigen::Index idx : order) {
    const auto& c = z.column(idx);
    if (std::all_of(c.begin(), c.end(), [](std::uint8_t v) { return v == 0; })) continue;
    if (!cols.empty() && cols.back() == c) {
      means.back() += a.row(idx).transpose();
    } else {
      cols.push_back(c);
      means.push_back(a.row(idx).transpose());
    }
  }
  MeansMatrix a_out(static_cast<Eigen::Index>(means.size()), a.cols());
  for (std::size_t k = 0; k < means.size(); ++k) a_out.row(k) = means[k].transpose();
  return {FeatureAllocation(z.rows(), std::move(cols)), std::move(a_out)};
}

}  // namespace sva
