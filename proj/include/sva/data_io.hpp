#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "sva/allocation.hpp"
#include "sva/params.hpp"

// Dataset ingestion, PCA preprocessing, synthetic data generation, and
// result serialization (JSON schema below, CSV assignments).

namespace sva {

inline DataMatrix load_csv(const std::string& path, bool has_header) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv: cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 && has_header) continue;
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      std::size_t pos = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &pos);
      } catch (const std::exception&) {
        throw std::runtime_error("load_csv: non-numeric cell at line " +
                                 std::to_string(line_no));
      }
      while (pos < cell.size() && std::isspace(static_cast<unsigned char>(cell[pos]))) ++pos;
      if (pos != cell.size())
        throw std::runtime_error("load_csv: non-numeric cell at line " + std::to_string(line_no));
      row.push_back(v);
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw std::runtime_error("load_csv: ragged row at line " + std::to_string(line_no));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("load_csv: empty file " + path);
  DataMatrix x(static_cast<Eigen::Index>(rows.size()),
               static_cast<Eigen::Index>(rows.front().size()));
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = rows[i][j];
  return x;
}

inline void write_csv(const DataMatrix& x, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_csv: cannot open " + path);
  out.precision(17);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      if (j) out << ',';
      out << x(i, j);
    }
    out << '\n';
  }
}

// Column-centered projection onto the top right singular vectors. Each
// loading vector is flipped so its largest-magnitude entry is positive,
// making the output reproducible bit-for-bit.
inline DataMatrix pca_reduce(const DataMatrix& x, Eigen::Index components) {
  if (components < 1 || components > std::min(x.rows(), x.cols()))
    throw std::invalid_argument("pca_reduce: components out of range");
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - mean;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  Eigen::MatrixXd v = svd.matrixV().leftCols(components);
  for (Eigen::Index c = 0; c < v.cols(); ++c) {
    Eigen::Index arg = 0;
    v.col(c).cwiseAbs().maxCoeff(&arg);
    if (v(arg, c) < 0.0) v.col(c) = -v.col(c);
  }
  return centered * v;
}

struct SyntheticSpec {
  Eigen::Index n = 0;
  Eigen::Index d = 0;
  Eigen::Index true_k = 0;
  Eigen::MatrixXd feature_means;  // true_k x d
  bool include_base_feature = true;
  double bernoulli_p = 0.5;  // inclusion probability per non-base feature
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
};

// Draws Z per spec (optional all-ones base column, Bernoulli(p) elsewhere)
// and X = Z A + Gaussian noise. Empty columns are dropped with their mean
// rows; the returned allocation is canonical with means aligned.
inline std::tuple<DataMatrix, FeatureAllocation, MeansMatrix> synth_linear_gaussian(
    const SyntheticSpec& spec) {
  if (spec.n < 1 || spec.d < 1 || spec.true_k < 0)
    throw std::invalid_argument("synth_linear_gaussian: bad dimensions");
  if (spec.feature_means.rows() != spec.true_k || spec.feature_means.cols() != spec.d)
    throw std::invalid_argument("synth_linear_gaussian: feature_means shape mismatch");
  if (spec.bernoulli_p < 0.0 || spec.bernoulli_p > 1.0)
    throw std::invalid_argument("synth_linear_gaussian: bernoulli_p out of [0,1]");
  if (spec.noise_sigma < 0.0)
    throw std::invalid_argument("synth_linear_gaussian: negative noise_sigma");

  std::mt19937_64 rng(spec.seed);
  std::bernoulli_distribution flip(spec.bernoulli_p);
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(spec.n, spec.true_k);
  for (Eigen::Index k = 0; k < spec.true_k; ++k) {
    if (k == 0 && spec.include_base_feature) {
      z.col(k).setOnes();
      continue;
    }
    for (Eigen::Index i = 0; i < spec.n; ++i) z(i, k) = flip(rng) ? 1.0 : 0.0;
  }
  DataMatrix x = z * spec.feature_means;
  if (spec.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) += noise(rng);
  }
  auto [alloc, means] = merge_duplicate_columns(FeatureAllocation::fromDense(z),
                                                spec.feature_means);
  return {std::move(x), std::move(alloc), std::move(means)};
}

struct ResultMeta {
  std::string algorithm;
  double lambda2 = 0.0;
  double runtime_ms = 0.0;
};

inline nlohmann::json result_to_json(const SolveResult& result, const ResultMeta& meta) {
  nlohmann::json j;
  j["algorithm"] = meta.algorithm;
  j["lambda2"] = meta.lambda2;
  j["K"] = result.allocation.featureCount();
  j["objective"] = {{"fit", result.objective.fit},
                    {"penalty", result.objective.penalty},
                    {"total", result.objective.total()}};
  nlohmann::json assignments = nlohmann::json::array();
  for (Eigen::Index i = 0; i < result.allocation.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index k = 0; k < result.allocation.featureCount(); ++k)
      if (result.allocation(i, k)) row.push_back(k);
    assignments.push_back(std::move(row));
  }
  j["assignments"] = std::move(assignments);
  nlohmann::json means = nlohmann::json::array();
  if (result.means)
    for (Eigen::Index k = 0; k < result.means->rows(); ++k)
      for (Eigen::Index c = 0; c < result.means->cols(); ++c)
        means.push_back((*result.means)(k, c));
  j["means"] = std::move(means);
  j["iterations"] = result.iterations;
  j["converged"] = result.converged;
  j["seed"] = result.seed;
  j["runtime_ms"] = meta.runtime_ms;
  return j;
}

inline void write_result(const SolveResult& result, const std::string& path,
                         const std::string& format, const ResultMeta& meta) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_result: cannot open " + path);
  if (format == "json") {
    out << result_to_json(result, meta).dump(2) << '\n';
  } else if (format == "csv") {
    for (Eigen::Index i = 0; i < result.allocation.rows(); ++i) {
      bool first = true;
      for (Eigen::Index k = 0; k < result.allocation.featureCount(); ++k)
        if (result.allocation(i, k)) {
          if (!first) out << ' ';
          out << k;
          first = false;
        }
      out << '\n';
    }
  } else {
    throw std::invalid_argument("write_result: unknown format " + format);
  }
}

// Reads back the JSON schema written above; means count determines D.
inline SolveResult read_result(const std::string& path, ResultMeta* meta = nullptr) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_result: cannot open " + path);
  nlohmann::json j;
  in >> j;
  SolveResult r;
  const auto& assignments = j.at("assignments");
  const Eigen::Index n = static_cast<Eigen::Index>(assignments.size());
  const Eigen::Index k = j.at("K").get<Eigen::Index>();
  std::vector<FeatureAllocation::Column> cols(k, FeatureAllocation::Column(n, 0));
  for (Eigen::Index i = 0; i < n; ++i)
    for (const auto& feat : assignments[i]) cols[feat.get<Eigen::Index>()][i] = 1;
  r.allocation = FeatureAllocation(n, std::move(cols));
  r.objective.fit = j.at("objective").at("fit").get<double>();
  r.objective.penalty = j.at("objective").at("penalty").get<double>();
  const auto& means = j.at("means");
  if (!means.empty() && k > 0) {
    const Eigen::Index d = static_cast<Eigen::Index>(means.size()) / k;
    MeansMatrix a(k, d);
    for (Eigen::Index idx = 0; idx < k * d; ++idx)
      a(idx / d, idx % d) = means[idx].get<double>();
    r.means = std::move(a);
  }
  r.iterations = j.at("iterations").get<int>();
  r.converged = j.at("converged").get<bool>();
  r.seed = j.at("seed").get<std::uint64_t>();
  if (meta) {
    meta->algorithm = j.at("algorithm").get<std::string>();
    meta->lambda2 = j.at("lambda2").get<double>();
    meta->runtime_ms = j.at("runtime_ms").get<double>();
  }
  return r;
}

}  // namespace sva
