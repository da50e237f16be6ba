// Command-line harness: run the solvers with seeded restarts, generate
// synthetic data, reduce with PCA, verify the small-variance limits
// numerically, and query the brute-force oracle.

#include <chrono>
#include <cstdint>
#include <iostream>
#include <optional>
#include <random>
#include <string>

#include <CLI11.hpp>

#include "sva/sva.hpp"

namespace {

struct CommonOpts {
  std::string input;
  std::string output;
  std::string format = "json";
  std::string seed_str = "0";
  double lambda2 = 1.0;
  int restarts = 1;
  int max_iters = 500;
  int threads = 0;
  bool has_header = false;
  bool summary = false;
};

void addCommonFlags(CLI::App* cmd, CommonOpts& opt, bool needs_lambda) {
  cmd->add_option("--input", opt.input, "input CSV path")->required();
  cmd->add_flag("--header", opt.has_header, "skip a CSV header row");
  if (needs_lambda) cmd->add_option("--lambda2", opt.lambda2, "penalty constant")->required();
  cmd->add_option("--restarts", opt.restarts, "random restarts (default 1)");
  cmd->add_option("--seed", opt.seed_str, "base seed (u64, or 'entropy')");
  cmd->add_option("--max-iters", opt.max_iters, "iteration cap");
  cmd->add_option("--threads", opt.threads, "restart worker threads (0 = hardware)");
  cmd->add_option("--output", opt.output, "result path (default: stdout)");
  cmd->add_option("--format", opt.format, "json|csv")->check(CLI::IsMember({"json", "csv"}));
  cmd->add_flag("--summary", opt.summary, "print per-run seconds, total seconds, final K");
}

std::uint64_t parseSeed(const std::string& s) {
  if (s == "entropy") {
    std::random_device rd;
    return (static_cast<std::uint64_t>(rd()) << 32) | rd();
  }
  return std::stoull(s);
}

sva::SolverConfig makeConfig(const CommonOpts& opt) {
  sva::SolverConfig cfg;
  cfg.max_iters = opt.max_iters;
  cfg.restarts = opt.restarts;
  cfg.base_seed = parseSeed(opt.seed_str);
  cfg.threads = opt.threads > 0
                    ? opt.threads
                    : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  return cfg;
}

int emitResult(const sva::SolveResult& result, const CommonOpts& opt,
               const std::string& algorithm, double seconds) {
  sva::ResultMeta meta;
  meta.algorithm = algorithm;
  meta.lambda2 = opt.lambda2;
  meta.runtime_ms = seconds * 1000.0;
  if (opt.output.empty()) {
    std::cout << sva::result_to_json(result, meta).dump(2) << '\n';
  } else {
    sva::write_result(result, opt.output, opt.format, meta);
  }
  if (opt.summary) {
    std::cout << "per_run_seconds=" << seconds / std::max(1, opt.restarts)
              << " total_seconds=" << seconds << " K=" << result.allocation.featureCount()
              << '\n';
  }
  return 0;
}

using Clock = std::chrono::steady_clock;

int runSolver(const CommonOpts& opt, const std::string& algorithm,
              const std::optional<Eigen::Index>& k) {
  const sva::DataMatrix x = sva::load_csv(opt.input, opt.has_header);
  const sva::SolverConfig cfg = makeConfig(opt);
  const auto t0 = Clock::now();
  sva::SolveResult result;
  if (algorithm == "dpmeans")
    result = sva::dp_means(x, opt.lambda2, cfg);
  else if (algorithm == "bpmeans")
    result = sva::bp_means(x, opt.lambda2, cfg);
  else if (algorithm == "collapsed-dp")
    result = sva::collapsed_dp_means(x, opt.lambda2, cfg);
  else if (algorithm == "collapsed-bp")
    result = sva::collapsed_bp_means(x, opt.lambda2, cfg);
  else if (algorithm == "kfeatures")
    result = sva::k_features(x, *k, cfg);
  else if (algorithm == "stepwise")
    result = sva::stepwise_k_features(x, opt.lambda2, cfg);
  else if (algorithm == "mahalanobis")
    result = sva::mahalanobis_kmeans(x, *k, opt.lambda2, cfg).first;
  const double seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return emitResult(result, opt, algorithm, seconds);
}

// Fixed N=3, D=2 instance for the limit verification table.
void standardInstance(sva::DataMatrix& x, sva::FeatureAllocation& z_cluster,
                      sva::FeatureAllocation& z_feature) {
  x.resize(3, 2);
  x << -2.4, -0.9, 2.2, 0.1, -1.4, 2.1;
  z_cluster = sva::FeatureAllocation::fromLabels({0, 1, 1});
  Eigen::MatrixXd zf(3, 2);
  zf << 1, 0, 1, 1, 0, 1;
  z_feature = sva::FeatureAllocation::fromDense(zf);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"small-variance-asymptotics clustering and feature allocation"};
  app.require_subcommand(1);

  CommonOpts opt;
  Eigen::Index k_opt = 1;

  auto* dp = app.add_subcommand("dpmeans", "penalized nonparametric clustering");
  addCommonFlags(dp, opt, true);
  auto* bp = app.add_subcommand("bpmeans", "penalized feature allocation");
  addCommonFlags(bp, opt, true);
  auto* cdp = app.add_subcommand("collapsed-dp", "collapsed clustering (no explicit means)");
  addCommonFlags(cdp, opt, true);
  auto* cbp = app.add_subcommand("collapsed-bp", "collapsed feature allocation");
  addCommonFlags(cbp, opt, true);
  auto* kf = app.add_subcommand("kfeatures", "fixed-K feature allocation");
  addCommonFlags(kf, opt, false);
  kf->add_option("--k", k_opt, "number of features")->required();
  auto* sw = app.add_subcommand("stepwise", "K-features model selection over K");
  addCommonFlags(sw, opt, true);
  auto* mh = app.add_subcommand("mahalanobis", "K-means with per-cluster covariances");
  addCommonFlags(mh, opt, true);
  mh->add_option("--k", k_opt, "number of clusters")->required();

  auto* synth = app.add_subcommand("synth", "generate linear-Gaussian feature data");
  Eigen::Index synth_n = 100, synth_d = 10, synth_k = 5;
  double synth_noise = 0.0, synth_p = 0.5;
  bool synth_no_base = false;
  std::string synth_seed = "0", synth_out;
  synth->add_option("--n", synth_n, "rows")->required();
  synth->add_option("--d", synth_d, "columns")->required();
  synth->add_option("--true-k", synth_k, "planted feature count")->required();
  synth->add_option("--noise", synth_noise, "noise standard deviation");
  synth->add_option("--bernoulli-p", synth_p, "inclusion probability per non-base feature");
  synth->add_flag("--no-base", synth_no_base, "omit the all-rows base feature");
  synth->add_option("--seed", synth_seed, "seed (u64, or 'entropy')");
  synth->add_option("--output", synth_out, "output CSV path")->required();

  auto* pca = app.add_subcommand("pca", "center and project onto top principal components");
  std::string pca_in, pca_out;
  Eigen::Index pca_components = 2;
  bool pca_header = false;
  pca->add_option("--input", pca_in, "input CSV path")->required();
  pca->add_flag("--header", pca_header, "skip a CSV header row");
  pca->add_option("--components", pca_components, "component count")->required();
  pca->add_option("--output", pca_out, "output CSV path")->required();

  auto* verify = app.add_subcommand("verify-asymptotics",
                                    "table of (sigma2, ratio) for a model's limit");
  std::string verify_model = "crp", verify_out;
  double verify_lambda2 = 1.0, verify_rho2 = 0.5;
  verify->add_option("--model", verify_model, "crp|ibp|collapsed-crp|collapsed-ibp")
      ->check(CLI::IsMember({"crp", "ibp", "collapsed-crp", "collapsed-ibp"}));
  verify->add_option("--lambda2", verify_lambda2, "penalty constant")->required();
  verify->add_option("--rho2", verify_rho2, "mean prior variance");
  verify->add_option("--output", verify_out, "output CSV path (default: stdout)");

  auto* oracle = app.add_subcommand("oracle", "exhaustive global optimum on tiny inputs");
  std::string oracle_in, oracle_mode = "cluster", oracle_out;
  double oracle_lambda2 = 1.0;
  Eigen::Index oracle_kmax = 3;
  bool oracle_header = false;
  oracle->add_option("--input", oracle_in, "input CSV path")->required();
  oracle->add_flag("--header", oracle_header, "skip a CSV header row");
  oracle->add_option("--mode", oracle_mode, "cluster|feature")
      ->check(CLI::IsMember({"cluster", "feature"}));
  oracle->add_option("--lambda2", oracle_lambda2, "penalty constant")->required();
  oracle->add_option("--kmax", oracle_kmax, "feature-mode column bound");
  oracle->add_option("--output", oracle_out, "result path (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e, std::cerr, std::cerr);
    return 2;
  }

  try {
    for (const char* name : {"dpmeans", "bpmeans", "collapsed-dp", "collapsed-bp", "stepwise"})
      if (app.got_subcommand(name)) return runSolver(opt, name, std::nullopt);
    if (app.got_subcommand("kfeatures")) return runSolver(opt, "kfeatures", k_opt);
    if (app.got_subcommand("mahalanobis")) return runSolver(opt, "mahalanobis", k_opt);

    if (app.got_subcommand("synth")) {
      sva::SyntheticSpec spec;
      spec.n = synth_n;
      spec.d = synth_d;
      spec.true_k = synth_k;
      spec.include_base_feature = !synth_no_base;
      spec.bernoulli_p = synth_p;
      spec.noise_sigma = synth_noise;
      spec.seed = parseSeed(synth_seed);
      // Planted means: Rademacher +-1 rows derived from the seed.
      std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ull);
      std::bernoulli_distribution sign(0.5);
      spec.feature_means.resize(spec.true_k, spec.d);
      for (Eigen::Index i = 0; i < spec.true_k; ++i)
        for (Eigen::Index j = 0; j < spec.d; ++j)
          spec.feature_means(i, j) = sign(rng) ? 1.0 : -1.0;
      auto [x, z, a] = sva::synth_linear_gaussian(spec);
      sva::write_csv(x, synth_out);
      return 0;
    }

    if (app.got_subcommand("pca")) {
      const sva::DataMatrix x = sva::load_csv(pca_in, pca_header);
      sva::write_csv(sva::pca_reduce(x, pca_components), pca_out);
      return 0;
    }

    if (app.got_subcommand("verify-asymptotics")) {
      sva::DataMatrix x;
      sva::FeatureAllocation zc, zf;
      standardInstance(x, zc, zf);
      const std::vector<double> grid{1e-2, 1e-3, 1e-4, 1e-5};
      sva::ModelKind model = sva::ModelKind::CrpMixture;
      const sva::FeatureAllocation* z = &zc;
      if (verify_model == "ibp") {
        model = sva::ModelKind::IbpLinearGaussian;
        z = &zf;
      } else if (verify_model == "collapsed-crp") {
        model = sva::ModelKind::CollapsedCrp;
      } else if (verify_model == "collapsed-ibp") {
        model = sva::ModelKind::CollapsedIbp;
        z = &zf;
      }
      std::optional<sva::MeansMatrix> a;
      const sva::MeansMatrix* a_ptr = nullptr;
      if (verify_model == "crp" || verify_model == "ibp") {
        a = sva::optimal_means(x, *z);
        a_ptr = &*a;
      }
      const auto table =
          sva::asymptotic_gap(model, x, *z, a_ptr, verify_lambda2, grid, verify_rho2);
      std::ostream* os = &std::cout;
      std::ofstream file;
      if (!verify_out.empty()) {
        file.open(verify_out);
        if (!file) throw std::runtime_error("cannot open " + verify_out);
        os = &file;
      }
      os->precision(17);
      *os << "sigma2,ratio\n";
      for (const auto& [s2, ratio] : table) *os << s2 << ',' << ratio << '\n';
      return 0;
    }

    if (app.got_subcommand("oracle")) {
      const sva::DataMatrix x = sva::load_csv(oracle_in, oracle_header);
      sva::SolveResult result;
      result.converged = true;
      if (oracle_mode == "cluster") {
        auto [c, obj] = sva::oracle_dp_optimum(x, oracle_lambda2);
        result.allocation = c;
        result.means = sva::optimal_means(x, c);
        result.objective = sva::dp_means_objective(x, c, *result.means, oracle_lambda2);
      } else {
        auto [z, obj] = sva::oracle_bp_optimum(x, oracle_lambda2, oracle_kmax);
        result.allocation = z;
        if (z.featureCount() > 0) result.means = sva::optimal_means(x, z);
        result.objective = sva::collapsed_bp_objective(x, z, oracle_lambda2);
      }
      CommonOpts o;
      o.output = oracle_out;
      o.lambda2 = oracle_lambda2;
      return emitResult(result, o, "oracle-" + oracle_mode, 0.0);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
