#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

// SVA_CLI_PATH is injected by the build; tests drive the real executable.

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("sva_cli_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

int run(const std::string& args) {
  const std::string cmd = std::string("\"") + SVA_CLI_PATH + "\" " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string readFile(const std::string& path) {
  std::ifstream in(path);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void writeFile(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

nlohmann::json readJson(const std::string& path) {
  return nlohmann::json::parse(readFile(path));
}

nlohmann::json withoutRuntime(nlohmann::json j) {
  j.erase("runtime_ms");
  return j;
}

}  // namespace

TEST_CASE("exit codes") {
  TempDir tmp;
  CHECK(run("--help") == 0);
  CHECK(run("nonsense") == 2);
  CHECK(run("dpmeans --input x.csv --lambda2 1 --bogus-flag") == 2);
  CHECK(run("dpmeans --input " + tmp.file("missing.csv") + " --lambda2 1") == 1);
  writeFile(tmp.file("bad.csv"), "1,2\n3\n");
  CHECK(run("dpmeans --input " + tmp.file("bad.csv") + " --lambda2 1") == 1);
}

TEST_CASE("clustering run on two points reports the merged optimum") {
  TempDir tmp;
  writeFile(tmp.file("two.csv"), "0\n2\n");
  const std::string out = tmp.file("o.json");
  REQUIRE(run("dpmeans --input " + tmp.file("two.csv") + " --lambda2 3.0 --output " + out) == 0);
  const nlohmann::json j = readJson(out);
  CHECK(j["algorithm"] == "dpmeans");
  CHECK(j["K"].get<int>() == 1);
  CHECK(j["objective"]["total"].get<double>() == doctest::Approx(2.0));
  CHECK(j["converged"].get<bool>());
}

TEST_CASE("identical command lines give byte-identical output") {
  TempDir tmp;
  writeFile(tmp.file("x.csv"), "0.1,0.2\n1.4,1.3\n0.2,0.1\n1.5,1.2\n2.5,2.6\n");
  const std::string base =
      "bpmeans --input " + tmp.file("x.csv") + " --lambda2 0.5 --restarts 6 --seed 11 ";
  REQUIRE(run(base + "--output " + tmp.file("a.json")) == 0);
  REQUIRE(run(base + "--output " + tmp.file("b.json")) == 0);
  CHECK(withoutRuntime(readJson(tmp.file("a.json"))) ==
        withoutRuntime(readJson(tmp.file("b.json"))));
}

TEST_CASE("sequential and parallel restarts give identical results") {
  TempDir tmp;
  std::ostringstream data;
  std::mt19937_64 rng(33);
  std::normal_distribution<double> g;
  for (int i = 0; i < 20; ++i) data << g(rng) << ',' << g(rng) << '\n';
  writeFile(tmp.file("x.csv"), data.str());
  for (const std::string algo : {"dpmeans", "bpmeans", "collapsed-dp", "collapsed-bp"}) {
    const std::string base =
        algo + " --input " + tmp.file("x.csv") + " --lambda2 1.0 --restarts 8 --seed 3 ";
    REQUIRE(run(base + "--threads 1 --output " + tmp.file("seq.json")) == 0);
    REQUIRE(run(base + "--threads 4 --output " + tmp.file("par.json")) == 0);
    CHECK(withoutRuntime(readJson(tmp.file("seq.json"))) ==
          withoutRuntime(readJson(tmp.file("par.json"))));
  }
}

TEST_CASE("limit verification emits a monotone ratio table") {
  TempDir tmp;
  for (const std::string model : {"crp", "ibp", "collapsed-crp", "collapsed-ibp"}) {
    const std::string out = tmp.file(model + ".csv");
    REQUIRE(run("verify-asymptotics --model " + model + " --lambda2 1.0 --output " + out) == 0);
    std::ifstream in(out);
    std::string line;
    std::getline(in, line);
    CHECK(line == "sigma2,ratio");
    double prev_err = 1e100, last_err = 1e100;
    int rows = 0;
    while (std::getline(in, line)) {
      const auto comma = line.find(',');
      const double ratio = std::stod(line.substr(comma + 1));
      last_err = std::abs(ratio - 1.0);
      CHECK(last_err < prev_err);
      prev_err = last_err;
      ++rows;
    }
    CHECK(rows == 4);
    CHECK(last_err < 1e-2);
  }
}

TEST_CASE("synthetic generation feeds model selection") {
  TempDir tmp;
  REQUIRE(run("synth --n 60 --d 6 --true-k 3 --noise 0.01 --seed 7 --output " +
              tmp.file("data.csv")) == 0);
  const std::string out = tmp.file("fit.json");
  REQUIRE(run("stepwise --input " + tmp.file("data.csv") +
              " --lambda2 1.0 --restarts 10 --seed 1 --output " + out) == 0);
  const nlohmann::json j = readJson(out);
  CHECK(j["K"].get<int>() == 3);
  CHECK(j["objective"]["fit"].get<double>() <= 2.0 * 60 * 6 * 0.01 * 0.01);
}

TEST_CASE("pca subcommand writes the projected scores") {
  TempDir tmp;
  writeFile(tmp.file("x.csv"), "0,0\n1,2\n2,4\n3,6\n");
  REQUIRE(run("pca --input " + tmp.file("x.csv") + " --components 1 --output " +
              tmp.file("p.csv")) == 0);
  std::ifstream in(tmp.file("p.csv"));
  std::vector<double> scores;
  std::string line;
  while (std::getline(in, line)) scores.push_back(std::stod(line));
  REQUIRE(scores.size() == 4);
  // Collinear input: scores are the signed distances along the line, centered.
  double total = 0.0;
  for (double s : scores) total += s;
  CHECK(total == doctest::Approx(0.0));
}

TEST_CASE("oracle subcommand reports the exhaustive optimum") {
  TempDir tmp;
  writeFile(tmp.file("two.csv"), "0\n2\n");
  REQUIRE(run("oracle --input " + tmp.file("two.csv") +
              " --mode cluster --lambda2 0.5 --output " + tmp.file("c.json")) == 0);
  const nlohmann::json c = readJson(tmp.file("c.json"));
  CHECK(c["K"].get<int>() == 2);
  CHECK(c["objective"]["total"].get<double>() == doctest::Approx(0.5));

  writeFile(tmp.file("ones.csv"), "1\n1\n");
  REQUIRE(run("oracle --input " + tmp.file("ones.csv") +
              " --mode feature --lambda2 0.5 --kmax 2 --output " + tmp.file("f.json")) == 0);
  const nlohmann::json f = readJson(tmp.file("f.json"));
  CHECK(f["K"].get<int>() == 1);
  CHECK(f["objective"]["total"].get<double>() == doctest::Approx(0.5));
}

TEST_CASE("csv output format emits assignments only") {
  TempDir tmp;
  writeFile(tmp.file("two.csv"), "0\n2\n");
  REQUIRE(run("dpmeans --input " + tmp.file("two.csv") +
              " --lambda2 0.5 --format csv --output " + tmp.file("o.csv")) == 0);
  // Canonical column order places the (0,1) singleton before (1,0), so row 0
  // belongs to cluster 1 and row 1 to cluster 0.
  CHECK(readFile(tmp.file("o.csv")) == "1\n0\n");
}
