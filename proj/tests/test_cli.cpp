#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

#include "support.hpp"
#include "unem/evaluate.hpp"
#include "unem/oracle.hpp"
#include "unem/storage.hpp"

using namespace unem;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() { return fs::temp_directory_path() / ("unem_cli_test_" + std::to_string(::getpid())); }

struct RemoveScratch {
  ~RemoveScratch() {
    std::error_code ec;
    fs::remove_all(scratch_dir(), ec);
  }
} remove_scratch;

const fs::path& workdir() {
  static const fs::path dir = [] {
    fs::create_directories(scratch_dir());
    return scratch_dir();
  }();
  return dir;
}

std::string at(const std::string& name) { return (workdir() / name).string(); }

int run(const std::string& args) {
  const std::string cmd = std::string(UNEM_CLI_PATH) + " " + args + " >" + at("stdout.txt") + " 2>" + at("stderr.txt");
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> csv(const std::string& path) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(path));
  std::string line;
  while (std::getline(in, line)) {
    rows.emplace_back();
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) rows.back().push_back(cell);
  }
  return rows;
}

const std::string& gmm_bundle() {
  static const std::string path = [] {
    const std::string p = at("gmm.bin");
    REQUIRE(run("synth --world gmm --classes 30 --base-classes 10 --val-classes 10 --test-classes 10 --dim 16 "
                "--per-class 100 --seed 3 --out " + p) == 0);
    return p;
  }();
  return path;
}

}  // namespace

TEST_CASE("cli: usage and I/O exit codes") {
  CHECK(run("") == 2);
  CHECK(run("eval --bundle " + gmm_bundle() + " --model poisson") == 2);
  CHECK(run("eval --bundle " + at("missing.bin")) == 4);
  CHECK(run("eval --bundle " + gmm_bundle() + " --split nope --tasks 2") == 2);
  CHECK(run("inspect --bundle " + gmm_bundle()) == 0);
}

TEST_CASE("cli: numeric failures exit with 3") {
  FeatureBundle b = testing::small_bundle(WorldKind::gmm, 1);
  const SplitRange* test = b.find_split("test");
  for (std::size_t i = test->begin; i < test->end; ++i) b.features[i * b.dim] = NAN;
  write_bundle(b, at("nan.bin"));
  CHECK(run("eval --bundle " + at("nan.bin") + " --keff 3 --shots 2 --query 15 --tasks 2") == 3);
}

TEST_CASE("cli: eval is deterministic given the seed") {
  const std::string common = "eval --bundle " + gmm_bundle() + " --tasks 20 --seed 5 --out ";
  REQUIRE(run(common + at("e1.csv")) == 0);
  REQUIRE(run(common + at("e2.csv")) == 0);
  CHECK(slurp(at("e1.csv")) == slurp(at("e2.csv")));
  const auto rows = csv(at("e1.csv"));
  CHECK(rows.size() == 21);
  CHECK(rows[0] == std::vector<std::string>{"task_id", "accuracy", "loss"});
}

TEST_CASE("cli: separable world is solved exactly") {
  REQUIRE(run("synth --world gmm --classes 15 --base-classes 5 --val-classes 5 --test-classes 5 --dim 8 "
              "--separation 400 --per-class 100 --out " + at("sep.bin")) == 0);
  REQUIRE(run("eval --bundle " + at("sep.bin") + " --tasks 10 --out " + at("sep.csv")) == 0);
  const auto rows = csv(at("sep.csv"));
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i][1] == "1");
}

TEST_CASE("cli: default eval matches the reference EM oracle") {
  REQUIRE(run("eval --bundle " + gmm_bundle() + " --tasks 10 --seed 8 --out " + at("em.csv")) == 0);
  const auto rows = csv(at("em.csv"));
  const FeatureBundle b = read_bundle(gmm_bundle());
  ProtocolConfig p;
  const auto eps = sample_tasks(b, "test", p, FeatureMode::vision_raw, 10, 8);
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const TaskInstance& t = eps[i].task;
    oracle::EmProblem prob;
    prob.classes = t.k_total;
    prob.label.assign(t.size(), -1);
    for (std::size_t j = 0; j < t.support_idx.size(); ++j) prob.label[t.support_idx[j]] = t.support_labels[j];
    for (std::size_t n = 0; n < t.size(); ++n) prob.x.emplace_back(t.features.row(n).begin(), t.features.row(n).end());
    const auto post = oracle::reference_em(prob, 10).back();
    int correct = 0;
    for (std::size_t j = 0; j < post.size(); ++j) {
      const auto best = std::max_element(post[j].begin(), post[j].end()) - post[j].begin();
      correct += best == eps[i].query_labels[j];
    }
    CHECK(std::stod(rows[i + 1][1]) == doctest::Approx(correct / 75.0).epsilon(1e-9));
  }
}

TEST_CASE("cli: zero-epoch training emits the init presets") {
  REQUIRE(run("train --bundle " + gmm_bundle() + " --epochs 0 --tasks 5 --schedule " + at("s0.json") + " --out " +
              at("s0.csv")) == 0);
  const ScheduleFile f = read_schedule(at("s0.json"));
  CHECK(f.schedule == preset_schedule(InitPreset::vision, Model::gaussian, 10, 75, 10, 5));
  const auto rows = csv(at("s0.csv"));
  REQUIRE(rows.size() == 11);
  for (std::size_t l = 1; l < rows.size(); ++l) CHECK(rows[l][3] == "75");

  SyntheticWorld w;
  w.kind = WorldKind::dirichlet_mixture;
  w.n_classes = 30;
  write_bundle(make_synthetic_bundle(w, 100, {10, 10, 10}), at("dir.bin"));
  REQUIRE(run("train --model dirichlet --bundle " + at("dir.bin") + " --epochs 0 --tasks 5 --schedule " +
              at("d0.json")) == 0);
  const ScheduleFile d = read_schedule(at("d0.json"));
  for (double b : d.schedule.b) CHECK(b == kUnitTemperatureRaw);
  CHECK(d.schedule.lambda(0) == doctest::Approx(10.0 / 5.0));
}

TEST_CASE("cli: train is deterministic and compare reports every variant") {
  const std::string common = "train --bundle " + gmm_bundle() +
                             " --imbalance dirichlet --alpha 1 --epochs 2 --tasks 10 --seed 4 --report ";
  REQUIRE(run(common + at("r1.csv") + " --schedule " + at("t1.json")) == 0);
  REQUIRE(run(common + at("r2.csv") + " --schedule " + at("t2.json")) == 0);
  CHECK(slurp(at("r1.csv")) == slurp(at("r2.csv")));
  CHECK(slurp(at("t1.json")) == slurp(at("t2.json")));

  REQUIRE(run("compare --bundle " + gmm_bundle() + " --schedule " + at("t1.json") + " --tasks 10 --seed 2 --out " +
              at("cmp.csv")) == 0);
  const auto rows = csv(at("cmp.csv"));
  REQUIRE(rows.size() == 6);
  CHECK(rows[1][0] == "adaptive_temperature");
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i][3] == "2");
}

TEST_CASE("cli: grid search") {
  REQUIRE(run("gridsearch --bundle " + gmm_bundle() + " --tasks 5 --lambdas 75 --out " + at("g1.csv")) == 0);
  CHECK(csv(at("g1.csv")).size() == 2);
  REQUIRE(run("gridsearch --bundle " + gmm_bundle() + " --tasks 10 --out " + at("g.csv")) == 0);
  const auto rows = csv(at("g.csv"));
  CHECK(rows.size() == 27);
  double best = -1.0, at_q = -1.0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i][4] == "1") best = std::stod(rows[i][2]);
    if (rows[i][0] == "75") at_q = std::stod(rows[i][2]);
  }
  CHECK(best >= at_q);
  CHECK(at_q >= 0.0);
}

TEST_CASE("cli: sample lists episodes") {
  REQUIRE(run("sample --bundle " + gmm_bundle() + " --tasks 3 --out " + at("tasks.csv")) == 0);
  const auto rows = csv(at("tasks.csv"));
  REQUIRE(rows.size() == 4);
  CHECK(rows[1][1] == "50");
  CHECK(rows[1][2] == "75");
}
