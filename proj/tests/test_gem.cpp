#include <doctest.h>

#include <cmath>
#include <random>

#include "support.hpp"
#include "unem/error.hpp"
#include "unem/gem.hpp"
#include "unem/math.hpp"
#include "unem/oracle.hpp"

using namespace unem;
using namespace unem::testing;

namespace {

// Rows of `x` whose label is >= 0 are support, the others query.
TaskInstance make_task(const Matrix& x, const std::vector<int>& labels, int k) {
  TaskInstance t;
  t.features = x;
  t.k_total = k;
  for (std::size_t n = 0; n < labels.size(); ++n) {
    if (labels[n] >= 0) {
      t.support_idx.push_back(n);
      t.support_labels.push_back(labels[n]);
    } else {
      t.query_idx.push_back(n);
    }
  }
  return t;
}

std::vector<LayerHyper> constant(int layers, double lambda, std::optional<double> t) {
  return std::vector<LayerHyper>(static_cast<std::size_t>(layers), LayerHyper{lambda, t});
}

TaskInstance mapped(const Episode& e, Model m) {
  return map_task(e.task, {default_feature_mode(m), 1.0});
}

void check_simplex(const SolverState& s, const TaskInstance& t) {
  for (std::size_t n : t.query_idx) {
    double total = 0.0;
    for (double v : s.u.row(n)) {
      REQUIRE(v >= 0.0);
      total += v;
    }
    REQUIRE(std::abs(total - 1.0) <= 1e-9);
  }
  for (std::size_t j = 0; j < t.support_idx.size(); ++j)
    for (int k = 0; k < t.k_total; ++k)
      REQUIRE(s.u(t.support_idx[j], static_cast<std::size_t>(k)) == (k == t.support_labels[j] ? 1.0 : 0.0));
}

}  // namespace

TEST_CASE("initial state") {
  Matrix x(3, 2);
  x(0, 0) = 1.5; x(0, 1) = -0.5;
  x(1, 0) = 2.0; x(1, 1) = 3.0;
  const TaskInstance t = make_task(x, {0, 1, -1}, 2);
  const SolverState s = init_state(t, Model::gaussian);
  CHECK(s.theta(0, 0) == 1.5);
  CHECK(s.theta(0, 1) == -0.5);
  CHECK(s.pi == std::vector<double>{1.0, 1.0});

  // missing support class
  CHECK_THROWS_AS(init_state(make_task(x, {0, 0, -1}, 2), Model::gaussian), ConfigError);
  // Dirichlet features must have one column per class
  CHECK_THROWS_AS(init_state(make_task(x, {0, 1, -1}, 3), Model::dirichlet), ConfigError);
}

TEST_CASE("first gaussian assignment is the pure likelihood softmax") {
  const FeatureBundle b = small_bundle(WorldKind::gmm, 1);
  const Episode e = sample_tasks(b, "val", small_protocol(), FeatureMode::vision_raw, 1, 1)[0];
  const TaskInstance t = mapped(e, Model::gaussian);
  SolverState s = init_state(t, Model::gaussian);
  update_assignments(s, t, Model::gaussian, {15.0, 1.0});
  const Matrix ll = class_log_likelihoods(s, t, Model::gaussian);
  for (std::size_t n : t.query_idx) {
    const auto p = math::softmax(ll.row(n));
    for (std::size_t k = 0; k < p.size(); ++k) CHECK(std::abs(s.u(n, k) - p[k]) < 1e-14);
  }
}

TEST_CASE("dirichlet uniform features give uniform proportions") {
  Matrix x(4, 3, 1.0 / 3.0);
  const TaskInstance t = make_task(x, {0, 1, 2, -1}, 3);
  SolverState s = init_state(t, Model::dirichlet);
  update_pi(s, t);
  for (double p : s.pi) CHECK(p == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("assignment update examples") {
  Matrix x(3, 1);
  x(0, 0) = -1.0;
  x(1, 0) = 1.0;
  x(2, 0) = 0.2;
  const TaskInstance t = make_task(x, {0, 1, -1}, 2);
  SolverState s = init_state(t, Model::gaussian);
  update_assignments(s, t, Model::gaussian, {0.0, 1.0});
  CHECK(s.u(2, 0) == doctest::Approx(0.4013).epsilon(1e-4));
  CHECK(s.u(2, 1) == doctest::Approx(0.5987).epsilon(1e-4));

  update_assignments(s, t, Model::gaussian, {0.0, 1e12});
  CHECK(s.u(2, 0) == doctest::Approx(0.5).epsilon(1e-9));

  SolverState same = init_state(t, Model::gaussian);
  same.theta(1, 0) = same.theta(0, 0);
  update_assignments(same, t, Model::gaussian, {0.0, 1.0});
  CHECK(same.u(2, 0) == 0.5);
}

TEST_CASE("theta and pi updates") {
  Matrix x(4, 1);
  x(0, 0) = 1.0;
  x(1, 0) = 5.0;
  x(2, 0) = 2.0;
  x(3, 0) = 4.0;
  const TaskInstance t = make_task(x, {0, 1, -1, -1}, 2);
  SolverState s = init_state(t, Model::gaussian);
  // all query mass on class 0
  s.u(2, 0) = 1.0; s.u(2, 1) = 0.0;
  s.u(3, 0) = 1.0; s.u(3, 1) = 0.0;
  update_theta(s, t, Model::gaussian);
  CHECK(s.theta(0, 0) == doctest::Approx(7.0 / 3.0));
  CHECK(s.theta(1, 0) == doctest::Approx(5.0));
  update_pi(s, t);
  CHECK(s.pi == std::vector<double>{1.0, 0.0});

  s.u(2, 0) = 0.25; s.u(2, 1) = 0.75;
  s.u(3, 0) = 0.5; s.u(3, 1) = 0.5;
  update_pi(s, t);
  CHECK(s.pi[0] == doctest::Approx(0.375).epsilon(1e-12));
  CHECK(s.pi[1] == doctest::Approx(0.625).epsilon(1e-12));
}

TEST_CASE("dirichlet theta update with zero inner steps is a no-op") {
  const FeatureBundle b = small_bundle(WorldKind::dirichlet_mixture, 2);
  const Episode e = sample_tasks(b, "val", small_protocol(), FeatureMode::clip_probability, 1, 2)[0];
  const TaskInstance t = mapped(e, Model::dirichlet);
  SolverState s = init_state(t, Model::dirichlet);
  const Matrix before = s.theta;
  SolverOptions o;
  o.inner_steps = 0;
  update_theta(s, t, Model::dirichlet, o);
  CHECK(s.theta == before);
}

TEST_CASE("objective components") {
  Matrix x(4, 1);
  const TaskInstance t = make_task(x, {0, 1, -1, -1}, 2);
  SolverState s = init_state(t, Model::gaussian);
  s.theta.fill(0.0);
  // one-hot query rows, same class: Phi = 0 and Psi = 0, L = 0 with zero features
  s.u(2, 0) = 1.0; s.u(2, 1) = 0.0;
  s.u(3, 0) = 1.0; s.u(3, 1) = 0.0;
  CHECK(evaluate_objective(s, t, Model::gaussian, 3.0, 2.0) == 0.0);
  // uniform query rows: Psi = ln K, Phi = 2 * ln(1/2)
  s.u(2, 0) = s.u(2, 1) = s.u(3, 0) = s.u(3, 1) = 0.5;
  CHECK(evaluate_objective(s, t, Model::gaussian, 3.0, 2.0) ==
        doctest::Approx(3.0 * std::log(2.0) + 2.0 * 2.0 * std::log(0.5)));
}

TEST_CASE("predict tie-breaking") {
  Matrix x(3, 1);
  const TaskInstance t = make_task(x, {-1, -1, -1}, 3);
  SolverState s;
  s.u = Matrix(3, 3);
  s.u(0, 0) = 0.1; s.u(0, 1) = 0.7; s.u(0, 2) = 0.2;
  s.u(1, 0) = 0.5; s.u(1, 1) = 0.5;
  s.u(2, 2) = 1.0;
  CHECK(predict(s, t) == std::vector<int>{1, 0, 2});
}

TEST_CASE("zero layers return the initial state") {
  const FeatureBundle b = small_bundle(WorldKind::gmm, 3);
  const Episode e = sample_tasks(b, "val", small_protocol(), FeatureMode::vision_raw, 1, 3)[0];
  const TaskInstance t = mapped(e, Model::gaussian);
  const GemResult r = run_gem(t, Model::gaussian, {}, {});
  const SolverState s0 = init_state(t, Model::gaussian);
  CHECK(r.state.u == s0.u);
  CHECK(r.state.theta == s0.theta);
}

TEST_CASE("simplex preservation and support clamping after every layer") {
  for (Model m : {Model::gaussian, Model::dirichlet}) {
    const FeatureBundle b =
        small_bundle(m == Model::gaussian ? WorldKind::gmm : WorldKind::dirichlet_mixture, 4);
    for (const Episode& e : sample_tasks(b, "val", small_protocol(), default_feature_mode(m), 10, 4)) {
      const TaskInstance t = mapped(e, m);
      SolverOptions o;
      o.keep_states = true;
      const GemResult r = run_gem(t, m, constant(10, 7.0, 1.3), o);
      REQUIRE(r.trace.states.size() == 10);
      for (const auto& s : r.trace.states) check_simplex(s, t);
    }
  }
}

TEST_CASE("objective is non-increasing with fixed hyperparameters") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> lam(0.5, 100.0), temp(1.0, 3.0);
  for (Model m : {Model::gaussian, Model::dirichlet}) {
    const FeatureBundle b =
        small_bundle(m == Model::gaussian ? WorldKind::gmm : WorldKind::dirichlet_mixture, 5);
    for (const Episode& e : sample_tasks(b, "val", small_protocol(), default_feature_mode(m), 20, 5)) {
      const TaskInstance t = mapped(e, m);
      const double lambda = lam(rng), tt = temp(rng);
      const GemResult r = run_gem(t, m, constant(10, lambda, tt), {});
      const auto& obj = r.trace.objective;
      REQUIRE(obj.size() == 10);
      for (std::size_t l = 1; l < obj.size(); ++l) {
        INFO(model_name(m) << " layer " << l << ": " << obj[l - 1] << " -> " << obj[l]);
        CHECK(obj[l] <= obj[l - 1] + 1e-9 * std::abs(obj[l - 1]));
      }
    }
  }
}

TEST_CASE("gaussian GEM with T = 1 and lambda = |Q| is soft EM") {
  const FeatureBundle b = small_bundle(WorldKind::gmm, 6, 5, 8, 40, 2.0);
  for (const Episode& e : sample_tasks(b, "val", small_protocol(), FeatureMode::vision_raw, 10, 6)) {
    const TaskInstance& t = e.task;
    oracle::EmProblem p;
    p.classes = t.k_total;
    p.label.assign(t.size(), -1);
    for (std::size_t j = 0; j < t.support_idx.size(); ++j) p.label[t.support_idx[j]] = t.support_labels[j];
    for (std::size_t n = 0; n < t.size(); ++n) p.x.emplace_back(t.features.row(n).begin(), t.features.row(n).end());
    const auto ref = oracle::reference_em(p, 10);
    SolverOptions o;
    o.keep_states = true;
    const GemResult r = run_gem(t, Model::gaussian, constant(10, 15.0, 1.0), o);
    for (std::size_t l = 0; l < 10; ++l)
      for (std::size_t j = 0; j < t.query_idx.size(); ++j)
        for (int k = 0; k < t.k_total; ++k)
          CHECK(std::abs(r.trace.states[l].u(t.query_idx[j], static_cast<std::size_t>(k)) -
                         ref[l][j][static_cast<std::size_t>(k)]) <= 1e-8);
  }
}

TEST_CASE("temperature-free path matches T = 1") {
  const FeatureBundle b = small_bundle(WorldKind::gmm, 7);
  for (const Episode& e : sample_tasks(b, "val", small_protocol(), FeatureMode::vision_raw, 5, 7)) {
    const TaskInstance t = mapped(e, Model::gaussian);
    const GemResult with_t = run_gem(t, Model::gaussian, constant(10, 15.0, 1.0), {});
    const GemResult free = run_gem(t, Model::gaussian, constant(10, 15.0, std::nullopt), {});
    for (std::size_t i = 0; i < with_t.state.u.values().size(); ++i)
      CHECK(std::abs(with_t.state.u.values()[i] - free.state.u.values()[i]) <= 1e-12);
  }
}

TEST_CASE("proportion floor is inert when proportions are not tiny") {
  const FeatureBundle b = small_bundle(WorldKind::gmm, 8, 5, 8, 40, 1.0);
  int compared = 0;
  for (const Episode& e : sample_tasks(b, "val", small_protocol(), FeatureMode::vision_raw, 10, 8)) {
    const TaskInstance t = mapped(e, Model::gaussian);
    SolverOptions tiny;
    tiny.pi_floor = 1e-300;
    SolverOptions keep;
    keep.keep_states = true;
    const GemResult a = run_gem(t, Model::gaussian, constant(5, 2.0, 1.5), keep);
    bool all_large = true;
    for (const auto& s : a.trace.states)
      for (double p : s.pi) all_large = all_large && p >= 1e-6;
    if (!all_large) continue;
    ++compared;
    const GemResult c = run_gem(t, Model::gaussian, constant(5, 2.0, 1.5), tiny);
    for (std::size_t i = 0; i < a.state.u.values().size(); ++i)
      CHECK(std::abs(a.state.u.values()[i] - c.state.u.values()[i]) <= 1e-12);
  }
  CHECK(compared > 0);
}

TEST_CASE("assignments are invariant to per-sample log-density shifts") {
  // Translating every feature by the same vector shifts each sample's
  // log-densities by a class-independent constant after the means move too.
  const FeatureBundle b = small_bundle(WorldKind::gmm, 9);
  const Episode e = sample_tasks(b, "val", small_protocol(), FeatureMode::vision_raw, 1, 9)[0];
  const TaskInstance t = mapped(e, Model::gaussian);
  SolverState s = init_state(t, Model::gaussian);
  update_assignments(s, t, Model::gaussian, {4.0, 1.7});
  // direct check through the likelihood matrix: add c_n to row n
  Matrix ll = class_log_likelihoods(s, t, Model::gaussian);
  for (std::size_t n : t.query_idx) {
    std::vector<double> row(ll.row(n).begin(), ll.row(n).end());
    std::vector<double> shifted = row;
    for (double& v : shifted) v += 1e3 * static_cast<double>(n + 1);
    const auto p = math::softmax(row);
    const auto q = math::softmax(shifted);
    for (std::size_t k = 0; k < p.size(); ++k) CHECK(std::abs(p[k] - q[k]) <= 1e-12);
  }
  TaskInstance moved = t;
  for (std::size_t n = 0; n < moved.size(); ++n)
    for (double& v : moved.features.row(n)) v += 3.25;
  SolverState s2 = init_state(moved, Model::gaussian);
  update_assignments(s2, moved, Model::gaussian, {4.0, 1.7});
  for (std::size_t n : t.query_idx)
    for (int k = 0; k < t.k_total; ++k)
      CHECK(std::abs(s.u(n, static_cast<std::size_t>(k)) - s2.u(n, static_cast<std::size_t>(k))) <= 1e-12);
}

TEST_CASE("separable tasks are solved exactly") {
  const FeatureBundle b = small_bundle(WorldKind::gmm, 10, 5, 8, 40, 200.0);
  for (const Episode& e : sample_tasks(b, "test", small_protocol(), FeatureMode::vision_raw, 5, 10)) {
    const GemResult r = solve(e.task, make_schedule(Model::gaussian, 10, 15.0, 1.0, 1.0));
    CHECK(predict(r.state, e.task) == e.query_labels);
  }
}

TEST_CASE("single-class task") {
  Matrix x(4, 2);
  x(1, 0) = 1.0;
  x(2, 1) = -3.0;
  const TaskInstance t = make_task(x, {0, -1, -1, -1}, 1);
  const GemResult r = run_gem(t, Model::gaussian, constant(3, 3.0, 1.0), {});
  for (std::size_t n : t.query_idx) CHECK(r.state.u(n, 0) == 1.0);
}

TEST_CASE("non-finite features raise a numeric error naming the layer") {
  Matrix x(3, 1);
  x(0, 0) = -1.0;
  x(1, 0) = 1.0;
  x(2, 0) = INFINITY;
  const TaskInstance t = make_task(x, {0, 1, -1}, 2);
  try {
    run_gem(t, Model::gaussian, constant(2, 1.0, 1.0), {});
    FAIL("expected a NumericError");
  } catch (const NumericError& err) {
    CHECK(err.layer() >= 0);
  }
}
