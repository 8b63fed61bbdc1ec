#include "unem/gem.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gem_detail.hpp"
#include "unem/error.hpp"
#include "unem/kernels/vec.hpp"
#include "unem/math.hpp"

namespace unem {

void TaskInstance::validate() const {
  const std::size_t n = features.rows();
  if (k_total <= 0) throw ConfigError("task: k_total must be positive");
  if (support_idx.size() != support_labels.size()) throw ConfigError("task: support labels/indices mismatch");
  if (query_idx.empty()) throw ConfigError("task: empty query set");
  if (support_idx.size() + query_idx.size() != n) throw ConfigError("task: support and query do not cover N");
  std::vector<char> seen(n, 0);
  auto mark = [&](std::size_t i) {
    if (i >= n || seen[i]) throw ConfigError("task: support/query indices overlap or out of range");
    seen[i] = 1;
  };
  for (std::size_t i : support_idx) mark(i);
  for (std::size_t i : query_idx) mark(i);
  for (int y : support_labels)
    if (y < 0 || y >= k_total) throw ConfigError("task: support label out of range");
}

namespace detail {

Matrix log_features(const Matrix& features) {
  Matrix out(features.rows(), features.cols());
  const auto src = features.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = std::log(std::max(src[i], kSimplexFloor));
  return out;
}

void gaussian_log_likelihoods(const Matrix& features, const Matrix& means, std::span<const std::size_t> rows,
                              Matrix& out) {
  const auto& ops = kernels::active_ops();
  const std::size_t d = features.cols();
  for (std::size_t n : rows) {
    const double* z = features.row(n).data();
    auto dst = out.row(n);
    for (std::size_t k = 0; k < means.rows(); ++k)
      dst[k] = -0.5 * ops.squared_distance(z, means.row(k).data(), d);
  }
}

void dirichlet_log_likelihoods(const Matrix& log_z, const Matrix& alpha, std::span<const std::size_t> rows,
                               Matrix& out) {
  const auto& ops = kernels::active_ops();
  const std::size_t K = alpha.rows();
  const std::size_t d = alpha.cols();
  Matrix shifted(K, d);
  std::vector<double> normaliser(K);
  for (std::size_t k = 0; k < K; ++k) {
    double total = 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double a = alpha(k, i);
      shifted(k, i) = a - 1.0;
      acc -= math::log_gamma(a);
      total += a;
    }
    normaliser[k] = acc + math::log_gamma(total);
  }
  for (std::size_t n : rows) {
    const double* lz = log_z.row(n).data();
    auto dst = out.row(n);
    for (std::size_t k = 0; k < K; ++k) dst[k] = ops.dot(shifted.row(k).data(), lz, d) + normaliser[k];
  }
}

void weighted_row_sums(const Matrix& u, const Matrix& x, std::vector<double>& weight, Matrix& sums) {
  const auto& ops = kernels::active_ops();
  const std::size_t K = u.cols();
  const std::size_t d = x.cols();
  weight.assign(K, 0.0);
  sums = Matrix(K, d);
  for (std::size_t n = 0; n < u.rows(); ++n) {
    const auto un = u.row(n);
    const double* xn = x.row(n).data();
    for (std::size_t k = 0; k < K; ++k) {
      if (un[k] == 0.0) continue;
      weight[k] += un[k];
      ops.axpy(un[k], xn, sums.row(k).data(), d);
    }
  }
}

void check_finite(const Matrix& m, const char* what, int layer) {
  for (double v : m.values())
    if (!std::isfinite(v))
      throw NumericError(std::string("non-finite ") + what + " at layer " + std::to_string(layer), layer);
}

void assign_rows(SolverState& state, const Matrix& loglik, const TaskInstance& task, const LayerHyper& hyper,
                 const SolverOptions& options) {
  const std::size_t K = state.u.cols();
  const double coeff = hyper.lambda / static_cast<double>(task.query_idx.size());
  std::vector<double> prior(K);
  for (std::size_t k = 0; k < K; ++k) prior[k] = coeff * std::log(std::max(state.pi[k], options.pi_floor));
  for (std::size_t n : task.query_idx) {
    auto row = state.u.row(n);
    const auto ll = loglik.row(n);
    if (hyper.temperature) {
      const double t = *hyper.temperature;
      for (std::size_t k = 0; k < K; ++k) row[k] = (ll[k] + prior[k]) / t;
    } else {
      for (std::size_t k = 0; k < K; ++k) row[k] = ll[k] + prior[k];
    }
    math::softmax_inplace(row);
  }
}

void update_assignments_impl(SolverState& state, const TaskInstance& task, const Matrix* log_z, Model model,
                             const LayerHyper& hyper, const SolverOptions& options) {
  Matrix loglik(task.size(), static_cast<std::size_t>(task.k_total));
  if (model == Model::gaussian) {
    gaussian_log_likelihoods(task.features, state.theta, task.query_idx, loglik);
  } else {
    dirichlet_log_likelihoods(*log_z, state.theta, task.query_idx, loglik);
  }
  assign_rows(state, loglik, task, hyper, options);
  check_finite(state.u, "assignments", state.layer_index);
}

void update_theta_impl(SolverState& state, const TaskInstance& task, const Matrix* log_z, Model model,
                       const SolverOptions& options, std::vector<DegenerateEvent>* degenerate) {
  std::vector<double> weight;
  Matrix sums;
  weighted_row_sums(state.u, model == Model::gaussian ? task.features : *log_z, weight, sums);
  for (std::size_t k = 0; k < state.theta.rows(); ++k) {
    if (!(weight[k] > 0.0)) {
      if (degenerate) degenerate->push_back({state.layer_index, static_cast<int>(k)});
      continue;
    }
    auto theta = state.theta.row(k);
    const auto s = sums.row(k);
    if (model == Model::gaussian) {
      for (std::size_t i = 0; i < theta.size(); ++i) theta[i] = s[i] / weight[k];
    } else {
      std::vector<double> mean_log(s.begin(), s.end());
      for (double& v : mean_log) v /= weight[k];
      const DirichletParams current{{theta.begin(), theta.end()}};
      const DirichletParams next = dirichlet_fixed_point(mean_log, current, options.inner_steps);
      std::copy(next.alpha.begin(), next.alpha.end(), theta.begin());
    }
  }
  check_finite(state.theta, "distribution parameters", state.layer_index);
}

}  // namespace detail

SolverState init_state(const TaskInstance& task, Model model) {
  task.validate();
  const std::size_t N = task.size();
  const auto K = static_cast<std::size_t>(task.k_total);
  const std::size_t d = task.features.cols();
  SolverState state;
  state.u = Matrix(N, K, 0.0);
  for (std::size_t j = 0; j < task.support_idx.size(); ++j)
    state.u(task.support_idx[j], static_cast<std::size_t>(task.support_labels[j])) = 1.0;

  if (model == Model::gaussian) {
    state.theta = Matrix(K, d, 0.0);
    std::vector<double> count(K, 0.0);
    for (std::size_t j = 0; j < task.support_idx.size(); ++j) {
      const auto k = static_cast<std::size_t>(task.support_labels[j]);
      kernels::axpy(1.0, task.features.row(task.support_idx[j]), state.theta.row(k));
      count[k] += 1.0;
    }
    for (std::size_t k = 0; k < K; ++k) {
      if (count[k] == 0.0)
        throw ConfigError("init_state: class " + std::to_string(k) + " has no support sample");
      for (double& v : state.theta.row(k)) v /= count[k];
    }
    // Query rows carry no information until the first u-update.
    for (std::size_t n : task.query_idx)
      for (double& v : state.u.row(n)) v = 1.0 / static_cast<double>(K);
    state.pi.assign(K, 1.0);
  } else {
    if (d != K) throw ConfigError("init_state: Dirichlet features must have k_total columns");
    for (std::size_t n : task.query_idx) {
      const auto z = task.features.row(n);
      std::copy(z.begin(), z.end(), state.u.row(n).begin());
    }
    state.theta = Matrix(K, K, 1.0);
    state.pi.assign(K, 0.0);
    update_pi(state, task);
  }
  return state;
}

void update_assignments(SolverState& state, const TaskInstance& task, Model model, const LayerHyper& hyper,
                        const SolverOptions& options) {
  if (model == Model::dirichlet) {
    const Matrix log_z = detail::log_features(task.features);
    detail::update_assignments_impl(state, task, &log_z, model, hyper, options);
  } else {
    detail::update_assignments_impl(state, task, nullptr, model, hyper, options);
  }
}

void update_theta(SolverState& state, const TaskInstance& task, Model model, const SolverOptions& options,
                  std::vector<DegenerateEvent>* degenerate) {
  if (model == Model::dirichlet) {
    const Matrix log_z = detail::log_features(task.features);
    detail::update_theta_impl(state, task, &log_z, model, options, degenerate);
  } else {
    detail::update_theta_impl(state, task, nullptr, model, options, degenerate);
  }
}

void update_pi(SolverState& state, const TaskInstance& task) {
  const std::size_t K = state.u.cols();
  state.pi.assign(K, 0.0);
  for (std::size_t n : task.query_idx) {
    const auto row = state.u.row(n);
    for (std::size_t k = 0; k < K; ++k) state.pi[k] += row[k];
  }
  const double inv = 1.0 / static_cast<double>(task.query_idx.size());
  for (double& p : state.pi) p *= inv;
}

Matrix class_log_likelihoods(const SolverState& state, const TaskInstance& task, Model model) {
  std::vector<std::size_t> all(task.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  Matrix loglik(task.size(), static_cast<std::size_t>(task.k_total));
  if (model == Model::gaussian) {
    detail::gaussian_log_likelihoods(task.features, state.theta, all, loglik);
  } else {
    detail::dirichlet_log_likelihoods(detail::log_features(task.features), state.theta, all, loglik);
  }
  return loglik;
}

double evaluate_objective(const SolverState& state, const TaskInstance& task, Model model, double lambda,
                          double temperature) {
  const Matrix loglik = class_log_likelihoods(state, task, model);
  const std::size_t K = state.u.cols();
  double nll = 0.0;
  for (std::size_t n = 0; n < task.size(); ++n) {
    const auto u = state.u.row(n);
    const auto ll = loglik.row(n);
    for (std::size_t k = 0; k < K; ++k)
      if (u[k] != 0.0) nll -= u[k] * ll[k];
  }
  std::vector<double> pi(K, 0.0);
  double barrier = 0.0;
  for (std::size_t n : task.query_idx) {
    const auto u = state.u.row(n);
    for (std::size_t k = 0; k < K; ++k) {
      pi[k] += u[k];
      barrier += math::xlogx(u[k]);
    }
  }
  double balance = 0.0;
  for (double& p : pi) {
    p /= static_cast<double>(task.query_idx.size());
    balance -= math::xlogx(p);
  }
  return nll + lambda * balance + temperature * barrier;
}

GemResult run_gem(const TaskInstance& task, Model model, std::span<const LayerHyper> hypers,
                  const SolverOptions& options) {
  GemResult result{init_state(task, model), {}};
  SolverState& state = result.state;
  Matrix log_z;
  if (model == Model::dirichlet) log_z = detail::log_features(task.features);

  for (std::size_t l = 0; l < hypers.size(); ++l) {
    const LayerHyper& hyper = hypers[l];
    state.layer_index = static_cast<int>(l);
    if (model == Model::gaussian) {
      detail::update_assignments_impl(state, task, nullptr, model, hyper, options);
      detail::update_theta_impl(state, task, nullptr, model, options, &result.trace.degenerate);
      update_pi(state, task);
    } else {
      detail::update_theta_impl(state, task, &log_z, model, options, &result.trace.degenerate);
      update_pi(state, task);
      detail::update_assignments_impl(state, task, &log_z, model, hyper, options);
    }
    state.layer_index = static_cast<int>(l) + 1;
    if (options.track_objective)
      result.trace.objective.push_back(
          evaluate_objective(state, task, model, hyper.lambda, hyper.temperature_or_one()));
    if (options.keep_states) result.trace.states.push_back(state);
  }
  return result;
}

TaskInstance map_task(const TaskInstance& raw_task, const FeatureMapConfig& cfg) {
  TaskInstance mapped;
  mapped.features = map_features(raw_task.features, cfg);
  mapped.support_idx = raw_task.support_idx;
  mapped.support_labels = raw_task.support_labels;
  mapped.query_idx = raw_task.query_idx;
  mapped.k_total = raw_task.k_total;
  return mapped;
}

GemResult solve(const TaskInstance& raw_task, const HyperSchedule& schedule, const SolverOptions& options) {
  schedule.validate();
  const TaskInstance task = map_task(raw_task, schedule.feature_map());
  const std::vector<LayerHyper> hypers = schedule.layer_hypers();
  return run_gem(task, schedule.model, hypers, options);
}

std::vector<int> predict(const SolverState& state, const TaskInstance& task) {
  std::vector<int> out;
  out.reserve(task.query_idx.size());
  for (std::size_t n : task.query_idx) {
    const auto row = state.u.row(n);
    std::size_t best = 0;
    for (std::size_t k = 1; k < row.size(); ++k)
      if (row[k] > row[best]) best = k;
    out.push_back(static_cast<int>(best));
  }
  return out;
}

}  // namespace unem
