#include "unem/unroll.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <string>

#include "gem_detail.hpp"
#include "unem/error.hpp"
#include "unem/kernels/vec.hpp"
#include "unem/math.hpp"
#include "unem/parallel.hpp"

namespace unem {

double loss(const Episode& episode, const SolverState& final_state) {
  const TaskInstance& task = episode.task;
  if (episode.query_labels.size() != task.query_idx.size())
    throw ConfigError("loss: query ground truth missing");
  double total = 0.0;
  for (std::size_t j = 0; j < task.query_idx.size(); ++j) {
    const double u = final_state.u(task.query_idx[j], static_cast<std::size_t>(episode.query_labels[j]));
    total -= std::log(std::max(u, kAssignmentFloor));
  }
  return total / static_cast<double>(task.query_idx.size());
}

std::vector<double> GradientRecord::packed(const HyperSchedule& schedule) const {
  std::vector<double> out(d_a);
  if (schedule.temperature) out.insert(out.end(), d_b.begin(), d_b.end());
  out.push_back(d_tz);
  return out;
}

namespace {

// Forward record: mapped task plus the solver state before the first and
// after every layer.
struct Tape {
  Model model = Model::gaussian;
  FeatureMapConfig map;
  TaskInstance task;
  Matrix log_z;
  std::vector<LayerHyper> hypers;
  std::vector<SolverState> states;
  std::vector<char> is_query;
};

Tape record_forward(const Episode& episode, const HyperSchedule& schedule, const SolverOptions& options) {
  Tape tape;
  tape.model = schedule.model;
  tape.map = schedule.feature_map();
  tape.task = map_task(episode.task, tape.map);
  tape.hypers = schedule.layer_hypers();
  SolverOptions opts = options;
  opts.keep_states = true;
  opts.track_objective = false;
  tape.states.push_back(init_state(tape.task, tape.model));
  GemResult run = run_gem(tape.task, tape.model, tape.hypers, opts);
  for (auto& s : run.trace.states) tape.states.push_back(std::move(s));
  if (tape.model == Model::dirichlet) tape.log_z = detail::log_features(tape.task.features);
  tape.is_query.assign(tape.task.size(), 0);
  for (std::size_t n : tape.task.query_idx) tape.is_query[n] = 1;
  return tape;
}

// Adjoints of the quantities a layer hands to the next one.
struct Adjoint {
  Matrix u;
  Matrix theta;
  std::vector<double> pi;
};

struct LayerGrad {
  double lambda = 0.0;
  double temperature = 0.0;
};

void check_adjoint(const Adjoint& adj, int layer) {
  detail::check_finite(adj.u, "assignment adjoint", layer);
  detail::check_finite(adj.theta, "parameter adjoint", layer);
  for (double v : adj.pi)
    if (!std::isfinite(v)) throw NumericError("non-finite proportion adjoint at layer " + std::to_string(layer), layer);
}

// Backward of the assignment softmax shared by both models. `loglik` holds
// ln p(z_n | theta_k) for query rows; `pi` is the proportion vector used in
// the forward update. Writes dL/d loglik into `g_loglik` and accumulates
// dL/d pi, dL/d lambda and dL/d T.
void assignment_backward(const Tape& tape, const LayerHyper& hyper, const SolverOptions& options,
                         const Matrix& u_out, const Matrix& g_u_out, const std::vector<double>& pi,
                         const Matrix& loglik, Matrix& g_loglik, std::vector<double>& g_pi, LayerGrad& lg) {
  const std::size_t K = u_out.cols();
  const double q = static_cast<double>(tape.task.query_idx.size());
  const double coeff = hyper.lambda / q;
  const double t = hyper.temperature_or_one();
  std::vector<double> log_pi(K);
  for (std::size_t k = 0; k < K; ++k) log_pi[k] = std::log(std::max(pi[k], options.pi_floor));
  std::vector<double> g_logit(K);
  for (std::size_t n : tape.task.query_idx) {
    math::softmax_backward(u_out.row(n), g_u_out.row(n), g_logit);
    const auto ll = loglik.row(n);
    auto gll = g_loglik.row(n);
    for (std::size_t k = 0; k < K; ++k) {
      const double g = g_logit[k];
      if (hyper.temperature) lg.temperature -= g * (ll[k] + coeff * log_pi[k]) / (t * t);
      lg.lambda += g * log_pi[k] / (q * t);
      if (pi[k] > options.pi_floor) g_pi[k] += g * coeff / (t * pi[k]);
      gll[k] = g / t;
    }
  }
}

// Gaussian layer: u-update from (theta_in, pi_in), theta-update and
// pi-update from u_out.
void gaussian_layer_backward(const Tape& tape, std::size_t layer, const SolverOptions& options, Adjoint& adj,
                             Matrix& g_z, LayerGrad& lg) {
  const auto& ops = kernels::active_ops();
  const SolverState& in = tape.states[layer];
  const SolverState& out = tape.states[layer + 1];
  const Matrix& z = tape.task.features;
  const std::size_t N = z.rows();
  const std::size_t K = out.u.cols();
  const std::size_t d = z.cols();
  const double q = static_cast<double>(tape.task.query_idx.size());

  // pi_out = mean of the query rows of u_out
  for (std::size_t n : tape.task.query_idx)
    for (std::size_t k = 0; k < K; ++k) adj.u(n, k) += adj.pi[k] / q;

  // theta_out = weighted means under u_out
  Matrix g_theta_in(K, d);
  std::vector<double> weight(K, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t k = 0; k < K; ++k) weight[k] += out.u(n, k);
  std::vector<double> offset(K, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    if (weight[k] > 0.0) {
      offset[k] = ops.dot(adj.theta.row(k).data(), out.theta.row(k).data(), d);
    } else {
      auto pass = g_theta_in.row(k);
      const auto src = adj.theta.row(k);
      std::copy(src.begin(), src.end(), pass.begin());
    }
  }
  for (std::size_t n = 0; n < N; ++n) {
    const double* zn = z.row(n).data();
    for (std::size_t k = 0; k < K; ++k) {
      const double u = out.u(n, k);
      if (u == 0.0 || !(weight[k] > 0.0)) continue;
      const double* gt = adj.theta.row(k).data();
      if (tape.is_query[n]) adj.u(n, k) += (ops.dot(gt, zn, d) - offset[k]) / weight[k];
      ops.axpy(u / weight[k], gt, g_z.row(n).data(), d);
    }
  }

  // u_out = softmax(( -1/2 ||z - theta_in||^2 + lambda/|Q| ln pi_in ) / T)
  Matrix loglik(N, K);
  detail::gaussian_log_likelihoods(z, in.theta, tape.task.query_idx, loglik);
  Matrix g_loglik(N, K);
  std::vector<double> g_pi(K, 0.0);
  assignment_backward(tape, tape.hypers[layer], options, out.u, adj.u, in.pi, loglik, g_loglik, g_pi, lg);

  std::vector<double> g_sum(K, 0.0);
  for (std::size_t n : tape.task.query_idx) {
    const double* zn = z.row(n).data();
    double* gzn = g_z.row(n).data();
    double row_total = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      // d loglik / d theta_k = z - theta_k,  d loglik / d z = theta_k - z
      const double g = g_loglik(n, k);
      if (g == 0.0) continue;
      ops.axpy(g, zn, g_theta_in.row(k).data(), d);
      ops.axpy(g, in.theta.row(k).data(), gzn, d);
      g_sum[k] += g;
      row_total += g;
    }
    ops.axpy(-row_total, zn, gzn, d);
  }
  for (std::size_t k = 0; k < K; ++k) ops.axpy(-g_sum[k], in.theta.row(k).data(), g_theta_in.row(k).data(), d);

  adj.theta = std::move(g_theta_in);
  adj.pi = std::move(g_pi);
  adj.u = Matrix(N, K);
}

// Dirichlet layer: theta-update from (u_in, theta_in), pi-update from
// u_in, u-update from (theta_out, pi_out).
void dirichlet_layer_backward(const Tape& tape, std::size_t layer, const SolverOptions& options, Adjoint& adj,
                              Matrix& g_log_z, LayerGrad& lg) {
  const auto& ops = kernels::active_ops();
  const SolverState& in = tape.states[layer];
  const SolverState& out = tape.states[layer + 1];
  const Matrix& lz = tape.log_z;
  const std::size_t N = lz.rows();
  const std::size_t K = out.u.cols();
  const std::size_t d = lz.cols();
  const double q = static_cast<double>(tape.task.query_idx.size());

  // u-update
  Matrix loglik(N, K);
  detail::dirichlet_log_likelihoods(lz, out.theta, tape.task.query_idx, loglik);
  Matrix g_loglik(N, K);
  std::vector<double> g_pi = adj.pi;
  assignment_backward(tape, tape.hypers[layer], options, out.u, adj.u, out.pi, loglik, g_loglik, g_pi, lg);

  Matrix g_theta_out = adj.theta;
  Matrix shifted(K, d);
  for (std::size_t k = 0; k < K; ++k) {
    double total = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      shifted(k, i) = out.theta(k, i) - 1.0;
      total += out.theta(k, i);
    }
    double g_total = 0.0;
    for (std::size_t n : tape.task.query_idx) {
      const double g = g_loglik(n, k);
      if (g == 0.0) continue;
      ops.axpy(g, lz.row(n).data(), g_theta_out.row(k).data(), d);
      g_total += g;
    }
    const double psi_total = math::digamma(total);
    for (std::size_t i = 0; i < d; ++i) g_theta_out(k, i) += g_total * (psi_total - math::digamma(out.theta(k, i)));
  }
  for (std::size_t n : tape.task.query_idx)
    for (std::size_t k = 0; k < K; ++k)
      if (g_loglik(n, k) != 0.0) ops.axpy(g_loglik(n, k), shifted.row(k).data(), g_log_z.row(n).data(), d);

  // pi_out = mean of the query rows of u_in
  Matrix g_u_in(N, K);
  for (std::size_t n : tape.task.query_idx)
    for (std::size_t k = 0; k < K; ++k) g_u_in(n, k) = g_pi[k] / q;

  // theta_out = fixed-point rounds from theta_in on the weighted mean log-features of u_in
  std::vector<double> weight;
  Matrix sums;
  detail::weighted_row_sums(in.u, lz, weight, sums);
  Matrix g_theta_in(K, d);
  Matrix g_mean_log(K, d);
  std::vector<double> g_offset(K, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    if (!(weight[k] > 0.0)) {
      const auto src = g_theta_out.row(k);
      std::copy(src.begin(), src.end(), g_theta_in.row(k).begin());
      continue;
    }
    std::vector<double> mean_log(d);
    for (std::size_t i = 0; i < d; ++i) mean_log[i] = sums(k, i) / weight[k];
    std::vector<std::vector<double>> iterates{{in.theta.row(k).begin(), in.theta.row(k).end()}};
    for (int s = 0; s < options.inner_steps; ++s) {
      const DirichletParams next = dirichlet_fixed_point(mean_log, DirichletParams{iterates.back()}, 1);
      iterates.push_back(next.alpha);
    }
    std::vector<double> g(g_theta_out.row(k).begin(), g_theta_out.row(k).end());
    auto gml = g_mean_log.row(k);
    for (int s = options.inner_steps - 1; s >= 0; --s) {
      const auto& prev = iterates[static_cast<std::size_t>(s)];
      const auto& next = iterates[static_cast<std::size_t>(s) + 1];
      // next_i = psi^-1(psi(sum prev) + mean_log_i)
      double g_arg_total = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        const double g_arg = g[i] / math::trigamma(next[i]);
        gml[i] += g_arg;
        g_arg_total += g_arg;
      }
      const double g_prev = g_arg_total * math::trigamma(std::accumulate(prev.begin(), prev.end(), 0.0));
      std::fill(g.begin(), g.end(), g_prev);
    }
    std::copy(g.begin(), g.end(), g_theta_in.row(k).begin());
    g_offset[k] = ops.dot(gml.data(), mean_log.data(), d);
  }
  for (std::size_t n = 0; n < N; ++n) {
    const double* lzn = lz.row(n).data();
    for (std::size_t k = 0; k < K; ++k) {
      const double u = in.u(n, k);
      if (u == 0.0 || !(weight[k] > 0.0)) continue;
      const double* gml = g_mean_log.row(k).data();
      if (tape.is_query[n]) g_u_in(n, k) += (ops.dot(gml, lzn, d) - g_offset[k]) / weight[k];
      ops.axpy(u / weight[k], gml, g_log_z.row(n).data(), d);
    }
  }

  adj.u = std::move(g_u_in);
  adj.theta = std::move(g_theta_in);
  adj.pi.assign(K, 0.0);
}

// dL/d t_z through the feature map, given dL/d z.
double feature_map_backward(const Matrix& raw, const Tape& tape, const Matrix& g_z) {
  double g_tz = 0.0;
  if (tape.map.mode == FeatureMode::vision_raw) {
    const auto x = raw.values();
    const auto g = g_z.values();
    for (std::size_t i = 0; i < x.size(); ++i) g_tz += g[i] * x[i];
    return g_tz;
  }
  const std::size_t K = raw.cols();
  std::vector<double> p(K), g_q(K), g_p(K), g_logit(K);
  for (std::size_t n = 0; n < raw.rows(); ++n) {
    const auto x = raw.row(n);
    const auto z = tape.task.features.row(n);
    const auto gz = g_z.row(n);
    for (std::size_t i = 0; i < K; ++i) p[i] = tape.map.t_z * x[i];
    math::softmax_inplace(p);
    double clamped_total = 0.0;
    for (double v : p) clamped_total += std::max(v, kSimplexFloor);
    double inner = 0.0;
    for (std::size_t i = 0; i < K; ++i) inner += gz[i] * z[i];
    for (std::size_t i = 0; i < K; ++i) g_p[i] = p[i] > kSimplexFloor ? (gz[i] - inner) / clamped_total : 0.0;
    math::softmax_backward(p, g_p, g_logit);
    for (std::size_t i = 0; i < K; ++i) g_tz += g_logit[i] * x[i];
  }
  return g_tz;
}

}  // namespace

GradientRecord grad(const Episode& episode, const HyperSchedule& schedule, const SolverOptions& options) {
  schedule.validate();
  const Tape tape = record_forward(episode, schedule, options);
  const TaskInstance& task = tape.task;
  const SolverState& final_state = tape.states.back();
  const std::size_t N = task.size();
  const auto K = static_cast<std::size_t>(task.k_total);
  const std::size_t d = task.features.cols();
  const double q = static_cast<double>(task.query_idx.size());

  GradientRecord rec;
  rec.loss = loss(episode, final_state);
  if (!std::isfinite(rec.loss)) throw NumericError("non-finite loss");
  rec.accuracy = task_accuracy(predict(final_state, task), episode.query_labels);

  Adjoint adj{Matrix(N, K), Matrix(K, d), std::vector<double>(K, 0.0)};
  for (std::size_t j = 0; j < task.query_idx.size(); ++j) {
    const std::size_t n = task.query_idx[j];
    const auto y = static_cast<std::size_t>(episode.query_labels[j]);
    const double u = final_state.u(n, y);
    if (u > kAssignmentFloor) adj.u(n, y) = -1.0 / (q * u);
  }

  Matrix g_z(N, d);
  Matrix g_log_z;
  if (tape.model == Model::dirichlet) g_log_z = Matrix(N, d);
  std::vector<LayerGrad> layer_grads(tape.hypers.size());
  for (std::size_t l = tape.hypers.size(); l-- > 0;) {
    if (tape.model == Model::gaussian) {
      gaussian_layer_backward(tape, l, options, adj, g_z, layer_grads[l]);
    } else {
      dirichlet_layer_backward(tape, l, options, adj, g_log_z, layer_grads[l]);
    }
    check_adjoint(adj, static_cast<int>(l));
  }

  // initial state
  if (tape.model == Model::gaussian) {
    std::vector<double> count(K, 0.0);
    for (int y : task.support_labels) count[static_cast<std::size_t>(y)] += 1.0;
    for (std::size_t j = 0; j < task.support_idx.size(); ++j) {
      const auto k = static_cast<std::size_t>(task.support_labels[j]);
      kernels::axpy(1.0 / count[k], adj.theta.row(k), g_z.row(task.support_idx[j]));
    }
  } else {
    for (std::size_t n : task.query_idx) kernels::axpy(1.0, adj.u.row(n), g_z.row(n));
    const auto z = task.features.values();
    const auto glz = g_log_z.values();
    auto gz = g_z.values();
    for (std::size_t i = 0; i < z.size(); ++i)
      if (z[i] > kSimplexFloor) gz[i] += glz[i] / z[i];
  }
  detail::check_finite(g_z, "feature adjoint", -1);

  const double g_tz = feature_map_backward(episode.task.features, tape, g_z);
  rec.d_tz = g_tz * math::sigmoid(schedule.t_z_raw);
  rec.d_a.assign(schedule.a.size(), 0.0);
  rec.d_b.assign(schedule.b.size(), 0.0);
  for (std::size_t l = 0; l < layer_grads.size(); ++l) {
    const std::size_t slot = schedule.adaptive ? l : 0;
    rec.d_a[slot] += layer_grads[l].lambda * math::sigmoid(schedule.a[slot]);
    if (schedule.temperature) rec.d_b[slot] += layer_grads[l].temperature * math::sigmoid(schedule.b[slot]);
  }
  for (double v : rec.packed(schedule))
    if (!std::isfinite(v)) throw NumericError("non-finite gradient");
  return rec;
}

double forward_loss(const Episode& episode, const HyperSchedule& schedule, const SolverOptions& options) {
  SolverOptions opts = options;
  opts.track_objective = false;
  opts.keep_states = false;
  return loss(episode, solve(episode.task, schedule, opts).state);
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
  if (!(lr0 > 0.0)) throw ConfigError("train: lr0 must be > 0");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("train: lr_decay must be in (0, 1]");
  if (tasks_per_split < 1) throw ConfigError("train: tasks_per_split must be >= 1");
  if (batch_tasks < 1) throw ConfigError("train: batch_tasks must be >= 1");
  if (inner_steps < 0) throw ConfigError("train: inner_steps must be >= 0");
}

double TrainConfig::learning_rate(int epoch) const {
  std::vector<int> points = decay_epochs;
  if (points.empty()) {
    const int p = static_cast<int>(std::floor(0.75 * epochs));
    if (p > 0) points.push_back(p);
  }
  double lr = lr0;
  for (int p : points)
    if (epoch >= p) lr *= lr_decay;
  return lr;
}

Adam::Adam(std::size_t n, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grad, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

TrainReport train_on_tasks(std::span<const Episode> tasks, const TrainConfig& cfg, const HyperSchedule& init) {
  cfg.validate();
  init.validate();
  if (tasks.empty()) throw ConfigError("train: no training tasks");
  const auto started = std::chrono::steady_clock::now();

  TrainReport report;
  HyperSchedule schedule = init;
  std::vector<double> params = schedule.pack();
  Adam adam(params.size(), cfg.beta1, cfg.beta2, cfg.eps);
  SolverOptions options;
  options.inner_steps = cfg.inner_steps;

  std::vector<std::size_t> order(tasks.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  const auto batch = static_cast<std::size_t>(cfg.batch_tasks);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.learning_rate(epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    double acc_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t count = std::min(batch, order.size() - start);
      std::vector<GradientRecord> grads(count);
      parallel_for(count, [&](std::size_t i) { grads[i] = grad(tasks[order[start + i]], schedule, options); });
      std::vector<double> mean(params.size(), 0.0);
      for (const auto& g : grads) {
        const std::vector<double> p = g.packed(schedule);
        for (std::size_t i = 0; i < p.size(); ++i) mean[i] += p[i] / static_cast<double>(count);
        loss_sum += g.loss;
        acc_sum += g.accuracy;
      }
      if (cfg.optimizer == OptimizerKind::adam) {
        adam.step(params, mean, lr);
      } else {
        for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * mean[i];
      }
      schedule.unpack(params);
    }
    const double epoch_loss = loss_sum / static_cast<double>(tasks.size());
    if (!std::isfinite(epoch_loss)) throw NumericError("training diverged at epoch " + std::to_string(epoch));
    report.epoch_loss.push_back(epoch_loss);
    report.epoch_accuracy.push_back(acc_sum / static_cast<double>(tasks.size()));
  }
  report.final_schedule = schedule;
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

TrainReport train(const FeatureBundle& bundle, const ProtocolConfig& protocol, const TrainConfig& cfg,
                  const HyperSchedule& init) {
  cfg.validate();
  const SplitRange* val = bundle.find_split("val");
  if (val == nullptr || val->begin == val->end) throw ConfigError("bundle has no validation split");
  const std::vector<Episode> tasks = sample_tasks(bundle, "val", protocol, init.feature_mode,
                                                  static_cast<std::size_t>(cfg.tasks_per_split), cfg.seed);
  return train_on_tasks(tasks, cfg, init);
}

AblationSet ablation_modes(const HyperSchedule& schedule) {
  AblationSet set;
  set.adaptive = adaptive_variant(schedule);
  set.adaptive.temperature = true;
  set.fixed = fixed_variant(set.adaptive);
  set.temperature_off = temperature_off_variant(set.adaptive);
  set.fixed_temperature_off = temperature_off_variant(set.fixed);
  return set;
}

}  // namespace unem
