#include "unem/evaluate.hpp"

#include <cmath>

#include "unem/error.hpp"
#include "unem/parallel.hpp"
#include "unem/unroll.hpp"

namespace unem {

EvalResult evaluate(std::span<const Episode> episodes, const HyperSchedule& schedule, const SolverOptions& options) {
  schedule.validate();
  SolverOptions opts = options;
  opts.track_objective = false;
  opts.keep_states = false;
  std::vector<std::vector<int>> preds(episodes.size());
  std::vector<std::vector<int>> truth(episodes.size());
  std::vector<double> losses(episodes.size());
  parallel_for(episodes.size(), [&](std::size_t i) {
    const GemResult r = solve(episodes[i].task, schedule, opts);
    preds[i] = predict(r.state, episodes[i].task);
    truth[i] = episodes[i].query_labels;
    losses[i] = loss(episodes[i], r.state);
  });
  return {score(preds, truth), std::move(losses)};
}

GridResult grid_search(std::span<const Episode> episodes, const HyperSchedule& base, std::span<const double> lambdas,
                       std::span<const double> temperatures, const SolverOptions& options) {
  if (lambdas.empty() || temperatures.empty()) throw ConfigError("grid search: empty grid");
  GridResult out;
  for (double lambda : lambdas) {
    for (double t : temperatures) {
      // T = 1 cells take the temperature-free path so that T is exactly one.
      HyperSchedule s = make_schedule(base.model, base.layers, lambda, t, 1.0, false, t != 1.0);
      s.feature_mode = base.feature_mode;
      s.t_z_raw = base.t_z_raw;
      const EvalResult r = evaluate(episodes, s, options);
      out.cells.push_back({lambda, t, r.report.mean, r.report.stderr_mean});
      if (r.report.mean > out.cells[out.best].accuracy) out.best = out.cells.size() - 1;
    }
  }
  return out;
}

std::vector<double> log_grid(double lo, double hi, int n) {
  if (!(lo > 0.0 && hi >= lo) || n < 1) throw ConfigError("log_grid: need 0 < lo <= hi and n >= 1");
  if (n == 1) return {lo};
  std::vector<double> g(static_cast<std::size_t>(n));
  const double step = std::log(hi / lo) / (n - 1);
  for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] = lo * std::exp(step * i);
  g.back() = hi;
  return g;
}

}  // namespace unem
