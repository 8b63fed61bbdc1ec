#pragma once
// Batch evaluation of a schedule over sampled episodes, and fixed
// (lambda, T) grid search.

#include <span>
#include <vector>

#include "unem/gem.hpp"
#include "unem/schedule.hpp"
#include "unem/task_engine.hpp"

namespace unem {

struct EvalResult {
  EvalReport report;
  std::vector<double> loss;  // per task, same order as report.task_accuracy
};

// Solves every episode (concurrently) and scores the query predictions.
EvalResult evaluate(std::span<const Episode> episodes, const HyperSchedule& schedule, const SolverOptions& options = {});

struct GridCell {
  double lambda = 0.0;
  double temperature = 1.0;
  double accuracy = 0.0;
  double stderr_mean = 0.0;
};

struct GridResult {
  std::vector<GridCell> cells;  // lambda-major, in grid order
  std::size_t best = 0;         // first cell with the highest accuracy
};

// `base` supplies model, layer count, feature map and inner settings; every
// cell replaces its (lambda, T) with a constant schedule.
GridResult grid_search(std::span<const Episode> episodes, const HyperSchedule& base, std::span<const double> lambdas,
                       std::span<const double> temperatures, const SolverOptions& options = {});

// n points log-spaced over [lo, hi].
std::vector<double> log_grid(double lo, double hi, int n);

}  // namespace unem
