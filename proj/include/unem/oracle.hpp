#pragma once
// Reference implementations for tests. Deliberately independent of the
// solver code: plain nested vectors and naive loops.

#include <functional>
#include <span>
#include <vector>

namespace unem::oracle {

using Rows = std::vector<std::vector<double>>;

struct OracleResult {
  std::vector<double> values;
  double tolerance = 0.0;
  int iterations = 0;
};

// A labelled/unlabelled Gaussian mixture problem. label[n] < 0 marks a
// query row.
struct EmProblem {
  Rows x;
  std::vector<int> label;
  int classes = 0;
};

// Soft EM with identity covariances. Support responsibilities are clamped
// to their labels; mixture weights are the mean query responsibilities,
// initialised uniform; means start at the support class means. Returns
// the query posteriors (query rows in order of appearance) after each
// E-step.
std::vector<Rows> reference_em(const EmProblem& problem, int iterations);

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h.
std::vector<double> fd_gradient(const std::function<double(std::span<const double>)>& f,
                                std::span<const double> x, double h);

// Weighted Dirichlet maximum likelihood by BFGS over log-concentrations,
// run until the gradient norm is below `grad_tol`. Throws
// ConvergenceError if that does not happen within max_iter.
OracleResult dirichlet_mle_reference(const Rows& samples, std::span<const double> weights, double grad_tol = 1e-8,
                                     int max_iter = 2000);

}  // namespace unem::oracle
