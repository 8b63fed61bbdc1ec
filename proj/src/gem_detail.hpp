#pragma once
// Internal pieces of the solver shared with the gradient engine so that
// the recorded forward pass is the very same computation as run_gem.

#include <vector>

#include "unem/gem.hpp"

namespace unem::detail {

// ln max(z, kSimplexFloor), elementwise.
Matrix log_features(const Matrix& features);

// Row-wise class log-likelihoods for the given rows into `out` (N x K).
void gaussian_log_likelihoods(const Matrix& features, const Matrix& means, std::span<const std::size_t> rows,
                              Matrix& out);
void dirichlet_log_likelihoods(const Matrix& log_z, const Matrix& alpha, std::span<const std::size_t> rows,
                               Matrix& out);

// Column sums of u over all rows and weighted row sums sum_n u_nk x_n (K x d).
void weighted_row_sums(const Matrix& u, const Matrix& x, std::vector<double>& weight, Matrix& sums);

void assign_rows(SolverState& state, const Matrix& loglik, const TaskInstance& task, const LayerHyper& hyper,
                 const SolverOptions& options);

void update_theta_impl(SolverState& state, const TaskInstance& task, const Matrix* log_z, Model model,
                       const SolverOptions& options, std::vector<DegenerateEvent>* degenerate);

void update_assignments_impl(SolverState& state, const TaskInstance& task, const Matrix* log_z, Model model,
                             const LayerHyper& hyper, const SolverOptions& options);

void check_finite(const Matrix& m, const char* what, int layer);

}  // namespace unem::detail
