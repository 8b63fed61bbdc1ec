#pragma once
// Generalized EM solver for transductive few-shot classification.
//
// Minimises, over soft assignments u and per-class parameters theta,
//   L(u, theta) + lambda * Psi(u) + T * Phi(u)
// where L is the negative log-likelihood of all N samples, Psi the entropy
// of the query class proportions and Phi the negative entropy of the query
// assignments. Support rows of u are clamped to their one-hot labels.
//
// Gaussian model, per layer: u-update, theta-update, pi-update.
// Dirichlet model, per layer: theta-update, pi-update, u-update.

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "unem/matrix.hpp"
#include "unem/schedule.hpp"

namespace unem {

// One few-shot episode as the solver sees it. Query labels are not part of
// this type.
struct TaskInstance {
  Matrix features;  // N x d; for the Dirichlet model N x K simplex rows once mapped
  std::vector<std::size_t> support_idx;
  std::vector<int> support_labels;  // parallel to support_idx, in [0, k_total)
  std::vector<std::size_t> query_idx;
  int k_total = 0;

  std::size_t size() const noexcept { return features.rows(); }
  // Throws ConfigError unless support/query partition {0..N-1} and labels are in range.
  void validate() const;
};

struct SolverOptions {
  double pi_floor = 1e-12;  // applied before ln(pi) in the u-update
  int inner_steps = 1;      // Dirichlet fixed-point rounds per layer
  bool keep_states = false; // record the state after every layer
  bool track_objective = true;
};

struct SolverState {
  Matrix u;                // N x K
  Matrix theta;            // K x d (means or concentrations)
  std::vector<double> pi;  // K
  int layer_index = 0;
};

struct DegenerateEvent {
  int layer;
  int cls;
};

struct GemTrace {
  std::vector<double> objective;        // composite objective after each layer
  std::vector<SolverState> states;      // after each layer, when keep_states
  std::vector<DegenerateEvent> degenerate;
};

struct GemResult {
  SolverState state;
  GemTrace trace;
};

SolverState init_state(const TaskInstance& task, Model model);

// u_n = softmax((ln p(z_n | theta_k) + lambda / |Q| ln max(pi_k, floor)) / T) for every query row.
void update_assignments(SolverState& state, const TaskInstance& task, Model model, const LayerHyper& hyper,
                        const SolverOptions& options = {});

// Re-estimates theta from all N rows of u. Classes with zero total weight
// keep their previous parameters and are reported through `degenerate`.
void update_theta(SolverState& state, const TaskInstance& task, Model model, const SolverOptions& options = {},
                  std::vector<DegenerateEvent>* degenerate = nullptr);

// pi_k = mean over query rows of u_{n,k}.
void update_pi(SolverState& state, const TaskInstance& task);

// L + lambda * Psi + T * Phi, with pi recomputed from the query rows of u
// and 0 ln 0 = 0.
double evaluate_objective(const SolverState& state, const TaskInstance& task, Model model, double lambda,
                          double temperature);

// Runs one layer per entry of `hypers` on already-mapped features.
GemResult run_gem(const TaskInstance& task, Model model, std::span<const LayerHyper> hypers,
                  const SolverOptions& options = {});

// Applies the schedule's feature map to the raw task, then runs all layers.
GemResult solve(const TaskInstance& raw_task, const HyperSchedule& schedule, const SolverOptions& options = {});

TaskInstance map_task(const TaskInstance& raw_task, const FeatureMapConfig& cfg);

// Argmax of each query row of u, lowest index on ties. Parallel to task.query_idx.
std::vector<int> predict(const SolverState& state, const TaskInstance& task);

// Class log-likelihood matrix ln p(z_n | theta_k), N x K.
Matrix class_log_likelihoods(const SolverState& state, const TaskInstance& task, Model model);

}  // namespace unem
