#pragma once
// Unrolled solver training: the L solver layers are treated as a network
// whose parameters are the raw hyperparameters of a HyperSchedule. The loss
// is the query cross-entropy of the final assignments; its gradient is
// obtained by reverse accumulation through a recorded forward pass.

#include <cstdint>
#include <span>
#include <vector>

#include "unem/gem.hpp"
#include "unem/schedule.hpp"
#include "unem/task_engine.hpp"

namespace unem {

// Floor on u inside the cross-entropy logarithm.
inline constexpr double kAssignmentFloor = 1e-12;

// -(1/|Q|) sum_{n in Q} ln max(u_{n, y_n}, kAssignmentFloor).
double loss(const Episode& episode, const SolverState& final_state);

struct GradientRecord {
  std::vector<double> d_a;  // same length as schedule.a
  std::vector<double> d_b;  // same length as schedule.b; zeros with temperature off
  double d_tz = 0.0;
  double loss = 0.0;
  double accuracy = 0.0;    // of the forward pass the gradient was taken at

  // Gradient in HyperSchedule::pack() order.
  std::vector<double> packed(const HyperSchedule& schedule) const;
};

// Exact gradient of loss() with respect to every raw parameter. Throws
// NumericError naming the layer when an intermediate is non-finite.
GradientRecord grad(const Episode& episode, const HyperSchedule& schedule, const SolverOptions& options = {});

// Loss of one fresh forward solve.
double forward_loss(const Episode& episode, const HyperSchedule& schedule, const SolverOptions& options = {});

enum class OptimizerKind { adam, sgd };

struct TrainConfig {
  int epochs = 80;
  double lr0 = 0.1;
  double lr_decay = 0.5;
  std::vector<int> decay_epochs;  // empty: one decay at floor(0.75 * epochs)
  OptimizerKind optimizer = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int tasks_per_split = 1000;
  int batch_tasks = 10;
  std::uint64_t seed = 0;
  int inner_steps = 1;

  void validate() const;
  double learning_rate(int epoch) const;
};

struct TrainReport {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_accuracy;
  HyperSchedule final_schedule;
  double wall_seconds = 0.0;  // not part of serialised reports
};

class Adam {
 public:
  Adam(std::size_t n, double beta1, double beta2, double eps);
  void step(std::span<double> params, std::span<const double> grad, double lr);

 private:
  double beta1_, beta2_, eps_;
  std::vector<double> m_, v_;
  long t_ = 0;
};

// Optimises the trainable parameters of `init` on the given episodes.
TrainReport train_on_tasks(std::span<const Episode> tasks, const TrainConfig& cfg, const HyperSchedule& init);

// Samples cfg.tasks_per_split episodes from the "val" split (seeded by
// cfg.seed) and trains on them.
TrainReport train(const FeatureBundle& bundle, const ProtocolConfig& protocol, const TrainConfig& cfg,
                  const HyperSchedule& init);

struct AblationSet {
  HyperSchedule adaptive;         // per-layer (a, b), temperature on
  HyperSchedule fixed;            // one shared (a, b)
  HyperSchedule temperature_off;  // per-layer a, T pinned to 1
  HyperSchedule fixed_temperature_off;
};

AblationSet ablation_modes(const HyperSchedule& schedule);

}  // namespace unem
