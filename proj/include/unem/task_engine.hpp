#pragma once
// Episode sampling and synthetic feature worlds.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "unem/bundle.hpp"
#include "unem/gem.hpp"

namespace unem {

enum class Imbalance { uniform, dirichlet };

struct ProtocolConfig {
  int k_total = 0;  // classes in the support set; 0 = every class of the split
  int k_eff = 5;
  int shots = 5;
  int query_size = 75;
  Imbalance imbalance = Imbalance::uniform;
  double dirichlet_alpha = 2.0;

  void validate() const;
};

// A task plus the information the solver must not see.
struct Episode {
  TaskInstance task;
  std::vector<int> query_labels;       // parallel to task.query_idx, local class ids
  std::vector<std::uint32_t> classes;  // local class id -> bundle class id
  std::vector<std::size_t> samples;    // task row -> bundle sample
};

using Rng = std::mt19937_64;

// Samples one episode from the samples of split `split`. In
// clip_probability mode only the feature columns of the task's classes are
// kept (one logit per class); simplex bundles are converted to
// log-probabilities first so that a unit feature temperature reproduces
// them.
Episode sample_task(const FeatureBundle& bundle, const std::string& split, const ProtocolConfig& cfg,
                    FeatureMode mode, Rng& rng);

std::vector<Episode> sample_tasks(const FeatureBundle& bundle, const std::string& split, const ProtocolConfig& cfg,
                                  FeatureMode mode, std::size_t count, std::uint64_t seed);

enum class WorldKind { gmm, dirichlet_mixture };

struct SyntheticWorld {
  WorldKind kind = WorldKind::gmm;
  std::size_t n_classes = 100;
  std::size_t dim = 64;        // gmm only; dirichlet_mixture uses n_classes
  double separation = 4.0;     // gmm: expected norm of a class mean
  double noise = 1.0;          // gmm: per-coordinate standard deviation
  double concentration_lo = 2.0;   // dirichlet_mixture: own-class concentration range
  double concentration_hi = 50.0;
  double background = 1.0;     // dirichlet_mixture: concentration of the other components
  std::uint64_t seed = 0;
};

struct SplitPlan {
  std::size_t base = 64;
  std::size_t val = 16;
  std::size_t test = 20;
};

// Features drawn from the world's per-class distributions. Class sets of
// the base/val/test splits are disjoint.
FeatureBundle make_synthetic_bundle(const SyntheticWorld& world, std::size_t n_per_class, const SplitPlan& splits);

struct EvalReport {
  std::vector<double> task_accuracy;
  double mean = 0.0;
  double stddev = 0.0;
  double stderr_mean = 0.0;
};

// Fraction of correct predictions per task, then mean / sample standard
// deviation / standard error over tasks.
EvalReport score(const std::vector<std::vector<int>>& predictions, const std::vector<std::vector<int>>& truth);

double task_accuracy(const std::vector<int>& predicted, const std::vector<int>& truth);

}  // namespace unem
