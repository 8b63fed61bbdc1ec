#pragma once
// Shared fixtures for the test binaries.

#include <random>
#include <vector>

#include "unem/math.hpp"
#include "unem/schedule.hpp"
#include "unem/task_engine.hpp"

namespace unem::testing {

inline FeatureBundle small_bundle(WorldKind kind, std::uint64_t seed, std::size_t classes_per_split = 5,
                                  std::size_t dim = 8, std::size_t per_class = 40, double separation = 3.0) {
  SyntheticWorld w;
  w.kind = kind;
  w.n_classes = 3 * classes_per_split;
  w.dim = dim;
  w.separation = separation;
  w.concentration_lo = 1.5;
  w.concentration_hi = 4.0;
  w.seed = seed;
  return make_synthetic_bundle(w, per_class, {classes_per_split, classes_per_split, classes_per_split});
}

inline ProtocolConfig small_protocol(int k_eff = 3, int shots = 2, int query = 15) {
  ProtocolConfig p;
  p.k_eff = k_eff;
  p.shots = shots;
  p.query_size = query;
  return p;
}

// Schedule with per-layer parameters drawn from moderate ranges.
inline HyperSchedule random_schedule(Model model, int layers, int query, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> log_lambda(0.0, std::log(2.0 * query));
  std::uniform_real_distribution<double> raw_b(-4.0, 1.5);
  HyperSchedule s = make_schedule(model, layers, 1.0, 1.0, 1.0);
  for (auto& a : s.a) a = math::softplus_inverse(std::exp(log_lambda(rng)));
  for (auto& b : s.b) b = raw_b(rng);
  std::uniform_real_distribution<double> tz(model == Model::gaussian ? -1.5 : -2.0, model == Model::gaussian ? 0.5 : 2.0);
  s.t_z_raw = tz(rng);
  return s;
}

inline bool grad_close(double analytic, double numeric, double rel = 1e-4, double abs_small = 1e-7) {
  const double diff = std::abs(analytic - numeric);
  if (std::abs(numeric) < 1e-3 && std::abs(analytic) < 1e-3) return diff <= abs_small || diff <= rel * std::abs(numeric);
  return diff <= rel * std::max(std::abs(analytic), std::abs(numeric));
}

}  // namespace unem::testing
