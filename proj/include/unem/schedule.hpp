#pragma once
// Learnable hyperparameter schedule of the unrolled solver.
//
// Raw parameters are unconstrained reals mapped to their valid ranges:
//   lambda_l = softplus(a_l)          > 0
//   T_l      = 1 + softplus(b_l)      >= 1
//   T_z      = softplus(t_z_raw)      vision_raw features
//   T_z      = 1 + softplus(t_z_raw)  clip_probability features
// With adaptive = false a single (a, b) pair is shared by every layer.
// With temperature = false every T_l is pinned to exactly 1 and b is not
// trainable.

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "unem/distributions.hpp"

namespace unem {

enum class Model { gaussian, dirichlet };

std::string_view model_name(Model m) noexcept;
Model parse_model(std::string_view s);
std::string_view feature_mode_name(FeatureMode m) noexcept;
FeatureMode parse_feature_mode(std::string_view s);
FeatureMode default_feature_mode(Model m) noexcept;

// Raw value used to encode T = 1 (softplus^-1(0) is -infinity).
inline constexpr double kUnitTemperatureRaw = -10.0;

// Per-layer hyperparameters as consumed by the solver. An empty
// temperature selects the temperature-free update (T = 1 exactly, no
// division).
struct LayerHyper {
  double lambda = 1.0;
  std::optional<double> temperature;

  double temperature_or_one() const noexcept { return temperature.value_or(1.0); }
};

struct HyperSchedule {
  Model model = Model::gaussian;
  FeatureMode feature_mode = FeatureMode::vision_raw;
  int layers = 10;
  bool adaptive = true;
  bool temperature = true;
  std::vector<double> a;  // size layers, or 1 when !adaptive
  std::vector<double> b;  // same size as a
  double t_z_raw = 0.0;

  double lambda(int layer) const;
  double temp(int layer) const;
  double t_z() const;
  FeatureMapConfig feature_map() const { return {feature_mode, t_z()}; }
  std::vector<LayerHyper> layer_hypers() const;

  // Number of trainable scalars: |a| + (temperature ? |b| : 0) + 1.
  std::size_t trainable_count() const noexcept;
  // Trainable scalars in the order a..., b... (if temperature), t_z_raw.
  std::vector<double> pack() const;
  void unpack(std::span<const double> params);

  // Throws ConfigError on inconsistent array lengths or non-finite values.
  void validate() const;

  bool operator==(const HyperSchedule&) const = default;
};

// Builds a schedule whose every layer uses (lambda, T) and whose feature
// map uses t_z. T = 1 is encoded with kUnitTemperatureRaw; the same
// convention applies to t_z = 1 in clip mode.
HyperSchedule make_schedule(Model model, int layers, double lambda, double temperature, double t_z,
                            bool adaptive = true, bool temperature_on = true);

double encode_temperature(double temperature);
double encode_t_z(FeatureMode mode, double t_z);

// Default initial schedules.
//   vision (gaussian): lambda = |Q|, T = 1, T_z = 1
//   clip (dirichlet):  lambda = K / K_eff, T = 1, T_z = 1
//   clip, em preset:   lambda = (K / K_eff) |Q|
enum class InitPreset { vision, clip, clip_em };
HyperSchedule preset_schedule(InitPreset preset, Model model, int layers, int query_size, int k_total,
                              int k_eff, double t_z = 1.0);

// Ablation variants.
HyperSchedule fixed_variant(const HyperSchedule& s);
HyperSchedule adaptive_variant(const HyperSchedule& s);
HyperSchedule temperature_off_variant(const HyperSchedule& s);

}  // namespace unem
