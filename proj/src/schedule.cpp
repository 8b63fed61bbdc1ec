#include "unem/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "unem/error.hpp"
#include "unem/math.hpp"

namespace unem {

std::string_view model_name(Model m) noexcept {
  return m == Model::gaussian ? "gaussian" : "dirichlet";
}

Model parse_model(std::string_view s) {
  if (s == "gaussian") return Model::gaussian;
  if (s == "dirichlet") return Model::dirichlet;
  throw ConfigError("unknown model '" + std::string(s) + "'");
}

std::string_view feature_mode_name(FeatureMode m) noexcept {
  return m == FeatureMode::vision_raw ? "vision_raw" : "clip_probability";
}

FeatureMode parse_feature_mode(std::string_view s) {
  if (s == "vision_raw") return FeatureMode::vision_raw;
  if (s == "clip_probability") return FeatureMode::clip_probability;
  throw ConfigError("unknown feature mode '" + std::string(s) + "'");
}

FeatureMode default_feature_mode(Model m) noexcept {
  return m == Model::gaussian ? FeatureMode::vision_raw : FeatureMode::clip_probability;
}

namespace {

std::size_t slot(const HyperSchedule& s, int layer) {
  if (layer < 0 || layer >= s.layers) throw ConfigError("layer index out of range");
  return s.adaptive ? static_cast<std::size_t>(layer) : 0;
}

}  // namespace

double HyperSchedule::lambda(int layer) const { return math::softplus(a[slot(*this, layer)]); }

double HyperSchedule::temp(int layer) const {
  if (!temperature) return 1.0;
  return 1.0 + math::softplus(b[slot(*this, layer)]);
}

double HyperSchedule::t_z() const {
  const double sp = math::softplus(t_z_raw);
  return feature_mode == FeatureMode::vision_raw ? sp : 1.0 + sp;
}

std::vector<LayerHyper> HyperSchedule::layer_hypers() const {
  std::vector<LayerHyper> out;
  out.reserve(static_cast<std::size_t>(layers));
  for (int l = 0; l < layers; ++l) {
    LayerHyper h{lambda(l), std::nullopt};
    if (temperature) h.temperature = temp(l);
    out.push_back(h);
  }
  return out;
}

std::size_t HyperSchedule::trainable_count() const noexcept {
  return a.size() + (temperature ? b.size() : 0) + 1;
}

std::vector<double> HyperSchedule::pack() const {
  std::vector<double> out(a);
  if (temperature) out.insert(out.end(), b.begin(), b.end());
  out.push_back(t_z_raw);
  return out;
}

void HyperSchedule::unpack(std::span<const double> params) {
  if (params.size() != trainable_count()) throw ConfigError("unpack: parameter count mismatch");
  std::size_t i = 0;
  for (double& v : a) v = params[i++];
  if (temperature)
    for (double& v : b) v = params[i++];
  t_z_raw = params[i];
}

void HyperSchedule::validate() const {
  if (layers < 0) throw ConfigError("schedule: negative layer count");
  const std::size_t expected = adaptive ? static_cast<std::size_t>(layers) : 1;
  if (a.size() != expected || b.size() != expected)
    throw ConfigError("schedule: a/b length " + std::to_string(a.size()) + "/" + std::to_string(b.size()) +
                      " does not match " + std::to_string(expected));
  auto finite = [](double v) { return std::isfinite(v); };
  if (!std::all_of(a.begin(), a.end(), finite) || !std::all_of(b.begin(), b.end(), finite) ||
      !std::isfinite(t_z_raw))
    throw ConfigError("schedule: non-finite raw parameter");
}

double encode_temperature(double temperature) {
  if (!(temperature >= 1.0)) throw ConfigError("temperature must be >= 1");
  const double excess = temperature - 1.0;
  const double floor_excess = math::softplus(kUnitTemperatureRaw);
  return excess > floor_excess ? math::softplus_inverse(excess) : kUnitTemperatureRaw;
}

double encode_t_z(FeatureMode mode, double t_z) {
  if (!(t_z > 0.0)) throw ConfigError("t_z must be > 0");
  if (mode == FeatureMode::vision_raw) return math::softplus_inverse(t_z);
  if (t_z < 1.0) throw ConfigError("t_z must be >= 1 for clip_probability features");
  return encode_temperature(t_z);
}

HyperSchedule make_schedule(Model model, int layers, double lambda, double temperature, double t_z,
                            bool adaptive, bool temperature_on) {
  if (!(lambda > 0.0)) throw ConfigError("lambda must be > 0");
  HyperSchedule s;
  s.model = model;
  s.feature_mode = default_feature_mode(model);
  s.layers = layers;
  s.adaptive = adaptive;
  s.temperature = temperature_on;
  const std::size_t n = adaptive ? static_cast<std::size_t>(layers) : 1;
  s.a.assign(n, math::softplus_inverse(lambda));
  s.b.assign(n, encode_temperature(temperature));
  s.t_z_raw = encode_t_z(s.feature_mode, t_z);
  return s;
}

HyperSchedule preset_schedule(InitPreset preset, Model model, int layers, int query_size, int k_total,
                              int k_eff, double t_z) {
  double lambda = static_cast<double>(query_size);
  if (preset == InitPreset::clip) lambda = static_cast<double>(k_total) / k_eff;
  if (preset == InitPreset::clip_em) lambda = static_cast<double>(k_total) / k_eff * query_size;
  return make_schedule(model, layers, lambda, 1.0, t_z);
}

HyperSchedule fixed_variant(const HyperSchedule& s) {
  HyperSchedule out = s;
  out.adaptive = false;
  auto mean = [](const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  out.a.assign(1, mean(s.a));
  out.b.assign(1, mean(s.b));
  return out;
}

HyperSchedule adaptive_variant(const HyperSchedule& s) {
  HyperSchedule out = s;
  out.adaptive = true;
  const auto n = static_cast<std::size_t>(s.layers);
  if (!s.adaptive) {
    out.a.assign(n, s.a.at(0));
    out.b.assign(n, s.b.at(0));
  }
  return out;
}

HyperSchedule temperature_off_variant(const HyperSchedule& s) {
  HyperSchedule out = s;
  out.temperature = false;
  return out;
}

}  // namespace unem
