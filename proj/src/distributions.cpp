#include "unem/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "unem/error.hpp"
#include "unem/kernels/vec.hpp"
#include "unem/math.hpp"

namespace unem {
namespace {

double checked_weight_sum(std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) throw DegenerateClassError("class has zero total weight");
  return total;
}

void require_rows(const Matrix& features, std::span<const double> weights) {
  if (features.rows() != weights.size())
    throw ConfigError("weight count " + std::to_string(weights.size()) + " != sample count " +
                      std::to_string(features.rows()));
}

}  // namespace

double gaussian_log_pdf(std::span<const double> z, const GaussianParams& p) {
  if (z.size() != p.mean.size()) throw ConfigError("gaussian_log_pdf: dimension mismatch");
  return -0.5 * kernels::squared_distance(z, p.mean);
}

GaussianParams gaussian_weighted_mean(const Matrix& features, std::span<const double> weights) {
  require_rows(features, weights);
  const double total = checked_weight_sum(weights);
  GaussianParams out{std::vector<double>(features.cols(), 0.0)};
  for (std::size_t n = 0; n < features.rows(); ++n) {
    if (weights[n] != 0.0) kernels::axpy(weights[n], features.row(n), out.mean);
  }
  for (double& v : out.mean) v /= total;
  return out;
}

double dirichlet_log_pdf(std::span<const double> z, const DirichletParams& p) {
  if (z.size() != p.alpha.size()) throw ConfigError("dirichlet_log_pdf: dimension mismatch");
  double acc = 0.0;
  double alpha_sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    acc += (p.alpha[i] - 1.0) * std::log(std::max(z[i], kSimplexFloor)) - math::log_gamma(p.alpha[i]);
    alpha_sum += p.alpha[i];
  }
  return acc + math::log_gamma(alpha_sum);
}

double dirichlet_weighted_log_likelihood(const Matrix& features, std::span<const double> weights,
                                         const DirichletParams& p) {
  require_rows(features, weights);
  double acc = 0.0;
  for (std::size_t n = 0; n < features.rows(); ++n) {
    if (weights[n] != 0.0) acc += weights[n] * dirichlet_log_pdf(features.row(n), p);
  }
  return acc;
}

std::vector<double> weighted_mean_log(const Matrix& features, std::span<const double> weights) {
  require_rows(features, weights);
  const double total = checked_weight_sum(weights);
  std::vector<double> out(features.cols(), 0.0);
  for (std::size_t n = 0; n < features.rows(); ++n) {
    if (weights[n] == 0.0) continue;
    const auto z = features.row(n);
    for (std::size_t i = 0; i < z.size(); ++i) out[i] += weights[n] * std::log(std::max(z[i], kSimplexFloor));
  }
  for (double& v : out) v /= total;
  return out;
}

DirichletParams dirichlet_fixed_point(std::span<const double> mean_log, const DirichletParams& current,
                                      int steps) {
  if (mean_log.size() != current.alpha.size()) throw ConfigError("dirichlet_fixed_point: dimension mismatch");
  DirichletParams p = current;
  for (int s = 0; s < steps; ++s) {
    double alpha_sum = 0.0;
    for (double a : p.alpha) alpha_sum += a;
    const double psi_sum = math::digamma(alpha_sum);
    for (std::size_t i = 0; i < p.alpha.size(); ++i) {
      p.alpha[i] = math::inv_digamma(psi_sum + mean_log[i]);
      if (!(p.alpha[i] > 0.0) || !std::isfinite(p.alpha[i]))
        throw NumericError("dirichlet_fixed_point: non-positive concentration");
    }
  }
  return p;
}

DirichletParams dirichlet_mm_update(const Matrix& features, std::span<const double> weights,
                                    const DirichletParams& current, int inner_steps) {
  if (features.cols() != current.alpha.size()) throw ConfigError("dirichlet_mm_update: dimension mismatch");
  const std::vector<double> mean_log = weighted_mean_log(features, weights);
  return dirichlet_fixed_point(mean_log, current, inner_steps);
}

Matrix map_features(const Matrix& raw, const FeatureMapConfig& cfg) {
  if (!(cfg.t_z > 0.0) || !std::isfinite(cfg.t_z)) throw ConfigError("map_features: t_z must be > 0");
  for (double v : raw.values())
    if (!std::isfinite(v)) throw NumericError("map_features: non-finite input");

  Matrix out(raw.rows(), raw.cols());
  if (cfg.mode == FeatureMode::vision_raw) {
    for (std::size_t i = 0; i < raw.values().size(); ++i) out.values()[i] = cfg.t_z * raw.values()[i];
    return out;
  }
  for (std::size_t n = 0; n < raw.rows(); ++n) {
    auto row = out.row(n);
    const auto src = raw.row(n);
    for (std::size_t i = 0; i < row.size(); ++i) row[i] = cfg.t_z * src[i];
    math::softmax_inplace(row);
    double total = 0.0;
    for (double& v : row) {
      v = std::max(v, kSimplexFloor);
      total += v;
    }
    for (double& v : row) v /= total;
  }
  return out;
}

}  // namespace unem
