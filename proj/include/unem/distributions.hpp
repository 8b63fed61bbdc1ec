#pragma once
// Per-class feature models (identity-covariance Gaussian, Dirichlet) and
// the two feature representation maps.

#include <span>
#include <vector>

#include "unem/matrix.hpp"

namespace unem {

// Floor applied to simplex features before any logarithm.
inline constexpr double kSimplexFloor = 1e-12;

struct GaussianParams {
  std::vector<double> mean;
};

struct DirichletParams {
  std::vector<double> alpha;  // every component > 0
};

enum class FeatureMode { vision_raw, clip_probability };

struct FeatureMapConfig {
  FeatureMode mode = FeatureMode::vision_raw;
  double t_z = 1.0;  // > 0
};

// -1/2 ||z - mean||^2. The normaliser is constant across classes and is
// dropped.
double gaussian_log_pdf(std::span<const double> z, const GaussianParams& p);

// sum_n w_n z_n / sum_n w_n. Throws DegenerateClassError when the weights
// sum to zero.
GaussianParams gaussian_weighted_mean(const Matrix& features, std::span<const double> weights);

// ln Dir(z | alpha), entries of z floored at kSimplexFloor.
double dirichlet_log_pdf(std::span<const double> z, const DirichletParams& p);

// sum_n w_n ln Dir(z_n | alpha).
double dirichlet_weighted_log_likelihood(const Matrix& features, std::span<const double> weights,
                                         const DirichletParams& p);

// Weighted mean of the log-features: sum_n w_n ln z_n / sum_n w_n.
std::vector<double> weighted_mean_log(const Matrix& features, std::span<const double> weights);

// `steps` rounds of alpha_i <- psi^-1(psi(sum_j alpha_j) + mean_log_i).
// Each round maximises a minorizer of the weighted log-likelihood, so the
// likelihood never decreases.
DirichletParams dirichlet_fixed_point(std::span<const double> mean_log, const DirichletParams& current,
                                      int steps);

// Weighted minorize-maximize update of one class's Dirichlet parameters.
DirichletParams dirichlet_mm_update(const Matrix& features, std::span<const double> weights,
                                    const DirichletParams& current, int inner_steps = 1);

// vision_raw: t_z * raw. clip_probability: row-wise softmax(t_z * raw),
// clamped to [kSimplexFloor, 1] and renormalised.
Matrix map_features(const Matrix& raw, const FeatureMapConfig& cfg);

}  // namespace unem
