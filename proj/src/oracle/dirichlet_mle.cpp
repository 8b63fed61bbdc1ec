#include <algorithm>
#include <cmath>
#include <string>

#include "unem/error.hpp"
#include "unem/math.hpp"
#include "unem/oracle.hpp"

namespace unem::oracle {

namespace {

// Mean negative log-likelihood in beta = ln(alpha) and its gradient.
struct Objective {
  std::vector<double> mean_log;

  double operator()(const std::vector<double>& beta, std::vector<double>& g) const {
    const std::size_t d = beta.size();
    double total = 0.0;
    std::vector<double> alpha(d);
    for (std::size_t i = 0; i < d; ++i) {
      alpha[i] = std::exp(beta[i]);
      total += alpha[i];
    }
    double f = -math::log_gamma(total);
    const double psi_total = math::digamma(total);
    g.assign(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
      f += math::log_gamma(alpha[i]) - (alpha[i] - 1.0) * mean_log[i];
      g[i] = -(psi_total - math::digamma(alpha[i]) + mean_log[i]) * alpha[i];
    }
    return f;
  }
};

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

OracleResult dirichlet_mle_reference(const Rows& samples, std::span<const double> weights, double grad_tol,
                                     int max_iter) {
  if (samples.empty() || samples.size() != weights.size())
    throw ConfigError("dirichlet_mle_reference: samples and weights differ in length");
  const std::size_t d = samples[0].size();
  Objective obj{std::vector<double>(d, 0.0)};
  double wsum = 0.0;
  for (std::size_t n = 0; n < samples.size(); ++n) {
    for (std::size_t i = 0; i < d; ++i) obj.mean_log[i] += weights[n] * std::log(samples[n][i]);
    wsum += weights[n];
  }
  if (!(wsum > 0.0)) throw ConfigError("dirichlet_mle_reference: weights sum to zero");
  for (double& v : obj.mean_log) v /= wsum;

  std::vector<double> x(d, 0.0), g, g_new, x_new(d), s(d), y(d);
  // inverse Hessian approximation, row-major
  std::vector<double> H(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) H[i * d + i] = 1.0;
  double f = obj(x, g);

  for (int it = 0; it < max_iter; ++it) {
    if (norm(g) <= grad_tol) return {[&] {
                                        std::vector<double> a(d);
                                        for (std::size_t i = 0; i < d; ++i) a[i] = std::exp(x[i]);
                                        return a;
                                      }(),
                                      grad_tol, it};
    std::vector<double> dir(d, 0.0);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) dir[i] -= H[i * d + j] * g[j];
    double slope = 0.0;
    for (std::size_t i = 0; i < d; ++i) slope += dir[i] * g[i];
    if (slope >= 0.0) {
      // not a descent direction: restart from steepest descent
      std::fill(H.begin(), H.end(), 0.0);
      for (std::size_t i = 0; i < d; ++i) {
        H[i * d + i] = 1.0;
        dir[i] = -g[i];
      }
      slope = -norm(g) * norm(g);
    }
    // Armijo backtracking; the step is capped so exp() stays finite.
    double step = 1.0;
    double f_new = 0.0;
    for (int bt = 0;; ++bt) {
      for (std::size_t i = 0; i < d; ++i) x_new[i] = x[i] + step * std::clamp(dir[i], -5.0, 5.0);
      f_new = obj(x_new, g_new);
      if (std::isfinite(f_new) && f_new <= f + 1e-4 * step * slope) break;
      step *= 0.5;
      if (bt > 60) throw ConvergenceError("dirichlet_mle_reference: line search failed");
    }
    double sy = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      s[i] = x_new[i] - x[i];
      y[i] = g_new[i] - g[i];
      sy += s[i] * y[i];
    }
    if (sy > 1e-300) {
      // H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T
      const double rho = 1.0 / sy;
      std::vector<double> Hy(d, 0.0);
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) Hy[i] += H[i * d + j] * y[j];
      double yHy = 0.0;
      for (std::size_t i = 0; i < d; ++i) yHy += y[i] * Hy[i];
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
          H[i * d + j] += -rho * (Hy[i] * s[j] + s[i] * Hy[j]) + (rho * rho * yHy + rho) * s[i] * s[j];
    }
    x = x_new;
    g = g_new;
    f = f_new;
  }
  throw ConvergenceError("dirichlet_mle_reference: no convergence after " + std::to_string(max_iter) + " iterations");
}

}  // namespace unem::oracle
