#include "unem/math.hpp"

#include <algorithm>
#include <array>
#include <cassert>
#include <cmath>
#include <limits>
#include <string>

#include "unem/error.hpp"

namespace unem::math {
namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178032973640562;

// Godfrey's coefficients for g = 7.
constexpr double kLanczosG = 7.0;
constexpr std::array<double, 9> kLanczos = {
    0.99999999999980993227684700473478,  676.520368121885098567009190444019,
    -1259.13921672240287047156078755283, 771.3234287776530788486528258894,
    -176.61502916214059906584551354,     12.507343278686904814458936853,
    -0.13857109526572011689554707,       9.984369578019570859563e-6,
    1.50563273514931155834e-7};

double lanczos_log_gamma(double x) {
  // valid for x >= 0.5
  x -= 1.0;
  double a = kLanczos[0];
  for (std::size_t i = 1; i < kLanczos.size(); ++i) a += kLanczos[i] / (x + static_cast<double>(i));
  const double t = x + kLanczosG + 0.5;
  return kHalfLog2Pi + (x + 0.5) * std::log(t) - t + std::log(a);
}

void require_positive(double x, const char* fn) {
  if (!(x > 0.0) || !std::isfinite(x))
    throw DomainError(std::string(fn) + ": argument must be finite and > 0, got " + std::to_string(x));
}

}  // namespace

double log_gamma(double x) {
  require_positive(x, "log_gamma");
  if (x < 0.5) return lanczos_log_gamma(x + 1.0) - std::log(x);
  return lanczos_log_gamma(x);
}

double digamma(double x) {
  require_positive(x, "digamma");
  double result = 0.0;
  while (x < 6.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  const double r = 1.0 / x;
  const double r2 = r * r;
  // Bernoulli series: sum_k B_2k / (2k x^2k), k = 1..8
  const double series =
      r2 * (1.0 / 12 -
            r2 * (1.0 / 120 -
                  r2 * (1.0 / 252 -
                        r2 * (1.0 / 240 -
                              r2 * (1.0 / 132 - r2 * (691.0 / 32760 - r2 * (1.0 / 12 - r2 * (3617.0 / 8160))))))));
  return result + std::log(x) - 0.5 * r - series;
}

double trigamma(double x) {
  require_positive(x, "trigamma");
  double result = 0.0;
  // The trigamma series converges more slowly; shift further.
  while (x < 10.0) {
    result += 1.0 / (x * x);
    x += 1.0;
  }
  const double r = 1.0 / x;
  const double r2 = r * r;
  const double series =
      r * (1.0 + r * (0.5 + r * (1.0 / 6 -
                                 r2 * (1.0 / 30 -
                                       r2 * (1.0 / 42 -
                                             r2 * (1.0 / 30 -
                                                   r2 * (5.0 / 66 - r2 * (691.0 / 2730 - r2 * (7.0 / 6)))))))));
  return result + series;
}

double inv_digamma(double y, int max_steps) {
  if (!std::isfinite(y)) throw DomainError("inv_digamma: argument must be finite");
  double x = y >= -2.22 ? std::exp(y) + 0.5 : -1.0 / (y + kEulerGamma);
  for (int step = 0; step < max_steps; ++step) {
    const double dx = (digamma(x) - y) / trigamma(x);
    double next = x - dx;
    if (!(next > 0.0)) next = 0.5 * x;
    const bool done = std::abs(next - x) <= 4.0 * std::numeric_limits<double>::epsilon() * x;
    x = next;
    if (done) break;
  }
  const double residual = std::abs(digamma(x) - y);
  if (!(residual <= 1e-10))
    throw ConvergenceError("inv_digamma: residual " + std::to_string(residual) + " at y = " + std::to_string(y));
  return x;
}

double softplus(double x) {
  if (x > 30.0) return x + std::exp(-x);
  return std::max(std::log1p(std::exp(x)), std::numeric_limits<double>::min());
}

double softplus_inverse(double y) {
  if (!(y > 0.0)) throw DomainError("softplus_inverse: argument must be > 0");
  if (y > 30.0) return y + std::log(-std::expm1(-y));
  return std::log(std::expm1(y));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_sum_exp(std::span<const double> v) {
  if (v.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

void softmax_inplace(std::span<double> v) {
  if (v.empty()) return;
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double& x : v) {
    x = std::exp(x - m);
    s += x;
  }
  const double inv = 1.0 / s;
  for (double& x : v) x *= inv;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.begin(), logits.end());
  softmax_inplace(out);
  return out;
}

void softmax_backward(std::span<const double> y, std::span<const double> grad_y,
                      std::span<double> grad_x) {
  assert(y.size() == grad_y.size() && y.size() == grad_x.size());
  double inner = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) inner += y[i] * grad_y[i];
  for (std::size_t i = 0; i < y.size(); ++i) grad_x[i] = y[i] * (grad_y[i] - inner);
}

}  // namespace unem::math
