#pragma once
// Scalar special functions and small vector kernels shared by the solvers.
// Everything here is a pure function of its arguments.

#include <span>
#include <vector>

namespace unem::math {

inline constexpr double kEulerGamma = 0.57721566490153286060651209;

// ln Gamma(x) for x > 0 (Lanczos, g = 7, 9 terms). Throws DomainError on x <= 0.
double log_gamma(double x);

// psi(x) = d/dx ln Gamma(x) for x > 0. Shifts the argument to x >= 6 and
// applies an 8-term asymptotic series.
double digamma(double x);

// psi'(x) for x > 0, same scheme with the shift taken to x >= 10.
double trigamma(double x);

// x > 0 with digamma(x) = y. Newton from the two-branch initializer, at
// most `max_steps` iterations. Throws ConvergenceError if
// |digamma(x) - y| > 1e-10 afterwards.
double inv_digamma(double y, int max_steps = 10);

double softplus(double x);
// Inverse of softplus on (0, inf).
double softplus_inverse(double y);
double sigmoid(double x);

double log_sum_exp(std::span<const double> v);

// In-place max-subtracted softmax.
void softmax_inplace(std::span<double> v);
std::vector<double> softmax(std::span<const double> logits);

// Vector-Jacobian product of softmax: given y = softmax(x) and dL/dy,
// writes dL/dx.
void softmax_backward(std::span<const double> y, std::span<const double> grad_y,
                      std::span<double> grad_x);

// x ln x with 0 ln 0 := 0.
inline double xlogx(double x) { return x > 0.0 ? x * __builtin_log(x) : 0.0; }

}  // namespace unem::math
