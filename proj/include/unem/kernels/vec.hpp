#pragma once
// Dense double-precision vector kernels used in the solver inner loops.
//
// Every kernel has a scalar reference implementation. Vectorised variants
// (AVX2+FMA on x86-64, NEON on aarch64) are compiled into separate
// translation units and selected once at runtime from the host CPU
// features. Setting UNEM_SIMD=scalar in the environment forces the
// reference path.

#include <cassert>
#include <cstddef>
#include <span>
#include <string_view>

namespace unem::kernels {

enum class Isa { scalar, avx2, neon };

std::string_view isa_name(Isa isa) noexcept;

struct VecOps {
  Isa isa;
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*squared_distance)(const double* a, const double* b, std::size_t n);
  double (*sum)(const double* a, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
};

const VecOps& scalar_ops() noexcept;

// nullptr when the variant was not compiled in or the CPU lacks the ISA.
const VecOps* avx2_ops() noexcept;
const VecOps* neon_ops() noexcept;

// The table the library uses. Resolved on first call.
const VecOps& active_ops() noexcept;

// Overrides the active table (tests and benchmarks). Returns false if the
// requested ISA is unavailable on this host.
bool force_isa(Isa isa) noexcept;

inline double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  return active_ops().dot(a.data(), b.data(), a.size());
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  return active_ops().squared_distance(a.data(), b.data(), a.size());
}

inline double sum(std::span<const double> a) {
  return active_ops().sum(a.data(), a.size());
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  assert(x.size() == y.size());
  active_ops().axpy(alpha, x.data(), y.data(), x.size());
}

}  // namespace unem::kernels
