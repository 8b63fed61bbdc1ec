#include <atomic>
#include <cstdlib>
#include <string_view>

#include "unem/kernels/vec.hpp"

#if defined(__x86_64__) || defined(_M_X64) || defined(__i386__)
#define UNEM_HAVE_AVX2 1
#endif
#if defined(__aarch64__) || defined(_M_ARM64)
#define UNEM_HAVE_NEON 1
#endif
#include "vec_impl.hpp"

namespace unem::kernels {
namespace {

constexpr VecOps kScalar{Isa::scalar, detail::dot_scalar, detail::squared_distance_scalar,
                         detail::sum_scalar, detail::axpy_scalar};

#if defined(UNEM_HAVE_AVX2)
constexpr VecOps kAvx2{Isa::avx2, detail::dot_avx2, detail::squared_distance_avx2,
                       detail::sum_avx2, detail::axpy_avx2};
#endif

#if defined(UNEM_HAVE_NEON)
constexpr VecOps kNeon{Isa::neon, detail::dot_neon, detail::squared_distance_neon,
                       detail::sum_neon, detail::axpy_neon};
#endif

const VecOps* detect() noexcept {
  if (const char* env = std::getenv("UNEM_SIMD")) {
    if (std::string_view(env) == "scalar") return &kScalar;
  }
  if (const VecOps* ops = avx2_ops()) return ops;
  if (const VecOps* ops = neon_ops()) return ops;
  return &kScalar;
}

std::atomic<const VecOps*>& active_slot() noexcept {
  static std::atomic<const VecOps*> slot{detect()};
  return slot;
}

}  // namespace

std::string_view isa_name(Isa isa) noexcept {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
    case Isa::neon: return "neon";
  }
  return "unknown";
}

const VecOps& scalar_ops() noexcept { return kScalar; }

const VecOps* avx2_ops() noexcept {
#if defined(UNEM_HAVE_AVX2)
  static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return supported ? &kAvx2 : nullptr;
#else
  return nullptr;
#endif
}

const VecOps* neon_ops() noexcept {
#if defined(UNEM_HAVE_NEON)
  return &kNeon;  // mandatory on aarch64
#else
  return nullptr;
#endif
}

const VecOps& active_ops() noexcept { return *active_slot().load(std::memory_order_relaxed); }

bool force_isa(Isa isa) noexcept {
  const VecOps* ops = nullptr;
  switch (isa) {
    case Isa::scalar: ops = &kScalar; break;
    case Isa::avx2: ops = avx2_ops(); break;
    case Isa::neon: ops = neon_ops(); break;
  }
  if (ops == nullptr) return false;
  active_slot().store(ops, std::memory_order_relaxed);
  return true;
}

}  // namespace unem::kernels
