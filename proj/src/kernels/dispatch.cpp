#include <cstdlib>
#include <string>

#include "kernels_internal.hpp"

namespace rlrelay::kernels {
namespace {

constexpr KernelTable kScalar{Variant::scalar, scalar::dot,  scalar::axpy,
                              scalar::gemv,    scalar::lerp, scalar::adam,
                              scalar::relu};

#if defined(RLRELAY_HAVE_AVX2)
constexpr KernelTable kAvx2{Variant::avx2, avx2::dot,  avx2::axpy,
                            avx2::gemv,    avx2::lerp, avx2::adam,
                            avx2::relu};
#endif

const KernelTable* initial_table() {
  const char* env = std::getenv("RLRELAY_SIMD");
  const std::string want = env ? env : "";
  if (want == "scalar") return &kScalar;
#if defined(RLRELAY_HAVE_AVX2)
  if (cpu_supports(Variant::avx2)) return &kAvx2;
#endif
  return &kScalar;
}

const KernelTable*& current() {
  static const KernelTable* table = initial_table();
  return table;
}

}  // namespace

const KernelTable& scalar_table() { return kScalar; }

const KernelTable* avx2_table() {
#if defined(RLRELAY_HAVE_AVX2)
  return &kAvx2;
#else
  return nullptr;
#endif
}

bool cpu_supports(Variant v) {
  switch (v) {
    case Variant::scalar:
      return true;
    case Variant::avx2:
#if defined(RLRELAY_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

const KernelTable& active() { return *current(); }

bool select(Variant v) {
  if (!cpu_supports(v)) return false;
  if (v == Variant::scalar) {
    current() = &kScalar;
    return true;
  }
  const KernelTable* t = avx2_table();
  if (t == nullptr) return false;
  current() = t;
  return true;
}

std::string_view name(Variant v) {
  return v == Variant::avx2 ? "avx2" : "scalar";
}

}  // namespace rlrelay::kernels
