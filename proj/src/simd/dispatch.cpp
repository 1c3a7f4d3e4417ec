#include <cstdlib>
#include <vector>

#include "densify/simd/kernels.hpp"

namespace densify::simd {

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
    case Isa::neon:
      return "neon";
  }
  return "unknown";
}

std::optional<Isa> parse_isa(std::string_view name) {
  if (name == "scalar") return Isa::scalar;
  if (name == "avx2") return Isa::avx2;
  if (name == "neon") return Isa::neon;
  return std::nullopt;
}

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if defined(DENSIFY_HAVE_AVX2)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Isa::neon:
#if defined(DENSIFY_HAVE_NEON)
      return true;
#else
      return false;
#endif
  }
  return false;
}

const KernelTable* kernels_for(Isa isa) {
  if (!isa_supported(isa)) return nullptr;
  switch (isa) {
    case Isa::scalar:
      return &detail::scalar_table;
#if defined(DENSIFY_HAVE_AVX2)
    case Isa::avx2:
      return &detail::avx2_table;
#endif
#if defined(DENSIFY_HAVE_NEON)
    case Isa::neon:
      return &detail::neon_table;
#endif
    default:
      return nullptr;
  }
}

std::vector<Isa> supported_isas() {
  std::vector<Isa> out;
  for (Isa isa : {Isa::scalar, Isa::avx2, Isa::neon}) {
    if (isa_supported(isa)) out.push_back(isa);
  }
  return out;
}

namespace {

const KernelTable& select_kernels() {
  if (const char* forced = std::getenv("DENSIFY_ISA")) {
    if (auto isa = parse_isa(forced)) {
      if (const KernelTable* kt = kernels_for(*isa)) return *kt;
    }
  }
  for (Isa isa : {Isa::avx2, Isa::neon}) {
    if (const KernelTable* kt = kernels_for(isa)) return *kt;
  }
  return detail::scalar_table;
}

}  // namespace

const KernelTable& active_kernels() {
  static const KernelTable& selected = select_kernels();
  return selected;
}

void gemm(const KernelTable& kt, bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, const float* a, const float* b, float* c, bool accumulate) {
  // Scratch is per-thread so concurrent inference never shares buffers.
  thread_local std::vector<float> a_pack;
  thread_local std::vector<float> b_pack;
  const float* a_use = a;
  const float* b_use = b;
  if (trans_a) {
    // a is stored k x m
    a_pack.resize(m * k);
    for (std::size_t p = 0; p < k; ++p) {
      for (std::size_t i = 0; i < m; ++i) a_pack[i * k + p] = a[p * m + i];
    }
    a_use = a_pack.data();
  }
  if (trans_b) {
    // b is stored n x k
    b_pack.resize(k * n);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t p = 0; p < k; ++p) b_pack[p * n + j] = b[j * k + p];
    }
    b_use = b_pack.data();
  }
  kt.gemm(m, n, k, a_use, k, b_use, n, c, n, accumulate);
}

}  // namespace densify::simd
