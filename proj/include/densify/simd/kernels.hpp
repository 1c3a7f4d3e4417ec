#pragma once

// Hot inner loops with a scalar reference implementation and vector variants
// selected at runtime. Vector variants agree with the scalar path up to float
// reassociation; tests/test_simd.cpp checks every entry against it.

#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

namespace densify::simd {

enum class Isa { scalar, avx2, neon };

std::string_view isa_name(Isa isa);
std::optional<Isa> parse_isa(std::string_view name);

struct AdamStep {
  float lr;
  float beta1;
  float beta2;
  float eps;
  float bias_correction1;  // 1 - beta1^t
  float bias_correction2;  // 1 - beta2^t
};

struct KernelTable {
  Isa isa;

  // C[m x n] = A[m x k] * B[k x n]  (C += ... when accumulate). Row-major.
  void (*gemm)(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
               const float* b, std::size_t ldb, float* c, std::size_t ldc, bool accumulate);

  // y += alpha * x
  void (*axpy)(std::size_t n, float alpha, const float* x, float* y);

  // y = x > 0 ? x : slope * x
  void (*leaky_relu)(std::size_t n, float slope, const float* x, float* y);

  // dx += (x > 0 ? 1 : slope) * dy
  void (*leaky_relu_grad)(std::size_t n, float slope, const float* x, const float* dy, float* dx);

  void (*adam_update)(std::size_t n, const AdamStep& step, float* param, float* m, float* v,
                      const float* grad);
};

bool isa_supported(Isa isa);

// nullptr when the ISA is not compiled in or not supported by this CPU.
const KernelTable* kernels_for(Isa isa);

// Best supported table, overridable with DENSIFY_ISA=scalar|avx2|neon.
const KernelTable& active_kernels();

std::vector<Isa> supported_isas();

// General GEMM on top of the table's non-transposed kernel. Transposed operands
// are packed into scratch storage first.
void gemm(const KernelTable& kt, bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, const float* a, const float* b, float* c, bool accumulate);

namespace detail {
extern const KernelTable scalar_table;
#if defined(DENSIFY_HAVE_AVX2)
extern const KernelTable avx2_table;
#endif
#if defined(DENSIFY_HAVE_NEON)
extern const KernelTable neon_table;
#endif
}  // namespace detail

}  // namespace densify::simd
