// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.

#include <immintrin.h>

#include <cmath>
#include <cstring>

#include "densify/simd/kernels.hpp"

namespace densify::simd {
namespace {

constexpr std::size_t kBlockK = 256;

// Rows [i, i+R) x columns [j, j+16) of C over k-slice [p0, p1).
template <int R>
inline void tile16(std::size_t p0, std::size_t p1, const float* a, std::size_t lda, const float* b,
                   std::size_t ldb, float* c, std::size_t ldc, bool load_c) {
  __m256 acc0[R];
  __m256 acc1[R];
  for (int r = 0; r < R; ++r) {
    if (load_c) {
      acc0[r] = _mm256_loadu_ps(c + r * ldc);
      acc1[r] = _mm256_loadu_ps(c + r * ldc + 8);
    } else {
      acc0[r] = _mm256_setzero_ps();
      acc1[r] = _mm256_setzero_ps();
    }
  }
  for (std::size_t p = p0; p < p1; ++p) {
    const __m256 b0 = _mm256_loadu_ps(b + p * ldb);
    const __m256 b1 = _mm256_loadu_ps(b + p * ldb + 8);
    for (int r = 0; r < R; ++r) {
      const __m256 av = _mm256_broadcast_ss(a + r * lda + p);
      acc0[r] = _mm256_fmadd_ps(av, b0, acc0[r]);
      acc1[r] = _mm256_fmadd_ps(av, b1, acc1[r]);
    }
  }
  for (int r = 0; r < R; ++r) {
    _mm256_storeu_ps(c + r * ldc, acc0[r]);
    _mm256_storeu_ps(c + r * ldc + 8, acc1[r]);
  }
}

template <int R>
inline void tile8(std::size_t p0, std::size_t p1, const float* a, std::size_t lda, const float* b,
                  std::size_t ldb, float* c, std::size_t ldc, bool load_c) {
  __m256 acc[R];
  for (int r = 0; r < R; ++r) acc[r] = load_c ? _mm256_loadu_ps(c + r * ldc) : _mm256_setzero_ps();
  for (std::size_t p = p0; p < p1; ++p) {
    const __m256 bv = _mm256_loadu_ps(b + p * ldb);
    for (int r = 0; r < R; ++r) {
      acc[r] = _mm256_fmadd_ps(_mm256_broadcast_ss(a + r * lda + p), bv, acc[r]);
    }
  }
  for (int r = 0; r < R; ++r) _mm256_storeu_ps(c + r * ldc, acc[r]);
}

template <int R>
inline void tile_tail(std::size_t cols, std::size_t p0, std::size_t p1, const float* a,
                      std::size_t lda, const float* b, std::size_t ldb, float* c, std::size_t ldc,
                      bool load_c) {
  for (int r = 0; r < R; ++r) {
    for (std::size_t j = 0; j < cols; ++j) {
      float s = load_c ? c[r * ldc + j] : 0.0f;
      for (std::size_t p = p0; p < p1; ++p) s += a[r * lda + p] * b[p * ldb + j];
      c[r * ldc + j] = s;
    }
  }
}

template <int R>
void row_block(std::size_t n, std::size_t p0, std::size_t p1, const float* a, std::size_t lda,
               const float* b, std::size_t ldb, float* c, std::size_t ldc, bool load_c) {
  std::size_t j = 0;
  for (; j + 16 <= n; j += 16) tile16<R>(p0, p1, a, lda, b + j, ldb, c + j, ldc, load_c);
  for (; j + 8 <= n; j += 8) tile8<R>(p0, p1, a, lda, b + j, ldb, c + j, ldc, load_c);
  if (j < n) tile_tail<R>(n - j, p0, p1, a, lda, b + j, ldb, c + j, ldc, load_c);
}

void gemm_avx2(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
               const float* b, std::size_t ldb, float* c, std::size_t ldc, bool accumulate) {
  if (k == 0) {
    if (!accumulate) {
      for (std::size_t i = 0; i < m; ++i) std::memset(c + i * ldc, 0, n * sizeof(float));
    }
    return;
  }
  for (std::size_t p0 = 0; p0 < k; p0 += kBlockK) {
    const std::size_t p1 = p0 + kBlockK < k ? p0 + kBlockK : k;
    const bool load_c = accumulate || p0 > 0;
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) row_block<4>(n, p0, p1, a + i * lda, lda, b, ldb, c + i * ldc, ldc, load_c);
    for (; i < m; ++i) row_block<1>(n, p0, p1, a + i * lda, lda, b, ldb, c + i * ldc, ldc, load_c);
  }
}

void axpy_avx2(std::size_t n, float alpha, const float* x, float* y) {
  const __m256 av = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void leaky_relu_avx2(std::size_t n, float slope, const float* x, float* y) {
  const __m256 sv = _mm256_set1_ps(slope);
  const __m256 zero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 xv = _mm256_loadu_ps(x + i);
    const __m256 pos = _mm256_cmp_ps(xv, zero, _CMP_GT_OQ);
    _mm256_storeu_ps(y + i, _mm256_blendv_ps(_mm256_mul_ps(sv, xv), xv, pos));
  }
  for (; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : slope * x[i];
}

void leaky_relu_grad_avx2(std::size_t n, float slope, const float* x, const float* dy, float* dx) {
  const __m256 sv = _mm256_set1_ps(slope);
  const __m256 zero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 xv = _mm256_loadu_ps(x + i);
    const __m256 gv = _mm256_loadu_ps(dy + i);
    const __m256 pos = _mm256_cmp_ps(xv, zero, _CMP_GT_OQ);
    const __m256 grad = _mm256_blendv_ps(_mm256_mul_ps(sv, gv), gv, pos);
    _mm256_storeu_ps(dx + i, _mm256_add_ps(_mm256_loadu_ps(dx + i), grad));
  }
  for (; i < n; ++i) dx[i] += x[i] > 0.0f ? dy[i] : slope * dy[i];
}

void adam_update_avx2(std::size_t n, const AdamStep& s, float* param, float* m, float* v,
                      const float* grad) {
  const __m256 b1 = _mm256_set1_ps(s.beta1);
  const __m256 b2 = _mm256_set1_ps(s.beta2);
  const __m256 omb1 = _mm256_set1_ps(1.0f - s.beta1);
  const __m256 omb2 = _mm256_set1_ps(1.0f - s.beta2);
  const __m256 bc1 = _mm256_set1_ps(s.bias_correction1);
  const __m256 bc2 = _mm256_set1_ps(s.bias_correction2);
  const __m256 lr = _mm256_set1_ps(s.lr);
  const __m256 eps = _mm256_set1_ps(s.eps);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 g = _mm256_loadu_ps(grad + i);
    const __m256 mv = _mm256_add_ps(_mm256_mul_ps(b1, _mm256_loadu_ps(m + i)), _mm256_mul_ps(omb1, g));
    const __m256 vv = _mm256_add_ps(_mm256_mul_ps(b2, _mm256_loadu_ps(v + i)),
                                    _mm256_mul_ps(omb2, _mm256_mul_ps(g, g)));
    _mm256_storeu_ps(m + i, mv);
    _mm256_storeu_ps(v + i, vv);
    const __m256 m_hat = _mm256_div_ps(mv, bc1);
    const __m256 v_hat = _mm256_div_ps(vv, bc2);
    const __m256 denom = _mm256_add_ps(_mm256_sqrt_ps(v_hat), eps);
    const __m256 upd = _mm256_div_ps(_mm256_mul_ps(lr, m_hat), denom);
    _mm256_storeu_ps(param + i, _mm256_sub_ps(_mm256_loadu_ps(param + i), upd));
  }
  for (; i < n; ++i) {
    const float g = grad[i];
    m[i] = s.beta1 * m[i] + (1.0f - s.beta1) * g;
    v[i] = s.beta2 * v[i] + (1.0f - s.beta2) * (g * g);
    param[i] -= s.lr * (m[i] / s.bias_correction1) / (std::sqrt(v[i] / s.bias_correction2) + s.eps);
  }
}

}  // namespace

namespace detail {
const KernelTable avx2_table{
    Isa::avx2,       gemm_avx2, axpy_avx2, leaky_relu_avx2, leaky_relu_grad_avx2,
    adam_update_avx2,
};
}  // namespace detail

}  // namespace densify::simd
