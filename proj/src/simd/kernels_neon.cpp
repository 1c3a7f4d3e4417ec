// AArch64 only; NEON is part of the baseline ISA there.

#include <arm_neon.h>

#include <cmath>
#include <cstring>

#include "densify/simd/kernels.hpp"

namespace densify::simd {
namespace {

void gemm_neon(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
               const float* b, std::size_t ldb, float* c, std::size_t ldc, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    float* crow = c + i * ldc;
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) {
      float32x4_t acc0 = accumulate ? vld1q_f32(crow + j) : vdupq_n_f32(0.0f);
      float32x4_t acc1 = accumulate ? vld1q_f32(crow + j + 4) : vdupq_n_f32(0.0f);
      for (std::size_t p = 0; p < k; ++p) {
        const float32x4_t av = vdupq_n_f32(a[i * lda + p]);
        acc0 = vfmaq_f32(acc0, av, vld1q_f32(b + p * ldb + j));
        acc1 = vfmaq_f32(acc1, av, vld1q_f32(b + p * ldb + j + 4));
      }
      vst1q_f32(crow + j, acc0);
      vst1q_f32(crow + j + 4, acc1);
    }
    for (; j < n; ++j) {
      float s = accumulate ? crow[j] : 0.0f;
      for (std::size_t p = 0; p < k; ++p) s += a[i * lda + p] * b[p * ldb + j];
      crow[j] = s;
    }
  }
}

void axpy_neon(std::size_t n, float alpha, const float* x, float* y) {
  const float32x4_t av = vdupq_n_f32(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(y + i, vfmaq_f32(vld1q_f32(y + i), av, vld1q_f32(x + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void leaky_relu_neon(std::size_t n, float slope, const float* x, float* y) {
  const float32x4_t sv = vdupq_n_f32(slope);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const float32x4_t xv = vld1q_f32(x + i);
    const uint32x4_t pos = vcgtq_f32(xv, vdupq_n_f32(0.0f));
    vst1q_f32(y + i, vbslq_f32(pos, xv, vmulq_f32(sv, xv)));
  }
  for (; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : slope * x[i];
}

void leaky_relu_grad_neon(std::size_t n, float slope, const float* x, const float* dy, float* dx) {
  const float32x4_t sv = vdupq_n_f32(slope);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const float32x4_t gv = vld1q_f32(dy + i);
    const uint32x4_t pos = vcgtq_f32(vld1q_f32(x + i), vdupq_n_f32(0.0f));
    vst1q_f32(dx + i, vaddq_f32(vld1q_f32(dx + i), vbslq_f32(pos, gv, vmulq_f32(sv, gv))));
  }
  for (; i < n; ++i) dx[i] += x[i] > 0.0f ? dy[i] : slope * dy[i];
}

void adam_update_neon(std::size_t n, const AdamStep& s, float* param, float* m, float* v,
                      const float* grad) {
  const float32x4_t b1 = vdupq_n_f32(s.beta1);
  const float32x4_t b2 = vdupq_n_f32(s.beta2);
  const float32x4_t omb1 = vdupq_n_f32(1.0f - s.beta1);
  const float32x4_t omb2 = vdupq_n_f32(1.0f - s.beta2);
  const float32x4_t bc1 = vdupq_n_f32(s.bias_correction1);
  const float32x4_t bc2 = vdupq_n_f32(s.bias_correction2);
  const float32x4_t lr = vdupq_n_f32(s.lr);
  const float32x4_t eps = vdupq_n_f32(s.eps);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const float32x4_t g = vld1q_f32(grad + i);
    const float32x4_t mv = vaddq_f32(vmulq_f32(b1, vld1q_f32(m + i)), vmulq_f32(omb1, g));
    const float32x4_t vv = vaddq_f32(vmulq_f32(b2, vld1q_f32(v + i)), vmulq_f32(omb2, vmulq_f32(g, g)));
    vst1q_f32(m + i, mv);
    vst1q_f32(v + i, vv);
    const float32x4_t denom = vaddq_f32(vsqrtq_f32(vdivq_f32(vv, bc2)), eps);
    const float32x4_t upd = vdivq_f32(vmulq_f32(lr, vdivq_f32(mv, bc1)), denom);
    vst1q_f32(param + i, vsubq_f32(vld1q_f32(param + i), upd));
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
const KernelTable neon_table{
    Isa::neon,       gemm_neon, axpy_neon, leaky_relu_neon, leaky_relu_grad_neon,
    adam_update_neon,
};
}  // namespace detail

}  // namespace densify::simd
