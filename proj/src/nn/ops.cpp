#include "densify/nn/ops.hpp"

#include <cmath>
#include <cstring>

#include "densify/rng.hpp"
#include "densify/simd/kernels.hpp"

namespace densify::nn {
namespace {

struct ConvGeometry {
  int cin, h, w, k, stride, pad, hout, wout;
  std::size_t rows() const { return static_cast<std::size_t>(cin) * k * k; }
  std::size_t cols() const { return static_cast<std::size_t>(hout) * wout; }
};

void im2col(const float* x, const ConvGeometry& g, float* col) {
  std::size_t row = 0;
  for (int c = 0; c < g.cin; ++c) {
    const float* plane = x + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj, ++row) {
        float* dst = col + row * g.cols();
        for (int oy = 0; oy < g.hout; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          float* d = dst + static_cast<std::size_t>(oy) * g.wout;
          if (iy < 0 || iy >= g.h) {
            std::memset(d, 0, sizeof(float) * g.wout);
            continue;
          }
          const float* src = plane + static_cast<std::size_t>(iy) * g.w;
          if (g.stride == 1) {
            for (int ox = 0; ox < g.wout; ++ox) {
              const int ix = ox - g.pad + kj;
              d[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0f;
            }
          } else {
            for (int ox = 0; ox < g.wout; ++ox) {
              const int ix = ox * g.stride - g.pad + kj;
              d[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0f;
            }
          }
        }
      }
    }
  }
}

void col2im_add(const float* col, const ConvGeometry& g, float* dx) {
  std::size_t row = 0;
  for (int c = 0; c < g.cin; ++c) {
    float* plane = dx + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj, ++row) {
        const float* src = col + row * g.cols();
        for (int oy = 0; oy < g.hout; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.h) continue;
          float* d = plane + static_cast<std::size_t>(iy) * g.w;
          const float* s = src + static_cast<std::size_t>(oy) * g.wout;
          for (int ox = 0; ox < g.wout; ++ox) {
            const int ix = ox * g.stride - g.pad + kj;
            if (ix >= 0 && ix < g.w) d[ix] += s[ox];
          }
        }
      }
    }
  }
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw InvalidInput(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                       b.shape().str());
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (ws.c != xs.c || ws.h != ws.w) {
    throw InvalidInput("conv2d: weight " + ws.str() + " incompatible with input " + xs.str());
  }
  ConvGeometry g{xs.c, xs.h, xs.w, ws.h, stride, pad, 0, 0};
  g.hout = (xs.h + 2 * pad - g.k) / stride + 1;
  g.wout = (xs.w + 2 * pad - g.k) / stride + 1;
  if (g.hout <= 0 || g.wout <= 0) throw InvalidInput("conv2d: input " + xs.str() + " too small");
  const int cout = ws.n;
  Tensor out({xs.n, cout, g.hout, g.wout});

  const auto& kt = simd::active_kernels();
  std::vector<float> col(g.rows() * g.cols());
  for (int n = 0; n < xs.n; ++n) {
    im2col(x.value().ptr() + n * xs.sample(), g, col.data());
    float* y = out.ptr() + n * out.shape().sample();
    simd::gemm(kt, false, false, cout, g.cols(), g.rows(), weight.value().ptr(), col.data(), y, false);
    if (bias.defined()) {
      for (int co = 0; co < cout; ++co) {
        const float b = bias.value()[co];
        float* p = y + static_cast<std::size_t>(co) * g.cols();
        for (std::size_t i = 0; i < g.cols(); ++i) p[i] += b;
      }
    }
  }

  std::vector<Var> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return record(std::move(out), std::move(inputs), [g, cout](Node& self) {
    const auto& kt = simd::active_kernels();
    Node& xn = *self.inputs[0];
    Node& wn = *self.inputs[1];
    const bool has_bias = self.inputs.size() > 2;
    const Shape xs = xn.value.shape();
    const std::size_t out_sample = static_cast<std::size_t>(cout) * g.cols();
    std::vector<float> col(g.rows() * g.cols());
    std::vector<float> dcol;
    if (xn.requires_grad) dcol.resize(col.size());
    for (int n = 0; n < xs.n; ++n) {
      const float* dy = self.grad.ptr() + n * out_sample;
      if (wn.requires_grad) {
        im2col(xn.value.ptr() + n * xs.sample(), g, col.data());
        // dW[Cout x K] += dY[Cout x P] * col^T
        simd::gemm(kt, false, true, cout, g.rows(), g.cols(), dy, col.data(), wn.grad.ptr(), true);
      }
      if (has_bias && self.inputs[2]->requires_grad) {
        float* db = self.inputs[2]->grad.ptr();
        for (int co = 0; co < cout; ++co) {
          const float* p = dy + static_cast<std::size_t>(co) * g.cols();
          double s = 0.0;
          for (std::size_t i = 0; i < g.cols(); ++i) s += p[i];
          db[co] += static_cast<float>(s);
        }
      }
      if (xn.requires_grad) {
        // dcol[K x P] = W^T * dY
        simd::gemm(kt, true, false, g.rows(), g.cols(), cout, wn.value.ptr(), dy, dcol.data(), false);
        col2im_add(dcol.data(), g, xn.grad.ptr() + n * xs.sample());
      }
    }
  });
}

Var upsample2x(const Var& x) {
  const Shape s = x.shape();
  Tensor out({s.n, s.c, s.h * 2, s.w * 2});
  const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
  for (std::size_t p = 0; p < planes; ++p) {
    const float* src = x.value().ptr() + p * s.plane();
    float* dst = out.ptr() + p * out.shape().plane();
    for (int y = 0; y < s.h * 2; ++y) {
      for (int xx = 0; xx < s.w * 2; ++xx) {
        dst[static_cast<std::size_t>(y) * s.w * 2 + xx] = src[static_cast<std::size_t>(y / 2) * s.w + xx / 2];
      }
    }
  }
  return record(std::move(out), {x}, [s, planes](Node& self) {
    float* dx = self.inputs[0]->grad.ptr();
    const float* dy = self.grad.ptr();
    const std::size_t out_plane = s.plane() * 4;
    for (std::size_t p = 0; p < planes; ++p) {
      for (int y = 0; y < s.h * 2; ++y) {
        for (int xx = 0; xx < s.w * 2; ++xx) {
          dx[p * s.plane() + static_cast<std::size_t>(y / 2) * s.w + xx / 2] +=
              dy[p * out_plane + static_cast<std::size_t>(y) * s.w * 2 + xx];
        }
      }
    }
  });
}

Var avg_pool2x(const Var& x) {
  const Shape s = x.shape();
  const int ho = s.h / 2;
  const int wo = s.w / 2;
  if (ho == 0 || wo == 0) throw InvalidInput("avg_pool2x: input " + s.str() + " too small");
  Tensor out({s.n, s.c, ho, wo});
  const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
  for (std::size_t p = 0; p < planes; ++p) {
    const float* src = x.value().ptr() + p * s.plane();
    float* dst = out.ptr() + p * out.shape().plane();
    for (int y = 0; y < ho; ++y) {
      for (int xx = 0; xx < wo; ++xx) {
        const float* r0 = src + static_cast<std::size_t>(2 * y) * s.w + 2 * xx;
        const float* r1 = r0 + s.w;
        dst[static_cast<std::size_t>(y) * wo + xx] = 0.25f * (r0[0] + r0[1] + r1[0] + r1[1]);
      }
    }
  }
  return record(std::move(out), {x}, [s, ho, wo, planes](Node& self) {
    float* dx = self.inputs[0]->grad.ptr();
    const float* dy = self.grad.ptr();
    for (std::size_t p = 0; p < planes; ++p) {
      for (int y = 0; y < ho; ++y) {
        for (int xx = 0; xx < wo; ++xx) {
          const float g = 0.25f * dy[p * ho * wo + static_cast<std::size_t>(y) * wo + xx];
          float* r0 = dx + p * s.plane() + static_cast<std::size_t>(2 * y) * s.w + 2 * xx;
          float* r1 = r0 + s.w;
          r0[0] += g;
          r0[1] += g;
          r1[0] += g;
          r1[1] += g;
        }
      }
    }
  });
}

Var instance_norm(const Var& x, float eps) {
  const Shape s = x.shape();
  const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
  const std::size_t m = s.plane();
  Tensor out(s);
  std::vector<float> inv_std(planes);
  for (std::size_t p = 0; p < planes; ++p) {
    const float* src = x.value().ptr() + p * m;
    double sum = 0.0;
    double sumsq = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      sum += src[i];
      sumsq += static_cast<double>(src[i]) * src[i];
    }
    const double mu = sum / static_cast<double>(m);
    const double var = std::max(0.0, sumsq / static_cast<double>(m) - mu * mu);
    const float is = static_cast<float>(1.0 / std::sqrt(var + eps));
    inv_std[p] = is;
    float* dst = out.ptr() + p * m;
    const float muf = static_cast<float>(mu);
    for (std::size_t i = 0; i < m; ++i) dst[i] = (src[i] - muf) * is;
  }
  return record(out, {x}, [planes, m, inv_std = std::move(inv_std), y = out](Node& self) {
    float* dx = self.inputs[0]->grad.ptr();
    const float* dy = self.grad.ptr();
    for (std::size_t p = 0; p < planes; ++p) {
      const float* g = dy + p * m;
      const float* yv = y.ptr() + p * m;
      double mean_g = 0.0;
      double mean_gy = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        mean_g += g[i];
        mean_gy += static_cast<double>(g[i]) * yv[i];
      }
      mean_g /= static_cast<double>(m);
      mean_gy /= static_cast<double>(m);
      const float is = inv_std[p];
      float* d = dx + p * m;
      for (std::size_t i = 0; i < m; ++i) {
        d[i] += is * static_cast<float>(g[i] - mean_g - yv[i] * mean_gy);
      }
    }
  });
}

Var leaky_relu(const Var& x, float slope) {
  Tensor out(x.shape());
  simd::active_kernels().leaky_relu(out.numel(), slope, x.value().ptr(), out.ptr());
  return record(std::move(out), {x}, [slope](Node& self) {
    Node& in = *self.inputs[0];
    simd::active_kernels().leaky_relu_grad(in.value.numel(), slope, in.value.ptr(),
                                           self.grad.ptr(), in.grad.ptr());
  });
}

Var sigmoid(const Var& x) {
  Tensor out(x.shape());
  const float* src = x.value().ptr();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = 1.0f / (1.0f + std::exp(-src[i]));
  return record(out, {x}, [y = out](Node& self) {
    float* dx = self.inputs[0]->grad.ptr();
    const float* dy = self.grad.ptr();
    for (std::size_t i = 0; i < y.numel(); ++i) dx[i] += dy[i] * y[i] * (1.0f - y[i]);
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
    throw InvalidInput("concat_channels: " + sa.str() + " vs " + sb.str());
  }
  Tensor out({sa.n, sa.c + sb.c, sa.h, sa.w});
  for (int n = 0; n < sa.n; ++n) {
    float* dst = out.ptr() + n * out.shape().sample();
    std::memcpy(dst, a.value().ptr() + n * sa.sample(), sa.sample() * sizeof(float));
    std::memcpy(dst + sa.sample(), b.value().ptr() + n * sb.sample(), sb.sample() * sizeof(float));
  }
  return record(std::move(out), {a, b}, [sa, sb](Node& self) {
    const std::size_t out_sample = sa.sample() + sb.sample();
    for (int n = 0; n < sa.n; ++n) {
      const float* g = self.grad.ptr() + n * out_sample;
      if (self.input_needs_grad(0)) {
        float* da = self.inputs[0]->grad.ptr() + n * sa.sample();
        for (std::size_t i = 0; i < sa.sample(); ++i) da[i] += g[i];
      }
      if (self.input_needs_grad(1)) {
        float* db = self.inputs[1]->grad.ptr() + n * sb.sample();
        for (std::size_t i = 0; i < sb.sample(); ++i) db[i] += g[sa.sample() + i];
      }
    }
  });
}

Var dropout(const Var& x, float p, std::uint64_t seed) {
  if (p <= 0.0f) return x;
  if (p >= 1.0f) throw InvalidInput("dropout probability must be < 1");
  Rng rng(seed);
  const float keep_scale = 1.0f / (1.0f - p);
  std::vector<float> mask(x.value().numel());
  for (float& m : mask) m = rng.uniform() < p ? 0.0f : keep_scale;
  Tensor out(x.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] = x.value()[i] * mask[i];
  return record(std::move(out), {x}, [mask = std::move(mask)](Node& self) {
    float* dx = self.inputs[0]->grad.ptr();
    for (std::size_t i = 0; i < mask.size(); ++i) dx[i] += self.grad[i] * mask[i];
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.value());
  const auto& kt = simd::active_kernels();
  kt.axpy(out.numel(), 1.0f, b.value().ptr(), out.ptr());
  return record(std::move(out), {a, b}, [](Node& self) {
    const auto& kt = simd::active_kernels();
    for (std::size_t i = 0; i < 2; ++i) {
      if (self.input_needs_grad(i)) kt.axpy(self.grad.numel(), 1.0f, self.grad.ptr(), self.inputs[i]->grad.ptr());
    }
  });
}

Var scale(const Var& a, float s) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * s;
  return record(std::move(out), {a}, [s](Node& self) {
    simd::active_kernels().axpy(self.grad.numel(), s, self.grad.ptr(), self.inputs[0]->grad.ptr());
  });
}

Var replicate_channel(const Var& x, int channel, int copies) {
  const Shape s = x.shape();
  if (channel < 0 || channel >= s.c || copies < 1) throw InvalidInput("replicate_channel: bad channel");
  Tensor out({s.n, copies, s.h, s.w});
  for (int n = 0; n < s.n; ++n) {
    const float* src = x.value().ptr() + n * s.sample() + channel * s.plane();
    for (int k = 0; k < copies; ++k) {
      std::memcpy(out.ptr() + n * out.shape().sample() + k * s.plane(), src, s.plane() * sizeof(float));
    }
  }
  return record(std::move(out), {x}, [s, channel, copies](Node& self) {
    for (int n = 0; n < s.n; ++n) {
      float* dx = self.inputs[0]->grad.ptr() + n * s.sample() + channel * s.plane();
      for (int k = 0; k < copies; ++k) {
        const float* g = self.grad.ptr() + (static_cast<std::size_t>(n) * copies + k) * s.plane();
        for (std::size_t i = 0; i < s.plane(); ++i) dx[i] += g[i];
      }
    }
  });
}

Var slice_channels(const Var& x, int first, int count) {
  const Shape s = x.shape();
  if (first < 0 || count < 1 || first + count > s.c) throw InvalidInput("slice_channels: bad range");
  Tensor out({s.n, count, s.h, s.w});
  for (int n = 0; n < s.n; ++n) {
    std::memcpy(out.ptr() + n * out.shape().sample(), x.value().ptr() + n * s.sample() + first * s.plane(),
                out.shape().sample() * sizeof(float));
  }
  return record(std::move(out), {x}, [s, first, count](Node& self) {
    const std::size_t len = static_cast<std::size_t>(count) * s.plane();
    for (int n = 0; n < s.n; ++n) {
      float* dx = self.inputs[0]->grad.ptr() + n * s.sample() + first * s.plane();
      const float* g = self.grad.ptr() + n * len;
      for (std::size_t i = 0; i < len; ++i) dx[i] += g[i];
    }
  });
}

Var mean(const Var& x) {
  double s = 0.0;
  for (float v : x.value().span()) s += v;
  const double n = static_cast<double>(x.value().numel());
  return record(Tensor::scalar(static_cast<float>(s / n)), {x}, [n](Node& self) {
    const float g = self.grad[0] / static_cast<float>(n);
    for (float& d : self.inputs[0]->grad.span()) d += g;
  });
}

void set_requires_grad(const std::vector<Var>& params, bool on) {
  for (const Var& p : params) p.node()->requires_grad = on;
}

}  // namespace densify::nn
