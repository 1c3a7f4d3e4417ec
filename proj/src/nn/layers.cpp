#include "densify/nn/layers.hpp"

#include <cmath>

#include "densify/simd/kernels.hpp"

namespace densify::nn {

Conv2d make_conv(int in_channels, int out_channels, int kernel, int stride, int pad, Rng& rng,
                 float init_std) {
  if (in_channels <= 0 || out_channels <= 0 || kernel <= 0 || stride <= 0) {
    throw ConfigError("invalid convolution geometry");
  }
  Tensor w({out_channels, in_channels, kernel, kernel});
  for (float& v : w.span()) v = static_cast<float>(rng.normal() * init_std);
  Conv2d conv;
  conv.weight = Var::parameter(std::move(w));
  conv.bias = Var::parameter(Tensor({1, out_channels, 1, 1}));
  conv.stride = stride;
  conv.pad = pad;
  return conv;
}

void append_parameters(std::vector<NamedParameter>& out, const std::string& prefix,
                       const Conv2d& conv) {
  out.push_back({prefix + ".weight", conv.weight});
  out.push_back({prefix + ".bias", conv.bias});
}

Adam::Adam(std::vector<Var> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  for (const Var& p : params_) {
    m_.emplace_back(p.shape());
    v_.emplace_back(p.shape());
  }
}

void Adam::zero_grad() {
  for (Var& p : params_) p.zero_grad();
}

void Adam::step(float lr) {
  ++t_;
  const simd::AdamStep s{lr,
                         config_.beta1,
                         config_.beta2,
                         config_.eps,
                         static_cast<float>(1.0 - std::pow(static_cast<double>(config_.beta1), t_)),
                         static_cast<float>(1.0 - std::pow(static_cast<double>(config_.beta2), t_))};
  const auto& kt = simd::active_kernels();
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var& p = params_[i];
    if (p.grad().numel() != p.value().numel()) continue;  // never reached by a gradient
    kt.adam_update(p.value().numel(), s, p.mutable_value().ptr(), m_[i].ptr(), v_[i].ptr(),
                   p.grad().ptr());
  }
}

void Adam::restore(long t, std::vector<Tensor> m, std::vector<Tensor> v) {
  if (m.size() != params_.size() || v.size() != params_.size()) {
    throw ConfigError("optimizer state does not match parameter count");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (m[i].shape() != params_[i].shape() || v[i].shape() != params_[i].shape()) {
      throw ConfigError("optimizer state shape mismatch at parameter " + std::to_string(i));
    }
  }
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace densify::nn
