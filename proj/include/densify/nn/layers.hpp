#pragma once

#include <string>
#include <vector>

#include "densify/nn/ops.hpp"
#include "densify/rng.hpp"

namespace densify::nn {

struct NamedParameter {
  std::string name;
  Var var;
};

struct Conv2d {
  Var weight;  // [Cout, Cin, k, k]
  Var bias;    // [1, Cout, 1, 1]
  int stride = 1;
  int pad = 0;

  Var operator()(const Var& x) const { return conv2d(x, weight, bias, stride, pad); }
  int in_channels() const { return weight.shape().c; }
  int out_channels() const { return weight.shape().n; }
};

/// Weights ~ N(0, init_std^2), zero bias.
Conv2d make_conv(int in_channels, int out_channels, int kernel, int stride, int pad, Rng& rng,
                 float init_std = 0.02f);

void append_parameters(std::vector<NamedParameter>& out, const std::string& prefix,
                       const Conv2d& conv);

struct AdamConfig {
  float beta1 = 0.5f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

class Adam {
 public:
  Adam(std::vector<Var> params, AdamConfig config);

  void zero_grad();
  void step(float lr);

  long steps_taken() const { return t_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }
  void restore(long t, std::vector<Tensor> m, std::vector<Tensor> v);

 private:
  std::vector<Var> params_;
  AdamConfig config_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  long t_ = 0;
};

}  // namespace densify::nn
