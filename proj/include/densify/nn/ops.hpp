#pragma once

#include <cstdint>

#include "densify/nn/graph.hpp"

namespace densify::nn {

/// weight [Cout, Cin, k, k], bias [1, Cout, 1, 1] (may be undefined).
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);

/// Nearest-neighbour 2x upsampling.
Var upsample2x(const Var& x);

/// 2x2 mean pooling with stride 2; odd trailing rows/columns are dropped.
Var avg_pool2x(const Var& x);

/// Per-sample, per-channel normalization without affine parameters.
Var instance_norm(const Var& x, float eps = 1e-5f);

Var leaky_relu(const Var& x, float slope);
inline Var relu(const Var& x) { return leaky_relu(x, 0.0f); }
Var sigmoid(const Var& x);

Var concat_channels(const Var& a, const Var& b);

/// Inverted dropout: kept activations are scaled by 1/(1-p). The mask depends
/// only on `seed`.
Var dropout(const Var& x, float p, std::uint64_t seed);

Var add(const Var& a, const Var& b);
Var scale(const Var& a, float s);

/// Copies channel `channel` of x into `copies` identical channels.
Var replicate_channel(const Var& x, int channel, int copies);

/// Channels [first, first + count).
Var slice_channels(const Var& x, int first, int count);

/// Scalar mean of all elements.
Var mean(const Var& x);

void set_requires_grad(const std::vector<Var>& params, bool on);

}  // namespace densify::nn
