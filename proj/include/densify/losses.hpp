#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "densify/error.hpp"
#include "densify/nn/graph.hpp"

namespace densify {

class Discriminator;

/// lambda_fm is shared by the occurrence objective's lambda_f and the boundary
/// objective's lambda_FM.
struct LossWeights {
  double lambda_fl = 5.0;
  double lambda_fm = 10.0;
  double lambda_vgg = 10.0;
  double gamma = 5.0;

  void validate() const;
  static LossWeights from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct LossReport {
  double adv = 0.0;
  double focal = 0.0;
  double feature_match = 0.0;
  double perceptual = 0.0;
  double total = 0.0;

  nlohmann::json to_json() const;
};

/// total = adv + lambda_fl * focal + lambda_fm * feature_match
LossReport make_oc_report(double adv, double focal, double feature_match, const LossWeights& w);
/// ... + lambda_vgg * perceptual
LossReport make_bd_report(double adv, double focal, double feature_match, double perceptual,
                          const LossWeights& w);

inline constexpr double kProbabilityClamp = 1e-7;

// ---------------------------------------------------------------------------
// Value/gradient kernels. Gradients are written (not accumulated) when the
// output span is non-empty.

template <std::floating_point T>
T focal_element(T p, T y, T gamma) {
  const T eps = static_cast<T>(kProbabilityClamp);
  const T pc = std::clamp(p, eps, T(1) - eps);
  return -y * std::pow(T(1) - pc, gamma) * std::log(pc) -
         (T(1) - y) * std::pow(pc, gamma) * std::log(T(1) - pc);
}

template <std::floating_point T>
T focal_element_grad(T p, T y, T gamma) {
  const T eps = static_cast<T>(kProbabilityClamp);
  if (p < eps || p > T(1) - eps) return T(0);  // flat outside the clamp
  const T q = T(1) - p;
  T g = T(0);
  if (y != T(0)) {
    const T dpow = gamma == T(0) ? T(0) : gamma * std::pow(q, gamma - T(1));
    g += y * (dpow * std::log(p) - std::pow(q, gamma) / p);
  }
  if (y != T(1)) {
    const T dpow = gamma == T(0) ? T(0) : gamma * std::pow(p, gamma - T(1));
    g += (T(1) - y) * (-dpow * std::log(q) + std::pow(p, gamma) / q);
  }
  return g;
}

/// Sum over all elements of the focal term.
template <std::floating_point T>
T focal_loss(std::span<const T> pred, std::span<const T> target, T gamma, std::span<T> grad = {}) {
  if (pred.size() != target.size()) {
    throw InvalidInput("focal_loss: " + std::to_string(pred.size()) + " predictions vs " +
                       std::to_string(target.size()) + " targets");
  }
  if (!grad.empty() && grad.size() != pred.size()) throw InvalidInput("focal_loss: gradient size");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    sum += static_cast<double>(focal_element(pred[i], target[i], gamma));
    if (!grad.empty()) grad[i] = focal_element_grad(pred[i], target[i], gamma);
  }
  return static_cast<T>(sum);
}

template <std::floating_point T>
struct LsganLosses {
  T d_loss;
  T g_loss;
};

/// mean over scales of the per-scale mean of ((D(real)-1)^2 + D(fake)^2) / 2.
template <std::floating_point T>
T lsgan_discriminator_loss(const std::vector<std::span<const T>>& real,
                           const std::vector<std::span<const T>>& fake,
                           const std::vector<std::span<T>>& grad_real = {},
                           const std::vector<std::span<T>>& grad_fake = {}) {
  if (real.empty() || fake.empty()) throw InvalidInput("lsgan: empty scale list");
  if (real.size() != fake.size()) throw InvalidInput("lsgan: real/fake scale count differs");
  const double scales = static_cast<double>(real.size());
  double total = 0.0;
  for (std::size_t s = 0; s < real.size(); ++s) {
    if (real[s].empty() || fake[s].empty()) throw InvalidInput("lsgan: empty score map");
    const double nr = static_cast<double>(real[s].size());
    const double nf = static_cast<double>(fake[s].size());
    double sr = 0.0;
    double sf = 0.0;
    for (std::size_t i = 0; i < real[s].size(); ++i) {
      const double d = static_cast<double>(real[s][i]) - 1.0;
      sr += d * d;
      if (!grad_real.empty()) grad_real[s][i] = static_cast<T>(d / (nr * scales));
    }
    for (std::size_t i = 0; i < fake[s].size(); ++i) {
      const double d = static_cast<double>(fake[s][i]);
      sf += d * d;
      if (!grad_fake.empty()) grad_fake[s][i] = static_cast<T>(d / (nf * scales));
    }
    total += 0.5 * (sr / nr + sf / nf);
  }
  return static_cast<T>(total / scales);
}

/// mean over scales of the per-scale mean of (D(fake)-1)^2.
template <std::floating_point T>
T lsgan_generator_loss(const std::vector<std::span<const T>>& fake,
                       const std::vector<std::span<T>>& grad_fake = {}) {
  if (fake.empty()) throw InvalidInput("lsgan: empty scale list");
  const double scales = static_cast<double>(fake.size());
  double total = 0.0;
  for (std::size_t s = 0; s < fake.size(); ++s) {
    if (fake[s].empty()) throw InvalidInput("lsgan: empty score map");
    const double n = static_cast<double>(fake[s].size());
    double sum = 0.0;
    for (std::size_t i = 0; i < fake[s].size(); ++i) {
      const double d = static_cast<double>(fake[s][i]) - 1.0;
      sum += d * d;
      if (!grad_fake.empty()) grad_fake[s][i] = static_cast<T>(2.0 * d / (n * scales));
    }
    total += sum / n;
  }
  return static_cast<T>(total / scales);
}

template <std::floating_point T>
LsganLosses<T> lsgan_losses(const std::vector<std::span<const T>>& real,
                            const std::vector<std::span<const T>>& fake) {
  return {lsgan_discriminator_loss(real, fake), lsgan_generator_loss(fake)};
}

/// [scale][layer] feature volumes.
template <class T>
using FeatureSet = std::vector<std::vector<std::span<T>>>;

/// Mean absolute difference per layer, averaged over layers and then scales.
/// The gradient is taken with respect to `fake`.
template <std::floating_point T>
T feature_matching_loss(const FeatureSet<const T>& real, const FeatureSet<const T>& fake,
                        const FeatureSet<T>& grad_fake = {}) {
  if (real.size() != fake.size() || real.empty()) {
    throw InvalidInput("feature_matching_loss: scale count mismatch");
  }
  double total = 0.0;
  const double scales = static_cast<double>(real.size());
  for (std::size_t s = 0; s < real.size(); ++s) {
    if (real[s].size() != fake[s].size() || real[s].empty()) {
      throw InvalidInput("feature_matching_loss: layer count mismatch at scale " + std::to_string(s));
    }
    const double layers = static_cast<double>(real[s].size());
    double scale_sum = 0.0;
    for (std::size_t l = 0; l < real[s].size(); ++l) {
      const auto& r = real[s][l];
      const auto& f = fake[s][l];
      if (r.size() != f.size() || r.empty()) {
        throw InvalidInput("feature_matching_loss: feature shape mismatch at scale " +
                           std::to_string(s) + " layer " + std::to_string(l));
      }
      const double n = static_cast<double>(r.size());
      const double g = 1.0 / (n * layers * scales);
      double sum = 0.0;
      for (std::size_t i = 0; i < r.size(); ++i) {
        const double d = static_cast<double>(f[i]) - static_cast<double>(r[i]);
        sum += std::abs(d);
        if (!grad_fake.empty()) grad_fake[s][l][i] = static_cast<T>(d > 0 ? g : (d < 0 ? -g : 0.0));
      }
      scale_sum += sum / n;
    }
    total += scale_sum / layers;
  }
  return static_cast<T>(total / scales);
}

// ---------------------------------------------------------------------------
// Feature extractors for the perceptual term.

class PerceptualExtractor {
 public:
  virtual ~PerceptualExtractor() = default;
  /// Input is [N, 3, H, W]; returns one volume per layer.
  virtual std::vector<nn::Var> features(const nn::Var& rgb) const = 0;
  /// Relative layer weights; normalized to sum 1 inside the loss.
  virtual std::vector<double> layer_weights() const = 0;
};

/// features(x) = {x}
class IdentityExtractor final : public PerceptualExtractor {
 public:
  std::vector<nn::Var> features(const nn::Var& rgb) const override { return {rgb}; }
  std::vector<double> layer_weights() const override { return {1.0}; }
};

/// Fixed random-weight convolution stack (3 -> 8 -> 16 -> 32, leaky rectifier).
class RandomConvExtractor final : public PerceptualExtractor {
 public:
  explicit RandomConvExtractor(std::uint64_t seed = 0x5eed);
  ~RandomConvExtractor() override;
  std::vector<nn::Var> features(const nn::Var& rgb) const override;
  std::vector<double> layer_weights() const override { return {0.25, 0.5, 1.0}; }

 private:
  struct Layers;
  std::unique_ptr<Layers> layers_;
};

// ---------------------------------------------------------------------------
// Differentiable wrappers used by training.

/// focal_loss summed over all elements of pred, multiplied by `scale`.
nn::Var focal_loss(const nn::Var& pred, const nn::Tensor& target, float gamma, float scale);
nn::Var lsgan_generator_loss(const std::vector<nn::Var>& fake_scores);
nn::Var lsgan_discriminator_loss(const std::vector<nn::Var>& real_scores,
                                 const std::vector<nn::Var>& fake_scores);
/// Gradient flows into `fake` only.
nn::Var feature_matching_loss(const std::vector<std::vector<nn::Var>>& real,
                              const std::vector<std::vector<nn::Var>>& fake);

/// Single-channel maps [N,1,H,W] are replicated to 3 channels; 3-channel inputs
/// pass through. Returns the weighted mean absolute feature difference.
nn::Var perceptual_loss(const nn::Var& predicted, const nn::Tensor& target,
                        const PerceptualExtractor& extractor);
double perceptual_loss(const nn::Tensor& predicted, const nn::Tensor& target,
                       const PerceptualExtractor& extractor);

struct CompositeLoss {
  nn::Var total;
  LossReport report;
};

/// Generator objective for labelmap generators. `condition` is the generator
/// input; the discriminator sees concat(condition, labelmap). The focal sum is
/// normalized by N*H*W.
CompositeLoss composite_oc_loss(const nn::Var& g_star, const nn::Tensor& g, const nn::Var& condition,
                                const Discriminator& disc, const LossWeights& weights);

/// Boundary objective. b_star/b are [N,2,H,W] (channel 1 = boundary); the
/// perceptual term compares channel 1 replicated to RGB. When `boundary_channel`
/// is negative the maps are compared as-is (3-channel renderer outputs).
CompositeLoss composite_bd_loss(const nn::Var& b_star, const nn::Tensor& b, const nn::Var& condition,
                                const Discriminator& disc, const PerceptualExtractor& extractor,
                                const LossWeights& weights, int boundary_channel = 1);

/// LSGAN discriminator objective on detached `fake`.
nn::Var discriminator_objective(const nn::Var& condition, const nn::Tensor& real,
                                const nn::Tensor& fake, const Discriminator& disc, double* value);

}  // namespace densify
