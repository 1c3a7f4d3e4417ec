#include "densify/losses.hpp"

#include <cmath>
#include <string>

#include "densify/models.hpp"
#include "densify/nn/layers.hpp"
#include "densify/nn/ops.hpp"

namespace densify {

void LossWeights::validate() const {
  const auto check = [](double v, const char* name) {
    if (!std::isfinite(v) || v < 0.0) {
      throw ConfigError(std::string("loss weight ") + name + " must be finite and >= 0, got " + std::to_string(v));
    }
  };
  check(lambda_fl, "lambda_fl");
  check(lambda_fm, "lambda_fm");
  check(lambda_vgg, "lambda_vgg");
  check(gamma, "gamma");
}

LossWeights LossWeights::from_json(const nlohmann::json& j) {
  LossWeights w;
  w.lambda_fl = j.value("lambda_fl", w.lambda_fl);
  w.lambda_fm = j.value("lambda_fm", w.lambda_fm);
  w.lambda_vgg = j.value("lambda_vgg", w.lambda_vgg);
  w.gamma = j.value("gamma", w.gamma);
  w.validate();
  return w;
}

nlohmann::json LossWeights::to_json() const {
  return {{"lambda_fl", lambda_fl}, {"lambda_fm", lambda_fm}, {"lambda_vgg", lambda_vgg}, {"gamma", gamma}};
}

nlohmann::json LossReport::to_json() const {
  return {{"adv", adv},
          {"focal", focal},
          {"feature_match", feature_match},
          {"perceptual", perceptual},
          {"total", total}};
}

LossReport make_oc_report(double adv, double focal, double feature_match, const LossWeights& w) {
  LossReport r;
  r.adv = adv;
  r.focal = focal;
  r.feature_match = feature_match;
  r.total = adv + w.lambda_fl * focal + w.lambda_fm * feature_match;
  return r;
}

LossReport make_bd_report(double adv, double focal, double feature_match, double perceptual,
                          const LossWeights& w) {
  LossReport r = make_oc_report(adv, focal, feature_match, w);
  r.perceptual = perceptual;
  r.total += w.lambda_vgg * perceptual;
  return r;
}

struct RandomConvExtractor::Layers {
  std::vector<nn::Conv2d> convs;
};

RandomConvExtractor::RandomConvExtractor(std::uint64_t seed) : layers_(std::make_unique<Layers>()) {
  Rng rng(seed);
  const int widths[] = {3, 8, 16, 32};
  for (int i = 0; i < 3; ++i) {
    const int k = i == 0 ? 3 : 4;
    const int stride = i == 0 ? 1 : 2;
    const float std = std::sqrt(2.0f / static_cast<float>(widths[i] * k * k));
    nn::Conv2d conv = nn::make_conv(widths[i], widths[i + 1], k, stride, 1, rng, std);
    nn::set_requires_grad({conv.weight, conv.bias}, false);
    layers_->convs.push_back(std::move(conv));
  }
}

RandomConvExtractor::~RandomConvExtractor() = default;

std::vector<nn::Var> RandomConvExtractor::features(const nn::Var& rgb) const {
  if (rgb.shape().c != 3) throw InvalidInput("extractor expects 3 channels, got " + std::to_string(rgb.shape().c));
  std::vector<nn::Var> out;
  nn::Var h = rgb;
  for (const nn::Conv2d& conv : layers_->convs) {
    h = nn::leaky_relu(conv(h), 0.2f);
    out.push_back(h);
  }
  return out;
}

namespace {

std::vector<std::span<const float>> spans_of(const std::vector<nn::Var>& vars) {
  std::vector<std::span<const float>> out;
  out.reserve(vars.size());
  for (const nn::Var& v : vars) out.push_back(v.value().span());
  return out;
}

/// Mean |x - target| over all elements, gradient into x.
nn::Var mean_abs_to_constant(const nn::Var& x, const nn::Tensor& target) {
  if (x.shape() != target.shape()) {
    throw InvalidInput("shape mismatch " + x.shape().str() + " vs " + target.shape().str());
  }
  const auto xs = x.value().span();
  const auto ts = target.span();
  double sum = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) sum += std::abs(static_cast<double>(xs[i]) - ts[i]);
  const double n = static_cast<double>(xs.size());
  return nn::record(nn::Tensor::scalar(static_cast<float>(sum / n)), {x}, [target, n](nn::Node& self) {
    const float g = static_cast<float>(self.grad[0] / n);
    const auto xv = self.inputs[0]->value.span();
    auto dx = self.inputs[0]->grad.span();
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const float d = xv[i] - target[i];
      dx[i] += d > 0.0f ? g : (d < 0.0f ? -g : 0.0f);
    }
  });
}

std::vector<nn::Var> extract(const PerceptualExtractor& extractor, const nn::Var& rgb) {
  try {
    return extractor.features(rgb);
  } catch (const std::exception& e) {
    throw Error(std::string("perceptual extractor failed: ") + e.what());
  }
}

nn::Var as_rgb(const nn::Var& x) {
  if (x.shape().c == 3) return x;
  if (x.shape().c == 1) return nn::replicate_channel(x, 0, 3);
  throw InvalidInput("perceptual input must have 1 or 3 channels, got " + std::to_string(x.shape().c));
}

nn::Tensor channel_of(const nn::Tensor& t, int channel) {
  nn::NoGradGuard guard;
  return nn::slice_channels(nn::Var::constant(t), channel, 1).value();
}

nn::Var weighted_sum(const nn::Var& a, double wa, const nn::Var& b, double wb) {
  return nn::add(nn::scale(a, static_cast<float>(wa)), nn::scale(b, static_cast<float>(wb)));
}

}  // namespace

nn::Var focal_loss(const nn::Var& pred, const nn::Tensor& target, float gamma, float scale) {
  if (pred.shape() != target.shape()) {
    throw InvalidInput("focal_loss: prediction " + pred.shape().str() + " vs target " + target.shape().str());
  }
  const auto p = pred.value().span();
  const auto y = target.span();
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    sum += focal_element<double>(p[i], y[i], gamma);
  }
  return nn::record(nn::Tensor::scalar(static_cast<float>(sum * scale)), {pred},
                    [target, gamma, scale](nn::Node& self) {
                      const double g = static_cast<double>(self.grad[0]) * scale;
                      const auto pv = self.inputs[0]->value.span();
                      auto dp = self.inputs[0]->grad.span();
                      for (std::size_t i = 0; i < pv.size(); ++i) {
                        dp[i] += static_cast<float>(g * focal_element_grad<double>(pv[i], target[i], gamma));
                      }
                    });
}

nn::Var lsgan_generator_loss(const std::vector<nn::Var>& fake_scores) {
  const double value = lsgan_generator_loss<float>(spans_of(fake_scores));
  return nn::record(nn::Tensor::scalar(static_cast<float>(value)), fake_scores, [](nn::Node& self) {
    const double scales = static_cast<double>(self.inputs.size());
    for (std::size_t s = 0; s < self.inputs.size(); ++s) {
      if (!self.input_needs_grad(s)) continue;
      nn::Node& in = *self.inputs[s];
      const double n = static_cast<double>(in.value.numel());
      const double k = self.grad[0] * 2.0 / (n * scales);
      for (std::size_t i = 0; i < in.value.numel(); ++i) {
        in.grad[i] += static_cast<float>(k * (static_cast<double>(in.value[i]) - 1.0));
      }
    }
  });
}

nn::Var lsgan_discriminator_loss(const std::vector<nn::Var>& real_scores, const std::vector<nn::Var>& fake_scores) {
  const double value = lsgan_discriminator_loss<float>(spans_of(real_scores), spans_of(fake_scores));
  std::vector<nn::Var> inputs = real_scores;
  inputs.insert(inputs.end(), fake_scores.begin(), fake_scores.end());
  const std::size_t scales = real_scores.size();
  return nn::record(nn::Tensor::scalar(static_cast<float>(value)), std::move(inputs), [scales](nn::Node& self) {
    for (std::size_t j = 0; j < self.inputs.size(); ++j) {
      if (!self.input_needs_grad(j)) continue;
      const bool real = j < scales;
      nn::Node& in = *self.inputs[j];
      const double n = static_cast<double>(in.value.numel());
      const double k = self.grad[0] / (n * static_cast<double>(scales));
      for (std::size_t i = 0; i < in.value.numel(); ++i) {
        const double d = static_cast<double>(in.value[i]) - (real ? 1.0 : 0.0);
        in.grad[i] += static_cast<float>(k * d);
      }
    }
  });
}

nn::Var feature_matching_loss(const std::vector<std::vector<nn::Var>>& real,
                              const std::vector<std::vector<nn::Var>>& fake) {
  FeatureSet<const float> r;
  FeatureSet<const float> f;
  std::vector<nn::Var> inputs;
  std::vector<std::size_t> layer_counts;
  std::vector<nn::Tensor> targets;
  for (std::size_t s = 0; s < real.size(); ++s) r.push_back(spans_of(real[s]));
  for (std::size_t s = 0; s < fake.size(); ++s) {
    f.push_back(spans_of(fake[s]));
    layer_counts.push_back(fake[s].size());
    for (const nn::Var& v : fake[s]) inputs.push_back(v);
  }
  const double value = feature_matching_loss<float>(r, f);
  for (const auto& scale : real) {
    for (const nn::Var& v : scale) targets.push_back(v.value());
  }
  return nn::record(nn::Tensor::scalar(static_cast<float>(value)), std::move(inputs),
                    [targets = std::move(targets), layer_counts](nn::Node& self) {
                      const double scales = static_cast<double>(layer_counts.size());
                      std::size_t j = 0;
                      for (std::size_t s = 0; s < layer_counts.size(); ++s) {
                        for (std::size_t l = 0; l < layer_counts[s]; ++l, ++j) {
                          if (!self.input_needs_grad(j)) continue;
                          nn::Node& in = *self.inputs[j];
                          const double n = static_cast<double>(in.value.numel());
                          const float g = static_cast<float>(
                              self.grad[0] / (n * static_cast<double>(layer_counts[s]) * scales));
                          const nn::Tensor& t = targets[j];
                          for (std::size_t i = 0; i < in.value.numel(); ++i) {
                            const float d = in.value[i] - t[i];
                            in.grad[i] += d > 0.0f ? g : (d < 0.0f ? -g : 0.0f);
                          }
                        }
                      }
                    });
}

nn::Var perceptual_loss(const nn::Var& predicted, const nn::Tensor& target, const PerceptualExtractor& extractor) {
  if (predicted.shape() != target.shape()) {
    throw InvalidInput("perceptual_loss: prediction " + predicted.shape().str() + " vs target " +
                       target.shape().str());
  }
  std::vector<nn::Var> target_features;
  {
    nn::NoGradGuard guard;
    target_features = extract(extractor, as_rgb(nn::Var::constant(target)));
  }
  const std::vector<nn::Var> pred_features = extract(extractor, as_rgb(predicted));
  const std::vector<double> weights = extractor.layer_weights();
  if (weights.size() != pred_features.size() || pred_features.size() != target_features.size()) {
    throw Error("perceptual extractor returned " + std::to_string(pred_features.size()) + " layers for " +
                std::to_string(weights.size()) + " weights");
  }
  double wsum = 0.0;
  for (double w : weights) wsum += w;
  if (!(wsum > 0.0)) throw ConfigError("perceptual layer weights must have a positive sum");
  nn::Var total;
  for (std::size_t l = 0; l < pred_features.size(); ++l) {
    nn::Var term = nn::scale(mean_abs_to_constant(pred_features[l], target_features[l].value()),
                             static_cast<float>(weights[l] / wsum));
    total = total.defined() ? nn::add(total, term) : term;
  }
  return total;
}

double perceptual_loss(const nn::Tensor& predicted, const nn::Tensor& target, const PerceptualExtractor& extractor) {
  nn::NoGradGuard guard;
  return perceptual_loss(nn::Var::constant(predicted), target, extractor).value()[0];
}

namespace {

struct AdversarialTerms {
  nn::Var adv;
  nn::Var fm;
};

AdversarialTerms adversarial_terms(const nn::Var& generated, const nn::Tensor& real, const nn::Var& condition,
                                   const Discriminator& disc) {
  DiscriminatorOutput real_out;
  {
    nn::NoGradGuard guard;
    real_out = disc.forward(nn::concat_channels(condition, nn::Var::constant(real)));
  }
  const DiscriminatorOutput fake_out = disc.forward(nn::concat_channels(condition, generated));
  return {lsgan_generator_loss(fake_out.scores), feature_matching_loss(real_out.features, fake_out.features)};
}

float focal_scale(const nn::Shape& s) {
  return 1.0f / static_cast<float>(static_cast<double>(s.n) * s.h * s.w);
}

}  // namespace

CompositeLoss composite_oc_loss(const nn::Var& g_star, const nn::Tensor& g, const nn::Var& condition,
                                const Discriminator& disc, const LossWeights& weights) {
  weights.validate();
  const nn::Var focal = focal_loss(g_star, g, static_cast<float>(weights.gamma), focal_scale(g.shape()));
  const AdversarialTerms a = adversarial_terms(g_star, g, condition, disc);
  nn::Var total = nn::add(a.adv, weighted_sum(focal, weights.lambda_fl, a.fm, weights.lambda_fm));
  CompositeLoss out{total, make_oc_report(a.adv.value()[0], focal.value()[0], a.fm.value()[0], weights)};
  return out;
}

CompositeLoss composite_bd_loss(const nn::Var& b_star, const nn::Tensor& b, const nn::Var& condition,
                                const Discriminator& disc, const PerceptualExtractor& extractor,
                                const LossWeights& weights, int boundary_channel) {
  weights.validate();
  const nn::Var focal = focal_loss(b_star, b, static_cast<float>(weights.gamma), focal_scale(b.shape()));
  const AdversarialTerms a = adversarial_terms(b_star, b, condition, disc);
  nn::Var perceptual;
  if (boundary_channel >= 0) {
    perceptual = perceptual_loss(nn::slice_channels(b_star, boundary_channel, 1), channel_of(b, boundary_channel),
                                 extractor);
  } else {
    perceptual = perceptual_loss(b_star, b, extractor);
  }
  nn::Var total = nn::add(nn::add(a.adv, weighted_sum(focal, weights.lambda_fl, a.fm, weights.lambda_fm)),
                          nn::scale(perceptual, static_cast<float>(weights.lambda_vgg)));
  return {total, make_bd_report(a.adv.value()[0], focal.value()[0], a.fm.value()[0], perceptual.value()[0], weights)};
}

nn::Var discriminator_objective(const nn::Var& condition, const nn::Tensor& real, const nn::Tensor& fake,
                                const Discriminator& disc, double* value) {
  const DiscriminatorOutput r = disc.forward(nn::concat_channels(condition, nn::Var::constant(real)));
  const DiscriminatorOutput f = disc.forward(nn::concat_channels(condition, nn::Var::constant(fake)));
  nn::Var loss = lsgan_discriminator_loss(r.scores, f.scores);
  if (value) *value = loss.value()[0];
  return loss;
}

}  // namespace densify
