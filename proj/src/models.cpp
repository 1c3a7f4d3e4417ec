#include "densify/models.hpp"

#include <algorithm>

#include "densify/rng.hpp"

namespace densify {

std::string_view role_name(GeneratorRole role) {
  switch (role) {
    case GeneratorRole::stage1:
      return "stage1";
    case GeneratorRole::stage2:
      return "stage2";
    case GeneratorRole::single_stage:
      return "single";
    case GeneratorRole::boundary:
      return "boundary";
    case GeneratorRole::renderer:
      return "renderer";
  }
  return "unknown";
}

GeneratorRole parse_role(std::string_view name) {
  if (name == "stage1") return GeneratorRole::stage1;
  if (name == "stage2") return GeneratorRole::stage2;
  if (name == "single" || name == "single_stage") return GeneratorRole::single_stage;
  if (name == "boundary") return GeneratorRole::boundary;
  if (name == "renderer") return GeneratorRole::renderer;
  throw ConfigError("unknown generator role '" + std::string(name) + "'");
}

GeneratorSpec GeneratorSpec::from_json(const nlohmann::json& j) {
  GeneratorSpec s;
  s.in_channels = j.value("in_channels", 0);
  s.out_channels = j.value("out_channels", 0);
  s.depth = j.value("depth", s.depth);
  s.base_width = j.value("base_width", s.base_width);
  s.dropout = j.value("dropout", s.dropout);
  s.dropout_levels = j.value("dropout_levels", s.dropout_levels);
  if (j.value("output_activation", std::string("sigmoid")) != "sigmoid") {
    throw ConfigError("generator output activation must be sigmoid");
  }
  return s;
}

nlohmann::json GeneratorSpec::to_json() const {
  return {{"in_channels", in_channels}, {"out_channels", out_channels},   {"depth", depth},
          {"base_width", base_width},   {"dropout", dropout},             {"dropout_levels", dropout_levels},
          {"output_activation", "sigmoid"}};
}

DiscriminatorSpec DiscriminatorSpec::from_json(const nlohmann::json& j) {
  DiscriminatorSpec s;
  s.num_scales = j.value("num_scales", s.num_scales);
  s.layers_per_scale = j.value("layers_per_scale", s.layers_per_scale);
  s.base_width = j.value("base_width", s.base_width);
  return s;
}

nlohmann::json DiscriminatorSpec::to_json() const {
  return {{"num_scales", num_scales}, {"layers_per_scale", layers_per_scale}, {"base_width", base_width}};
}

ChannelContract channel_contract(GeneratorRole role, const ClassTaxonomy& taxonomy) {
  const int c = static_cast<int>(taxonomy.num_classes());
  const int things = static_cast<int>(taxonomy.num_things());
  const int stuff = static_cast<int>(taxonomy.num_stuff());
  switch (role) {
    case GeneratorRole::stage1:
      return {things + 1, stuff};
    case GeneratorRole::stage2:
      return {c, things + 1};
    case GeneratorRole::single_stage:
      return {c, c};
    case GeneratorRole::boundary:
      return {c, 2};
    case GeneratorRole::renderer:
      return {c + 1, 3};
  }
  throw ConfigError("unknown role");
}

std::vector<int> output_semantics(GeneratorRole role, const ClassTaxonomy& taxonomy) {
  switch (role) {
    case GeneratorRole::stage1:
      return channel_semantics(taxonomy, ChannelSet::stuffs);
    case GeneratorRole::stage2:
      return channel_semantics(taxonomy, ChannelSet::things_plus_none);
    case GeneratorRole::single_stage:
      return channel_semantics(taxonomy, ChannelSet::all);
    default:
      return {};
  }
}

namespace {

int level_width(const GeneratorSpec& spec, int level) {
  return spec.base_width << std::min(level, 3);
}

}  // namespace

Generator::Generator(GeneratorSpec spec, GeneratorRole role, std::uint64_t seed)
    : spec_(spec), role_(role) {
  if (spec_.in_channels <= 0 || spec_.out_channels <= 0) throw ConfigError("generator channels must be positive");
  if (spec_.depth < 1) throw ConfigError("generator depth must be >= 1");
  if (spec_.base_width < 1) throw ConfigError("generator base width must be >= 1");
  if (spec_.dropout < 0.0 || spec_.dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
  Rng rng(seed);
  const int depth = spec_.depth;
  stem_ = nn::make_conv(spec_.in_channels, level_width(spec_, 0), 3, 1, 1, rng);
  for (int i = 1; i <= depth; ++i) {
    down_.push_back(nn::make_conv(level_width(spec_, i - 1), level_width(spec_, i), 4, 2, 1, rng));
  }
  up_.resize(static_cast<std::size_t>(depth));
  for (int i = depth; i >= 1; --i) {
    const int in = i == depth ? level_width(spec_, depth) : 2 * level_width(spec_, i);
    up_[static_cast<std::size_t>(i - 1)] = nn::make_conv(in, level_width(spec_, i - 1), 3, 1, 1, rng);
  }
  head_ = nn::make_conv(2 * level_width(spec_, 0), spec_.out_channels, 3, 1, 1, rng);
}

nn::Var Generator::forward(const nn::Var& x, std::uint64_t noise_seed) const {
  const nn::Shape s = x.shape();
  if (s.c != spec_.in_channels) {
    throw InvalidInput("generator expects " + std::to_string(spec_.in_channels) + " input channels, got " +
                       std::to_string(s.c));
  }
  const int factor = 1 << spec_.depth;
  if (s.h % factor != 0 || s.w % factor != 0) {
    throw InvalidInput("input " + std::to_string(s.w) + "x" + std::to_string(s.h) +
                       " not divisible by 2^depth = " + std::to_string(factor));
  }
  const int depth = spec_.depth;
  std::vector<nn::Var> skips;
  skips.push_back(nn::leaky_relu(stem_(x), 0.2f));
  for (int i = 1; i <= depth; ++i) {
    nn::Var h = down_[static_cast<std::size_t>(i - 1)](skips.back());
    if (i < depth) h = nn::instance_norm(h);  // innermost level may be 1x1
    skips.push_back(nn::leaky_relu(h, 0.2f));
  }
  nn::Var d = skips.back();
  for (int i = depth; i >= 1; --i) {
    d = up_[static_cast<std::size_t>(i - 1)](nn::upsample2x(d));
    d = nn::relu(nn::instance_norm(d));
    if (spec_.dropout > 0.0 && depth - i < spec_.dropout_levels) {
      d = nn::dropout(d, static_cast<float>(spec_.dropout), derive_seed(noise_seed, i));
    }
    d = nn::concat_channels(d, skips[static_cast<std::size_t>(i - 1)]);
  }
  return nn::sigmoid(head_(d));
}

nn::Tensor Generator::infer(const nn::Tensor& x, std::uint64_t noise_seed) const {
  nn::NoGradGuard guard;
  return forward(nn::Var::constant(x), noise_seed).value();
}

std::vector<nn::NamedParameter> Generator::named_parameters() const {
  std::vector<nn::NamedParameter> out;
  nn::append_parameters(out, "stem", stem_);
  for (std::size_t i = 0; i < down_.size(); ++i) nn::append_parameters(out, "down" + std::to_string(i + 1), down_[i]);
  for (std::size_t i = up_.size(); i-- > 0;) nn::append_parameters(out, "up" + std::to_string(i + 1), up_[i]);
  nn::append_parameters(out, "head", head_);
  return out;
}

std::vector<nn::Var> Generator::parameters() const {
  std::vector<nn::Var> out;
  for (auto& p : named_parameters()) out.push_back(p.var);
  return out;
}

Generator build_generator(const GeneratorSpec& spec, GeneratorRole role, const ClassTaxonomy& taxonomy,
                          std::uint64_t seed) {
  const ChannelContract want = channel_contract(role, taxonomy);
  if (spec.in_channels != want.in_channels || spec.out_channels != want.out_channels) {
    throw ConfigError("role " + std::string(role_name(role)) + " needs " + std::to_string(want.in_channels) +
                      " -> " + std::to_string(want.out_channels) + " channels, spec has " +
                      std::to_string(spec.in_channels) + " -> " + std::to_string(spec.out_channels));
  }
  return Generator(spec, role, seed);
}

Discriminator::Discriminator(DiscriminatorSpec spec, int in_channels, std::uint64_t seed)
    : spec_(spec), in_channels_(in_channels) {
  if (spec_.num_scales < 1) throw ConfigError("discriminator needs at least one scale");
  if (spec_.layers_per_scale < 1) throw ConfigError("discriminator needs at least one layer per scale");
  if (spec_.base_width < 1) throw ConfigError("discriminator base width must be >= 1");
  if (in_channels_ < 1) throw ConfigError("discriminator input channels must be positive");
  Rng rng(seed);
  for (int s = 0; s < spec_.num_scales; ++s) {
    std::vector<nn::Conv2d> layers;
    int ch = in_channels_;
    for (int l = 0; l < spec_.layers_per_scale; ++l) {
      const int out = spec_.base_width << std::min(l, 3);
      layers.push_back(nn::make_conv(ch, out, 4, 2, 1, rng));
      ch = out;
    }
    layers_.push_back(std::move(layers));
    heads_.push_back(nn::make_conv(ch, 1, 3, 1, 1, rng));
  }
}

DiscriminatorOutput Discriminator::forward(const nn::Var& x) const {
  if (x.shape().c != in_channels_) {
    throw InvalidInput("discriminator expects " + std::to_string(in_channels_) + " channels, got " +
                       std::to_string(x.shape().c));
  }
  DiscriminatorOutput out;
  nn::Var scaled = x;
  for (int s = 0; s < spec_.num_scales; ++s) {
    if (s > 0) scaled = nn::avg_pool2x(scaled);
    std::vector<nn::Var> feats;
    nn::Var h = scaled;
    for (int l = 0; l < spec_.layers_per_scale; ++l) {
      h = layers_[static_cast<std::size_t>(s)][static_cast<std::size_t>(l)](h);
      if (l > 0) h = nn::instance_norm(h);
      h = nn::leaky_relu(h, 0.2f);
      feats.push_back(h);
    }
    out.scores.push_back(heads_[static_cast<std::size_t>(s)](h));
    out.features.push_back(std::move(feats));
  }
  return out;
}

std::vector<nn::NamedParameter> Discriminator::named_parameters() const {
  std::vector<nn::NamedParameter> out;
  for (std::size_t s = 0; s < layers_.size(); ++s) {
    for (std::size_t l = 0; l < layers_[s].size(); ++l) {
      nn::append_parameters(out, "scale" + std::to_string(s) + ".conv" + std::to_string(l), layers_[s][l]);
    }
    nn::append_parameters(out, "scale" + std::to_string(s) + ".head", heads_[s]);
  }
  return out;
}

std::vector<nn::Var> Discriminator::parameters() const {
  std::vector<nn::Var> out;
  for (auto& p : named_parameters()) out.push_back(p.var);
  return out;
}

Discriminator build_discriminator(const DiscriminatorSpec& spec, int in_channels, std::uint64_t seed) {
  return Discriminator(spec, in_channels, seed);
}

nn::Tensor to_tensor(const SoftLabelmap& soft) {
  nn::Tensor t({1, soft.channels(), soft.height(), soft.width()});
  std::copy(soft.data().begin(), soft.data().end(), t.span().begin());
  return t;
}

SoftLabelmap to_soft(const nn::Tensor& t, int sample, std::vector<int> semantics) {
  const nn::Shape s = t.shape();
  if (static_cast<int>(semantics.size()) != s.c) throw InvalidInput("channel semantics do not match tensor");
  SoftLabelmap out(s.w, s.h, std::move(semantics));
  const float* src = t.ptr() + static_cast<std::size_t>(sample) * s.sample();
  std::copy(src, src + s.sample(), out.data().begin());
  return out;
}

nn::Tensor stack(const std::vector<nn::Tensor>& samples) {
  if (samples.empty()) throw InvalidInput("stack: no samples");
  const nn::Shape first = samples.front().shape();
  nn::Tensor out({static_cast<int>(samples.size()), first.c, first.h, first.w});
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const nn::Shape s = samples[i].shape();
    if (s.c != first.c || s.h != first.h || s.w != first.w || s.n != 1) {
      throw InvalidInput("stack: sample " + std::to_string(i) + " has shape " + s.str());
    }
    std::copy(samples[i].span().begin(), samples[i].span().end(), out.ptr() + i * first.sample());
  }
  return out;
}

TwoStageResult two_stage_forward(const SparseLabelmap& sparse, const StageFunction& stage1,
                                 const StageFunction& stage2, const ClassTaxonomy& taxonomy) {
  TwoStageResult r;
  const SoftLabelmap input = encode_one_hot(sparse, taxonomy, ChannelSet::things_plus_none);
  r.stuffs = to_soft(stage1(to_tensor(input)), 0, channel_semantics(taxonomy, ChannelSet::stuffs));
  r.combined_input = overlay(r.stuffs, sparse, taxonomy);
  r.things = to_soft(stage2(to_tensor(r.combined_input)), 0,
                     channel_semantics(taxonomy, ChannelSet::things_plus_none));
  r.final_map = overlay(compose_generated(r.stuffs, r.things, taxonomy), sparse, taxonomy);
  return r;
}

TwoStageResult two_stage_forward(const SparseLabelmap& sparse, const Generator& g1, const Generator& g2,
                                 const ClassTaxonomy& taxonomy, std::uint64_t noise_seed) {
  if (g1.role() != GeneratorRole::stage1 || g2.role() != GeneratorRole::stage2) {
    throw ConfigError("two_stage_forward needs a stage1 and a stage2 generator");
  }
  return two_stage_forward(
      sparse, [&](const nn::Tensor& x) { return g1.infer(x, derive_seed(noise_seed, 1)); },
      [&](const nn::Tensor& x) { return g2.infer(x, derive_seed(noise_seed, 2)); }, taxonomy);
}

}  // namespace densify
