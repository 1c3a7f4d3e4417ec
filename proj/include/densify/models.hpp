#pragma once

#include <cstdint>
#include <functional>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "densify/labelmap.hpp"
#include "densify/nn/layers.hpp"

namespace densify {

enum class GeneratorRole { stage1, stage2, single_stage, boundary, renderer };

std::string_view role_name(GeneratorRole role);
GeneratorRole parse_role(std::string_view name);

enum class OutputActivation { sigmoid };

struct GeneratorSpec {
  int in_channels = 0;
  int out_channels = 0;
  int depth = 5;
  int base_width = 64;
  // Decoder dropout on the `dropout_levels` innermost levels; the mask follows
  // the forward noise seed, so a fixed seed keeps outputs deterministic.
  double dropout = 0.0;
  int dropout_levels = 3;
  OutputActivation output_activation = OutputActivation::sigmoid;

  static GeneratorSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct DiscriminatorSpec {
  int num_scales = 2;
  int layers_per_scale = 3;
  int base_width = 64;

  static DiscriminatorSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct ChannelContract {
  int in_channels;
  int out_channels;
};

/// stage1: C_things+1 -> C_stuff; stage2: C -> C_things+1; single_stage: C -> C;
/// boundary: C -> 2; renderer: C+1 (labelmap + boundary) -> 3.
ChannelContract channel_contract(GeneratorRole role, const ClassTaxonomy& taxonomy);

/// Output channel semantics for labelmap roles (empty for boundary/renderer).
std::vector<int> output_semantics(GeneratorRole role, const ClassTaxonomy& taxonomy);

/// Encoder-decoder with skip connections and a sigmoid head.
class Generator {
 public:
  Generator(GeneratorSpec spec, GeneratorRole role, std::uint64_t seed);

  /// x is [N, in_channels, H, W] with H and W divisible by 2^depth.
  nn::Var forward(const nn::Var& x, std::uint64_t noise_seed = 0) const;

  /// forward() without tape recording.
  nn::Tensor infer(const nn::Tensor& x, std::uint64_t noise_seed = 0) const;

  const GeneratorSpec& spec() const { return spec_; }
  GeneratorRole role() const { return role_; }
  std::vector<nn::NamedParameter> named_parameters() const;
  std::vector<nn::Var> parameters() const;

 private:
  GeneratorSpec spec_;
  GeneratorRole role_;
  nn::Conv2d stem_;
  std::vector<nn::Conv2d> down_;
  std::vector<nn::Conv2d> up_;  // up_[i] feeds decoder level i+1
  nn::Conv2d head_;
};

/// Validates the channel contract for the role; throws ConfigError on mismatch.
Generator build_generator(const GeneratorSpec& spec, GeneratorRole role,
                          const ClassTaxonomy& taxonomy, std::uint64_t seed);

struct DiscriminatorOutput {
  std::vector<nn::Var> scores;                 // one score map per scale
  std::vector<std::vector<nn::Var>> features;  // [scale][layer]
};

/// Multi-scale patch discriminator; scale s sees the input average-pooled s times.
class Discriminator {
 public:
  Discriminator(DiscriminatorSpec spec, int in_channels, std::uint64_t seed);

  DiscriminatorOutput forward(const nn::Var& x) const;

  const DiscriminatorSpec& spec() const { return spec_; }
  int in_channels() const { return in_channels_; }
  std::vector<nn::NamedParameter> named_parameters() const;
  std::vector<nn::Var> parameters() const;

 private:
  DiscriminatorSpec spec_;
  int in_channels_;
  std::vector<std::vector<nn::Conv2d>> layers_;  // [scale][layer]
  std::vector<nn::Conv2d> heads_;
};

/// in_channels = condition channels + generated channels.
Discriminator build_discriminator(const DiscriminatorSpec& spec, int in_channels, std::uint64_t seed);

// Conversions between labelmap volumes and single-sample tensors.
nn::Tensor to_tensor(const SoftLabelmap& soft);
SoftLabelmap to_soft(const nn::Tensor& t, int sample, std::vector<int> semantics);
/// Packs samples along the batch axis; all must share C, H, W.
nn::Tensor stack(const std::vector<nn::Tensor>& samples);

struct TwoStageResult {
  SoftLabelmap stuffs;          // stage-1 output, stuff channels
  SoftLabelmap combined_input;  // overlay(stuffs, sparse), C channels
  SoftLabelmap things;          // stage-2 output, things + none
  SoftLabelmap final_map;       // C channels
};

/// Maps a single-sample input tensor to a single-sample output tensor.
using StageFunction = std::function<nn::Tensor(const nn::Tensor&)>;

TwoStageResult two_stage_forward(const SparseLabelmap& sparse, const StageFunction& stage1,
                                 const StageFunction& stage2, const ClassTaxonomy& taxonomy);

TwoStageResult two_stage_forward(const SparseLabelmap& sparse, const Generator& g1,
                                 const Generator& g2, const ClassTaxonomy& taxonomy,
                                 std::uint64_t noise_seed = 0);

}  // namespace densify
