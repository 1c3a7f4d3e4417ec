#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "densify/labelmap.hpp"
#include "densify/models.hpp"

namespace densify {

struct NamedTensor {
  std::string name;
  nn::Tensor tensor;
};

struct OptimizerState {
  long steps = 0;
  std::vector<nn::Tensor> m;
  std::vector<nn::Tensor> v;
};

/// A single-file archive: magic, a JSON header, then raw float32 payloads.
struct Checkpoint {
  GeneratorRole role = GeneratorRole::stage1;
  GeneratorSpec generator_spec;
  DiscriminatorSpec discriminator_spec;
  int discriminator_in_channels = 0;
  nlohmann::json taxonomy;
  std::uint64_t fingerprint = 0;
  int epoch = 0;
  nlohmann::json config;
  std::vector<NamedTensor> generator;
  std::vector<NamedTensor> discriminator;
  OptimizerState generator_opt;
  OptimizerState discriminator_opt;
};

/// Atomic write: temp file in the same directory, then rename.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Throws FingerprintMismatch unless the checkpoint was written for `taxonomy`.
void require_fingerprint(const Checkpoint& ckpt, const ClassTaxonomy& taxonomy, const std::string& what);

std::vector<NamedTensor> snapshot(const std::vector<nn::NamedParameter>& params);
/// Copies tensors into parameters by name; every parameter must be present with its shape.
void restore(const std::vector<nn::NamedParameter>& params, const std::vector<NamedTensor>& tensors);

/// Rebuilds the generator stored in `path` and checks its taxonomy.
Generator load_generator(const std::filesystem::path& path, const ClassTaxonomy& taxonomy,
                         GeneratorRole expected_role);

}  // namespace densify
