#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "densify/checkpoint.hpp"
#include "densify/dataset.hpp"
#include "densify/losses.hpp"
#include "densify/models.hpp"

namespace densify {

struct TrainConfig {
  int epochs = 200;
  int decay_start = 100;  // lr is constant through this epoch, then falls linearly to 0
  double lr = 0.001;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int batch_size = 8;
  int width = 64;
  int height = 64;
  double fraction = 0.3;
  LossWeights weights;
  std::uint64_t seed = 1;
  int checkpoint_every = 0;  // 0 writes only the final checkpoint
  GeneratorSpec generator;   // channel counts are filled in from the role
  DiscriminatorSpec discriminator;
  std::uint64_t perceptual_seed = 0x5eed;

  void validate() const;
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

/// Learning rate for 1-based `epoch`: lr up to decay_start, then
/// lr * (epochs - epoch) / (epochs - decay_start).
double learning_rate(const TrainConfig& config, int epoch);

struct TrainingSample {
  nn::Tensor input;   // [1, Cin, H, W]
  nn::Tensor target;  // [1, Cout, H, W]
};

/// Generator input and target for one pair. The stage-2 input overlays the
/// sparse map on ground-truth stuffs (teacher forcing).
TrainingSample build_sample(GeneratorRole role, const ScenePair& pair, const ClassTaxonomy& taxonomy);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  LossReport generator;  // batch means
  double discriminator = 0.0;
  double seconds = 0.0;

  /// Log line content; wall time is left out so logs are reproducible.
  nlohmann::json to_json() const;
};

class Trainer {
 public:
  Trainer(GeneratorRole role, TrainConfig config, ClassTaxonomy taxonomy, std::vector<SceneExample> examples);
  ~Trainer();
  Trainer(Trainer&&) noexcept;
  Trainer& operator=(Trainer&&) noexcept;

  /// Restores weights, optimizer moments and the epoch counter. Refuses a
  /// checkpoint for another role, taxonomy or architecture.
  static Trainer resume(const std::filesystem::path& checkpoint, TrainConfig config, ClassTaxonomy taxonomy,
                        std::vector<SceneExample> examples);

  /// Trains the next epoch. `diagnostics_dir` receives a snapshot when a loss
  /// turns non-finite.
  EpochRecord run_epoch(const std::optional<std::filesystem::path>& diagnostics_dir = std::nullopt);

  int epochs_completed() const;
  GeneratorRole role() const;
  const TrainConfig& config() const;
  const Generator& generator() const;
  const Discriminator& discriminator() const;

  Checkpoint checkpoint() const;
  void save(const std::filesystem::path& path) const;

 private:
  struct State;
  explicit Trainer(std::unique_ptr<State> state);
  std::unique_ptr<State> state_;
};

struct TrainResult {
  std::filesystem::path checkpoint;
  std::filesystem::path log;
  std::vector<EpochRecord> records;
};

/// Trains `role` until config.epochs, appending one JSON line per epoch to
/// <out_dir>/<role>.log.jsonl and writing <out_dir>/<role>.ckpt. When
/// `resume_from` is set, training continues from that checkpoint.
TrainResult train_stage(GeneratorRole role, const std::vector<SceneExample>& examples,
                        const ClassTaxonomy& taxonomy, const TrainConfig& config,
                        const std::filesystem::path& out_dir,
                        const std::optional<std::filesystem::path>& resume_from = std::nullopt,
                        int until_epoch = -1);

}  // namespace densify
