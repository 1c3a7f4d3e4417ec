#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "densify/labelmap.hpp"

namespace densify {

/// One source example as stored on disk.
struct SceneExample {
  std::string source_id;
  DenseLabelmap dense;
  InstanceMap instances;
  std::optional<RgbImage> image;
};

/// Training tuple: sparse input plus the dense target it came from.
struct ScenePair {
  SparseLabelmap sparse;
  DenseLabelmap dense;
  InstanceMap instances;
  std::optional<RgbImage> image;
  std::string source_id;
};

/// Distinct instance ids found on thing pixels, ascending.
std::vector<std::uint32_t> thing_instance_ids(const DenseLabelmap& dense, const InstanceMap& instances,
                                              const ClassTaxonomy& taxonomy);

/// max(1, round(fraction * n)) for n >= 1 (halves round up), 0 for n == 0.
std::size_t retained_count(std::size_t n, double fraction);

/// Keeps a uniformly drawn subset of whole thing instances; everything else
/// becomes unlabeled.
SparseLabelmap sample_sparse(const DenseLabelmap& dense, const InstanceMap& instances,
                             const ClassTaxonomy& taxonomy, double fraction, std::uint64_t seed);

std::uint64_t epoch_seed(std::uint64_t base_seed, int epoch, const std::string& source_id);

/// Yields each example once per epoch with a freshly sampled sparse map.
/// next() may be called from several threads; each pair goes to one caller.
class EpochIterator {
 public:
  EpochIterator(const std::vector<SceneExample>& examples, const ClassTaxonomy& taxonomy, double fraction,
                int epoch, std::uint64_t base_seed);

  std::optional<ScenePair> next();
  std::size_t size() const { return examples_.size(); }

 private:
  const std::vector<SceneExample>& examples_;
  const ClassTaxonomy& taxonomy_;
  double fraction_;
  int epoch_;
  std::uint64_t base_seed_;
  std::atomic<std::size_t> cursor_{0};
};

struct ManifestEntry {
  std::filesystem::path labelmap;
  std::filesystem::path instance_map;
  std::optional<std::filesystem::path> image;
  std::string source_id;
};

/// Relative paths resolve against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
/// Paths are written relative to the manifest's directory when possible.
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

struct LoadOptions {
  /// Stuff class that absorbs ids missing from the taxonomy.
  std::optional<ClassId> fallback_class;
};

SceneExample load_cityscapes_example(const std::filesystem::path& labelmap_path,
                                     const std::filesystem::path& instance_path,
                                     const std::optional<std::filesystem::path>& image_path,
                                     const ClassTaxonomy& taxonomy, const LoadOptions& options = {},
                                     std::string source_id = {});

std::vector<SceneExample> load_dataset(const std::filesystem::path& manifest, const ClassTaxonomy& taxonomy,
                                       const LoadOptions& options = {});

// ---------------------------------------------------------------------------
// Synthetic scenes with planted co-occurrence rules.

enum class Placement { below, above, left_of, right_of };

struct PlacementRule {
  ClassId trigger;
  ClassId companion;
  Placement placement = Placement::below;
};

struct ThingSize {
  ClassId cls;
  int width;
  int height;
};

struct StuffBand {
  ClassId cls;
  double end;  // lower edge as a fraction of the height
};

enum class StuffLayout { bands, uniform };

struct ToyWorldConfig {
  int width = 64;
  int height = 64;
  std::vector<PlacementRule> rules;
  StuffLayout stuff_layout = StuffLayout::bands;
  std::vector<StuffBand> bands;  // top to bottom; the last band reaches the bottom
  std::vector<ThingSize> sizes;
  std::vector<ClassId> spawn_classes;  // classes drawn for the sampled instances
  int min_instances = 2;
  int max_instances = 5;
  double placement_top = 0.5;  // things must lie below this height fraction
  int max_attempts = 200;

  void validate(const ClassTaxonomy& taxonomy) const;
  static ToyWorldConfig from_json(const nlohmann::json& j, const ClassTaxonomy& taxonomy);
  nlohmann::json to_json(const ClassTaxonomy& taxonomy) const;
};

struct ToyScene {
  DenseLabelmap dense;
  InstanceMap instances;
};

ToyScene generate_toy_world(const ToyWorldConfig& config, const ClassTaxonomy& taxonomy, std::uint64_t seed);

/// Street taxonomy used by the synthetic corpus (Cityscapes label ids).
ClassTaxonomy toy_taxonomy();
/// Street layout with the rule "every rider has a bicycle directly below".
ToyWorldConfig default_toy_config(const ClassTaxonomy& taxonomy);

/// Palette rendering with deterministic per-pixel noise.
RgbImage toy_image(const DenseLabelmap& dense, const InstanceMap& instances, const ClassTaxonomy& taxonomy,
                   std::uint64_t seed);

/// Writes taxonomy.json, toy_config.json, manifest.json and PNG files for
/// `count` scenes; returns the manifest path.
std::filesystem::path write_toy_corpus(const std::filesystem::path& dir, const ToyWorldConfig& config,
                                       const ClassTaxonomy& taxonomy, int count, std::uint64_t seed,
                                       const std::string& prefix = "toy");

struct CorpusStats {
  std::size_t examples = 0;
  double mean_thing_instances = 0.0;
  std::vector<std::pair<ClassId, std::size_t>> instances_per_class;

  nlohmann::json to_json(const ClassTaxonomy& taxonomy) const;
};

CorpusStats corpus_stats(const std::vector<SceneExample>& examples, const ClassTaxonomy& taxonomy);

}  // namespace densify
