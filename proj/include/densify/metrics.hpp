#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "densify/labelmap.hpp"

namespace densify {

// ---------------------------------------------------------------------------
// Frechet distance between feature Gaussians.

struct FeatureStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;  // unbiased
  std::size_t n = 0;

  int dim() const { return static_cast<int>(mean.size()); }
  nlohmann::json to_json() const;
};

/// Streaming mean/covariance. Accumulators over disjoint sample sets merge
/// into the accumulator of their union.
class FeatureAccumulator {
 public:
  explicit FeatureAccumulator(int dim);

  void add(std::span<const double> x);
  void merge(const FeatureAccumulator& other);
  std::size_t count() const { return n_; }
  int dim() const { return static_cast<int>(mean_.size()); }

  /// Needs at least 2 samples.
  FeatureStats stats() const;

 private:
  std::size_t n_ = 0;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd m2_;  // sum of outer products of deviations
};

/// ||m_r - m_g||^2 + Tr(C_r + C_g - 2 (C_r C_g)^(1/2)), with the trace of the
/// root taken from sqrt(C_r) C_g sqrt(C_r).
double fid(const FeatureStats& real, const FeatureStats& generated);

class ImageFeatureExtractor {
 public:
  virtual ~ImageFeatureExtractor() = default;
  virtual std::vector<double> features(const RgbImage& image) const = 0;
  virtual int dim() const = 0;
};

/// Fixed random convolution stack; per-channel spatial means of every layer.
class ConvEmbedder final : public ImageFeatureExtractor {
 public:
  explicit ConvEmbedder(std::uint64_t seed = 0xf1d);
  ~ConvEmbedder() override;
  std::vector<double> features(const RgbImage& image) const override;
  int dim() const override;

 private:
  struct Net;
  std::unique_ptr<Net> net_;
};

/// Runs `command --image in.png` and parses whitespace-separated numbers from
/// its standard output. Calls are serialized.
class CommandExtractor final : public ImageFeatureExtractor {
 public:
  CommandExtractor(std::string command, int dim, std::string scratch_dir);
  std::vector<double> features(const RgbImage& image) const override;
  int dim() const override { return dim_; }

 private:
  std::string command_;
  int dim_;
  std::string scratch_;
};

/// {"type": "conv", "seed": N} or {"type": "command", "command": "...", "dim": N}.
std::unique_ptr<ImageFeatureExtractor> make_extractor(const nlohmann::json& config);

FeatureStats extract_feature_stats(const std::vector<RgbImage>& images, const ImageFeatureExtractor& extractor);

// ---------------------------------------------------------------------------
// Object co-occurrence.

/// N(c1): examples whose input holds c1. N(c1, c2): those whose output holds
/// c2 while the input does not. Presence means at least one pixel.
class CooccurrenceTable {
 public:
  explicit CooccurrenceTable(const ClassTaxonomy& taxonomy);

  void add(const SparseLabelmap& input, const DenseLabelmap& output);
  void merge(const CooccurrenceTable& other);

  std::size_t examples() const { return examples_; }
  std::size_t count(ClassId c1) const;
  std::size_t count(ClassId c1, ClassId c2) const;
  /// Throws UndefinedMetric when count(c1) == 0.
  double probability(ClassId c1, ClassId c2, const std::string& corpus = "corpus") const;

  const std::vector<ClassId>& classes() const { return classes_; }
  nlohmann::json to_json(const ClassTaxonomy& taxonomy) const;

 private:
  std::size_t index(ClassId c) const;

  std::vector<ClassId> classes_;
  std::array<int, 256> slot_{};
  std::size_t examples_ = 0;
  std::vector<std::size_t> n1_;
  std::vector<std::size_t> n12_;  // row-major [c1][c2]
};

using LabelmapPair = std::pair<SparseLabelmap, DenseLabelmap>;

CooccurrenceTable cooccurrence_table(const std::vector<LabelmapPair>& pairs, const ClassTaxonomy& taxonomy);

/// 1 - |P_train(c2 | c1) - P_gen(c2 | c1)|
double cooccurrence_similarity(const CooccurrenceTable& train, const CooccurrenceTable& generated, ClassId c1,
                               ClassId c2);
double cooccurrence_similarity(const std::vector<LabelmapPair>& train, const std::vector<LabelmapPair>& generated,
                               ClassId c1, ClassId c2, const ClassTaxonomy& taxonomy);

/// Both argument orders for every requested pair.
nlohmann::json cooccurrence_report(const CooccurrenceTable& train, const CooccurrenceTable& generated,
                                   const std::vector<std::pair<ClassId, ClassId>>& pairs,
                                   const ClassTaxonomy& taxonomy);

// ---------------------------------------------------------------------------
// Segmentation scores.

/// Rows: ground-truth class; columns: predicted class plus one column for
/// predictions outside the taxonomy. Unlabeled ground truth is skipped.
class ConfusionAccumulator {
 public:
  explicit ConfusionAccumulator(const ClassTaxonomy& taxonomy);

  void add(const Grid<ClassId>& predicted, const Grid<ClassId>& ground_truth);
  void merge(const ConfusionAccumulator& other);
  /// Adds `n` pixels directly.
  void add_count(ClassId gt, ClassId predicted, std::uint64_t n);

  std::uint64_t count(ClassId gt, ClassId predicted) const;
  std::uint64_t total() const { return total_; }
  std::size_t num_classes() const { return classes_.size(); }
  const std::vector<ClassId>& classes() const { return classes_; }
  std::uint64_t cell(std::size_t gt_index, std::size_t pred_index) const {
    return matrix_[gt_index * (classes_.size() + 1) + pred_index];
  }

 private:
  std::vector<ClassId> classes_;
  std::array<int, 256> slot_{};
  std::vector<std::uint64_t> matrix_;
  std::uint64_t total_ = 0;
};

struct SegmentationScores {
  double miou = 0.0;
  double mean_accuracy = 0.0;
  double pixel_accuracy = 0.0;
  std::vector<std::optional<double>> per_class_iou;  // empty when the class is absent everywhere

  nlohmann::json to_json(const std::vector<ClassId>& classes, const ClassTaxonomy& taxonomy) const;
};

/// Throws UndefinedMetric on an empty accumulator.
SegmentationScores segmentation_scores(const ConfusionAccumulator& acc);

}  // namespace densify
