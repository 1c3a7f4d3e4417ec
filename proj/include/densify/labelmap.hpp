#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "densify/error.hpp"

namespace densify {

using ClassId = std::uint8_t;
using Rgb = std::array<std::uint8_t, 3>;

enum class ClassKind { stuff, thing };

struct ClassInfo {
  ClassId id = 0;
  std::string name;
  ClassKind kind = ClassKind::stuff;
  Rgb color{0, 0, 0};
};

/// Class universe split into stuffs and things. Immutable after construction;
/// the constructor rejects duplicate ids, a colliding sentinel, or an empty
/// stuff/thing partition with ConfigError.
class ClassTaxonomy {
 public:
  ClassTaxonomy(std::vector<ClassInfo> classes, ClassId unlabeled_id = 255);

  static ClassTaxonomy from_json(const nlohmann::json& j);
  static ClassTaxonomy load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  const std::vector<ClassInfo>& classes() const { return classes_; }
  ClassId unlabeled_id() const { return unlabeled_id_; }

  std::size_t num_classes() const { return classes_.size(); }
  std::size_t num_stuff() const { return stuff_ids_.size(); }
  std::size_t num_things() const { return thing_ids_.size(); }

  // In taxonomy order.
  const std::vector<ClassId>& stuff_ids() const { return stuff_ids_; }
  const std::vector<ClassId>& thing_ids() const { return thing_ids_; }

  bool contains(int id) const { return lookup(id) >= 0; }
  bool is_thing(int id) const;
  bool is_stuff(int id) const;
  const ClassInfo& info(ClassId id) const;
  std::optional<ClassId> find(std::string_view name) const;

  // Position of the class in classes(), or -1.
  int index_of(int id) const { return lookup(id); }

  /// Stable 64-bit hash of the canonical JSON form.
  std::uint64_t fingerprint() const;

  friend bool operator==(const ClassTaxonomy& a, const ClassTaxonomy& b) {
    return a.fingerprint() == b.fingerprint();
  }

 private:
  int lookup(int id) const {
    return id >= 0 && id < 256 ? index_[static_cast<std::size_t>(id)] : -1;
  }

  std::vector<ClassInfo> classes_;
  ClassId unlabeled_id_;
  std::vector<ClassId> stuff_ids_;
  std::vector<ClassId> thing_ids_;
  std::array<int, 256> index_{};
};

template <class T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;
  Grid(int width, int height, T fill = T{}) : width_(width), height_(height) {
    if (width <= 0 || height <= 0) throw InvalidInput("grid dimensions must be positive");
    data_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& at(int x, int y) { return data_[index(x, y)]; }
  const T& at(int x, int y) const { return data_[index(x, y)]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  template <class U>
  bool same_shape(const Grid<U>& other) const {
    return width_ == other.width() && height_ == other.height();
  }

  friend bool operator==(const Grid& a, const Grid& b) {
    return a.width_ == b.width_ && a.height_ == b.height_ && a.data_ == b.data_;
  }

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

/// Complete per-pixel class assignment.
class DenseLabelmap : public Grid<ClassId> {
 public:
  using Grid::Grid;
};

/// Partial labelmap: thing pixels of a few instances, unlabeled_id elsewhere.
class SparseLabelmap : public Grid<ClassId> {
 public:
  using Grid::Grid;
  static SparseLabelmap unlabeled(int width, int height, const ClassTaxonomy& taxonomy) {
    return SparseLabelmap(width, height, taxonomy.unlabeled_id());
  }
};

/// instance_id = class_id * 1000 + index for things, class_id for stuffs.
class InstanceMap : public Grid<std::uint32_t> {
 public:
  using Grid::Grid;
};

inline constexpr std::uint32_t kInstanceDivisor = 1000;

inline std::uint32_t thing_instance_id(ClassId cls, std::uint32_t index) {
  return static_cast<std::uint32_t>(cls) * kInstanceDivisor + index;
}

class BoundaryMap : public Grid<std::uint8_t> {
 public:
  using Grid::Grid;
};

class RgbImage {
 public:
  RgbImage() = default;
  RgbImage(int width, int height, Rgb fill = {0, 0, 0});

  int width() const { return width_; }
  int height() const { return height_; }
  Rgb at(int x, int y) const;
  void set(int x, int y, Rgb value);
  std::span<std::uint8_t> bytes() { return data_; }
  std::span<const std::uint8_t> bytes() const { return data_; }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Channel label for the "none" plane of a things-plus-none volume.
inline constexpr int kNoneChannel = -1;

/// Per-class probability volume, channel-major (C x H x W).
class SoftLabelmap {
 public:
  SoftLabelmap() = default;
  SoftLabelmap(int width, int height, std::vector<int> channel_semantics, float fill = 0.0f);

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return static_cast<int>(semantics_.size()); }
  const std::vector<int>& channel_semantics() const { return semantics_; }

  // Channel holding the class (or kNoneChannel), -1 when absent.
  int channel_of(int class_or_none) const;

  float& at(int c, int x, int y) { return data_[offset(c, x, y)]; }
  float at(int c, int x, int y) const { return data_[offset(c, x, y)]; }

  std::span<float> plane(int c) {
    return std::span<float>(data_).subspan(offset(c, 0, 0), pixels());
  }
  std::span<const float> plane(int c) const {
    return std::span<const float>(data_).subspan(offset(c, 0, 0), pixels());
  }
  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  std::size_t pixels() const {
    return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
  }

  friend bool operator==(const SoftLabelmap&, const SoftLabelmap&) = default;

 private:
  std::size_t offset(int c, int x, int y) const {
    return (static_cast<std::size_t>(c) * static_cast<std::size_t>(height_) +
            static_cast<std::size_t>(y)) *
               static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<int> semantics_;
  std::vector<float> data_;
};

enum class ChannelSet { things_plus_none, stuffs, all };

/// things_plus_none -> thing ids then kNoneChannel; stuffs -> stuff ids;
/// all -> every class in taxonomy order.
std::vector<int> channel_semantics(const ClassTaxonomy& taxonomy, ChannelSet set);

/// One-hot volume over the chosen channel set. A dense pixel whose class is not
/// in the channel set is an InvalidInput error naming the pixel.
SoftLabelmap encode_one_hot(const DenseLabelmap& map, const ClassTaxonomy& taxonomy,
                            ChannelSet set);

/// Unlabeled pixels activate the "none" channel for things_plus_none and give an
/// all-zero column for stuffs/all.
SoftLabelmap encode_one_hot(const SparseLabelmap& map, const ClassTaxonomy& taxonomy,
                            ChannelSet set);

/// Argmax per pixel with ties going to the lowest channel. A winning "none"
/// channel yields unlabeled_id.
DenseLabelmap decode_argmax(const SoftLabelmap& soft, const ClassTaxonomy& taxonomy);

/// Hard overwrite: labeled top pixels become one-hot in their class; elsewhere the
/// base channels are copied into the full C-channel layout (absent ones stay 0).
SoftLabelmap overlay(const SoftLabelmap& base, const SparseLabelmap& top,
                     const ClassTaxonomy& taxonomy);

/// Merges stage-1 stuffs with stage-2 things into C channels. A pixel is a
/// generated thing iff the argmax of `things` is a thing channel; those pixels take
/// the thing probabilities with stuff channels zeroed, all others keep `stuffs`.
SoftLabelmap compose_generated(const SoftLabelmap& stuffs, const SoftLabelmap& things,
                               const ClassTaxonomy& taxonomy);

/// Pixel is 1 iff an in-image 4-neighbour carries a different instance id.
BoundaryMap extract_boundaries(const InstanceMap& instances);

/// Stuff pixels become unlabeled; thing pixels keep their class.
SparseLabelmap things_of(const DenseLabelmap& dense, const ClassTaxonomy& taxonomy);

/// Replaces every thing pixel with the nearest stuff class (4-connected BFS,
/// ties by scan order). Maps without any stuff pixel fill with the first stuff
/// class.
DenseLabelmap stuff_fill(const DenseLabelmap& dense, const ClassTaxonomy& taxonomy);

struct Violation {
  std::string field;
  int x = -1;
  int y = -1;
  int channel = -1;
  std::string message;

  std::string to_string() const;
};

std::vector<Violation> validate(const DenseLabelmap& map, const ClassTaxonomy& taxonomy);
std::vector<Violation> validate(const SparseLabelmap& map, const ClassTaxonomy& taxonomy);
std::vector<Violation> validate(const SoftLabelmap& map, const ClassTaxonomy& taxonomy);
std::vector<Violation> validate(const InstanceMap& instances, const DenseLabelmap& dense,
                                const ClassTaxonomy& taxonomy);
std::vector<Violation> validate(const BoundaryMap& map);

}  // namespace densify
