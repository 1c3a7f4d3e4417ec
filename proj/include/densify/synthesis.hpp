#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <string>

#include "densify/labelmap.hpp"
#include "densify/models.hpp"

namespace densify {

enum class RenderBackend { palette, learned, external };

RenderBackend parse_backend(std::string_view name);

/// Class colors with boundary pixels scaled to 60% brightness.
RgbImage render_palette(const DenseLabelmap& dense, const BoundaryMap& boundary, const ClassTaxonomy& taxonomy);
RgbImage render_palette(const SoftLabelmap& soft, const BoundaryMap& boundary, const ClassTaxonomy& taxonomy);

/// [1, C+1, H, W]: one-hot labelmap in taxonomy order followed by the boundary plane.
nn::Tensor renderer_input(const DenseLabelmap& dense, const BoundaryMap& boundary, const ClassTaxonomy& taxonomy);
/// [1, 3, H, W] in [0, 1].
nn::Tensor image_tensor(const RgbImage& image);
/// Sample `sample` of a [N, 3, H, W] tensor, values clamped and rounded to 8 bits.
RgbImage tensor_image(const nn::Tensor& t, int sample = 0);

class Renderer {
 public:
  virtual ~Renderer() = default;
  virtual RgbImage render(const DenseLabelmap& dense, const BoundaryMap& boundary) const = 0;
  virtual RenderBackend backend() const = 0;
};

class PaletteRenderer final : public Renderer {
 public:
  explicit PaletteRenderer(ClassTaxonomy taxonomy) : taxonomy_(std::move(taxonomy)) {}
  RgbImage render(const DenseLabelmap& dense, const BoundaryMap& boundary) const override;
  RenderBackend backend() const override { return RenderBackend::palette; }

 private:
  ClassTaxonomy taxonomy_;
};

/// Runs a trained renderer-role generator.
class LearnedRenderer final : public Renderer {
 public:
  LearnedRenderer(Generator generator, ClassTaxonomy taxonomy);
  RgbImage render(const DenseLabelmap& dense, const BoundaryMap& boundary) const override;
  RenderBackend backend() const override { return RenderBackend::learned; }

 private:
  Generator generator_;
  ClassTaxonomy taxonomy_;
};

/// Invokes `command --label in.png --boundary bd.png --out out.png` in a
/// scratch directory. Calls are serialized.
class ExternalRenderer final : public Renderer {
 public:
  ExternalRenderer(std::string command, std::filesystem::path scratch_dir);
  RgbImage render(const DenseLabelmap& dense, const BoundaryMap& boundary) const override;
  RenderBackend backend() const override { return RenderBackend::external; }

 private:
  std::string command_;
  std::filesystem::path scratch_;
  mutable std::mutex mutex_;
};

RgbImage render(const DenseLabelmap& dense, const BoundaryMap& boundary, const Renderer& renderer);

}  // namespace densify
