#include "densify/synthesis.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <sstream>

#include "densify/png_io.hpp"

namespace densify {

RenderBackend parse_backend(std::string_view name) {
  if (name == "palette") return RenderBackend::palette;
  if (name == "learned") return RenderBackend::learned;
  if (name == "external") return RenderBackend::external;
  throw ConfigError("unknown render backend '" + std::string(name) + "'");
}

namespace {

void require_same_size(const Grid<ClassId>& dense, const BoundaryMap& boundary) {
  if (!dense.same_shape(boundary)) {
    throw InvalidInput("labelmap is " + std::to_string(dense.width()) + "x" + std::to_string(dense.height()) +
                       " but boundary map is " + std::to_string(boundary.width()) + "x" +
                       std::to_string(boundary.height()));
  }
}

std::uint8_t darken(std::uint8_t v) { return static_cast<std::uint8_t>((v * 6 + 5) / 10); }

}  // namespace

RgbImage render_palette(const DenseLabelmap& dense, const BoundaryMap& boundary, const ClassTaxonomy& taxonomy) {
  require_same_size(dense, boundary);
  RgbImage img(dense.width(), dense.height());
  for (int y = 0; y < dense.height(); ++y) {
    for (int x = 0; x < dense.width(); ++x) {
      const ClassId c = dense.at(x, y);
      if (!taxonomy.contains(c)) {
        throw InvalidInput("pixel (" + std::to_string(x) + "," + std::to_string(y) + ") has unknown class " +
                           std::to_string(c));
      }
      Rgb color = taxonomy.info(c).color;
      if (boundary.at(x, y)) {
        for (auto& ch : color) ch = darken(ch);
      }
      img.set(x, y, color);
    }
  }
  return img;
}

RgbImage render_palette(const SoftLabelmap& soft, const BoundaryMap& boundary, const ClassTaxonomy& taxonomy) {
  return render_palette(decode_argmax(soft, taxonomy), boundary, taxonomy);
}

nn::Tensor renderer_input(const DenseLabelmap& dense, const BoundaryMap& boundary, const ClassTaxonomy& taxonomy) {
  require_same_size(dense, boundary);
  const SoftLabelmap onehot = encode_one_hot(dense, taxonomy, ChannelSet::all);
  const int c = onehot.channels();
  nn::Tensor t({1, c + 1, dense.height(), dense.width()});
  std::copy(onehot.data().begin(), onehot.data().end(), t.ptr());
  float* b = t.ptr() + static_cast<std::size_t>(c) * onehot.pixels();
  const auto bd = boundary.data();
  for (std::size_t i = 0; i < bd.size(); ++i) b[i] = bd[i] ? 1.0f : 0.0f;
  return t;
}

nn::Tensor image_tensor(const RgbImage& image) {
  nn::Tensor t({1, 3, image.height(), image.width()});
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      const Rgb p = image.at(x, y);
      for (int c = 0; c < 3; ++c) t.at(0, c, y, x) = static_cast<float>(p[static_cast<std::size_t>(c)]) / 255.0f;
    }
  }
  return t;
}

RgbImage tensor_image(const nn::Tensor& t, int sample) {
  const nn::Shape s = t.shape();
  if (s.c != 3) throw InvalidInput("image tensor must have 3 channels, got " + std::to_string(s.c));
  RgbImage img(s.w, s.h);
  for (int y = 0; y < s.h; ++y) {
    for (int x = 0; x < s.w; ++x) {
      Rgb p{};
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(t.at(sample, c, y, x), 0.0f, 1.0f);
        p[static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
      img.set(x, y, p);
    }
  }
  return img;
}

RgbImage PaletteRenderer::render(const DenseLabelmap& dense, const BoundaryMap& boundary) const {
  return render_palette(dense, boundary, taxonomy_);
}

LearnedRenderer::LearnedRenderer(Generator generator, ClassTaxonomy taxonomy)
    : generator_(std::move(generator)), taxonomy_(std::move(taxonomy)) {
  if (generator_.role() != GeneratorRole::renderer) throw ConfigError("learned renderer needs a renderer generator");
}

RgbImage LearnedRenderer::render(const DenseLabelmap& dense, const BoundaryMap& boundary) const {
  return tensor_image(generator_.infer(renderer_input(dense, boundary, taxonomy_)));
}

ExternalRenderer::ExternalRenderer(std::string command, std::filesystem::path scratch_dir)
    : command_(std::move(command)), scratch_(std::move(scratch_dir)) {
  if (command_.empty()) throw ConfigError("external renderer command is empty");
}

namespace {

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char ch : s) {
    if (ch == '\'') {
      out += "'\\''";
    } else {
      out += ch;
    }
  }
  return out + "'";
}

}  // namespace

RgbImage ExternalRenderer::render(const DenseLabelmap& dense, const BoundaryMap& boundary) const {
  require_same_size(dense, boundary);
  std::lock_guard lock(mutex_);
  std::filesystem::create_directories(scratch_);
  const auto label = scratch_ / "in.png";
  const auto bd = scratch_ / "bd.png";
  const auto out = scratch_ / "out.png";
  std::error_code ec;
  std::filesystem::remove(out, ec);
  save_labelmap(label, dense);
  write_png(bd, boundary_to_png(boundary));
  std::ostringstream cmd;
  cmd << command_ << " --label " << shell_quote(label.string()) << " --boundary " << shell_quote(bd.string())
      << " --out " << shell_quote(out.string());
  const int rc = std::system(cmd.str().c_str());
  if (rc != 0) throw Error("external renderer exited with status " + std::to_string(rc) + ": " + command_);
  if (!std::filesystem::exists(out)) throw Error("external renderer produced no output: " + command_);
  RgbImage img = load_rgb(out);
  if (img.width() != dense.width() || img.height() != dense.height()) {
    throw Error("external renderer returned a " + std::to_string(img.width()) + "x" + std::to_string(img.height()) +
                " image for a " + std::to_string(dense.width()) + "x" + std::to_string(dense.height()) + " labelmap");
  }
  return img;
}

RgbImage render(const DenseLabelmap& dense, const BoundaryMap& boundary, const Renderer& renderer) {
  return renderer.render(dense, boundary);
}

}  // namespace densify
