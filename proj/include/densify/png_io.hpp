#pragma once

// PNG file formats:
//   dense/sparse labelmaps  8-bit gray, value = class id, 255 = unlabeled
//   instance maps           16-bit gray, class_id * 1000 + index for things
//   boundary maps           8-bit gray, 0 or 255
//   images                  8-bit RGB

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "densify/labelmap.hpp"

namespace densify {

struct RawImage {
  int width = 0;
  int height = 0;
  int channels = 1;   // 1 (gray) or 3 (RGB)
  int bit_depth = 8;  // 8 or 16
  std::vector<std::uint16_t> samples;  // row-major, interleaved
};

RawImage decode_png(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_png(const RawImage& image);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

RawImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RawImage& image);

// Class-id grids; no taxonomy check here (see validate()).
Grid<ClassId> labels_from_png(const RawImage& image);
RawImage labels_to_png(const Grid<ClassId>& labels);

DenseLabelmap load_dense_labelmap(const std::filesystem::path& path);
SparseLabelmap load_sparse_labelmap(const std::filesystem::path& path);
void save_labelmap(const std::filesystem::path& path, const Grid<ClassId>& labels);

InstanceMap instances_from_png(const RawImage& image);
RawImage instances_to_png(const InstanceMap& instances);
InstanceMap load_instance_map(const std::filesystem::path& path);
void save_instance_map(const std::filesystem::path& path, const InstanceMap& instances);

BoundaryMap boundary_from_png(const RawImage& image);
RawImage boundary_to_png(const BoundaryMap& boundary);

RgbImage rgb_from_png(const RawImage& image);
RawImage rgb_to_png(const RgbImage& image);
RgbImage load_rgb(const std::filesystem::path& path);
void save_rgb(const std::filesystem::path& path, const RgbImage& image);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

}  // namespace densify
