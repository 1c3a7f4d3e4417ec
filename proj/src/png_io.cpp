#include "densify/png_io.hpp"

#include <png.h>

#include <array>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <iterator>

namespace densify {
namespace {

struct ReadCursor {
  std::span<const std::uint8_t> bytes;
  std::size_t offset = 0;
};

void read_callback(png_structp png, png_bytep out, png_size_t length) {
  auto* cursor = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cursor->offset + length > cursor->bytes.size()) png_error(png, "truncated PNG stream");
  std::memcpy(out, cursor->bytes.data() + cursor->offset, length);
  cursor->offset += length;
}

void write_callback(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

void flush_callback(png_structp) {}

[[noreturn]] void error_callback(png_structp png, png_const_charp message) {
  auto* buffer = static_cast<std::string*>(png_get_error_ptr(png));
  if (buffer) *buffer = message;
  png_longjmp(png, 1);
}

void warning_callback(png_structp, png_const_charp) {}

}  // namespace

RawImage decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    throw IoError("not a PNG stream");
  }
  std::string error;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error, error_callback,
                                           warning_callback);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  ReadCursor cursor{bytes, 0};
  RawImage image;
  std::vector<png_bytep> rows;
  std::vector<std::uint8_t> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("PNG decode failed: " + error);
  }
  png_set_read_fn(png, &cursor, read_callback);
  png_read_info(png, info);

  const png_uint_32 width = png_get_image_width(png, info);
  const png_uint_32 height = png_get_image_height(png, info);
  const int color_type = png_get_color_type(png, info);
  int bit_depth = png_get_bit_depth(png, info);

  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
  }
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  bit_depth = png_get_bit_depth(png, info);
  const int channels = png_get_channels(png, info);
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("unsupported PNG channel count " + std::to_string(channels));
  }
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * height);
  rows.resize(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = buffer.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  image.width = static_cast<int>(width);
  image.height = static_cast<int>(height);
  image.channels = channels;
  image.bit_depth = bit_depth;
  const std::size_t count = static_cast<std::size_t>(width) * height * channels;
  image.samples.resize(count);
  if (bit_depth == 16) {
    // PNG stores 16-bit samples big-endian.
    for (std::size_t i = 0; i < count; ++i) {
      image.samples[i] = static_cast<std::uint16_t>((buffer[2 * i] << 8) | buffer[2 * i + 1]);
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) image.samples[i] = buffer[i];
  }
  return image;
}

std::vector<std::uint8_t> encode_png(const RawImage& image) {
  if (image.width <= 0 || image.height <= 0) throw InvalidInput("cannot encode empty image");
  if (image.channels != 1 && image.channels != 3) throw InvalidInput("PNG channels must be 1 or 3");
  if (image.bit_depth != 8 && image.bit_depth != 16) throw InvalidInput("PNG depth must be 8 or 16");
  const std::size_t count =
      static_cast<std::size_t>(image.width) * image.height * image.channels;
  if (image.samples.size() != count) throw InvalidInput("sample count does not match dimensions");

  const std::size_t bytes_per_sample = image.bit_depth == 16 ? 2 : 1;
  const std::size_t rowbytes = static_cast<std::size_t>(image.width) * image.channels * bytes_per_sample;
  std::vector<std::uint8_t> buffer(rowbytes * image.height);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint16_t s = image.samples[i];
    if (bytes_per_sample == 2) {
      buffer[2 * i] = static_cast<std::uint8_t>(s >> 8);
      buffer[2 * i + 1] = static_cast<std::uint8_t>(s & 0xff);
    } else {
      if (s > 255) throw InvalidInput("8-bit PNG sample out of range");
      buffer[i] = static_cast<std::uint8_t>(s);
    }
  }

  std::vector<std::uint8_t> out;
  std::string error;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error, error_callback,
                                            warning_callback);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  std::vector<png_bytep> rows(image.height);
  for (int y = 0; y < image.height; ++y) rows[y] = buffer.data() + y * rowbytes;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG encode failed: " + error);
  }
  png_set_write_fn(png, &out, write_callback, flush_callback);
  png_set_IHDR(png, info, image.width, image.height, image.bit_depth,
               image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

RawImage read_png(const std::filesystem::path& path) {
  try {
    return decode_png(read_file_bytes(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void write_png(const std::filesystem::path& path, const RawImage& image) {
  write_file_bytes(path, encode_png(image));
}

Grid<ClassId> labels_from_png(const RawImage& image) {
  if (image.channels != 1 || image.bit_depth != 8) {
    throw IoError("labelmap PNG must be 8-bit single channel");
  }
  Grid<ClassId> out(image.width, image.height);
  auto d = out.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<ClassId>(image.samples[i]);
  return out;
}

RawImage labels_to_png(const Grid<ClassId>& labels) {
  RawImage img{labels.width(), labels.height(), 1, 8, {}};
  img.samples.assign(labels.data().begin(), labels.data().end());
  return img;
}

DenseLabelmap load_dense_labelmap(const std::filesystem::path& path) {
  Grid<ClassId> g = labels_from_png(read_png(path));
  DenseLabelmap out(g.width(), g.height());
  std::copy(g.data().begin(), g.data().end(), out.data().begin());
  return out;
}

SparseLabelmap load_sparse_labelmap(const std::filesystem::path& path) {
  Grid<ClassId> g = labels_from_png(read_png(path));
  SparseLabelmap out(g.width(), g.height());
  std::copy(g.data().begin(), g.data().end(), out.data().begin());
  return out;
}

void save_labelmap(const std::filesystem::path& path, const Grid<ClassId>& labels) {
  write_png(path, labels_to_png(labels));
}

InstanceMap instances_from_png(const RawImage& image) {
  if (image.channels != 1) throw IoError("instance PNG must be single channel");
  InstanceMap out(image.width, image.height);
  auto d = out.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = image.samples[i];
  return out;
}

RawImage instances_to_png(const InstanceMap& instances) {
  RawImage img{instances.width(), instances.height(), 1, 16, {}};
  img.samples.resize(instances.size());
  auto d = instances.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i] > 0xffff) throw InvalidInput("instance id " + std::to_string(d[i]) + " exceeds 16 bits");
    img.samples[i] = static_cast<std::uint16_t>(d[i]);
  }
  return img;
}

InstanceMap load_instance_map(const std::filesystem::path& path) {
  return instances_from_png(read_png(path));
}

void save_instance_map(const std::filesystem::path& path, const InstanceMap& instances) {
  write_png(path, instances_to_png(instances));
}

BoundaryMap boundary_from_png(const RawImage& image) {
  if (image.channels != 1 || image.bit_depth != 8) {
    throw IoError("boundary PNG must be 8-bit single channel");
  }
  BoundaryMap out(image.width, image.height);
  auto d = out.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = image.samples[i] > 127 ? 1 : 0;
  return out;
}

RawImage boundary_to_png(const BoundaryMap& boundary) {
  RawImage img{boundary.width(), boundary.height(), 1, 8, {}};
  img.samples.resize(boundary.size());
  auto d = boundary.data();
  for (std::size_t i = 0; i < d.size(); ++i) img.samples[i] = d[i] ? 255 : 0;
  return img;
}

RgbImage rgb_from_png(const RawImage& image) {
  if (image.bit_depth != 8) throw IoError("image PNG must be 8-bit");
  RgbImage out(image.width, image.height);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const std::size_t o = (static_cast<std::size_t>(y) * image.width + x) * image.channels;
      if (image.channels == 3) {
        out.set(x, y, {static_cast<std::uint8_t>(image.samples[o]),
                       static_cast<std::uint8_t>(image.samples[o + 1]),
                       static_cast<std::uint8_t>(image.samples[o + 2])});
      } else {
        const auto v = static_cast<std::uint8_t>(image.samples[o]);
        out.set(x, y, {v, v, v});
      }
    }
  }
  return out;
}

RawImage rgb_to_png(const RgbImage& image) {
  RawImage img{image.width(), image.height(), 3, 8, {}};
  img.samples.assign(image.bytes().begin(), image.bytes().end());
  return img;
}

RgbImage load_rgb(const std::filesystem::path& path) { return rgb_from_png(read_png(path)); }

void save_rgb(const std::filesystem::path& path, const RgbImage& image) {
  write_png(path, rgb_to_png(image));
}

namespace {
constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 3 <= bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out.push_back(kAlphabet[(v >> 18) & 63]);
    out.push_back(kAlphabet[(v >> 12) & 63]);
    out.push_back(kAlphabet[(v >> 6) & 63]);
    out.push_back(kAlphabet[v & 63]);
  }
  const std::size_t rest = bytes.size() - i;
  if (rest == 1) {
    const std::uint32_t v = bytes[i] << 16;
    out.push_back(kAlphabet[(v >> 18) & 63]);
    out.push_back(kAlphabet[(v >> 12) & 63]);
    out += "==";
  } else if (rest == 2) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8);
    out.push_back(kAlphabet[(v >> 18) & 63]);
    out.push_back(kAlphabet[(v >> 12) & 63]);
    out.push_back(kAlphabet[(v >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  std::array<int, 256> lut;
  lut.fill(-1);
  for (int i = 0; i < 64; ++i) lut[static_cast<unsigned char>(kAlphabet[i])] = i;
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  std::uint32_t acc = 0;
  int bits = 0;
  std::size_t padding = 0;
  for (char ch : text) {
    if (ch == '=') {
      ++padding;
      continue;
    }
    if (ch == '\n' || ch == '\r' || ch == ' ') continue;
    if (padding > 0) throw InvalidInput("base64 data after padding");
    const int v = lut[static_cast<unsigned char>(ch)];
    if (v < 0) throw InvalidInput("invalid base64 character");
    acc = (acc << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xff));
    }
  }
  if (padding > 2) throw InvalidInput("invalid base64 padding");
  return out;
}

}  // namespace densify
