#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "vipflow/imaging.hpp"

namespace vipflow {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

struct Raster {
  int height = 0;
  int width = 0;
  int channels = 0;  // 1 or 3
  int depth = 8;     // 8 or 16
  std::vector<std::uint16_t> samples;  // interleaved
};

[[noreturn]] void png_fail(const std::filesystem::path& path, const char* what) {
  throw IoError("png " + std::string(what) + ": " + path.string());
}

Raster read_png(const std::filesystem::path& path) {
  FilePtr file = open_file(path, "rb");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    png_fail(path, "bad signature");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) png_fail(path, "init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    png_fail(path, "init failed");
  }
  Raster r;
  std::vector<png_bytep> rows;
  std::vector<unsigned char> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    png_fail(path, "decode error");
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (depth == 16) png_set_swap(png);  // host little-endian 16-bit samples
  png_read_update_info(png, info);

  r.width = static_cast<int>(png_get_image_width(png, info));
  r.height = static_cast<int>(png_get_image_height(png, info));
  r.channels = png_get_channels(png, info);
  r.depth = png_get_bit_depth(png, info);
  if (r.channels != 1 && r.channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    png_fail(path, "unsupported channel layout");
  }
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * r.height);
  rows.resize(r.height);
  for (int y = 0; y < r.height; ++y) rows[y] = buffer.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const std::size_t n = static_cast<std::size_t>(r.height) * r.width * r.channels;
  r.samples.resize(n);
  if (r.depth == 16) {
    for (std::size_t i = 0; i < n; ++i) {
      r.samples[i] = static_cast<std::uint16_t>(buffer[2 * i] | (buffer[2 * i + 1] << 8));
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) r.samples[i] = buffer[i];
  }
  return r;
}

void write_png(const Raster& r, const std::filesystem::path& path) {
  FilePtr file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) png_fail(path, "init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    png_fail(path, "init failed");
  }
  const int bytes = r.depth / 8;
  const std::size_t rowbytes = static_cast<std::size_t>(r.width) * r.channels * bytes;
  std::vector<unsigned char> buffer(rowbytes * r.height);
  for (std::size_t i = 0; i < r.samples.size(); ++i) {
    if (bytes == 2) {
      buffer[2 * i] = static_cast<unsigned char>(r.samples[i] >> 8);  // PNG is big-endian
      buffer[2 * i + 1] = static_cast<unsigned char>(r.samples[i] & 0xff);
    } else {
      buffer[i] = static_cast<unsigned char>(r.samples[i]);
    }
  }
  std::vector<png_bytep> rows(r.height);
  for (int y = 0; y < r.height; ++y) rows[y] = buffer.data() + y * rowbytes;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    png_fail(path, "encode error");
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, r.width, r.height, r.depth,
               r.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::uint16_t to_byte(double v) {
  return static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

Frame read_frame_png(const std::filesystem::path& path) {
  const Raster r = read_png(path);
  const double scale = r.depth == 16 ? 65535.0 : 255.0;
  Frame f(r.height, r.width, r.channels);
  for (int y = 0; y < r.height; ++y) {
    for (int x = 0; x < r.width; ++x) {
      for (int c = 0; c < r.channels; ++c) {
        f.at(c, y, x) = r.samples[(static_cast<std::size_t>(y) * r.width + x) * r.channels + c] / scale;
      }
    }
  }
  return f;
}

void write_frame_png(const Frame& frame, const std::filesystem::path& path) {
  if (frame.channels() != 1 && frame.channels() != 3) {
    throw IoError("cannot write " + std::to_string(frame.channels()) + "-channel frame as png");
  }
  Raster r{frame.height(), frame.width(), frame.channels(), 8, {}};
  r.samples.resize(frame.size());
  for (int y = 0; y < r.height; ++y) {
    for (int x = 0; x < r.width; ++x) {
      for (int c = 0; c < r.channels; ++c) {
        r.samples[(static_cast<std::size_t>(y) * r.width + x) * r.channels + c] = to_byte(frame.at(c, y, x));
      }
    }
  }
  write_png(r, path);
}

Mask read_mask_png(const std::filesystem::path& path) {
  const Raster r = read_png(path);
  const int threshold = r.depth == 16 ? 128 * 257 : 128;
  Mask m(r.height, r.width);
  for (int y = 0; y < r.height; ++y) {
    for (int x = 0; x < r.width; ++x) {
      // multi-channel masks: any channel over threshold marks the pixel
      bool set = false;
      for (int c = 0; c < r.channels; ++c) {
        set |= r.samples[(static_cast<std::size_t>(y) * r.width + x) * r.channels + c] >= threshold;
      }
      m.set(y, x, set);
    }
  }
  return m;
}

void write_mask_png(const Mask& mask, const std::filesystem::path& path) {
  Raster r{mask.height(), mask.width(), 1, 8, {}};
  r.samples.resize(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) r.samples[i] = mask[i] ? 255 : 0;
  write_png(r, path);
}

void write_gray16_png(std::span<const std::uint16_t> values, int height, int width,
                      const std::filesystem::path& path) {
  if (values.size() != static_cast<std::size_t>(height) * width) {
    throw ShapeError("write_gray16_png: value count does not match " + std::to_string(height) + "x" +
                     std::to_string(width));
  }
  Raster r{height, width, 1, 16, {values.begin(), values.end()}};
  write_png(r, path);
}

std::vector<std::uint16_t> read_gray16_png(const std::filesystem::path& path, int& height, int& width) {
  Raster r = read_png(path);
  if (r.channels != 1) throw IoError("expected grayscale png: " + path.string());
  height = r.height;
  width = r.width;
  return std::move(r.samples);
}

}  // namespace vipflow
