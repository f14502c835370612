#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vipflow/error.hpp"

namespace vipflow {

/// Multi-channel image stored planar, row-major per channel.
///
/// In memory a Frame is an arbitrary real tensor (the diffusion code stores
/// noise and latents in the same container); values are clamped to [0,1]
/// only when written to disk.
class Frame {
 public:
  Frame() = default;
  Frame(int height, int width, int channels, double fill = 0.0);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t plane_size() const { return static_cast<std::size_t>(height_) * width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(int c, int y, int x) { return data_[index(c, y, x)]; }
  double at(int c, int y, int x) const { return data_[index(c, y, x)]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<double> channel(int c);
  std::span<const double> channel(int c) const;

  bool same_shape(const Frame& other) const {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }
  /// "CxHxW", for diagnostics.
  std::string shape_string() const;

  bool operator==(const Frame&) const = default;

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

/// Binary per-pixel map. Which value means "set" depends on the role:
/// masks use 1 = invalid, validity maps use 1 = valid.
class Mask {
 public:
  Mask() = default;
  Mask(int height, int width, std::uint8_t fill = 0);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }

  bool test(int y, int x) const { return data_[index(y, x)] != 0; }
  void set(int y, int x, bool value = true) { data_[index(y, x)] = value ? 1 : 0; }
  bool operator[](std::size_t i) const { return data_[i] != 0; }
  void set(std::size_t i, bool value = true) { data_[i] = value ? 1 : 0; }

  std::span<const std::uint8_t> data() const { return data_; }

  std::size_t count() const;
  bool none() const { return count() == 0; }
  bool all() const { return count() == data_.size(); }
  Mask complement() const;

  bool same_shape(const Mask& other) const {
    return height_ == other.height_ && width_ == other.width_;
  }
  bool matches(const Frame& f) const { return height_ == f.height() && width_ == f.width(); }
  std::string shape_string() const;

  bool operator==(const Mask&) const = default;

 private:
  std::size_t index(int y, int x) const { return static_cast<std::size_t>(y) * width_ + x; }

  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Frames plus per-frame invalid masks (1 = missing).
struct VideoSequence {
  std::vector<Frame> frames;
  std::vector<Mask> masks;

  int size() const { return static_cast<int>(frames.size()); }
  /// Throws ShapeError when frames and masks disagree in count or size.
  void validate() const;
};

/// Zeroes every pixel whose mask bit is set.
Frame apply_mask(const Frame& frame, const Mask& mask);

/// Elementwise product with the validity map, i.e. keeps pixels where valid = 1.
Frame keep_valid(const Frame& frame, const Mask& valid);

Mask mask_or(const Mask& a, const Mask& b);
Mask mask_and(const Mask& a, const Mask& b);

/// Minimum edge length accepted by the on-disk sequence format.
inline constexpr int kMinFrameSide = 8;

// PNG boundary: 8-bit RGB or grayscale frames, 8-bit grayscale masks
// thresholded at 128.
Frame read_frame_png(const std::filesystem::path& path);
void write_frame_png(const Frame& frame, const std::filesystem::path& path);
Mask read_mask_png(const std::filesystem::path& path);
void write_mask_png(const Mask& mask, const std::filesystem::path& path);
/// 16-bit grayscale PNG, used for provenance dumps.
void write_gray16_png(std::span<const std::uint16_t> values, int height, int width,
                      const std::filesystem::path& path);
std::vector<std::uint16_t> read_gray16_png(const std::filesystem::path& path, int& height,
                                           int& width);

/// Quantizes to 8 bits and back; what a save/load round-trip yields.
Frame quantize8(const Frame& frame);

std::string frame_filename(int index);
std::string mask_filename(int index);

/// Loads `frame_NNNN.png` / `mask_NNNN.png` pairs from a directory.
VideoSequence load_sequence(const std::filesystem::path& dir);
/// Loads frames only; masks default to all-zero when none are present.
VideoSequence load_frames(const std::filesystem::path& dir);
void save_sequence(const VideoSequence& seq, const std::filesystem::path& dir);

}  // namespace vipflow
