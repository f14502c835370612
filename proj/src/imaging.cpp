#include "vipflow/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <regex>
#include <sstream>

namespace vipflow {

Frame::Frame(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels) {
  if (height < 1 || width < 1 || channels < 1) {
    throw ShapeError("frame dimensions must be positive, got " + std::to_string(channels) + "x" +
                     std::to_string(height) + "x" + std::to_string(width));
  }
  data_.assign(static_cast<std::size_t>(channels) * height * width, fill);
}

std::span<double> Frame::channel(int c) {
  return std::span<double>(data_).subspan(c * plane_size(), plane_size());
}

std::span<const double> Frame::channel(int c) const {
  return std::span<const double>(data_).subspan(c * plane_size(), plane_size());
}

std::string Frame::shape_string() const {
  std::ostringstream os;
  os << channels_ << "x" << height_ << "x" << width_;
  return os.str();
}

Mask::Mask(int height, int width, std::uint8_t fill) : height_(height), width_(width) {
  if (height < 1 || width < 1) {
    throw ShapeError("mask dimensions must be positive, got " + std::to_string(height) + "x" +
                     std::to_string(width));
  }
  data_.assign(static_cast<std::size_t>(height) * width, fill ? 1 : 0);
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{1}));
}

Mask Mask::complement() const {
  Mask out = *this;
  for (auto& v : out.data_) v = v ? 0 : 1;
  return out;
}

std::string Mask::shape_string() const {
  return std::to_string(height_) + "x" + std::to_string(width_);
}

void VideoSequence::validate() const {
  if (frames.empty()) throw ShapeError("video sequence has no frames");
  if (frames.size() != masks.size()) {
    throw ShapeError("video sequence has " + std::to_string(frames.size()) + " frames but " +
                     std::to_string(masks.size()) + " masks");
  }
  const Frame& ref = frames.front();
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (!frames[i].same_shape(ref)) {
      throw ShapeError("frame " + std::to_string(i) + " has shape " + frames[i].shape_string() +
                       ", expected " + ref.shape_string());
    }
    if (!masks[i].matches(ref)) {
      throw ShapeError("mask " + std::to_string(i) + " has shape " + masks[i].shape_string() +
                       ", expected " + std::to_string(ref.height()) + "x" +
                       std::to_string(ref.width()));
    }
  }
}

namespace {

void require_match(const Frame& frame, const Mask& mask, const char* what) {
  if (!mask.matches(frame)) {
    throw ShapeError(std::string(what) + ": frame " + frame.shape_string() + " vs mask " +
                     mask.shape_string());
  }
}

Frame select(const Frame& frame, const Mask& mask, bool keep_when_set) {
  Frame out = frame;
  const std::size_t plane = frame.plane_size();
  for (int c = 0; c < frame.channels(); ++c) {
    auto ch = out.channel(c);
    for (std::size_t i = 0; i < plane; ++i) {
      if (mask[i] != keep_when_set) ch[i] = 0.0;
    }
  }
  return out;
}

}  // namespace

Frame apply_mask(const Frame& frame, const Mask& mask) {
  require_match(frame, mask, "apply_mask");
  return select(frame, mask, false);
}

Frame keep_valid(const Frame& frame, const Mask& valid) {
  require_match(frame, valid, "keep_valid");
  return select(frame, valid, true);
}

Mask mask_or(const Mask& a, const Mask& b) {
  if (!a.same_shape(b)) throw ShapeError("mask_or: " + a.shape_string() + " vs " + b.shape_string());
  Mask out = a;
  for (std::size_t i = 0; i < a.size(); ++i) out.set(i, a[i] || b[i]);
  return out;
}

Mask mask_and(const Mask& a, const Mask& b) {
  if (!a.same_shape(b)) throw ShapeError("mask_and: " + a.shape_string() + " vs " + b.shape_string());
  Mask out = a;
  for (std::size_t i = 0; i < a.size(); ++i) out.set(i, a[i] && b[i]);
  return out;
}

Frame quantize8(const Frame& frame) {
  Frame out = frame;
  for (auto& v : out.data()) {
    const double q = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
    v = q / 255.0;
  }
  return out;
}

namespace {

std::string numbered(const char* prefix, int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%04d.png", prefix, index);
  return buf;
}

// index -> path for files named <prefix>_<digits>.png
std::map<int, std::filesystem::path> scan(const std::filesystem::path& dir, const std::string& prefix) {
  const std::regex pattern(prefix + "_([0-9]+)\\.png");
  std::map<int, std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (std::regex_match(name, m, pattern)) out[std::stoi(m[1])] = entry.path();
  }
  return out;
}

void check_dims(const std::vector<Frame>& frames, const std::vector<int>& indices) {
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (frames[i].height() < kMinFrameSide || frames[i].width() < kMinFrameSide) {
      throw ShapeError("frame " + std::to_string(indices[i]) + " is " + frames[i].shape_string() +
                       "; minimum side is " + std::to_string(kMinFrameSide));
    }
  }
  std::vector<int> offending;
  for (std::size_t i = 1; i < frames.size(); ++i) {
    if (!frames[i].same_shape(frames[0])) offending.push_back(indices[i]);
  }
  if (!offending.empty()) {
    std::string msg = "inconsistent frame dimensions (reference " + frames[0].shape_string() +
                      "), offending frame indices:";
    for (int k : offending) msg += " " + std::to_string(k);
    throw ShapeError(msg);
  }
}

}  // namespace

std::string frame_filename(int index) { return numbered("frame", index); }
std::string mask_filename(int index) { return numbered("mask", index); }

VideoSequence load_sequence(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  const auto frames = scan(dir, "frame");
  const auto masks = scan(dir, "mask");
  if (frames.empty()) throw IoError("no frame_NNNN.png files in " + dir.string());
  for (const auto& [k, path] : frames) {
    if (!masks.contains(k)) {
      throw IoError("frame " + path.filename().string() + " has no matching " + mask_filename(k));
    }
  }
  for (const auto& [k, path] : masks) {
    if (!frames.contains(k)) {
      throw IoError("mask " + path.filename().string() + " has no matching " + frame_filename(k));
    }
  }
  VideoSequence seq;
  std::vector<int> indices;
  for (const auto& [k, path] : frames) {
    seq.frames.push_back(read_frame_png(path));
    seq.masks.push_back(read_mask_png(masks.at(k)));
    indices.push_back(k);
  }
  check_dims(seq.frames, indices);
  for (std::size_t i = 0; i < seq.masks.size(); ++i) {
    if (!seq.masks[i].matches(seq.frames[i])) {
      throw ShapeError("mask " + std::to_string(indices[i]) + " is " + seq.masks[i].shape_string() +
                       " but its frame is " + seq.frames[i].shape_string());
    }
  }
  return seq;
}

VideoSequence load_frames(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  const auto frames = scan(dir, "frame");
  if (frames.empty()) throw IoError("no frame_NNNN.png files in " + dir.string());
  const auto masks = scan(dir, "mask");
  if (!masks.empty()) return load_sequence(dir);
  VideoSequence seq;
  std::vector<int> indices;
  for (const auto& [k, path] : frames) {
    seq.frames.push_back(read_frame_png(path));
    indices.push_back(k);
  }
  check_dims(seq.frames, indices);
  for (const auto& f : seq.frames) seq.masks.emplace_back(f.height(), f.width());
  return seq;
}

void save_sequence(const VideoSequence& seq, const std::filesystem::path& dir) {
  seq.validate();
  std::vector<int> indices(seq.frames.size());
  for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = static_cast<int>(i);
  check_dims(seq.frames, indices);
  std::filesystem::create_directories(dir);
  for (int k = 0; k < seq.size(); ++k) {
    write_frame_png(seq.frames[k], dir / frame_filename(k));
    write_mask_png(seq.masks[k], dir / mask_filename(k));
  }
}

}  // namespace vipflow
