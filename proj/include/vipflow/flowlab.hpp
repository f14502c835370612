#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "vipflow/imaging.hpp"

namespace vipflow {

/// Dense displacement field in pixels.
///
/// Backward-warp convention: for the flow from frame k to frame j,
/// frame j sampled at p + flow(p) corresponds to frame k at p.
class FlowField {
 public:
  FlowField() = default;
  FlowField(int height, int width, double u = 0.0, double v = 0.0);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return u_.size(); }

  double u(int y, int x) const { return u_[index(y, x)]; }
  double v(int y, int x) const { return v_[index(y, x)]; }
  void set(int y, int x, double u, double v) {
    u_[index(y, x)] = u;
    v_[index(y, x)] = v;
  }

  std::span<double> u_data() { return u_; }
  std::span<double> v_data() { return v_; }
  std::span<const double> u_data() const { return u_; }
  std::span<const double> v_data() const { return v_; }

  bool matches(const Frame& f) const { return height_ == f.height() && width_ == f.width(); }
  bool matches(const Mask& m) const { return height_ == m.height() && width_ == m.width(); }
  bool same_shape(const FlowField& o) const { return height_ == o.height_ && width_ == o.width_; }
  std::string shape_string() const;

  bool operator==(const FlowField&) const = default;

 private:
  std::size_t index(int y, int x) const { return static_cast<std::size_t>(y) * width_ + x; }

  int height_ = 0;
  int width_ = 0;
  std::vector<double> u_;
  std::vector<double> v_;
};

/// Binary map, 1 = occluded / unreliable correspondence.
using OcclusionMask = Mask;

struct BlockMatchOptions {
  int levels = 3;             // pyramid depth, including full resolution
  int search_radius = 4;      // exhaustive radius at the coarsest level
  int refine_radius = 1;      // radius around the upsampled guess at finer levels
  int patch_radius = 2;       // (2r+1)^2 comparison window
  double min_texture = 1e-4;  // patch variance below this is treated as untextured
  double min_overlap = 0.5;   // fraction of the window that must be valid in both frames
  int refine_iterations = 5;  // Gauss-Newton steps on the quadratic model of the window SSD
  double max_residual_ratio = 0.2;  // reject matches whose refined SSD exceeds this x patch variance
};

struct HarmonicOptions {
  double tolerance = 1e-4;  // max per-sweep update
  int max_sweeps = 10000;
};

/// Dense flow plus estimator diagnostics.
struct FlowEstimate {
  FlowField flow;
  bool degenerate = false;  // no usable texture; flow is the zero fallback
  std::size_t matched = 0;  // pixels with a direct block match
  int harmonic_sweeps = 0;
  std::vector<std::string> warnings;
};

/// Coarse-to-fine block matching from `a` to `b`. Integer matches get a
/// parabola vertex estimate followed by Gauss-Newton steps on the local
/// quadratic model of the window SSD. Pixels outside `valid_a`, or without a reliable match, are
/// filled by harmonic extension of the matched flow.
FlowEstimate estimate_flow(const Frame& a, const Frame& b, const Mask& valid_a, const Mask& valid_b,
                           const BlockMatchOptions& match = {}, const HarmonicOptions& harmonic = {});
FlowEstimate estimate_flow(const Frame& a, const Frame& b, const BlockMatchOptions& match = {});

/// Completed flow f_{k->j} for a masked pair (masks: 1 = missing). Defined
/// everywhere; inside the masked region of frame k it is the harmonic
/// extension of the surrounding estimate. Throws ConfigError when either
/// frame is fully masked.
FlowEstimate complete_flow(const Frame& x_k0, const Frame& x_j0, const Mask& m_k, const Mask& m_j,
                           const BlockMatchOptions& match = {}, const HarmonicOptions& harmonic = {});

/// Solves the discrete Laplace equation for the pixels flagged in `unknown`,
/// holding all other pixels fixed (Gauss-Seidel). Returns sweeps used.
int harmonic_fill(FlowField& flow, const Mask& unknown, const HarmonicOptions& options = {});

/// Occluded where p + f_kj(p) leaves the frame or the round trip
/// |f_kj(p) + f_jk(p + f_kj(p))| exceeds `tolerance` pixels.
OcclusionMask fb_consistency(const FlowField& f_kj, const FlowField& f_jk, double tolerance = 1.0);

/// f_{a->c}(p) = f_{a->b}(p) + f_{b->c}(p + f_{a->b}(p)), bilinear lookup with
/// border clamping.
FlowField compose_flows(const FlowField& f_ab, const FlowField& f_bc);

/// Middlebury .flo: "PIEH" tag (202021.25f), int32 width, int32 height,
/// interleaved little-endian float32 (u, v).
FlowField read_flo(const std::filesystem::path& path);
void write_flo(const FlowField& flow, const std::filesystem::path& path);

/// Source of completed flows f_{k->j} between any two frames of a sequence.
class FlowProvider {
 public:
  virtual ~FlowProvider() = default;
  virtual FlowField flow(int k, int j) const = 0;
  virtual int frame_count() const = 0;
  virtual std::string name() const = 0;
};

/// Flows estimated on demand with complete_flow from the corrupted sequence,
/// memoized per pair. Pairs involving a fully masked frame get zero flow and
/// a warning. Not safe for concurrent use.
class EstimatedFlowProvider final : public FlowProvider {
 public:
  EstimatedFlowProvider(VideoSequence corrupted, BlockMatchOptions match = {}, HarmonicOptions harmonic = {});

  FlowField flow(int k, int j) const override;
  int frame_count() const override { return seq_.size(); }
  std::string name() const override { return "estimated"; }

  /// Computes every ordered pair upfront.
  void precompute_all();
  std::vector<std::string> warnings() const;

 private:
  VideoSequence seq_;
  BlockMatchOptions match_;
  HarmonicOptions harmonic_;
  mutable std::map<std::pair<int, int>, FlowEstimate> cache_;
};

/// Flows between arbitrary frames obtained by composing consecutive flows.
/// forward[k] = f_{k->k+1}, backward[k] = f_{k+1->k}.
class ChainedFlowProvider final : public FlowProvider {
 public:
  ChainedFlowProvider(std::vector<FlowField> forward, std::vector<FlowField> backward);

  FlowField flow(int k, int j) const override;
  int frame_count() const override { return static_cast<int>(forward_.size()) + 1; }
  std::string name() const override { return "chained"; }

 private:
  std::vector<FlowField> forward_;
  std::vector<FlowField> backward_;
};

}  // namespace vipflow
