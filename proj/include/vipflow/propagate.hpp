#pragma once

#include <string>
#include <vector>

#include "vipflow/flowlab.hpp"
#include "vipflow/imaging.hpp"

namespace vipflow {

/// Provenance codes besides a non-negative source-frame index.
inline constexpr int kNoSource = -1;
inline constexpr int kGenerated = -2;

/// Partially filled target frame.
///
/// `filled` always equals the original masked frame on originally valid
/// pixels; `invalid` marks pixels still missing; `provenance` is the frame
/// index each pixel came from (the target's own index for original pixels).
struct PropagationState {
  int target = 0;
  Frame filled;
  Mask invalid;
  std::vector<int> provenance;

  /// State before any propagation: x_k0 = x_k * (1 - m_k).
  static PropagationState initial(int target, const Frame& frame, const Mask& mask);

  bool originally_valid(std::size_t i) const { return provenance[i] == target; }
  /// Throws ShapeError / ConfigError when the invariants are broken.
  void validate() const;
};

/// Bilinear backward warp of a source frame along a flow.
struct WarpResult {
  Frame image;
  Mask validity;  // 1 = every contributing tap in-bounds and source-valid
};

/// image(p) = bilinear sample of src at p + flow(p). Taps with zero
/// interpolation weight do not count toward validity.
WarpResult backward_warp(const Frame& src, const Mask& src_valid, const FlowField& flow);

/// Per-channel affine correction a_c * warped + b_c.
struct ColorFit {
  std::vector<double> gain;
  std::vector<double> bias;
  std::size_t overlap = 0;
  bool identity = true;
  std::vector<std::string> warnings;
};

/// Below this many overlap pixels the correction falls back to identity.
inline constexpr std::size_t kMinColorOverlap = 16;

ColorFit fit_color(const Frame& warped, const Frame& target, const Mask& overlap);

/// Fits the affine color model on `overlap` (1 = usable pixel) and applies it
/// on `fill_region`, clamped to [0,1]. Pixels outside `fill_region` are
/// returned unchanged.
Frame color_compensate(const Frame& warped, const Frame& target, const Mask& overlap,
                       const Mask& fill_region, ColorFit* fit = nullptr);

struct PropagationStep {
  PropagationState state;
  Mask propagated;  // m^{j->k}: pixels filled by this step
  ColorFit color;
};

struct PropagateOptions {
  bool color_compensation = true;
};

/// One pixel-propagation step from reference frame `source` into the target.
///
/// m^{j->k} = invalid * warp_validity * (1 - occlusion); filled pixels get the
/// color-compensated warp and provenance `source`. `occlusion` may be null.
PropagationStep propagate_from(const PropagationState& state, int source, const Frame& src,
                               const Mask& src_mask, const FlowField& flow, const OcclusionMask* occlusion,
                               const PropagateOptions& options = {});

/// Reference frames for `target` in a sequence of `count`, nearest first,
/// ties toward the smaller index.
std::vector<int> reference_order(int target, int count);

}  // namespace vipflow
