#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vipflow/flowlab.hpp"
#include "vipflow/imaging.hpp"

namespace vipflow {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Vec2&) const = default;
};

struct SpriteSpec {
  std::uint64_t texture_seed = 1;
  int width = 12;
  int height = 12;
  Vec2 velocity;  // px/frame
  Vec2 start;     // top-left corner in frame 0
  bool operator==(const SpriteSpec&) const = default;
};

enum class MaskScript { StationaryRect, MovingRect, SpriteShape };

struct MaskSpec {
  MaskScript script = MaskScript::StationaryRect;
  double fraction = 0.25;  // of H*W, rectangles only
  Vec2 velocity;           // moving rectangle only
  int dilation = 1;        // sprite-shaped only
  bool operator==(const MaskSpec&) const = default;
};

/// Description of a deterministic synthetic clip.
///
/// Content moves in image space: with pan velocity v the background of frame
/// k at p shows the texture at p - v k. Sprites are drawn at start + v_s k on
/// top of the background, later sprites over earlier ones.
struct SceneSpec {
  int height = 64;
  int width = 64;
  int channels = 3;
  int frames = 8;
  std::uint64_t background_seed = 1;
  double texture_scale = 8.0;  // value-noise lattice spacing in pixels
  Vec2 pan;
  std::vector<SpriteSpec> sprites;
  MaskSpec mask;
  double brightness_step = 0.0;  // additive offset per frame
  bool wrap = false;             // sprites wrap around the frame edges

  /// Every problem with the spec, one message per field.
  std::vector<std::string> problems() const;
  /// Throws ConfigError listing problems().
  void validate() const;

  bool operator==(const SceneSpec&) const = default;
};

SceneSpec scene_from_json(const std::string& text);
std::string scene_to_json(const SceneSpec& spec);
SceneSpec load_scene(const std::filesystem::path& path);

/// Ground-truth motion of a rendered scene.
class SceneMotion final : public FlowProvider {
 public:
  explicit SceneMotion(SceneSpec spec);

  /// f_{k->j}: velocity of the layer under p in frame k, times (j - k).
  FlowField flow(int k, int j) const override;
  int frame_count() const override { return spec_.frames; }
  std::string name() const override { return "gt"; }

  /// Topmost layer at (y, x) in frame k: -1 background, else sprite index.
  int layer(int k, int y, int x) const;
  /// Pixels of frame j whose content is not visible at p + f_{j->k}(p) in
  /// frame k: the warp leaves the frame or any tap lands on another layer.
  OcclusionMask occlusion(int j, int k) const;

 private:
  SceneSpec spec_;
};

struct SyntheticVideo {
  SceneSpec spec;
  std::vector<Frame> clean;
  std::vector<Mask> masks;
  std::vector<FlowField> forward_flows;   // f_{k->k+1}
  std::vector<FlowField> backward_flows;  // f_{k+1->k}
  std::vector<OcclusionMask> occlusions;  // of frame k+1 w.r.t. frame k
};

/// Renders a clip. `seed` perturbs all texture seeds so one spec can yield
/// many scenes.
SyntheticVideo generate(const SceneSpec& spec, std::uint64_t seed = 0);

/// Masked copies of the clean frames.
VideoSequence corrupt(const std::vector<Frame>& clean, const std::vector<Mask>& masks);

/// Ten varied scenes used by the ablation study.
std::vector<SceneSpec> standard_suite();

/// Clean single frames from static scenes with background seeds
/// first_seed, first_seed + 1, ...; the default range is disjoint from the
/// standard suite, so a prior fit on them never sees evaluation content.
std::vector<Frame> training_frames(int count, int height = 64, int width = 64, int channels = 3,
                                   std::uint64_t first_seed = 5000);

/// Writes frames, masks, backward flows (flow_XXXX.flo), forward flows
/// (forward/flow_XXXX.flo), occlusion maps (occl_XXXX.png) and scene.json.
void save_synthetic(const SyntheticVideo& video, const std::filesystem::path& dir);

/// Flows and occlusions saved by save_synthetic.
struct GroundTruthFiles {
  std::vector<FlowField> forward;
  std::vector<FlowField> backward;
  std::vector<OcclusionMask> occlusions;
};
GroundTruthFiles load_ground_truth(const std::filesystem::path& dir, int frames);

}  // namespace vipflow
