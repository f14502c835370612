#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "vipflow/diffusion.hpp"
#include "vipflow/flowlab.hpp"
#include "vipflow/imaging.hpp"
#include "vipflow/metrics.hpp"

namespace vipflow {

enum class Variant { Full, PerFrame, PpOnly, NoOpt };
enum class FlowSource { GroundTruth, Estimated };

std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);  // full, per-frame, pp-only, no-opt
std::string flow_source_name(FlowSource s);      // gt, estimated
FlowSource parse_flow_source(const std::string& name);

struct InpaintConfig {
  double gamma = 1e-3;
  double eta0 = 0.01;
  double decay = 0.9;
  int steps = 50;
  double early_stop = 1e-6;
  FlowSource flow_source = FlowSource::Estimated;
  bool occlusion_gate = true;
  bool color_compensation = true;
  bool flows_upfront = false;  // estimate all ordered pairs before starting
  Variant variant = Variant::Full;
  std::uint64_t seed = 0;

  void validate() const;
};

struct FrameRecord {
  int index = 0;
  std::size_t invalid_before = 0;
  std::size_t invalid_after_propagation = 0;
  std::size_t residual_invalid = 0;  // left unfilled (pp-only without a denoiser)
  std::vector<int> sources;          // references that filled at least one pixel, in order
  bool generated = false;
  int iterations = 0;
  std::vector<double> cond_losses;   // one per executed optimization iteration
  double final_cond_loss = 0.0;
};

struct InpaintReport {
  Variant variant = Variant::Full;
  std::string flow_source;
  int start_frame = 0;
  std::vector<double> start_scores;
  std::vector<int> visit_order;
  std::vector<FrameRecord> frames;  // indexed by frame
  int generation_runs = 0;
  std::size_t total_invalid = 0;
  std::size_t total_residual = 0;
  std::vector<std::string> warnings;
  double wall_seconds = 0.0;  // not part of the JSON report, so reports stay reproducible
};

/// Deterministic report JSON (no timing).
std::string report_to_json(const InpaintReport& report, const InpaintConfig& config);

struct InpaintResult {
  VideoSequence completed;                 // masks are zero except residual holes
  std::vector<std::vector<int>> provenance;  // per frame and pixel
  InpaintReport report;
};

struct StartFrameChoice {
  int index = 0;
  std::vector<double> scores;
};

/// Scores each masked frame k by the number of its masked pixels also
/// covered by other frames' masks warped into k (f_{k->j}, bilinear weight
/// >= 0.5, in-bounds footprint); argmax with ties to the smallest index.
StartFrameChoice select_start_frame(const VideoSequence& seq, const FlowProvider& flows);

/// Start frame, then k+1, k-1, k+2, ... within [0, count).
std::vector<int> visiting_order(int start, int count);

/// Completes a corrupted sequence. `denoiser` may be null for pp-only, which
/// then leaves unreachable pixels as holes, or when nothing is masked.
InpaintResult inpaint_sequence(const VideoSequence& seq, const FlowProvider& flows, const InpaintConfig& config,
                               const Denoiser* denoiser, const DiffusionSchedule& sched);

/// Ground truth for scoring a completion.
struct EvalTarget {
  std::vector<Frame> clean;
  std::vector<FlowField> backward_flows;   // f_{k+1->k}
  std::vector<OcclusionMask> occlusions;   // may be empty
  std::string flow_source = "gt";
};

struct AblationRow {
  Variant variant = Variant::Full;
  MetricReport metrics;
  int generation_runs = 0;
  double wall_seconds = 0.0;
};

/// Runs every variant on one scene and scores it. `flows` drives propagation
/// for the non-per-frame variants; the config's variant field is ignored.
std::vector<AblationRow> run_ablation(const VideoSequence& seq, const EvalTarget& truth, const FlowProvider& flows,
                                      const InpaintConfig& config, const Denoiser& denoiser,
                                      const DiffusionSchedule& sched);

inline constexpr Variant kAllVariants[] = {Variant::Full, Variant::PpOnly, Variant::NoOpt, Variant::PerFrame};

/// Prior fit on `training_frames(frames, ...)` with one component keeping
/// `rank` principal directions. Used when no prior file is given.
GmmPrior default_prior(int height, int width, int channels, int frames = 200, int rank = 16);

/// Median over scenes of each variant's per-scene mean metrics.
struct AblationSummary {
  Variant variant = Variant::Full;
  double psnr = 0.0;
  double ssim = 0.0;
  double e_warp = 0.0;
  int scenes = 0;
};

/// `scenes[s]` holds the rows run_ablation returned for scene s.
std::vector<AblationSummary> summarize_ablation(const std::vector<std::vector<AblationRow>>& scenes);

/// Header "variant,psnr,ssim,e_warp", then one row per variant.
void write_ablation_csv(const std::vector<AblationSummary>& rows, std::ostream& os);

}  // namespace vipflow
