#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "vipflow/flowlab.hpp"
#include "vipflow/imaging.hpp"

namespace vipflow {

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE) for values in [0,1]; kPsnrCap when MSE < 1e-10.
double psnr(const Frame& a, const Frame& b);

/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), valid filtering,
/// C1 = 0.01^2, C2 = 0.03^2, averaged over channels. Frames must be at
/// least 11 pixels on each side.
double ssim(const Frame& a, const Frame& b);

struct WarpErrorResult {
  std::vector<double> per_pair;     // NaN for skipped pairs
  std::vector<int> skipped_pairs;   // index k of pair (k, k+1)
  double mean = 0.0;                // over evaluated pairs
};

/// Mean over consecutive pairs of the mean squared difference between
/// frame k+1 and frame k backward-warped along flows[k] = f_{k+1->k},
/// restricted to pixels not flagged in occlusions[k] (may be empty) and with
/// an in-bounds warp footprint.
WarpErrorResult warp_error(const std::vector<Frame>& frames, const std::vector<FlowField>& flows,
                           const std::vector<OcclusionMask>& occlusions);

struct MetricReport {
  std::vector<double> psnr;
  std::vector<double> ssim;
  std::vector<double> e_warp;
  std::vector<int> e_warp_skipped;
  double psnr_mean = 0.0;
  double ssim_mean = 0.0;
  double e_warp_mean = 0.0;
  std::string flow_source;  // "gt" or "estimated"
};

/// Per-frame PSNR/SSIM of `pred` against `truth` and E_warp of `pred`.
MetricReport evaluate(const std::vector<Frame>& pred, const std::vector<Frame>& truth,
                      const std::vector<FlowField>& flows, const std::vector<OcclusionMask>& occlusions,
                      const std::string& flow_source);

void write_metrics_json(const MetricReport& report, std::ostream& os);
/// One row per frame: frame,psnr,ssim,e_warp (e_warp of pair (k, k+1)).
void write_metrics_csv(const MetricReport& report, std::ostream& os);

}  // namespace vipflow
