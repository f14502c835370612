#include "vipflow/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <ostream>

#include "json.hpp"
#include "vipflow/propagate.hpp"

namespace vipflow {

double psnr(const Frame& a, const Frame& b) {
  if (!a.same_shape(b)) throw ShapeError("psnr: " + a.shape_string() + " vs " + b.shape_string());
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
  mse /= static_cast<double>(a.size());
  if (mse < 1e-10) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

namespace {

constexpr int kWin = 11;

std::array<double, kWin> gaussian_window() {
  std::array<double, kWin> g{};
  double s = 0.0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - kWin / 2;
    g[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    s += g[i];
  }
  for (auto& v : g) v /= s;
  return g;
}

// Separable valid-mode filtering of one plane.
std::vector<double> filter_valid(const std::vector<double>& in, int h, int w, const std::array<double, kWin>& g) {
  const int ow = w - kWin + 1, oh = h - kWin + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kWin; ++k) s += g[k] * in[static_cast<std::size_t>(y) * w + x + k];
      tmp[static_cast<std::size_t>(y) * ow + x] = s;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow, 0.0);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kWin; ++k) s += g[k] * tmp[static_cast<std::size_t>(y + k) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  }
  return out;
}

}  // namespace

double ssim(const Frame& a, const Frame& b) {
  if (!a.same_shape(b)) throw ShapeError("ssim: " + a.shape_string() + " vs " + b.shape_string());
  if (a.height() < kWin || a.width() < kWin) {
    throw ShapeError("ssim needs frames of at least 11x11, got " + a.shape_string());
  }
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const auto g = gaussian_window();
  const int h = a.height(), w = a.width();
  double total = 0.0;
  for (int c = 0; c < a.channels(); ++c) {
    auto pa = a.channel(c);
    auto pb = b.channel(c);
    std::vector<double> x(pa.begin(), pa.end()), y(pb.begin(), pb.end());
    std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, h, w, g), my = filter_valid(y, h, w, g);
    const auto sxx = filter_valid(xx, h, w, g), syy = filter_valid(yy, h, w, g), sxy = filter_valid(xy, h, w, g);
    double s = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i];
      const double vy = syy[i] - my[i] * my[i];
      const double cxy = sxy[i] - mx[i] * my[i];
      s += ((2 * mx[i] * my[i] + c1) * (2 * cxy + c2)) / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    total += s / static_cast<double>(mx.size());
  }
  return total / a.channels();
}

WarpErrorResult warp_error(const std::vector<Frame>& frames, const std::vector<FlowField>& flows,
                           const std::vector<OcclusionMask>& occlusions) {
  WarpErrorResult res;
  if (frames.size() < 2) return res;
  const std::size_t pairs = frames.size() - 1;
  if (flows.size() != pairs) {
    throw ConfigError("warp_error: expected " + std::to_string(pairs) + " flows, got " +
                      std::to_string(flows.size()));
  }
  if (!occlusions.empty() && occlusions.size() != pairs) {
    throw ConfigError("warp_error: expected " + std::to_string(pairs) + " occlusion maps, got " +
                      std::to_string(occlusions.size()));
  }
  double sum = 0.0;
  int used = 0;
  for (std::size_t k = 0; k < pairs; ++k) {
    const Frame& prev = frames[k];
    const Frame& next = frames[k + 1];
    if (!prev.same_shape(next) || !flows[k].matches(next)) {
      throw ShapeError("warp_error: pair " + std::to_string(k) + " has inconsistent shapes");
    }
    const WarpResult w = backward_warp(prev, Mask(prev.height(), prev.width(), 1), flows[k]);
    const std::size_t plane = next.plane_size();
    double err = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < plane; ++i) {
      if (!w.validity[i]) continue;
      if (!occlusions.empty() && occlusions[k][i]) continue;
      for (int c = 0; c < next.channels(); ++c) {
        const double d = next[c * plane + i] - w.image[c * plane + i];
        err += d * d;
      }
      ++n;
    }
    if (n == 0) {
      res.per_pair.push_back(std::numeric_limits<double>::quiet_NaN());
      res.skipped_pairs.push_back(static_cast<int>(k));
      continue;
    }
    const double e = err / static_cast<double>(n * next.channels());
    res.per_pair.push_back(e);
    sum += e;
    ++used;
  }
  res.mean = used > 0 ? sum / used : 0.0;
  return res;
}

MetricReport evaluate(const std::vector<Frame>& pred, const std::vector<Frame>& truth,
                      const std::vector<FlowField>& flows, const std::vector<OcclusionMask>& occlusions,
                      const std::string& flow_source) {
  if (pred.size() != truth.size() || pred.empty()) {
    throw ConfigError("evaluate: " + std::to_string(pred.size()) + " predicted vs " +
                      std::to_string(truth.size()) + " reference frames");
  }
  MetricReport r;
  r.flow_source = flow_source;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    r.psnr.push_back(psnr(pred[k], truth[k]));
    r.ssim.push_back(ssim(pred[k], truth[k]));
    r.psnr_mean += r.psnr.back();
    r.ssim_mean += r.ssim.back();
  }
  r.psnr_mean /= static_cast<double>(pred.size());
  r.ssim_mean /= static_cast<double>(pred.size());
  const WarpErrorResult we = warp_error(pred, flows, occlusions);
  r.e_warp = we.per_pair;
  r.e_warp_skipped = we.skipped_pairs;
  r.e_warp_mean = we.mean;
  return r;
}

namespace {

nlohmann::json nan_to_null(const std::vector<double>& v) {
  auto out = nlohmann::json::array();
  for (double x : v) out.push_back(std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr));
  return out;
}

}  // namespace

void write_metrics_json(const MetricReport& report, std::ostream& os) {
  const nlohmann::json j = {
      {"psnr", {{"per_frame", report.psnr}, {"mean", report.psnr_mean}}},
      {"ssim", {{"per_frame", report.ssim}, {"mean", report.ssim_mean}}},
      {"e_warp",
       {{"per_pair", nan_to_null(report.e_warp)},
        {"skipped_pairs", report.e_warp_skipped},
        {"mean", report.e_warp_mean},
        {"flow_source", report.flow_source}}},
  };
  os << j.dump(2) << '\n';
}

void write_metrics_csv(const MetricReport& report, std::ostream& os) {
  os << "frame,psnr,ssim,e_warp\n";
  for (std::size_t k = 0; k < report.psnr.size(); ++k) {
    os << k << ',' << report.psnr[k] << ',' << report.ssim[k] << ',';
    if (k < report.e_warp.size() && std::isfinite(report.e_warp[k])) os << report.e_warp[k];
    os << '\n';
  }
}

}  // namespace vipflow
