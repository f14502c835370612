#include "vipflow/flowlab.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>

#include "sampling.hpp"

namespace vipflow {

FlowField::FlowField(int height, int width, double u, double v) : height_(height), width_(width) {
  if (height < 1 || width < 1) {
    throw ShapeError("flow dimensions must be positive, got " + std::to_string(height) + "x" +
                     std::to_string(width));
  }
  u_.assign(static_cast<std::size_t>(height) * width, u);
  v_.assign(static_cast<std::size_t>(height) * width, v);
}

std::string FlowField::shape_string() const {
  return std::to_string(height_) + "x" + std::to_string(width_);
}

namespace {

// Single-channel working image with a validity map.
struct Plane {
  int height = 0;
  int width = 0;
  std::vector<double> value;
  std::vector<std::uint8_t> valid;

  double at(int y, int x) const { return value[static_cast<std::size_t>(y) * width + x]; }
  bool ok(int y, int x) const {
    return x >= 0 && y >= 0 && x < width && y < height && valid[static_cast<std::size_t>(y) * width + x];
  }
};

Plane luminance(const Frame& f, const Mask& valid) {
  Plane p{f.height(), f.width(), std::vector<double>(f.plane_size(), 0.0),
          std::vector<std::uint8_t>(valid.data().begin(), valid.data().end())};
  for (int c = 0; c < f.channels(); ++c) {
    auto ch = f.channel(c);
    for (std::size_t i = 0; i < ch.size(); ++i) p.value[i] += ch[i] / f.channels();
  }
  return p;
}

// 2x box downsample; a coarse pixel is valid only if all children are.
Plane downsample(const Plane& in) {
  Plane out{in.height / 2, in.width / 2, {}, {}};
  out.value.assign(static_cast<std::size_t>(out.height) * out.width, 0.0);
  out.valid.assign(out.value.size(), 0);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      double sum = 0.0;
      bool all = true;
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
          sum += in.at(2 * y + dy, 2 * x + dx);
          all = all && in.ok(2 * y + dy, 2 * x + dx);
        }
      }
      const std::size_t i = static_cast<std::size_t>(y) * out.width + x;
      out.value[i] = sum / 4.0;
      out.valid[i] = all ? 1 : 0;
    }
  }
  return out;
}

constexpr double kNoCost = std::numeric_limits<double>::infinity();

struct Matcher {
  const Plane& a;
  const Plane& b;
  const BlockMatchOptions& opt;
  int window_count() const { return (2 * opt.patch_radius + 1) * (2 * opt.patch_radius + 1); }

  // Mean squared difference over the window, restricted to pixels valid in both.
  double cost(int y, int x, int dy, int dx) const {
    const int r = opt.patch_radius;
    double sum = 0.0;
    int n = 0;
    for (int oy = -r; oy <= r; ++oy) {
      for (int ox = -r; ox <= r; ++ox) {
        const int ay = y + oy, ax = x + ox;
        const int by = ay + dy, bx = ax + dx;
        if (!a.ok(ay, ax) || !b.ok(by, bx)) continue;
        const double d = a.at(ay, ax) - b.at(by, bx);
        sum += d * d;
        ++n;
      }
    }
    if (n < opt.min_overlap * window_count()) return kNoCost;
    return sum / n;
  }

  bool textured(int y, int x) const {
    const int r = opt.patch_radius;
    double s = 0.0, s2 = 0.0;
    int n = 0;
    for (int oy = -r; oy <= r; ++oy) {
      for (int ox = -r; ox <= r; ++ox) {
        if (!a.ok(y + oy, x + ox)) continue;
        const double v = a.at(y + oy, x + ox);
        s += v;
        s2 += v * v;
        ++n;
      }
    }
    if (n < opt.min_overlap * window_count()) return false;
    const double mean = s / n;
    return s2 / n - mean * mean >= opt.min_texture;
  }

  // Parabola vertex through (-1, cm), (0, c0), (+1, cp).
  static double vertex(double cm, double c0, double cp) {
    if (!std::isfinite(cm) || !std::isfinite(cp)) return 0.0;
    const double denom = cm - 2.0 * c0 + cp;
    if (denom <= 0.0) return 0.0;
    return std::clamp(0.5 * (cm - cp) / denom, -0.5, 0.5);
  }

  // Bilinear sample of b, false unless every contributing tap is valid.
  bool sample_b(double x, double y, double& out) const {
    const auto fp = detail::footprint(x, y, b.height, b.width);
    if (!fp.inside) return false;
    const int x1 = fp.fx > 0.0 ? fp.x0 + 1 : fp.x0;
    const int y1 = fp.fy > 0.0 ? fp.y0 + 1 : fp.y0;
    if (!b.ok(fp.y0, fp.x0) || !b.ok(fp.y0, x1) || !b.ok(y1, fp.x0) || !b.ok(y1, x1)) return false;
    out = detail::sample(b.value, b.width, fp);
    return true;
  }

  // Bilinear sample of b and its derivative in x and y, false unless every
  // tap used is valid. On a cell edge the derivative is one-sided.
  bool sample_b_grad(double x, double y, double& out, double& dx, double& dy) const {
    if (!sample_b(x, y, out)) return false;
    const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
    const double fx = x - x0, fy = y - y0;
    auto lerp_row = [&](int yy, int xa, int xb, double& d) {
      if (!b.ok(yy, xa) || !b.ok(yy, xb)) return false;
      d = b.at(yy, xb) - b.at(yy, xa);
      return true;
    };
    auto lerp_col = [&](int xx, int ya, int yb, double& d) {
      if (!b.ok(ya, xx) || !b.ok(yb, xx)) return false;
      d = b.at(yb, xx) - b.at(ya, xx);
      return true;
    };
    const int xa = b.ok(y0, x0 + 1) ? x0 : x0 - 1;
    const int ya = b.ok(y0 + 1, x0) ? y0 : y0 - 1;
    double d0 = 0.0, d1 = 0.0;
    if (!lerp_row(y0, xa, xa + 1, d0)) return false;
    if (fy > 0.0 && !lerp_row(y0 + 1, xa, xa + 1, d1)) return false;
    dx = (1.0 - fy) * d0 + fy * d1;
    d1 = 0.0;
    if (!lerp_col(x0, ya, ya + 1, d0)) return false;
    if (fx > 0.0 && !lerp_col(x0 + 1, ya, ya + 1, d1)) return false;
    dy = (1.0 - fx) * d0 + fx * d1;
    return true;
  }

  // Mean squared window residual at (u, v); infinity with too little overlap.
  double window_residual(int y, int x, double u, double v) const {
    const int r = opt.patch_radius;
    double sse = 0.0;
    int n = 0;
    for (int oy = -r; oy <= r; ++oy) {
      for (int ox = -r; ox <= r; ++ox) {
        const int ay = y + oy, ax = x + ox;
        double bv;
        if (!a.ok(ay, ax) || !sample_b(ax + u, ay + v, bv)) continue;
        sse += (bv - a.at(ay, ax)) * (bv - a.at(ay, ax));
        ++n;
      }
    }
    return n < opt.min_overlap * window_count() ? kNoCost : sse / n;
  }

  // Gauss-Newton on the window SSD around (u, v) with the bilinear Jacobian
  // of the warped b. Steps that do not lower the SSD are halved, then
  // dropped. Returns the mean squared residual at the final displacement.
  double refine(int y, int x, double& u, double& v) const {
    const int r = opt.patch_radius;
    const double u0 = u, v0 = v;
    double residual = window_residual(y, x, u, v);
    if (!std::isfinite(residual)) return residual;
    for (int it = 0; it < opt.refine_iterations; ++it) {
      double hxx = 0, hxy = 0, hyy = 0, gx = 0, gy = 0;
      for (int oy = -r; oy <= r; ++oy) {
        for (int ox = -r; ox <= r; ++ox) {
          const int ay = y + oy, ax = x + ox;
          double bv, dx, dy;
          if (!a.ok(ay, ax) || !sample_b_grad(ax + u, ay + v, bv, dx, dy)) continue;
          const double e = bv - a.at(ay, ax);
          hxx += dx * dx;
          hxy += dx * dy;
          hyy += dy * dy;
          gx += dx * e;
          gy += dy * e;
        }
      }
      const double det = hxx * hyy - hxy * hxy;
      if (det <= 1e-12 * (hxx + hyy) * (hxx + hyy) || det <= 0.0) break;
      double du = -(hyy * gx - hxy * gy) / det;
      double dv = -(hxx * gy - hxy * gx) / det;
      bool moved = false;
      for (int half = 0; half < 4 && !moved; ++half, du *= 0.5, dv *= 0.5) {
        // stay near the integer match; larger jumps mean the model broke down
        const double nu = std::clamp(u + du, u0 - 1.0, u0 + 1.0);
        const double nv = std::clamp(v + dv, v0 - 1.0, v0 + 1.0);
        const double res = window_residual(y, x, nu, nv);
        if (res < residual) {
          moved = true;
          residual = res;
          u = nu;
          v = nv;
        }
      }
      if (!moved || (std::abs(du) < 1e-4 && std::abs(dv) < 1e-4)) break;
    }
    return residual;
  }

  double window_variance(int y, int x) const {
    const int r = opt.patch_radius;
    double s = 0.0, s2 = 0.0;
    int n = 0;
    for (int oy = -r; oy <= r; ++oy) {
      for (int ox = -r; ox <= r; ++ox) {
        if (!a.ok(y + oy, x + ox)) continue;
        const double val = a.at(y + oy, x + ox);
        s += val;
        s2 += val * val;
        ++n;
      }
    }
    if (n == 0) return 0.0;
    const double mean = s / n;
    return std::max(0.0, s2 / n - mean * mean);
  }

  // Best integer displacement in [cy-r, cy+r] x [cx-r, cx+r], refined to
  // sub-pixel; false when nothing matches or the refined residual is large
  // compared with the patch variance.
  bool match(int y, int x, int cy, int cx, int radius, double& u, double& v) const {
    double best = kNoCost;
    int bdy = 0, bdx = 0;
    int best_norm = std::numeric_limits<int>::max();
    for (int dy = cy - radius; dy <= cy + radius; ++dy) {
      for (int dx = cx - radius; dx <= cx + radius; ++dx) {
        const double c = cost(y, x, dy, dx);
        const int norm = dx * dx + dy * dy;
        if (c < best || (c == best && std::isfinite(c) && norm < best_norm)) {
          best = c;
          bdy = dy;
          bdx = dx;
          best_norm = norm;
        }
      }
    }
    if (!std::isfinite(best)) return false;
    u = bdx + vertex(cost(y, x, bdy, bdx - 1), best, cost(y, x, bdy, bdx + 1));
    v = bdy + vertex(cost(y, x, bdy - 1, bdx), best, cost(y, x, bdy + 1, bdx));
    const double residual = refine(y, x, u, v);
    return residual <= opt.max_residual_ratio * window_variance(y, x) + 1e-6;
  }
};

struct LevelResult {
  FlowField flow;
  Mask reliable;
  std::size_t matched = 0;
};

LevelResult match_level(const Plane& a, const Plane& b, const BlockMatchOptions& opt,
                        const FlowField* guess, bool coarsest) {
  Matcher m{a, b, opt};
  LevelResult res{FlowField(a.height, a.width), Mask(a.height, a.width), 0};
  for (int y = 0; y < a.height; ++y) {
    for (int x = 0; x < a.width; ++x) {
      if (!a.ok(y, x) || !m.textured(y, x)) continue;
      int cy = 0, cx = 0, radius = opt.search_radius;
      if (!coarsest && guess) {
        const double gx = 2.0 * detail::sample_clamped(guess->u_data(), guess->height(), guess->width(),
                                                       (x - 0.5) / 2.0, (y - 0.5) / 2.0);
        const double gy = 2.0 * detail::sample_clamped(guess->v_data(), guess->height(), guess->width(),
                                                       (x - 0.5) / 2.0, (y - 0.5) / 2.0);
        cx = static_cast<int>(std::lround(gx));
        cy = static_cast<int>(std::lround(gy));
        radius = opt.refine_radius;
      }
      double u = 0.0, v = 0.0;
      if (m.match(y, x, cy, cx, radius, u, v)) {
        res.flow.set(y, x, u, v);
        res.reliable.set(y, x);
        ++res.matched;
      }
    }
  }
  return res;
}

}  // namespace

int harmonic_fill(FlowField& flow, const Mask& unknown, const HarmonicOptions& options) {
  if (!flow.matches(unknown)) {
    throw ShapeError("harmonic_fill: flow " + flow.shape_string() + " vs mask " + unknown.shape_string());
  }
  const int h = flow.height(), w = flow.width();
  std::vector<std::size_t> cells;
  double su = 0.0, sv = 0.0;
  std::size_t known = 0;
  for (std::size_t i = 0; i < unknown.size(); ++i) {
    if (unknown[i]) {
      cells.push_back(i);
    } else {
      su += flow.u_data()[i];
      sv += flow.v_data()[i];
      ++known;
    }
  }
  if (cells.empty()) return 0;
  if (known == 0) {
    for (std::size_t i : cells) flow.u_data()[i] = flow.v_data()[i] = 0.0;
    return 0;
  }
  // start from the mean of the boundary data; converges faster than zero
  for (std::size_t i : cells) {
    flow.u_data()[i] = su / known;
    flow.v_data()[i] = sv / known;
  }
  auto u = flow.u_data();
  auto v = flow.v_data();
  int sweep = 0;
  while (sweep < options.max_sweeps) {
    ++sweep;
    double change = 0.0;
    for (std::size_t i : cells) {
      const int y = static_cast<int>(i / w), x = static_cast<int>(i % w);
      double au = 0.0, av = 0.0;
      int n = 0;
      if (x > 0) { au += u[i - 1]; av += v[i - 1]; ++n; }
      if (x + 1 < w) { au += u[i + 1]; av += v[i + 1]; ++n; }
      if (y > 0) { au += u[i - w]; av += v[i - w]; ++n; }
      if (y + 1 < h) { au += u[i + w]; av += v[i + w]; ++n; }
      au /= n;
      av /= n;
      change = std::max({change, std::abs(au - u[i]), std::abs(av - v[i])});
      u[i] = au;
      v[i] = av;
    }
    if (change < options.tolerance) break;
  }
  return sweep;
}

FlowEstimate estimate_flow(const Frame& a, const Frame& b, const Mask& valid_a, const Mask& valid_b,
                           const BlockMatchOptions& match, const HarmonicOptions& harmonic) {
  if (!a.same_shape(b)) throw ShapeError("estimate_flow: " + a.shape_string() + " vs " + b.shape_string());
  if (!valid_a.matches(a) || !valid_b.matches(b)) throw ShapeError("estimate_flow: validity map size mismatch");

  std::vector<Plane> pa{luminance(a, valid_a)};
  std::vector<Plane> pb{luminance(b, valid_b)};
  const int min_side = 2 * match.patch_radius + 4;
  while (static_cast<int>(pa.size()) < match.levels && pa.back().height / 2 >= min_side &&
         pa.back().width / 2 >= min_side) {
    pa.push_back(downsample(pa.back()));
    pb.push_back(downsample(pb.back()));
  }

  FlowEstimate out;
  FlowField guess;
  for (int level = static_cast<int>(pa.size()) - 1; level >= 0; --level) {
    const bool coarsest = level == static_cast<int>(pa.size()) - 1;
    LevelResult lr = match_level(pa[level], pb[level], match, coarsest ? nullptr : &guess, coarsest);
    if (level == 0) {
      out.matched = lr.matched;
      if (lr.matched == 0) {
        out.flow = FlowField(a.height(), a.width());
        out.degenerate = true;
        out.warnings.push_back("no textured, matchable pixels; using zero flow");
        return out;
      }
      out.harmonic_sweeps = harmonic_fill(lr.flow, lr.reliable.complement(), harmonic);
      out.flow = std::move(lr.flow);
    } else {
      if (lr.matched == 0) {
        guess = FlowField(pa[level].height, pa[level].width);
      } else {
        harmonic_fill(lr.flow, lr.reliable.complement(), harmonic);
        guess = std::move(lr.flow);
      }
    }
  }
  return out;
}

FlowEstimate estimate_flow(const Frame& a, const Frame& b, const BlockMatchOptions& match) {
  const Mask all(a.height(), a.width(), 1);
  return estimate_flow(a, b, all, all, match);
}

FlowEstimate complete_flow(const Frame& x_k0, const Frame& x_j0, const Mask& m_k, const Mask& m_j,
                           const BlockMatchOptions& match, const HarmonicOptions& harmonic) {
  if (!m_k.matches(x_k0) || !m_j.matches(x_j0) || !x_k0.same_shape(x_j0)) {
    throw ShapeError("complete_flow: inconsistent frame/mask dimensions");
  }
  if (m_k.all()) throw ConfigError("complete_flow: frame k is fully masked");
  if (m_j.all()) throw ConfigError("complete_flow: frame j is fully masked");
  return estimate_flow(x_k0, x_j0, m_k.complement(), m_j.complement(), match, harmonic);
}

OcclusionMask fb_consistency(const FlowField& f_kj, const FlowField& f_jk, double tolerance) {
  if (!f_kj.same_shape(f_jk)) {
    throw ShapeError("fb_consistency: " + f_kj.shape_string() + " vs " + f_jk.shape_string());
  }
  const int h = f_kj.height(), w = f_kj.width();
  OcclusionMask occ(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double u = f_kj.u(y, x), v = f_kj.v(y, x);
      const double qx = x + u, qy = y + v;
      if (qx < 0.0 || qy < 0.0 || qx > w - 1.0 || qy > h - 1.0) {
        occ.set(y, x);
        continue;
      }
      const auto fp = detail::footprint(qx, qy, h, w);
      const double bu = detail::sample(f_jk.u_data(), w, fp);
      const double bv = detail::sample(f_jk.v_data(), w, fp);
      if (std::hypot(u + bu, v + bv) > tolerance) occ.set(y, x);
    }
  }
  return occ;
}

FlowField compose_flows(const FlowField& f_ab, const FlowField& f_bc) {
  if (!f_ab.same_shape(f_bc)) throw ShapeError("compose_flows: shape mismatch");
  const int h = f_ab.height(), w = f_ab.width();
  FlowField out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double u = f_ab.u(y, x), v = f_ab.v(y, x);
      const double bu = detail::sample_clamped(f_bc.u_data(), h, w, x + u, y + v);
      const double bv = detail::sample_clamped(f_bc.v_data(), h, w, x + u, y + v);
      out.set(y, x, u + bu, v + bv);
    }
  }
  return out;
}

namespace {

constexpr float kFloTag = 202021.25f;

template <typename T>
void put_le(std::ostream& os, T value) {
  static_assert(sizeof(T) == 4);
  std::uint32_t bits;
  std::memcpy(&bits, &value, 4);
  const unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                              static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

template <typename T>
T get_le(std::istream& is, const std::filesystem::path& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw IoError("truncated .flo file: " + path.string());
  const std::uint32_t bits = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  T value;
  std::memcpy(&value, &bits, 4);
  return value;
}

}  // namespace

FlowField read_flo(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  if (get_le<float>(is, path) != kFloTag) throw IoError("bad .flo tag: " + path.string());
  const auto w = get_le<std::int32_t>(is, path);
  const auto h = get_le<std::int32_t>(is, path);
  if (w < 1 || h < 1 || static_cast<std::int64_t>(w) * h > (1LL << 28)) {
    throw IoError("bad .flo dimensions in " + path.string());
  }
  FlowField flow(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const float u = get_le<float>(is, path);
      const float v = get_le<float>(is, path);
      flow.set(y, x, u, v);
    }
  }
  return flow;
}

void write_flo(const FlowField& flow, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  put_le(os, kFloTag);
  put_le(os, static_cast<std::int32_t>(flow.width()));
  put_le(os, static_cast<std::int32_t>(flow.height()));
  for (int y = 0; y < flow.height(); ++y) {
    for (int x = 0; x < flow.width(); ++x) {
      put_le(os, static_cast<float>(flow.u(y, x)));
      put_le(os, static_cast<float>(flow.v(y, x)));
    }
  }
  if (!os) throw IoError("write failed: " + path.string());
}

}  // namespace vipflow

namespace vipflow {

EstimatedFlowProvider::EstimatedFlowProvider(VideoSequence corrupted, BlockMatchOptions match, HarmonicOptions harmonic)
    : seq_(std::move(corrupted)), match_(match), harmonic_(harmonic) {
  seq_.validate();
  for (int k = 0; k < seq_.size(); ++k) seq_.frames[k] = apply_mask(seq_.frames[k], seq_.masks[k]);
}

FlowField EstimatedFlowProvider::flow(int k, int j) const {
  if (k < 0 || j < 0 || k >= seq_.size() || j >= seq_.size()) {
    throw ConfigError("flow pair (" + std::to_string(k) + ", " + std::to_string(j) + ") out of range");
  }
  auto it = cache_.find({k, j});
  if (it == cache_.end()) {
    FlowEstimate est;
    if (k == j) {
      est.flow = FlowField(seq_.frames[k].height(), seq_.frames[k].width());
    } else if (seq_.masks[k].all() || seq_.masks[j].all()) {
      // nothing to match against; fall back to zero motion
      est.flow = FlowField(seq_.frames[k].height(), seq_.frames[k].width());
      est.degenerate = true;
      est.warnings.push_back("fully masked frame, using zero flow");
    } else {
      est = complete_flow(seq_.frames[k], seq_.frames[j], seq_.masks[k], seq_.masks[j], match_, harmonic_);
    }
    it = cache_.emplace(std::make_pair(k, j), std::move(est)).first;
  }
  return it->second.flow;
}

void EstimatedFlowProvider::precompute_all() {
  for (int k = 0; k < seq_.size(); ++k) {
    for (int j = 0; j < seq_.size(); ++j) flow(k, j);
  }
}

std::vector<std::string> EstimatedFlowProvider::warnings() const {
  std::vector<std::string> out;
  for (const auto& [pair, est] : cache_) {
    for (const auto& w : est.warnings) {
      out.push_back("flow " + std::to_string(pair.first) + "->" + std::to_string(pair.second) + ": " + w);
    }
  }
  return out;
}

ChainedFlowProvider::ChainedFlowProvider(std::vector<FlowField> forward, std::vector<FlowField> backward)
    : forward_(std::move(forward)), backward_(std::move(backward)) {
  if (forward_.size() != backward_.size()) throw ConfigError("chained flows: forward/backward counts differ");
  for (const auto& f : forward_) {
    if (!f.same_shape(forward_.front())) throw ShapeError("chained flows: inconsistent flow sizes");
  }
  for (const auto& f : backward_) {
    if (!forward_.empty() && !f.same_shape(forward_.front())) throw ShapeError("chained flows: inconsistent flow sizes");
  }
}

FlowField ChainedFlowProvider::flow(int k, int j) const {
  if (k < 0 || j < 0 || k >= frame_count() || j >= frame_count()) {
    throw ConfigError("flow pair (" + std::to_string(k) + ", " + std::to_string(j) + ") out of range");
  }
  if (forward_.empty()) throw ConfigError("chained flows: no flows for a single frame");
  if (k == j) return FlowField(forward_.front().height(), forward_.front().width());
  FlowField out = k < j ? forward_[k] : backward_[k - 1];
  if (k < j) {
    for (int m = k + 1; m < j; ++m) out = compose_flows(out, forward_[m]);
  } else {
    for (int m = k - 1; m > j; --m) out = compose_flows(out, backward_[m - 1]);
  }
  return out;
}

}  // namespace vipflow
