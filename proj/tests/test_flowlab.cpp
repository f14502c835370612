#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "doctest.h"
#include "test_util.hpp"
#include "vipflow/flowlab.hpp"
#include "vipflow/synthverse.hpp"

using namespace vipflow;

namespace {

// Crop of a larger textured canvas at integer offset (ox, oy).
Frame crop(const Frame& canvas, int ox, int oy, int h, int w) {
  Frame f(h, w, canvas.channels());
  for (int c = 0; c < canvas.channels(); ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) f.at(c, y, x) = canvas.at(c, y + oy, x + ox);
    }
  }
  return f;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

}  // namespace

TEST_CASE("identical frames give zero flow") {
  const Frame a = testutil::smooth_texture(24, 24, 3, 5);
  const FlowEstimate e = estimate_flow(a, a);
  for (std::size_t i = 0; i < e.flow.size(); ++i) {
    CHECK(std::abs(e.flow.u_data()[i]) < 0.5);
    CHECK(std::abs(e.flow.v_data()[i]) < 0.5);
  }
}

TEST_CASE("constant frames give zero flow without crashing") {
  const Frame a(16, 16, 3, 0.4);
  const FlowEstimate e = estimate_flow(a, a);
  CHECK(e.degenerate);
  for (std::size_t i = 0; i < e.flow.size(); ++i) {
    CHECK(e.flow.u_data()[i] == 0.0);
    CHECK(e.flow.v_data()[i] == 0.0);
  }
}

TEST_CASE("translated pair: median flow agrees with an exhaustive-search oracle") {
  // b shows a's content moved by (3, 1), so b sampled at p + (3, 1) is a at p.
  const Frame canvas = testutil::smooth_texture(40, 40, 3, 8);
  const int h = 24, w = 24;
  const Frame a = crop(canvas, 8, 8, h, w);
  const Frame b = crop(canvas, 5, 7, h, w);

  std::vector<double> ou, ov;
  const int r = 2, search = 5;
  for (int y = r + search; y < h - r - search; ++y) {
    for (int x = r + search; x < w - r - search; ++x) {
      double best = 1e300;
      int bu = 0, bv = 0;
      for (int dv = -search; dv <= search; ++dv) {
        for (int du = -search; du <= search; ++du) {
          double ssd = 0.0;
          for (int c = 0; c < 3; ++c) {
            for (int yy = -r; yy <= r; ++yy) {
              for (int xx = -r; xx <= r; ++xx) {
                const double d = a.at(c, y + yy, x + xx) - b.at(c, y + yy + dv, x + xx + du);
                ssd += d * d;
              }
            }
          }
          if (ssd < best) {
            best = ssd;
            bu = du;
            bv = dv;
          }
        }
      }
      ou.push_back(bu);
      ov.push_back(bv);
    }
  }
  REQUIRE(median(ou) == 3.0);
  REQUIRE(median(ov) == 1.0);

  const FlowEstimate e = estimate_flow(a, b);
  std::vector<double> eu(e.flow.u_data().begin(), e.flow.u_data().end());
  std::vector<double> ev(e.flow.v_data().begin(), e.flow.v_data().end());
  CHECK(std::abs(median(eu) - median(ou)) < 0.5);
  CHECK(std::abs(median(ev) - median(ov)) < 0.5);
}

TEST_CASE("completed flow of a (2,0) pan with a 20% centre mask") {
  SceneSpec s;
  s.pan = {2.0, 0.0};
  s.frames = 2;
  s.mask.fraction = 0.2;
  s.background_seed = 3;
  const SyntheticVideo v = generate(s);
  const Frame x0 = apply_mask(v.clean[0], v.masks[0]);
  const Frame x1 = apply_mask(v.clean[1], v.masks[1]);
  // f_{0->1}: frame 1 at p + f shows frame 0's content at p
  const FlowField gt = v.forward_flows[0];
  const FlowEstimate e = complete_flow(x0, x1, v.masks[0], v.masks[1]);
  std::size_t good = 0;
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      good += std::hypot(e.flow.u(y, x) - gt.u(y, x), e.flow.v(y, x) - gt.v(y, x)) <= 0.5;
    }
  }
  CHECK(gt.u(10, 10) == 2.0);
  CHECK(static_cast<double>(good) >= 0.95 * 64 * 64);
}

TEST_CASE("complete_flow rejects a fully masked frame") {
  const Frame a = testutil::smooth_texture(16, 16, 3, 2);
  CHECK_THROWS_AS(complete_flow(a, a, Mask(16, 16, 1), Mask(16, 16)), ConfigError);
  CHECK_THROWS_AS(complete_flow(a, a, Mask(16, 16), Mask(16, 16, 1)), ConfigError);
}

TEST_CASE("fb_consistency: zero flows have no occlusion") {
  const OcclusionMask o = fb_consistency(FlowField(10, 12), FlowField(10, 12));
  CHECK(o.none());
}

TEST_CASE("fb_consistency: opposite constant flows occlude only where the warp exits") {
  const OcclusionMask o = fb_consistency(FlowField(10, 12, 5.0, 0.0), FlowField(10, 12, -5.0, 0.0));
  for (int y = 0; y < 10; ++y) {
    for (int x = 0; x < 12; ++x) CHECK(o.test(y, x) == (x + 5 > 11));
  }
}

TEST_CASE("fb_consistency: a one-sided flow occludes every in-bounds pixel") {
  const OcclusionMask o = fb_consistency(FlowField(10, 12, 5.0, 0.0), FlowField(10, 12), 1.0);
  CHECK(o.all());
}

TEST_CASE("compose_flows adds constant flows") {
  const FlowField c = compose_flows(FlowField(8, 8, 1.0, -0.5), FlowField(8, 8, 0.25, 2.0));
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      CHECK(c.u(y, x) == doctest::Approx(1.25));
      CHECK(c.v(y, x) == doctest::Approx(1.5));
    }
  }
}

TEST_CASE("harmonic_fill reproduces a linear field") {
  FlowField f(12, 12);
  Mask unknown(12, 12);
  for (int y = 0; y < 12; ++y) {
    for (int x = 0; x < 12; ++x) {
      f.set(y, x, 0.1 * x + 0.2 * y, -0.3 * x);
      if (y > 2 && y < 9 && x > 2 && x < 9) {
        unknown.set(y, x);
        f.set(y, x, 0.0, 0.0);
      }
    }
  }
  harmonic_fill(f, unknown, {1e-10, 100000});
  for (int y = 0; y < 12; ++y) {
    for (int x = 0; x < 12; ++x) {
      CHECK(f.u(y, x) == doctest::Approx(0.1 * x + 0.2 * y).epsilon(1e-6));
      CHECK(f.v(y, x) == doctest::Approx(-0.3 * x).epsilon(1e-6));
    }
  }
}

TEST_CASE(".flo round-trips bit-exactly") {
  testutil::TempDir dir("flo");
  std::mt19937_64 rng(4);
  std::normal_distribution<float> n(0.0f, 3.0f);
  FlowField f(7, 9);
  for (int y = 0; y < 7; ++y) {
    for (int x = 0; x < 9; ++x) f.set(y, x, n(rng), n(rng));
  }
  write_flo(f, dir.path() / "a.flo");
  const FlowField g = read_flo(dir.path() / "a.flo");
  CHECK(g == f);
  write_flo(g, dir.path() / "b.flo");
  std::ifstream ia(dir.path() / "a.flo", std::ios::binary), ib(dir.path() / "b.flo", std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(ia)), {}), sb((std::istreambuf_iterator<char>(ib)), {});
  CHECK(sa == sb);
  CHECK(sa.size() == 12 + 7 * 9 * 8);
}

TEST_CASE(".flo with a bad tag is rejected") {
  testutil::TempDir dir("flobad");
  {
    std::ofstream os(dir.path() / "x.flo", std::ios::binary);
    os << "NOTAFLOWFILE";
  }
  CHECK_THROWS_AS(read_flo(dir.path() / "x.flo"), IoError);
}

TEST_CASE("estimated provider falls back to zero flow for a fully masked frame") {
  VideoSequence seq;
  for (int k = 0; k < 3; ++k) {
    seq.frames.push_back(testutil::smooth_texture(16, 16, 3, 9));
    seq.masks.push_back(Mask(16, 16, k == 1 ? 1 : 0));
  }
  EstimatedFlowProvider p(seq);
  const FlowField f = p.flow(0, 1);
  for (double u : f.u_data()) CHECK(u == 0.0);
  CHECK_FALSE(p.warnings().empty());
  CHECK(p.flow(0, 0) == FlowField(16, 16));
}

TEST_CASE("chained provider composes consecutive flows") {
  std::vector<FlowField> fw(3, FlowField(8, 8, 1.0, 0.0)), bw(3, FlowField(8, 8, -1.0, 0.0));
  ChainedFlowProvider p(fw, bw);
  CHECK(p.frame_count() == 4);
  CHECK(p.flow(0, 3).u(4, 2) == doctest::Approx(3.0));
  CHECK(p.flow(3, 1).u(4, 5) == doctest::Approx(-2.0));
}
