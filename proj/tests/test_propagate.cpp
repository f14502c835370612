#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "test_util.hpp"
#include "vipflow/propagate.hpp"

using namespace vipflow;

TEST_CASE("zero flow warp of a valid frame is exact") {
  const Frame src = testutil::random_frame(8, 8, 3, 1);
  const WarpResult r = backward_warp(src, Mask(8, 8, 1), FlowField(8, 8));
  CHECK(r.image == src);
  CHECK(r.validity.all());
}

TEST_CASE("integer flow (1,0) shifts by one column") {
  const Frame src = testutil::random_frame(8, 8, 2, 2);
  const WarpResult r = backward_warp(src, Mask(8, 8, 1), FlowField(8, 8, 1.0, 0.0));
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      if (x == 7) {
        CHECK_FALSE(r.validity.test(y, x));
        continue;
      }
      CHECK(r.validity.test(y, x));
      for (int c = 0; c < 2; ++c) CHECK(r.image.at(c, y, x) == src.at(c, y, x + 1));
    }
  }
}

TEST_CASE("a footprint touching a masked source pixel is invalid") {
  const Frame src = testutil::random_frame(8, 8, 1, 3);
  Mask valid(8, 8, 1);
  valid.set(4, 5, false);
  const WarpResult r = backward_warp(src, valid, FlowField(8, 8, 0.5, 0.0));
  CHECK_FALSE(r.validity.test(4, 4));
  CHECK_FALSE(r.validity.test(4, 5));
  CHECK(r.validity.test(4, 3));
}

TEST_CASE("a fully masked source leaves the state unchanged") {
  const Frame tgt = testutil::random_frame(8, 8, 3, 4);
  Mask m(8, 8);
  m.set(2, 2);
  m.set(3, 3);
  const PropagationState s = PropagationState::initial(0, tgt, m);
  const PropagationStep step =
      propagate_from(s, 1, testutil::random_frame(8, 8, 3, 5), Mask(8, 8, 1), FlowField(8, 8), nullptr);
  CHECK(step.state.filled == s.filled);
  CHECK(step.state.invalid == s.invalid);
  CHECK(step.state.provenance == s.provenance);
  CHECK(step.propagated.none());
}

TEST_CASE("static scene with zero flow fills everything from the source") {
  const Frame clean = testutil::random_frame(8, 8, 3, 6);
  Mask m(8, 8);
  for (int y = 2; y < 5; ++y) {
    for (int x = 1; x < 6; ++x) m.set(y, x);
  }
  const PropagationState s = PropagationState::initial(0, clean, m);
  const PropagationStep step = propagate_from(s, 1, clean, Mask(8, 8), FlowField(8, 8), nullptr);
  CHECK(step.state.invalid.none());
  for (std::size_t i = 0; i < clean.size(); ++i) CHECK(step.state.filled[i] == doctest::Approx(clean[i]).epsilon(1e-12));
  for (std::size_t i = 0; i < m.size(); ++i) CHECK(step.state.provenance[i] == (m[i] ? 1 : 0));
}

TEST_CASE("partial overlap on 8x8 frames matches the per-pixel oracle") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution coin(0.35);
    std::uniform_real_distribution<double> fl(-2.0, 2.0);
    const Frame tgt = testutil::random_frame(8, 8, 3, 100 + seed);
    const Frame src = testutil::random_frame(8, 8, 3, 200 + seed);
    Mask mt(8, 8), ms(8, 8), occ(8, 8);
    FlowField flow(8, 8);
    for (int y = 0; y < 8; ++y) {
      for (int x = 0; x < 8; ++x) {
        mt.set(y, x, coin(rng));
        ms.set(y, x, coin(rng));
        occ.set(y, x, coin(rng) && coin(rng));
        flow.set(y, x, seed % 2 ? std::round(fl(rng)) : fl(rng), seed % 3 ? fl(rng) : 0.0);
      }
    }
    const PropagationState s = PropagationState::initial(0, tgt, mt);
    for (bool color : {false, true}) {
      const PropagationStep step = propagate_from(s, 1, src, ms, flow, &occ, {color});
      const oracle::PropagationOut ref =
          oracle::propagate(s.filled, s.invalid, s.provenance, 0, 1, src, ms, flow, &occ, color);
      CHECK(step.state.invalid == ref.invalid);
      CHECK(step.propagated == ref.propagated);
      CHECK(step.state.provenance == ref.provenance);
      for (std::size_t i = 0; i < ref.filled.size(); ++i) CHECK(std::abs(step.state.filled[i] - ref.filled[i]) < 1e-9);
    }
  }
}

TEST_CASE("color fit is the identity when warped equals target") {
  const Frame t = testutil::random_frame(8, 8, 3, 7);
  ColorFit fit;
  const Frame out = color_compensate(t, t, Mask(8, 8, 1), Mask(8, 8), &fit);
  for (int c = 0; c < 3; ++c) {
    CHECK(std::abs(fit.gain[c] - 1.0) < 1e-6);
    CHECK(std::abs(fit.bias[c]) < 1e-6);
  }
  CHECK(out == t);
}

TEST_CASE("color fit recovers a uniform offset") {
  const Frame t = testutil::random_frame(8, 8, 3, 8, 0.1, 0.8);
  Frame w = t;
  for (auto& v : w.data()) v += 0.1;
  Mask fill(8, 8);
  fill.set(0, 0);
  ColorFit fit;
  const Frame out = color_compensate(w, t, Mask(8, 8, 1), fill, &fit);
  for (int c = 0; c < 3; ++c) {
    CHECK(std::abs(fit.gain[c] - 1.0) < 1e-6);
    CHECK(std::abs(fit.bias[c] + 0.1) < 1e-6);
    CHECK(std::abs(out.at(c, 0, 0) - t.at(c, 0, 0)) < 1e-6);
  }
}

TEST_CASE("empty overlap gives the identity transform and a warning") {
  const Frame t = testutil::random_frame(8, 8, 3, 9);
  const Frame w = testutil::random_frame(8, 8, 3, 10);
  ColorFit fit;
  const Frame out = color_compensate(w, t, Mask(8, 8), Mask(8, 8, 1), &fit);
  CHECK(fit.identity);
  CHECK_FALSE(fit.warnings.empty());
  CHECK(out == w);
}

TEST_CASE("reference order is nearest first with ties to the smaller index") {
  CHECK(reference_order(2, 5) == std::vector<int>{1, 3, 0, 4});
  CHECK(reference_order(0, 3) == std::vector<int>{1, 2});
}

TEST_CASE("the initial state zeroes masked pixels and keeps the rest") {
  const Frame f = testutil::random_frame(8, 8, 2, 11);
  Mask m(8, 8);
  m.set(1, 1);
  const PropagationState s = PropagationState::initial(3, f, m);
  CHECK(s.filled.at(0, 1, 1) == 0.0);
  CHECK(s.filled.at(1, 2, 2) == f.at(1, 2, 2));
  CHECK(s.provenance[9] == kNoSource);
  CHECK(s.provenance[0] == 3);
  CHECK_NOTHROW(s.validate());
}
