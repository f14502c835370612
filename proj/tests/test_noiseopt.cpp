#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "test_util.hpp"
#include "vipflow/noiseopt.hpp"
#include "vipflow/synthverse.hpp"

using namespace vipflow;

namespace {

GmmPrior gaussian_prior(int h, int w, int c, double mu, double var) {
  GmmPrior p;
  p.weights = {1.0};
  p.means = {Frame(h, w, c, mu)};
  p.variances = {var};
  return p;
}

}  // namespace

TEST_CASE("cond_loss basics") {
  const Frame a = testutil::random_frame(2, 2, 1, 1);
  CHECK(cond_loss(a, a, Mask(2, 2)) == 0.0);
  CHECK(cond_loss(a, testutil::random_frame(2, 2, 1, 2), Mask(2, 2, 1)) == 0.0);
  Frame b = a;
  for (auto& v : b.data()) v += 0.5;
  Mask m(2, 2);
  m.set(0, 0);
  m.set(1, 1);
  CHECK(cond_loss(b, a, m) == doctest::Approx(0.5));
  CHECK_THROWS_AS(cond_loss(a, Frame(2, 3, 1), m), ShapeError);
}

TEST_CASE("a huge regularizer keeps z at z0") {
  const DiffusionSchedule s = DiffusionSchedule::linear();
  const GmmDenoiser d(gaussian_prior(4, 4, 1, 0.5, 0.05), s);
  NoiseOptProblem p;
  p.constraint_frame = testutil::random_frame(4, 4, 1, 3);
  p.constraint_mask = Mask(4, 4);
  p.gamma = 1e9;
  // plain gradient descent is stable only for 2 eta gamma < 2
  p.eta0 = 0.5 / p.gamma;
  std::mt19937_64 rng(3);
  const OptimizationTrace t = optimize_noise(p, d, s, rng);
  double dist = 0.0;
  for (std::size_t i = 0; i < t.z0.size(); ++i) dist += (t.z_star[i] - t.z0[i]) * (t.z_star[i] - t.z0[i]);
  CHECK(std::sqrt(dist) < 1e-3);
}

TEST_CASE("one pixel: gradient descent reaches the quadratic minimizer") {
  const DiffusionSchedule s = DiffusionSchedule::linear();
  const GmmDenoiser d(gaussian_prior(1, 1, 1, 0.3, 64.0), s);
  const double b = sample(d, Frame(1, 1, 1, 0.0), s)[0];
  const double a = sample(d, Frame(1, 1, 1, 1.0), s)[0] - b;
  NoiseOptProblem p;
  p.constraint_frame = Frame(1, 1, 1, 0.8);
  p.constraint_mask = Mask(1, 1);
  p.early_stop = 0.0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    std::mt19937_64 rng(seed);
    const OptimizationTrace t = optimize_noise(p, d, s, rng);
    const double z0 = t.z0[0];
    const double zstar = (a * (0.8 - b) + p.gamma * z0) / (a * a + p.gamma);
    CHECK(std::abs(t.z_star[0] - zstar) < 1e-4);
  }
}

TEST_CASE("analytic gradient matches finite differences") {
  const DiffusionSchedule s = DiffusionSchedule::linear();
  const std::vector<Frame> train = training_frames(40, 12, 12, 3);
  EmOptions o;
  o.rank = 6;
  const GmmDenoiser low(fit_gmm_prior(train, 2, o).prior, s);
  const GmmDenoiser iso(fit_gmm_prior(train, 3).prior, s);
  NoiseOptProblem p;
  p.constraint_frame = training_frames(1, 12, 12, 3, 9000)[0];
  p.constraint_mask = Mask(12, 12);
  for (int y = 3; y < 9; ++y) {
    for (int x = 2; x < 7; ++x) p.constraint_mask.set(y, x);
  }
  std::mt19937_64 rng(4);
  CHECK(gradient_check(p, low, s, 20, rng) < 1e-5);
  CHECK(gradient_check(p, iso, s, 20, rng) < 1e-5);
}

TEST_CASE("single-step chain: gradient equals the direct chain rule") {
  const DiffusionSchedule s({0.3});
  std::vector<Frame> data;
  for (int k = 0; k < 10; ++k) data.push_back(testutil::random_frame(3, 3, 1, 50 + k));
  const GmmDenoiser d(fit_gmm_prior(data, 2).prior, s);
  NoiseOptProblem p;
  p.constraint_frame = testutil::random_frame(3, 3, 1, 5);
  p.constraint_mask = Mask(3, 3);
  p.constraint_mask.set(1, 1);
  std::mt19937_64 rng(5);
  const Frame z0 = gaussian_like(3, 3, 1, rng);
  Frame z = z0;
  for (auto& v : z.data()) v += 0.2;
  const ObjectiveValue v = evaluate_objective(p, d, s, z, z0, true);
  // x0 = (z - s1 eps(z)) / a1
  const double a1 = std::sqrt(s.alpha_bar(1)), s1 = std::sqrt(1 - s.alpha_bar(1));
  const Frame eps = d.predict(z, 1);
  Frame r(3, 3, 1);
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double x0 = (z[i] - s1 * eps[i]) / a1;
    r[i] = p.constraint_mask[i] ? 0.0 : 2.0 * (x0 - p.constraint_frame[i]);
  }
  const Frame je = d.vjp(z, 1, r);
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double g = (r[i] - s1 * je[i]) / a1 + 2 * p.gamma * (z[i] - z0[i]);
    CHECK(std::abs(v.gradient[i] - g) < 1e-9);
  }
}

TEST_CASE("paste_back keeps constrained pixels") {
  const Frame gen = testutil::random_frame(3, 3, 2, 6), con = testutil::random_frame(3, 3, 2, 7);
  Mask m(3, 3);
  m.set(0, 1);
  const Frame out = paste_back(gen, con, m);
  for (int c = 0; c < 2; ++c) {
    for (int y = 0; y < 3; ++y) {
      for (int x = 0; x < 3; ++x) CHECK(out.at(c, y, x) == (y == 0 && x == 1 ? gen : con).at(c, y, x));
    }
  }
}

TEST_CASE("trace JSON lines carry the documented fields") {
  const DiffusionSchedule s = DiffusionSchedule::linear(5);
  const GmmDenoiser d(gaussian_prior(2, 2, 1, 0.5, 1.0), s);
  NoiseOptProblem p;
  p.constraint_frame = Frame(2, 2, 1, 0.2);
  p.constraint_mask = Mask(2, 2);
  p.steps = 3;
  p.early_stop = 0.0;
  std::mt19937_64 rng(7);
  const OptimizationTrace t = optimize_noise(p, d, s, rng);
  REQUIRE(t.iterations.size() == 3);
  std::ostringstream os;
  write_trace_jsonl(t, os);
  const std::string text = os.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);
  CHECK(text.find("\"cond_loss\"") != std::string::npos);
  CHECK(text.find("\"eta\"") != std::string::npos);
}

TEST_CASE("problem validation") {
  NoiseOptProblem p;
  p.constraint_frame = Frame(2, 2, 1);
  p.constraint_mask = Mask(2, 2);
  CHECK_NOTHROW(p.validate());
  p.gamma = -1;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p.gamma = 0;
  p.decay = 1.5;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p.decay = 0.9;
  p.constraint_mask = Mask(3, 2);
  CHECK_THROWS_AS(p.validate(), ShapeError);
}

TEST_CASE("default hyperparameters on a half-masked 64x64 frame") {
  const DiffusionSchedule s = DiffusionSchedule::linear();
  // a broad prior gives the chain enough gain for eta0 = 0.01 to act
  const GmmDenoiser d(gaussian_prior(64, 64, 3, 0.5, 64.0), s);
  NoiseOptProblem p;
  p.constraint_frame = generate(standard_suite()[0]).clean[0];
  p.constraint_mask = Mask(64, 64);
  for (int y = 0; y < 64; ++y) {
    for (int x = 32; x < 64; ++x) p.constraint_mask.set(y, x);
  }
  std::mt19937_64 rng(12);
  const OptimizationTrace t = optimize_noise(p, d, s, rng);
  int down = 0;
  for (std::size_t i = 1; i < t.iterations.size(); ++i) down += t.iterations[i].cond_loss < t.iterations[i - 1].cond_loss;
  CHECK(down >= 0.9 * (t.iterations.size() - 1));
  CHECK(t.final_cond_loss / (64 * 32 * 3) < 1e-3);
}
