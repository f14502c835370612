#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "test_util.hpp"
#include "vipflow/diffusion.hpp"

using namespace vipflow;

namespace {

GmmPrior single_gaussian(int h, int w, int c, double mu, double var) {
  GmmPrior p;
  p.weights = {1.0};
  p.means = {Frame(h, w, c, mu)};
  p.variances = {var};
  return p;
}

// Returns the exact noise for a known clean frame.
class ExactEps final : public Denoiser {
 public:
  ExactEps(Frame x0, const DiffusionSchedule& s) : x0_(std::move(x0)), s_(s) {}
  Frame predict(const Frame& xt, int t, const Frame*) const override {
    Frame e = xt;
    const double a = std::sqrt(s_.alpha_bar(t)), s = std::sqrt(1 - s_.alpha_bar(t));
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = (xt[i] - a * x0_[i]) / s;
    return e;
  }
  Frame vjp(const Frame&, int, const Frame& c, const Frame*) const override { return c; }

 private:
  Frame x0_;
  const DiffusionSchedule& s_;
};

class Zero final : public Denoiser {
 public:
  Frame predict(const Frame& xt, int, const Frame*) const override { return Frame(xt.height(), xt.width(), xt.channels()); }
  Frame vjp(const Frame& xt, int, const Frame&, const Frame*) const override {
    return Frame(xt.height(), xt.width(), xt.channels());
  }
};

double fd_vjp_error(const Denoiser& d, const Frame& x, int t, std::mt19937_64& rng) {
  const Frame cot = gaussian_like(x.height(), x.width(), x.channels(), rng);
  const Frame dir = gaussian_like(x.height(), x.width(), x.channels(), rng);
  const Frame g = d.vjp(x, t, cot);
  const double h = 1e-5;
  Frame xp = x, xm = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xp[i] += h * dir[i];
    xm[i] -= h * dir[i];
  }
  const Frame ep = d.predict(xp, t), em = d.predict(xm, t);
  double num = 0.0, an = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    num += (ep[i] - em[i]) / (2 * h) * cot[i];
    an += g[i] * dir[i];
  }
  return std::abs(num - an) / std::max(std::abs(num), 1e-8);
}

}  // namespace

TEST_CASE("linear schedule invariants") {
  const DiffusionSchedule s = DiffusionSchedule::linear();
  CHECK(s.steps() == 50);
  CHECK(s.alpha_bar(0) == 1.0);
  CHECK(s.beta(1) == doctest::Approx(1e-4));
  CHECK(s.beta(50) == doctest::Approx(0.2));
  for (int t = 1; t <= 50; ++t) {
    CHECK(s.beta(t) > 0.0);
    CHECK(s.beta(t) < 1.0);
    CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
  }
  CHECK_THROWS_AS(DiffusionSchedule({0.1, 1.0}), ConfigError);
  CHECK_THROWS_AS(DiffusionSchedule::linear(0), ConfigError);
}

TEST_CASE("forward_diffuse at t = 0 and with zero noise") {
  const DiffusionSchedule s = DiffusionSchedule::linear();
  const Frame x0 = testutil::random_frame(4, 4, 3, 1);
  std::mt19937_64 rng(1);
  CHECK(forward_diffuse(x0, 0, gaussian_like(4, 4, 3, rng), s) == x0);
  const Frame xt = forward_diffuse(x0, 20, Frame(4, 4, 3), s);
  for (std::size_t i = 0; i < x0.size(); ++i) CHECK(xt[i] == doctest::Approx(std::sqrt(s.alpha_bar(20)) * x0[i]));
}

TEST_CASE("x_T is nearly uncorrelated with x0") {
  const DiffusionSchedule s = DiffusionSchedule::linear();
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int n = 10000;
  std::vector<double> a(n), b(n);
  for (int k = 0; k < n; ++k) {
    Frame x0(1, 1, 1, u(rng));
    a[k] = x0[0];
    b[k] = forward_diffuse(x0, s.steps(), gaussian_like(1, 1, 1, rng), s)[0];
  }
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n, mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (int k = 0; k < n; ++k) {
    sab += (a[k] - ma) * (b[k] - mb);
    saa += (a[k] - ma) * (a[k] - ma);
    sbb += (b[k] - mb) * (b[k] - mb);
  }
  CHECK(std::abs(sab / std::sqrt(saa * sbb)) < 0.05);
}

TEST_CASE("reverse_step with the exact noise recovers x0") {
  const DiffusionSchedule s = DiffusionSchedule::linear();
  const Frame x0 = testutil::random_frame(4, 4, 2, 3);
  std::mt19937_64 rng(3);
  const ExactEps d(x0, s);
  for (int t : {1, 7, 30, 50}) {
    const Frame xt = forward_diffuse(x0, t, gaussian_like(4, 4, 2, rng), s);
    const Frame x0hat = predict_x0(xt, t, d.predict(xt, t, nullptr), s);
    for (std::size_t i = 0; i < x0.size(); ++i) CHECK(std::abs(x0hat[i] - x0[i]) < 1e-6);
  }
  const Frame x1 = forward_diffuse(x0, 1, gaussian_like(4, 4, 2, rng), s);
  const Frame step = reverse_step(x1, 1, d, s);
  const Frame x0hat = predict_x0(x1, 1, d.predict(x1, 1, nullptr), s);
  for (std::size_t i = 0; i < x0.size(); ++i) CHECK(step[i] == doctest::Approx(x0hat[i]).epsilon(1e-12));
}

TEST_CASE("delta prior: the chain lands on the mean from any z") {
  const DiffusionSchedule s = DiffusionSchedule::linear();
  const GmmDenoiser d(single_gaussian(3, 3, 2, 0.37, 1e-6), s);
  std::mt19937_64 rng(4);
  for (int k = 0; k < 5; ++k) {
    const Frame out = sample(d, gaussian_like(3, 3, 2, rng), s);
    for (double v : out.data()) CHECK(std::abs(v - 0.37) < 1e-3);
  }
}

TEST_CASE("sample is deterministic") {
  const DiffusionSchedule s = DiffusionSchedule::linear();
  const GmmDenoiser d(single_gaussian(4, 4, 3, 0.5, 0.05), s);
  std::mt19937_64 rng(5);
  const Frame z = gaussian_like(4, 4, 3, rng);
  CHECK(sample(d, z, s) == sample(d, z, s));
}

TEST_CASE("single-Gaussian prior: sample statistics match the prior") {
  const DiffusionSchedule s = DiffusionSchedule::linear();
  const double mu = 0.3, var = 0.04;
  const GmmDenoiser d(single_gaussian(2, 2, 1, mu, var), s);
  std::mt19937_64 rng(6);
  const int n = 2000;
  std::vector<double> sum(4, 0.0), sq(4, 0.0);
  for (int k = 0; k < n; ++k) {
    const Frame out = sample(d, gaussian_like(2, 2, 1, rng), s);
    for (int i = 0; i < 4; ++i) {
      sum[i] += out[i];
      sq[i] += out[i] * out[i];
    }
  }
  // with a Gaussian prior the deterministic chain is affine in z
  const Frame b = sample(d, Frame(2, 2, 1, 0.0), s);
  const Frame a = sample(d, Frame(2, 2, 1, 1.0), s);
  for (int i = 0; i < 4; ++i) {
    const double slope = a[i] - b[i];
    const double m = sum[i] / n, v = sq[i] / n - m * m;
    CHECK(std::abs(m - b[i]) < 4 * std::sqrt(slope * slope / n));
    CHECK(std::abs(v - slope * slope) < 4 * std::sqrt(2.0 / n) * slope * slope);
    // and the map nearly reproduces the prior
    CHECK(std::abs(b[i] - mu) < 0.01);
    CHECK(std::abs(slope * slope - var) < 0.3 * var);
  }
}

TEST_CASE("single-component epsilon matches quadrature") {
  const DiffusionSchedule s = DiffusionSchedule::linear();
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 30; ++k) {
    const double mu = u(rng), var = 0.01 + u(rng) * 0.5;
    const int t = 1 + static_cast<int>(u(rng) * 50) % 50;
    const double a = std::sqrt(s.alpha_bar(t)), sd = std::sqrt(1 - s.alpha_bar(t));
    const Frame xt(1, 1, 1, a * mu + 2.0 * (u(rng) - 0.5));
    const double mean = oracle::posterior_mean_quadrature({{1.0}, {mu}, {var}}, xt[0], a, sd);
    const double eps = gmm_epsilon(xt, t, single_gaussian(1, 1, 1, mu, var), s)[0];
    CHECK(std::abs(eps - (xt[0] - a * mean) / sd) < 1e-6);
  }
}

TEST_CASE("symmetric two-component prior gives zero epsilon at zero") {
  const DiffusionSchedule s = DiffusionSchedule::linear();
  GmmPrior p;
  p.weights = {0.5, 0.5};
  p.means = {Frame(2, 2, 1, 0.8), Frame(2, 2, 1, -0.8)};
  p.variances = {0.1, 0.1};
  for (int t : {1, 25, 50}) {
    const Frame e = gmm_epsilon(Frame(2, 2, 1), t, p, s);
    for (double v : e.data()) CHECK(std::abs(v) < 1e-12);
  }
}

TEST_CASE("denoiser vjp matches finite differences") {
  const DiffusionSchedule s = DiffusionSchedule::linear();
  std::mt19937_64 rng(8);
  std::vector<Frame> data;
  for (int k = 0; k < 30; ++k) data.push_back(testutil::random_frame(3, 3, 2, 300 + k));
  const GmmPrior iso = fit_gmm_prior(data, 3).prior;
  EmOptions o;
  o.rank = 4;
  const GmmPrior low = fit_gmm_prior(data, 2, o).prior;
  REQUIRE(low.rank(0) > 0);
  std::uniform_int_distribution<int> step(1, 50);
  double worst = 0.0;
  for (const GmmPrior* p : {&iso, &low}) {
    const GmmDenoiser d(*p, s);
    for (int k = 0; k < 50; ++k) {
      Frame x = gaussian_like(3, 3, 2, rng);
      for (auto& v : x.data()) v = 0.5 + 0.4 * v;
      worst = std::max(worst, fd_vjp_error(d, x, step(rng), rng));
    }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("low-rank components match the dense Gaussian posterior") {
  // One component with a single direction: along u the variance is l, across it sigma^2.
  const DiffusionSchedule s = DiffusionSchedule::linear();
  GmmPrior p = single_gaussian(1, 2, 1, 0.2, 0.05);
  Frame u(1, 2, 1);
  u[0] = u[1] = std::sqrt(0.5);
  p.directions = {{u}};
  p.spreads = {{0.8}};
  const GmmDenoiser d(p, s);
  for (int t : {1, 10, 40}) {
    const double a2 = s.alpha_bar(t), s2 = 1 - a2, a = std::sqrt(a2);
    // C = 0.05 I + 0.75 u u^T = [[0.425, 0.375], [0.375, 0.425]]
    const double c11 = 0.425, c12 = 0.375;
    const double m11 = a2 * c11 + s2, m12 = a2 * c12;
    const double det = m11 * m11 - m12 * m12;
    Frame x(1, 2, 1);
    x[0] = 0.7;
    x[1] = -0.4;
    const double d0 = x[0] - a * 0.2, d1 = x[1] - a * 0.2;
    const double s0 = (m11 * d0 - m12 * d1) / det, s1 = (-m12 * d0 + m11 * d1) / det;
    const double e0 = 0.2 + a * (c11 * s0 + c12 * s1), e1 = 0.2 + a * (c12 * s0 + c11 * s1);
    const Frame m = d.posterior_mean(x, t);
    CHECK(m[0] == doctest::Approx(e0).epsilon(1e-12));
    CHECK(m[1] == doctest::Approx(e1).epsilon(1e-12));
  }
}

TEST_CASE("ddpm loss of the exact predictor is zero") {
  const DiffusionSchedule s = DiffusionSchedule::linear();
  const Frame x0 = testutil::random_frame(3, 3, 1, 9);
  const ExactEps d(x0, s);
  std::vector<Frame> batch(20, x0);
  std::mt19937_64 rng(9);
  CHECK(ddpm_loss(d, batch, s, rng) < 1e-18);
}

TEST_CASE("ddpm loss of the zero predictor is the element count") {
  const DiffusionSchedule s = DiffusionSchedule::linear();
  std::vector<Frame> batch(10000, Frame(2, 2, 1, 0.5));
  std::mt19937_64 rng(10);
  CHECK(std::abs(ddpm_loss(Zero(), batch, s, rng) - 4.0) < 0.05 * 4.0);
}

TEST_CASE("tiny denoiser training lowers the loss") {
  const DiffusionSchedule s = DiffusionSchedule::linear();
  std::vector<Frame> patches;
  for (int k = 0; k < 64; ++k) patches.push_back(testutil::smooth_texture(8, 8, 1, 400 + k));
  TinyDenoiser net(1, 8, s.steps(), 1);
  const std::vector<double> losses = net.train(patches, s, {500, 1e-2, 2});
  REQUIRE(losses.size() == 500);
  auto med = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return 0.5 * (v[4] + v[5]);
  };
  const double first = med({losses.begin(), losses.begin() + 10});
  const double last = med({losses.end() - 10, losses.end()});
  CHECK(last < first);
}

TEST_CASE("tiny denoiser vjp matches finite differences") {
  const DiffusionSchedule s = DiffusionSchedule::linear();
  TinyDenoiser net(2, 6, s.steps(), 3);
  std::mt19937_64 rng(11);
  for (int k = 0; k < 10; ++k) {
    const Frame x = gaussian_like(5, 4, 2, rng);
    CHECK(fd_vjp_error(net, x, 1 + k * 5, rng) < 1e-6);
  }
}

TEST_CASE("EM with one component returns the sample mean") {
  std::vector<Frame> data;
  for (int k = 0; k < 12; ++k) data.push_back(testutil::random_frame(2, 3, 1, 500 + k));
  const GmmFit fit = fit_gmm_prior(data, 1);
  for (std::size_t i = 0; i < 6; ++i) {
    double m = 0.0;
    for (const Frame& f : data) m += f[i];
    CHECK(fit.prior.means[0][i] == doctest::Approx(m / 12).epsilon(1e-12));
  }
}

TEST_CASE("EM on Gaussian data recovers mean and variance") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n(0.4, 0.2);
  std::vector<Frame> data;
  for (int k = 0; k < 400; ++k) {
    Frame f(2, 2, 1);
    for (auto& v : f.data()) v = n(rng);
    data.push_back(f);
  }
  const GmmFit fit = fit_gmm_prior(data, 1);
  for (double m : fit.prior.means[0].data()) CHECK(std::abs(m - 0.4) < 3 * 0.2 / std::sqrt(400.0));
  CHECK(std::abs(fit.prior.variances[0] - 0.04) < 0.1 * 0.04);
}

TEST_CASE("EM separates well-separated clusters") {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> n(0.0, 0.1);
  std::vector<Frame> data;
  for (int k = 0; k < 40; ++k) {
    Frame f(2, 2, 1, k < 20 ? 0.0 : 1.0);
    for (auto& v : f.data()) v += n(rng);
    data.push_back(f);
  }
  const GmmFit fit = fit_gmm_prior(data, 2);
  const int own0 = fit.prior.means[0][0] < 0.5 ? 0 : 1;
  for (int k = 0; k < 40; ++k) CHECK(fit.responsibility[k][k < 20 ? own0 : 1 - own0] >= 0.99);
  for (std::size_t i = 1; i < fit.log_likelihood.size(); ++i) {
    CHECK(fit.log_likelihood[i] >= fit.log_likelihood[i - 1] - 1e-9 * std::abs(fit.log_likelihood[i - 1]));
  }
}

TEST_CASE("low-rank fit keeps orthonormal directions with decreasing spreads") {
  std::vector<Frame> data;
  std::mt19937_64 rng(14);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int k = 0; k < 60; ++k) {
    Frame f = testutil::random_frame(3, 3, 1, 600 + k, -0.05, 0.05);
    const double g = n(rng);
    for (auto& v : f.data()) v += 0.5 + 0.3 * g;
    data.push_back(f);
  }
  EmOptions o;
  o.rank = 3;
  const GmmPrior p = fit_gmm_prior(data, 1, o).prior;
  REQUIRE(p.rank(0) >= 1);
  CHECK_NOTHROW(p.validate());
  // the shared brightness mode carries 9 * 0.09 of variance
  CHECK(p.spreads[0][0] == doctest::Approx(0.81).epsilon(0.3));
  for (int r = 1; r < p.rank(0); ++r) CHECK(p.spreads[0][r] <= p.spreads[0][r - 1]);
  CHECK(p.variances[0] < 0.01);
}

TEST_CASE("prior files round-trip, including low-rank factors") {
  testutil::TempDir dir("prior");
  std::vector<Frame> data;
  for (int k = 0; k < 20; ++k) data.push_back(testutil::random_frame(2, 3, 2, 700 + k));
  for (int rank : {0, 2}) {
    EmOptions o;
    o.rank = rank;
    const GmmPrior p = fit_gmm_prior(data, 2, o).prior;
    p.save(dir.path() / "p.bin");
    const GmmPrior q = GmmPrior::load(dir.path() / "p.bin");
    CHECK(q.weights == p.weights);
    CHECK(q.variances == p.variances);
    CHECK(q.means == p.means);
    CHECK(q.spreads == p.spreads);
    CHECK(q.directions == p.directions);
  }
}

TEST_CASE("invalid priors are rejected") {
  GmmPrior p = single_gaussian(2, 2, 1, 0.0, 0.1);
  p.weights = {0.5};
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = single_gaussian(2, 2, 1, 0.0, -1.0);
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = single_gaussian(2, 2, 1, 0.0, 0.1);
  p.directions = {{Frame(2, 2, 1, 1.0)}};
  p.spreads = {{1.0}};
  CHECK_THROWS_AS(p.validate(), ConfigError);
}
