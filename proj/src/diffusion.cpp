#include "vipflow/diffusion.hpp"

#include <cmath>

namespace vipflow {

DiffusionSchedule::DiffusionSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
  if (betas_.empty()) throw ConfigError("diffusion schedule needs at least one step");
  alpha_bar_.assign(betas_.size() + 1, 1.0);
  for (std::size_t t = 1; t <= betas_.size(); ++t) {
    const double b = betas_[t - 1];
    if (!(b > 0.0 && b < 1.0)) {
      throw ConfigError("beta_" + std::to_string(t) + " = " + std::to_string(b) + " outside (0, 1)");
    }
    alpha_bar_[t] = alpha_bar_[t - 1] * (1.0 - b);
  }
}

DiffusionSchedule DiffusionSchedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw ConfigError("schedule step count must be >= 1");
  std::vector<double> betas(steps);
  for (int i = 0; i < steps; ++i) {
    betas[i] = steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * i / (steps - 1.0);
  }
  return DiffusionSchedule(std::move(betas));
}

namespace {

void check_step(int t, int lo, const DiffusionSchedule& sched, const char* what) {
  if (t < lo || t > sched.steps()) {
    throw ConfigError(std::string(what) + ": step " + std::to_string(t) + " outside [" + std::to_string(lo) +
                      ", " + std::to_string(sched.steps()) + "]");
  }
}

void check_finite(const Frame& f, int t) {
  for (double v : f.data()) {
    if (!std::isfinite(v)) throw NumericError("non-finite denoiser output at step " + std::to_string(t));
  }
}

// x_{t-1} = A x_t + B eps_hat
struct StepCoefficients {
  double a;
  double b;
};

StepCoefficients step_coefficients(int t, const DiffusionSchedule& sched) {
  const double at = std::sqrt(sched.alpha_bar(t)), st = std::sqrt(1.0 - sched.alpha_bar(t));
  const double ap = std::sqrt(sched.alpha_bar(t - 1)), sp = std::sqrt(1.0 - sched.alpha_bar(t - 1));
  return {ap / at, sp - ap * st / at};
}

}  // namespace

Frame forward_diffuse(const Frame& x0, int t, const Frame& eps, const DiffusionSchedule& sched) {
  check_step(t, 0, sched, "forward_diffuse");
  if (!x0.same_shape(eps)) throw ShapeError("forward_diffuse: " + x0.shape_string() + " vs " + eps.shape_string());
  const double a = std::sqrt(sched.alpha_bar(t)), s = std::sqrt(1.0 - sched.alpha_bar(t));
  Frame out = x0;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + s * eps[i];
  return out;
}

Frame predict_x0(const Frame& x_t, int t, const Frame& eps_hat, const DiffusionSchedule& sched) {
  const double a = std::sqrt(sched.alpha_bar(t)), s = std::sqrt(1.0 - sched.alpha_bar(t));
  Frame out = x_t;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (x_t[i] - s * eps_hat[i]) / a;
  return out;
}

Frame reverse_step(const Frame& x_t, int t, const Denoiser& denoiser, const DiffusionSchedule& sched,
                   const Frame* cond) {
  check_step(t, 1, sched, "reverse_step");
  const Frame eps = denoiser.predict(x_t, t, cond);
  if (!eps.same_shape(x_t)) throw ShapeError("denoiser returned " + eps.shape_string() + " for " + x_t.shape_string());
  check_finite(eps, t);
  const Frame x0 = predict_x0(x_t, t, eps, sched);
  const double ap = std::sqrt(sched.alpha_bar(t - 1)), sp = std::sqrt(1.0 - sched.alpha_bar(t - 1));
  Frame out = x0;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ap * x0[i] + sp * eps[i];
  return out;
}

Frame sample(const Denoiser& denoiser, const Frame& z, const DiffusionSchedule& sched, const Frame* cond) {
  Frame x = z;
  for (int t = sched.steps(); t >= 1; --t) x = reverse_step(x, t, denoiser, sched, cond);
  return x;
}

ChainTape sample_with_tape(const Denoiser& denoiser, const Frame& z, const DiffusionSchedule& sched,
                           const Frame* cond) {
  ChainTape tape;
  tape.states.resize(sched.steps() + 1);
  tape.states[sched.steps()] = z;
  for (int t = sched.steps(); t >= 1; --t) tape.states[t - 1] = reverse_step(tape.states[t], t, denoiser, sched, cond);
  return tape;
}

Frame sample_vjp(const Denoiser& denoiser, const ChainTape& tape, const Frame& cotangent,
                 const DiffusionSchedule& sched, const Frame* cond) {
  if (static_cast<int>(tape.states.size()) != sched.steps() + 1) throw ConfigError("sample_vjp: tape/schedule mismatch");
  Frame g = cotangent;
  for (int t = 1; t <= sched.steps(); ++t) {
    const auto [a, b] = step_coefficients(t, sched);
    const Frame jt = denoiser.vjp(tape.states[t], t, g, cond);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = a * g[i] + b * jt[i];
  }
  return g;
}

Frame gaussian_like(int height, int width, int channels, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Frame f(height, width, channels);
  for (auto& v : f.data()) v = normal(rng);
  return f;
}

double ddpm_loss(const Denoiser& denoiser, std::span<const Frame> batch, const DiffusionSchedule& sched,
                 std::mt19937_64& rng) {
  if (batch.empty()) throw ConfigError("ddpm_loss: empty batch");
  std::uniform_int_distribution<int> step(1, sched.steps());
  double total = 0.0;
  for (const Frame& x0 : batch) {
    const int t = step(rng);
    const Frame eps = gaussian_like(x0.height(), x0.width(), x0.channels(), rng);
    const Frame pred = denoiser.predict(forward_diffuse(x0, t, eps, sched), t);
    double sq = 0.0;
    for (std::size_t i = 0; i < eps.size(); ++i) sq += (eps[i] - pred[i]) * (eps[i] - pred[i]);
    total += sq;
  }
  return total / static_cast<double>(batch.size());
}

}  // namespace vipflow
