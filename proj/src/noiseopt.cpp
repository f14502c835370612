#include "vipflow/noiseopt.hpp"

#include <cmath>
#include <ostream>

#include "json.hpp"

namespace vipflow {

void NoiseOptProblem::validate() const {
  if (!constraint_mask.matches(constraint_frame)) {
    throw ShapeError("noise optimization: constraint frame " + constraint_frame.shape_string() + " vs mask " +
                     constraint_mask.shape_string());
  }
  if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (!(eta0 > 0.0)) throw ConfigError("eta0 must be > 0");
  if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError("decay must be in (0, 1]");
}

double cond_loss(const Frame& y_hat, const Frame& x_tilde, const Mask& m_tilde) {
  if (!y_hat.same_shape(x_tilde) || !m_tilde.matches(y_hat)) {
    throw ShapeError("cond_loss: " + y_hat.shape_string() + ", " + x_tilde.shape_string() + ", mask " +
                     m_tilde.shape_string());
  }
  double s = 0.0;
  for (int c = 0; c < y_hat.channels(); ++c) {
    auto a = y_hat.channel(c);
    auto b = x_tilde.channel(c);
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (m_tilde[i]) continue;
      s += (a[i] - b[i]) * (a[i] - b[i]);
    }
  }
  return s;
}

ObjectiveValue evaluate_objective(const NoiseOptProblem& problem, const Denoiser& denoiser,
                                  const DiffusionSchedule& sched, const Frame& z, const Frame& z0,
                                  bool with_gradient) {
  ObjectiveValue v;
  double reg = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) reg += (z[i] - z0[i]) * (z[i] - z0[i]);
  v.regularizer = reg;

  const Frame& target = problem.constraint_frame;
  const Mask& free = problem.constraint_mask;
  if (!with_gradient) {
    v.output = sample(denoiser, z, sched);
    v.cond_loss = cond_loss(v.output, target, free);
    v.total = v.cond_loss + problem.gamma * v.regularizer;
    return v;
  }
  const ChainTape tape = sample_with_tape(denoiser, z, sched);
  v.output = tape.output();
  v.cond_loss = cond_loss(v.output, target, free);
  v.total = v.cond_loss + problem.gamma * v.regularizer;

  Frame cot(z.height(), z.width(), z.channels());
  const std::size_t plane = z.plane_size();
  for (int c = 0; c < z.channels(); ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      if (free[i]) continue;
      const std::size_t p = c * plane + i;
      cot[p] = 2.0 * (v.output[p] - target[p]);
    }
  }
  v.gradient = sample_vjp(denoiser, tape, cot, sched);
  for (std::size_t i = 0; i < z.size(); ++i) v.gradient[i] += 2.0 * problem.gamma * (z[i] - z0[i]);
  return v;
}

OptimizationTrace optimize_noise_from(const NoiseOptProblem& problem, const Denoiser& denoiser,
                                      const DiffusionSchedule& sched, const Frame& z0) {
  problem.validate();
  if (!z0.same_shape(problem.constraint_frame)) {
    throw ShapeError("optimize_noise: z0 " + z0.shape_string() + " vs constraint " + problem.constraint_frame.shape_string());
  }
  OptimizationTrace trace;
  trace.z0 = z0;
  Frame z = z0;
  double eta = problem.eta0;
  for (int it = 0; it < problem.steps; ++it) {
    const ObjectiveValue v = evaluate_objective(problem, denoiser, sched, z, z0, true);
    trace.iterations.push_back({it, eta, v.cond_loss, v.regularizer, v.total});
    if (problem.early_stop > 0.0 && v.cond_loss < problem.early_stop) {
      trace.stopped_early = true;
      break;
    }
    double norm2 = 0.0;
    for (double g : v.gradient.data()) norm2 += g * g;
    if (!std::isfinite(norm2)) {
      double znorm = 0.0;
      for (double x : z.data()) znorm += x * x;
      throw NumericError("non-finite gradient at iteration " + std::to_string(it) + " (|z| = " +
                         std::to_string(std::sqrt(znorm)) + ", cond_loss = " + std::to_string(v.cond_loss) + ")");
    }
    for (std::size_t i = 0; i < z.size(); ++i) z[i] -= eta * v.gradient[i];
    eta *= problem.decay;
  }
  const ObjectiveValue last = evaluate_objective(problem, denoiser, sched, z, z0, false);
  trace.z_star = std::move(z);
  trace.output = last.output;
  trace.final_cond_loss = last.cond_loss;
  trace.final_regularizer = last.regularizer;
  return trace;
}

OptimizationTrace optimize_noise(const NoiseOptProblem& problem, const Denoiser& denoiser,
                                 const DiffusionSchedule& sched, std::mt19937_64& rng) {
  const Frame& f = problem.constraint_frame;
  const Frame z0 = gaussian_like(f.height(), f.width(), f.channels(), rng);
  return optimize_noise_from(problem, denoiser, sched, z0);
}

double gradient_check(const NoiseOptProblem& problem, const Denoiser& denoiser, const DiffusionSchedule& sched,
                      const Frame& z, const Frame& z0, int probes, std::mt19937_64& rng, double step) {
  if (probes < 1) throw ConfigError("gradient_check: probes must be >= 1");
  const ObjectiveValue at = evaluate_objective(problem, denoiser, sched, z, z0, true);
  double worst = 0.0;
  for (int k = 0; k < probes; ++k) {
    Frame d = gaussian_like(z.height(), z.width(), z.channels(), rng);
    double norm = 0.0;
    for (double x : d.data()) norm += x * x;
    norm = std::sqrt(norm);
    for (auto& x : d.data()) x /= norm;
    double analytic = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) analytic += at.gradient[i] * d[i];
    Frame zp = z, zm = z;
    for (std::size_t i = 0; i < d.size(); ++i) {
      zp[i] += step * d[i];
      zm[i] -= step * d[i];
    }
    const double fp = evaluate_objective(problem, denoiser, sched, zp, z0, false).total;
    const double fm = evaluate_objective(problem, denoiser, sched, zm, z0, false).total;
    const double numeric = (fp - fm) / (2.0 * step);
    const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
    worst = std::max(worst, std::abs(analytic - numeric) / scale);
  }
  return worst;
}

double gradient_check(const NoiseOptProblem& problem, const Denoiser& denoiser, const DiffusionSchedule& sched,
                      int probes, std::mt19937_64& rng) {
  const Frame& f = problem.constraint_frame;
  const Frame z0 = gaussian_like(f.height(), f.width(), f.channels(), rng);
  Frame z = z0;
  const Frame offset = gaussian_like(f.height(), f.width(), f.channels(), rng);
  for (std::size_t i = 0; i < z.size(); ++i) z[i] += 0.1 * offset[i];
  return gradient_check(problem, denoiser, sched, z, z0, probes, rng);
}

Frame paste_back(const Frame& generated, const Frame& constraint_frame, const Mask& constraint_mask) {
  if (!generated.same_shape(constraint_frame) || !constraint_mask.matches(generated)) {
    throw ShapeError("paste_back: shape mismatch");
  }
  Frame out = generated;
  const std::size_t plane = out.plane_size();
  for (int c = 0; c < out.channels(); ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      if (!constraint_mask[i]) out[c * plane + i] = constraint_frame[c * plane + i];
    }
  }
  return out;
}

void write_trace_jsonl(const OptimizationTrace& trace, std::ostream& os) {
  for (const auto& r : trace.iterations) {
    nlohmann::json j = {{"iter", r.iteration}, {"eta", r.eta}, {"cond_loss", r.cond_loss},
                        {"reg", r.regularizer}, {"total", r.total}};
    os << j.dump() << '\n';
  }
}

}  // namespace vipflow
