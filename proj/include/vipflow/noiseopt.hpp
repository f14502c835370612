#pragma once

#include <iosfwd>
#include <random>
#include <vector>

#include "vipflow/diffusion.hpp"
#include "vipflow/imaging.hpp"

namespace vipflow {

/// Constrained generation task: find noise z whose reverse-chain output
/// matches `constraint_frame` wherever `constraint_mask` is 0.
struct NoiseOptProblem {
  Frame constraint_frame;  // x~^k_0
  Mask constraint_mask;    // m~^k, 1 = unconstrained
  double gamma = 1e-3;     // weight of ||z - z0||^2
  int steps = 50;
  double eta0 = 0.01;
  double decay = 0.9;      // eta_i = eta0 * decay^i
  double early_stop = 1e-6;  // stop once cond_loss falls below; <= 0 disables

  void validate() const;
};

struct IterationRecord {
  int iteration = 0;
  double eta = 0.0;
  double cond_loss = 0.0;
  double regularizer = 0.0;
  double total = 0.0;
};

struct OptimizationTrace {
  std::vector<IterationRecord> iterations;  // one per executed iteration
  Frame z0;
  Frame z_star;
  Frame output;  // sample(z_star), before paste-back
  double final_cond_loss = 0.0;
  double final_regularizer = 0.0;
  bool stopped_early = false;
};

/// ||(y_hat - x_tilde) * (1 - m_tilde)||^2, summed over channels.
double cond_loss(const Frame& y_hat, const Frame& x_tilde, const Mask& m_tilde);

/// Objective value (and optionally its gradient in z) at one noise.
struct ObjectiveValue {
  double cond_loss = 0.0;
  double regularizer = 0.0;
  double total = 0.0;
  Frame output;
  Frame gradient;  // empty unless requested
};

ObjectiveValue evaluate_objective(const NoiseOptProblem& problem, const Denoiser& denoiser,
                                  const DiffusionSchedule& sched, const Frame& z, const Frame& z0,
                                  bool with_gradient);

/// Draws z0 ~ N(0, I) from `rng`, then runs gradient descent on
/// cond_loss(sample(z)) + gamma ||z - z0||^2 with eta_i = eta0 * decay^i.
OptimizationTrace optimize_noise(const NoiseOptProblem& problem, const Denoiser& denoiser,
                                 const DiffusionSchedule& sched, std::mt19937_64& rng);

/// Same, from a given initial noise.
OptimizationTrace optimize_noise_from(const NoiseOptProblem& problem, const Denoiser& denoiser,
                                      const DiffusionSchedule& sched, const Frame& z0);

/// Max relative error between the adjoint directional derivative and a
/// central finite difference, over `probes` random unit directions at z.
double gradient_check(const NoiseOptProblem& problem, const Denoiser& denoiser, const DiffusionSchedule& sched,
                      const Frame& z, const Frame& z0, int probes, std::mt19937_64& rng, double step = 1e-5);
/// Convenience overload: z and z0 drawn from `rng` (z = z0 + small offset).
double gradient_check(const NoiseOptProblem& problem, const Denoiser& denoiser, const DiffusionSchedule& sched,
                      int probes, std::mt19937_64& rng);

/// Generated frame with constrained pixels overwritten by the constraint frame.
Frame paste_back(const Frame& generated, const Frame& constraint_frame, const Mask& constraint_mask);

/// One JSON object per line: iter, eta, cond_loss, reg, total.
void write_trace_jsonl(const OptimizationTrace& trace, std::ostream& os);

}  // namespace vipflow
