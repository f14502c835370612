#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "vipflow/imaging.hpp"

namespace vipflow {

/// Variance schedule beta_1..beta_T with alpha_bar_0 = 1.
class DiffusionSchedule {
 public:
  explicit DiffusionSchedule(std::vector<double> betas);
  /// Linearly spaced betas; the defaults are the 50-step schedule used throughout.
  static DiffusionSchedule linear(int steps = 50, double beta_start = 1e-4, double beta_end = 0.2);

  int steps() const { return static_cast<int>(betas_.size()); }
  double beta(int t) const { return betas_.at(t - 1); }
  double alpha(int t) const { return 1.0 - beta(t); }
  double alpha_bar(int t) const { return alpha_bar_.at(t); }
  double beta_start() const { return betas_.front(); }
  double beta_end() const { return betas_.back(); }
  std::span<const double> betas() const { return betas_; }

 private:
  std::vector<double> betas_;
  std::vector<double> alpha_bar_;  // index 0..T
};

/// Noise predictor eps_theta(x_t, t[, cond]) with a vector-Jacobian product.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual Frame predict(const Frame& x_t, int t, const Frame* cond = nullptr) const = 0;
  /// Gradient of <predict(x_t, t), cotangent> with respect to x_t.
  virtual Frame vjp(const Frame& x_t, int t, const Frame& cotangent, const Frame* cond = nullptr) const = 0;
};

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, t in [0, T].
Frame forward_diffuse(const Frame& x0, int t, const Frame& eps, const DiffusionSchedule& sched);

/// Deterministic (eta = 0) reverse update from step t to t-1:
/// x0_hat = (x_t - sqrt(1-abar_t) eps_hat) / sqrt(abar_t),
/// x_{t-1} = sqrt(abar_{t-1}) x0_hat + sqrt(1-abar_{t-1}) eps_hat.
Frame reverse_step(const Frame& x_t, int t, const Denoiser& denoiser, const DiffusionSchedule& sched,
                   const Frame* cond = nullptr);

/// Clean-image estimate implied by a noise prediction.
Frame predict_x0(const Frame& x_t, int t, const Frame& eps_hat, const DiffusionSchedule& sched);

/// Full reverse chain from z = x_T down to x_0.
Frame sample(const Denoiser& denoiser, const Frame& z, const DiffusionSchedule& sched, const Frame* cond = nullptr);

/// Reverse chain that keeps every intermediate state for the adjoint pass.
struct ChainTape {
  std::vector<Frame> states;  // states[t] = x_t, t = 0..T
  const Frame& output() const { return states.front(); }
};

ChainTape sample_with_tape(const Denoiser& denoiser, const Frame& z, const DiffusionSchedule& sched,
                           const Frame* cond = nullptr);

/// Adjoint of the reverse chain: d<x_0, cotangent>/dz, replaying the tape
/// from t = 1 up to T.
Frame sample_vjp(const Denoiser& denoiser, const ChainTape& tape, const Frame& cotangent,
                 const DiffusionSchedule& sched, const Frame* cond = nullptr);

/// Standard-normal frame of the given shape.
Frame gaussian_like(int height, int width, int channels, std::mt19937_64& rng);

/// Monte-Carlo estimate of E ||eps - eps_theta(x_t, t)||^2 over the batch,
/// t ~ U{1..T}, eps ~ N(0, I). One draw per batch element.
double ddpm_loss(const Denoiser& denoiser, std::span<const Frame> batch, const DiffusionSchedule& sched,
                 std::mt19937_64& rng);

// -- Gaussian-mixture prior -------------------------------------------------

/// Mixture of Gaussians over frames. Component i has covariance
///   variances[i] I + sum_r (spreads[i][r] - variances[i]) u_r u_r^T
/// with orthonormal u_r = directions[i][r]. Without directions the
/// components are isotropic.
struct GmmPrior {
  std::vector<double> weights;
  std::vector<Frame> means;
  std::vector<double> variances;
  std::vector<std::vector<Frame>> directions;  // empty, or one list per component
  std::vector<std::vector<double>> spreads;    // variance along each direction

  int components() const { return static_cast<int>(weights.size()); }
  int rank(int i) const { return directions.empty() ? 0 : static_cast<int>(directions[i].size()); }
  /// Throws ConfigError on non-normalized weights, non-positive variances,
  /// non-orthonormal directions or shape mismatch.
  void validate() const;

  /// Binary layout: "VFGMMPRI", u32 version (2), u32 K, u32 channels, u32 height,
  /// u32 width, then f64 weights[K], means[K][C*H*W], variances[K], and per
  /// component u32 R, f64 spreads[R], directions[R][C*H*W]; all little-endian.
  /// Version 1 files (no direction block) are still read.
  void save(const std::filesystem::path& path) const;
  static GmmPrior load(const std::filesystem::path& path);
};

/// Exact eps prediction under a GMM prior via the posterior mean E[x0 | x_t].
class GmmDenoiser final : public Denoiser {
 public:
  GmmDenoiser(GmmPrior prior, DiffusionSchedule sched);

  Frame predict(const Frame& x_t, int t, const Frame* cond = nullptr) const override;
  Frame vjp(const Frame& x_t, int t, const Frame& cotangent, const Frame* cond = nullptr) const override;

  /// E[x0 | x_t] and the component responsibilities.
  Frame posterior_mean(const Frame& x_t, int t, std::vector<double>* responsibilities = nullptr) const;

  const GmmPrior& prior() const { return prior_; }
  const DiffusionSchedule& schedule() const { return sched_; }

 private:
  struct Terms;
  Terms terms(const Frame& x_t, int t) const;

  GmmPrior prior_;
  DiffusionSchedule sched_;
};

Frame gmm_epsilon(const Frame& x_t, int t, const GmmPrior& prior, const DiffusionSchedule& sched);

struct EmOptions {
  int max_iterations = 200;
  double tolerance = 1e-9;  // relative log-likelihood change
  double variance_floor = 1e-6;
  std::uint64_t seed = 0;
  int rank = 0;  // principal directions kept per component after EM
};

struct GmmFit {
  GmmPrior prior;
  std::vector<double> log_likelihood;              // after each iteration
  std::vector<std::vector<double>> responsibility;  // [sample][component], final
};

/// Expectation-maximization with isotropic covariances. With rank > 0 each
/// component is then refit as probabilistic PCA on its responsibility-weighted
/// samples: the leading directions keep their variance and the rest is
/// pooled into the isotropic term.
GmmFit fit_gmm_prior(std::span<const Frame> samples, int components, const EmOptions& options = {});

// -- Tiny trainable denoiser ------------------------------------------------

struct TrainOptions {
  int steps = 500;
  double learning_rate = 1e-2;
  std::uint64_t seed = 0;
};

/// conv3x3 (C -> H) + per-step bias, tanh, conv1x1 (H -> C).
/// Works on any frame size with the channel count it was built for.
class TinyDenoiser final : public Denoiser {
 public:
  TinyDenoiser(int channels, int hidden, int steps, std::uint64_t seed = 0);

  Frame predict(const Frame& x_t, int t, const Frame* cond = nullptr) const override;
  Frame vjp(const Frame& x_t, int t, const Frame& cotangent, const Frame* cond = nullptr) const override;

  /// Adam on the DDPM objective; returns the per-step batch loss.
  std::vector<double> train(std::span<const Frame> batch, const DiffusionSchedule& sched,
                            const TrainOptions& options);

  int channels() const { return channels_; }
  int hidden() const { return hidden_; }
  std::size_t parameter_count() const { return params_.size(); }
  std::span<const double> parameters() const { return params_; }

  /// Binary layout: "VFTINYDN", u32 version, u32 channels, u32 hidden,
  /// u32 steps, f64 parameters[...]; little-endian.
  void save(const std::filesystem::path& path) const;
  static TinyDenoiser load(const std::filesystem::path& path);

 private:
  struct Forward;
  Forward forward(const Frame& x, int t) const;
  // accumulates d<out, cot>/d(params) into grad
  void backward_params(const Frame& x, int t, const Forward& fw, const Frame& cot, std::span<double> grad) const;

  std::size_t w1_offset() const { return 0; }
  std::size_t b1_offset() const { return w1_offset() + static_cast<std::size_t>(hidden_) * channels_ * 9; }
  std::size_t emb_offset() const { return b1_offset() + hidden_; }
  std::size_t w2_offset() const { return emb_offset() + static_cast<std::size_t>(steps_) * hidden_; }
  std::size_t b2_offset() const { return w2_offset() + static_cast<std::size_t>(channels_) * hidden_; }

  int channels_;
  int hidden_;
  int steps_;
  std::vector<double> params_;
};

}  // namespace vipflow
