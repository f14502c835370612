#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include <Eigen/Dense>

#include "binary_io.hpp"
#include "vipflow/diffusion.hpp"

namespace vipflow {

namespace {

constexpr char kGmmMagic[9] = "VFGMMPRI";
constexpr std::uint32_t kGmmVersion = 2;

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double log_sum_exp(std::span<const double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace

void GmmPrior::validate() const {
  const std::size_t k = weights.size();
  if (k == 0) throw ConfigError("gmm prior has no components");
  if (means.size() != k || variances.size() != k) throw ConfigError("gmm prior: component arrays disagree in length");
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    if (!(weights[i] > 0.0)) throw ConfigError("gmm prior: weight " + std::to_string(i) + " is not positive");
    if (!(variances[i] > 0.0)) throw ConfigError("gmm prior: variance " + std::to_string(i) + " is not positive");
    if (!means[i].same_shape(means[0])) throw ConfigError("gmm prior: mean " + std::to_string(i) + " shape mismatch");
    total += weights[i];
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("gmm prior: weights sum to " + std::to_string(total));
  if (directions.empty() && spreads.empty()) return;
  if (directions.size() != k || spreads.size() != k) throw ConfigError("gmm prior: direction lists disagree in length");
  for (std::size_t i = 0; i < k; ++i) {
    const auto& u = directions[i];
    const std::string tag = "gmm prior: component " + std::to_string(i);
    if (spreads[i].size() != u.size()) throw ConfigError(tag + " has " + std::to_string(u.size()) + " directions and " +
                                                         std::to_string(spreads[i].size()) + " spreads");
    for (std::size_t r = 0; r < u.size(); ++r) {
      if (!u[r].same_shape(means[0])) throw ConfigError(tag + " direction shape mismatch");
      if (!(spreads[i][r] > 0.0) || !std::isfinite(spreads[i][r])) throw ConfigError(tag + " has a non-positive spread");
      for (std::size_t q = 0; q <= r; ++q) {
        const double g = dot(u[r].data(), u[q].data());
        if (std::abs(g - (q == r ? 1.0 : 0.0)) > 1e-6) throw ConfigError(tag + " directions are not orthonormal");
      }
    }
  }
}

void GmmPrior::save(const std::filesystem::path& path) const {
  validate();
  detail::LeWriter w(path);
  w.magic(kGmmMagic);
  w.u32(kGmmVersion);
  w.u32(static_cast<std::uint32_t>(components()));
  w.u32(static_cast<std::uint32_t>(means[0].channels()));
  w.u32(static_cast<std::uint32_t>(means[0].height()));
  w.u32(static_cast<std::uint32_t>(means[0].width()));
  for (double v : weights) w.f64(v);
  for (const Frame& m : means) {
    for (double v : m.data()) w.f64(v);
  }
  for (double v : variances) w.f64(v);
  for (int i = 0; i < components(); ++i) {
    w.u32(static_cast<std::uint32_t>(rank(i)));
    for (int r = 0; r < rank(i); ++r) w.f64(spreads[i][r]);
    for (int r = 0; r < rank(i); ++r) {
      for (double v : directions[i][r].data()) w.f64(v);
    }
  }
  w.finish();
}

GmmPrior GmmPrior::load(const std::filesystem::path& path) {
  detail::LeReader r(path);
  r.expect_magic(kGmmMagic);
  const auto version = r.u32();
  if (version != 1 && version != kGmmVersion) throw IoError("unsupported gmm prior version " + std::to_string(version));
  const auto k = r.u32(), c = r.u32(), h = r.u32(), w = r.u32();
  if (k == 0 || k > 100000 || c == 0 || c > 4 || h == 0 || w == 0 || h > 8192 || w > 8192) {
    throw IoError("implausible gmm prior header in " + path.string());
  }
  GmmPrior p;
  p.weights.resize(k);
  for (auto& v : p.weights) v = r.f64();
  for (std::uint32_t i = 0; i < k; ++i) {
    Frame m(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
    for (auto& v : m.data()) v = r.f64();
    p.means.push_back(std::move(m));
  }
  p.variances.resize(k);
  for (auto& v : p.variances) v = r.f64();
  if (version >= 2) {
    p.directions.resize(k);
    p.spreads.resize(k);
    bool any = false;
    for (std::uint32_t i = 0; i < k; ++i) {
      const auto rank = r.u32();
      if (static_cast<std::size_t>(rank) > std::size_t{c} * h * w) throw IoError("implausible gmm rank in " + path.string());
      p.spreads[i].resize(rank);
      for (auto& v : p.spreads[i]) v = r.f64();
      for (std::uint32_t q = 0; q < rank; ++q) {
        Frame u(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
        for (auto& v : u.data()) v = r.f64();
        p.directions[i].push_back(std::move(u));
      }
      any = any || rank > 0;
    }
    if (!any) {
      p.directions.clear();
      p.spreads.clear();
    }
  }
  p.validate();
  return p;
}

// Per-call quantities shared by predict and vjp. For component i with
// d_i = x - a mu_i and p_ir = u_ir . d_i:
//   v_perp = a^2 sigma^2 + s^2,   v_r = a^2 l_r + s^2
//   k_perp = a sigma^2 / v_perp,  k_r = a l_r / v_r
//   m_i = mu_i + k_perp d_i + sum_r (k_r - k_perp) p_ir u_ir
struct GmmDenoiser::Terms {
  double a = 0.0;  // sqrt(abar_t)
  double s = 0.0;  // sqrt(1 - abar_t)
  std::vector<double> resp;   // posterior component probabilities
  std::vector<double> gain;   // k_perp
  std::vector<double> marg;   // v_perp
  std::vector<std::vector<double>> proj;      // p_ir
  std::vector<std::vector<double>> dir_gain;  // k_r
  std::vector<std::vector<double>> dir_marg;  // v_r
};

GmmDenoiser::GmmDenoiser(GmmPrior prior, DiffusionSchedule sched) : prior_(std::move(prior)), sched_(std::move(sched)) {
  prior_.validate();
}

GmmDenoiser::Terms GmmDenoiser::terms(const Frame& x_t, int t) const {
  if (t < 1 || t > sched_.steps()) {
    throw ConfigError("gmm denoiser: step " + std::to_string(t) + " outside [1, " + std::to_string(sched_.steps()) + "]");
  }
  if (!x_t.same_shape(prior_.means[0])) {
    throw ShapeError("gmm denoiser: input " + x_t.shape_string() + ", prior " + prior_.means[0].shape_string());
  }
  const int k = prior_.components();
  const double dims = static_cast<double>(x_t.size());
  Terms tm;
  tm.a = std::sqrt(sched_.alpha_bar(t));
  tm.s = std::sqrt(1.0 - sched_.alpha_bar(t));
  const double a2 = tm.a * tm.a, s2 = tm.s * tm.s;
  tm.resp.resize(k);
  tm.gain.resize(k);
  tm.marg.resize(k);
  tm.proj.resize(k);
  tm.dir_gain.resize(k);
  tm.dir_marg.resize(k);
  Frame d(x_t.height(), x_t.width(), x_t.channels());
  for (int i = 0; i < k; ++i) {
    const double var = prior_.variances[i];
    const double vp = a2 * var + s2;
    tm.marg[i] = vp;
    tm.gain[i] = tm.a * var / vp;
    auto mu = prior_.means[i].data();
    for (std::size_t p = 0; p < x_t.size(); ++p) d[p] = x_t[p] - tm.a * mu[p];
    const double d2 = dot(d.data(), d.data());
    const int rank = prior_.rank(i);
    double logdet = (dims - rank) * std::log(vp);
    double quad = d2 / vp;
    for (int r = 0; r < rank; ++r) {
      const double l = prior_.spreads[i][r];
      const double vr = a2 * l + s2;
      const double pr = dot(prior_.directions[i][r].data(), d.data());
      tm.proj[i].push_back(pr);
      tm.dir_gain[i].push_back(tm.a * l / vr);
      tm.dir_marg[i].push_back(vr);
      logdet += std::log(vr);
      quad += pr * pr * (1.0 / vr - 1.0 / vp);
    }
    tm.resp[i] = std::log(prior_.weights[i]) - 0.5 * (logdet + dims * std::log(2.0 * std::numbers::pi)) - 0.5 * quad;
  }
  const double lse = log_sum_exp(tm.resp);
  for (auto& r : tm.resp) r = std::exp(r - lse);
  return tm;
}

Frame GmmDenoiser::posterior_mean(const Frame& x_t, int t, std::vector<double>* responsibilities) const {
  const Terms tm = terms(x_t, t);
  Frame mean(x_t.height(), x_t.width(), x_t.channels());
  for (int i = 0; i < prior_.components(); ++i) {
    const double r = tm.resp[i];
    if (r == 0.0) continue;
    auto mu = prior_.means[i].data();
    const double k = tm.gain[i];
    for (std::size_t p = 0; p < mean.size(); ++p) mean[p] += r * (mu[p] + k * (x_t[p] - tm.a * mu[p]));
    for (int q = 0; q < prior_.rank(i); ++q) {
      const double c = r * (tm.dir_gain[i][q] - k) * tm.proj[i][q];
      auto u = prior_.directions[i][q].data();
      for (std::size_t p = 0; p < mean.size(); ++p) mean[p] += c * u[p];
    }
  }
  if (responsibilities) *responsibilities = tm.resp;
  return mean;
}

Frame GmmDenoiser::predict(const Frame& x_t, int t, const Frame*) const {
  const Frame mean = posterior_mean(x_t, t);
  const double a = std::sqrt(sched_.alpha_bar(t)), s = std::sqrt(1.0 - sched_.alpha_bar(t));
  Frame eps = x_t;
  for (std::size_t p = 0; p < eps.size(); ++p) eps[p] = (x_t[p] - a * mean[p]) / s;
  return eps;
}

Frame GmmDenoiser::vjp(const Frame& x_t, int t, const Frame& cot, const Frame*) const {
  if (!cot.same_shape(x_t)) throw ShapeError("gmm vjp: cotangent " + cot.shape_string() + " vs " + x_t.shape_string());
  const Terms tm = terms(x_t, t);
  const int k = prior_.components();
  // Jacobian of E[x0|x_t] transposed onto c:
  //   sum_i r_i M_i c - sum_i r_i (m_i.c - sum_j r_j m_j.c) P_i d_i
  // M_i = dm_i/dx (symmetric), P_i d_i = C_i(t)^{-1} d_i.
  const double xc = dot(x_t.data(), cot.data());
  std::vector<double> mc(k, 0.0);
  std::vector<std::vector<double>> uc(k);
  double mbar = 0.0;
  for (int i = 0; i < k; ++i) {
    const double muc = dot(prior_.means[i].data(), cot.data());
    const double dc = xc - tm.a * muc;
    mc[i] = muc + tm.gain[i] * dc;
    for (int q = 0; q < prior_.rank(i); ++q) {
      uc[i].push_back(dot(prior_.directions[i][q].data(), cot.data()));
      mc[i] += (tm.dir_gain[i][q] - tm.gain[i]) * tm.proj[i][q] * uc[i][q];
    }
    mbar += tm.resp[i] * mc[i];
  }
  Frame jt(x_t.height(), x_t.width(), x_t.channels());
  double diag = 0.0;
  for (int i = 0; i < k; ++i) {
    const double r = tm.resp[i];
    if (r == 0.0) continue;
    diag += r * tm.gain[i];
    const double beta = r * (mc[i] - mbar);
    // isotropic part of P_i d_i
    const double iso = beta / tm.marg[i];
    auto mu = prior_.means[i].data();
    if (iso != 0.0) {
      for (std::size_t p = 0; p < jt.size(); ++p) jt[p] -= iso * (x_t[p] - tm.a * mu[p]);
    }
    for (int q = 0; q < prior_.rank(i); ++q) {
      const double c = r * (tm.dir_gain[i][q] - tm.gain[i]) * uc[i][q] -
                       beta * (1.0 / tm.dir_marg[i][q] - 1.0 / tm.marg[i]) * tm.proj[i][q];
      if (c == 0.0) continue;
      auto u = prior_.directions[i][q].data();
      for (std::size_t p = 0; p < jt.size(); ++p) jt[p] += c * u[p];
    }
  }
  for (std::size_t p = 0; p < jt.size(); ++p) jt[p] += diag * cot[p];
  // eps = (x - a E) / s  =>  J_eps^T c = (c - a J_E^T c) / s
  Frame out = cot;
  for (std::size_t p = 0; p < out.size(); ++p) out[p] = (cot[p] - tm.a * jt[p]) / tm.s;
  return out;
}

Frame gmm_epsilon(const Frame& x_t, int t, const GmmPrior& prior, const DiffusionSchedule& sched) {
  return GmmDenoiser(prior, sched).predict(x_t, t);
}

namespace {

// Weighted PCA of component i through the n x n Gram matrix. Keeps up to
// options.rank directions whose variance exceeds the pooled remainder.
void fit_directions(std::span<const Frame> samples, const std::vector<std::vector<double>>& resp, int i,
                    const EmOptions& options, GmmPrior& p) {
  const int n = static_cast<int>(samples.size());
  const std::size_t dims = samples[0].size();
  double mass = 0.0;
  for (int s = 0; s < n; ++s) mass += resp[s][i];
  if (mass <= 0.0) return;
  std::vector<int> rows;
  for (int s = 0; s < n; ++s) {
    if (resp[s][i] > 1e-12) rows.push_back(s);
  }
  const int m = static_cast<int>(rows.size());
  Eigen::MatrixXd y(m, static_cast<Eigen::Index>(dims));
  auto mu = p.means[i].data();
  for (int a = 0; a < m; ++a) {
    const double w = std::sqrt(resp[rows[a]][i] / mass);
    for (std::size_t q = 0; q < dims; ++q) y(a, static_cast<Eigen::Index>(q)) = w * (samples[rows[a]][q] - mu[q]);
  }
  const Eigen::MatrixXd gram = y * y.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  if (eig.info() != Eigen::Success) throw NumericError("fit_gmm_prior: eigen decomposition failed");
  const double trace = gram.trace();
  const int max_rank = std::min({options.rank, m, static_cast<int>(dims) - 1});
  // eigenvalues come in ascending order
  int keep = 0;
  double kept = 0.0;
  double sigma2 = std::max(trace / dims, options.variance_floor);
  for (int r = 0; r < max_rank; ++r) {
    const double l = eig.eigenvalues()(m - 1 - r);
    const double rest = std::max((trace - kept - l) / (dims - r - 1), options.variance_floor);
    if (!(l > rest)) break;
    kept += l;
    keep = r + 1;
    sigma2 = rest;
  }
  for (int r = 0; r < keep; ++r) {
    const double l = eig.eigenvalues()(m - 1 - r);
    const Eigen::VectorXd u = y.transpose() * eig.eigenvectors().col(m - 1 - r) / std::sqrt(l);
    Frame dir(p.means[i].height(), p.means[i].width(), p.means[i].channels());
    for (std::size_t q = 0; q < dims; ++q) dir[q] = u(static_cast<Eigen::Index>(q));
    // re-orthonormalize against rounding
    for (const Frame& prev : p.directions[i]) {
      const double g = dot(prev.data(), dir.data());
      for (std::size_t q = 0; q < dims; ++q) dir[q] -= g * prev[q];
    }
    const double norm = std::sqrt(dot(dir.data(), dir.data()));
    for (auto& v : dir.data()) v /= norm;
    p.directions[i].push_back(std::move(dir));
    p.spreads[i].push_back(l);
  }
  p.variances[i] = sigma2;
}

}  // namespace

GmmFit fit_gmm_prior(std::span<const Frame> samples, int components, const EmOptions& options) {
  if (components < 1) throw ConfigError("fit_gmm_prior: component count must be >= 1");
  if (static_cast<int>(samples.size()) < components) {
    throw ConfigError("fit_gmm_prior: " + std::to_string(samples.size()) + " samples for " +
                      std::to_string(components) + " components");
  }
  for (const Frame& f : samples) {
    if (!f.same_shape(samples[0])) throw ShapeError("fit_gmm_prior: sample shapes differ");
  }
  const int n = static_cast<int>(samples.size());
  const int k = components;
  const double dims = static_cast<double>(samples[0].size());

  auto sqdist = [](const Frame& a, const Frame& b) {
    double s = 0.0;
    for (std::size_t p = 0; p < a.size(); ++p) s += (a[p] - b[p]) * (a[p] - b[p]);
    return s;
  };

  // Seeded first center, then farthest-point picks.
  std::mt19937_64 rng(options.seed);
  std::vector<int> centers{std::uniform_int_distribution<int>(0, n - 1)(rng)};
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  while (static_cast<int>(centers.size()) < k) {
    for (int s = 0; s < n; ++s) nearest[s] = std::min(nearest[s], sqdist(samples[s], samples[centers.back()]));
    centers.push_back(static_cast<int>(std::max_element(nearest.begin(), nearest.end()) - nearest.begin()));
  }

  GmmFit fit;
  GmmPrior& p = fit.prior;
  Frame grand(samples[0].height(), samples[0].width(), samples[0].channels());
  for (const Frame& f : samples) {
    for (std::size_t q = 0; q < grand.size(); ++q) grand[q] += f[q];
  }
  for (auto& v : grand.data()) v /= n;
  double total_var = 0.0;
  for (const Frame& f : samples) total_var += sqdist(f, grand);
  total_var = std::max(total_var / (n * dims), options.variance_floor);

  p.weights.assign(k, 1.0 / k);
  p.variances.assign(k, total_var);
  for (int c : centers) p.means.push_back(samples[c]);

  std::vector<std::vector<double>> resp(n, std::vector<double>(k));
  auto e_step = [&]() {
    double ll = 0.0;
    for (int s = 0; s < n; ++s) {
      for (int i = 0; i < k; ++i) {
        resp[s][i] = std::log(p.weights[i]) - 0.5 * dims * std::log(2.0 * std::numbers::pi * p.variances[i]) -
                     0.5 * sqdist(samples[s], p.means[i]) / p.variances[i];
      }
      const double lse = log_sum_exp(resp[s]);
      ll += lse;
      for (auto& r : resp[s]) r = std::exp(r - lse);
    }
    return ll;
  };

  double ll = e_step();
  for (int it = 0; it < options.max_iterations; ++it) {
    for (int i = 0; i < k; ++i) {
      double mass = 0.0;
      for (int s = 0; s < n; ++s) mass += resp[s][i];
      if (mass <= 0.0) continue;  // keep an empty component where it is
      Frame mean(samples[0].height(), samples[0].width(), samples[0].channels());
      for (int s = 0; s < n; ++s) {
        const double r = resp[s][i];
        if (r == 0.0) continue;
        for (std::size_t q = 0; q < mean.size(); ++q) mean[q] += r * samples[s][q];
      }
      for (auto& v : mean.data()) v /= mass;
      double spread = 0.0;
      for (int s = 0; s < n; ++s) spread += resp[s][i] * sqdist(samples[s], mean);
      p.means[i] = std::move(mean);
      p.variances[i] = std::max(spread / (mass * dims), options.variance_floor);
      p.weights[i] = mass / n;
    }
    for (auto& w : p.weights) w = std::max(w, 1e-12);
    const double wsum = std::accumulate(p.weights.begin(), p.weights.end(), 0.0);
    for (auto& w : p.weights) w /= wsum;

    const double next = e_step();
    fit.log_likelihood.push_back(next);
    const bool converged = std::abs(next - ll) <= options.tolerance * std::max(1.0, std::abs(ll));
    ll = next;
    if (converged) break;
  }
  if (options.rank < 0) throw ConfigError("fit_gmm_prior: rank must be >= 0");
  if (options.rank > 0) {
    p.directions.assign(k, {});
    p.spreads.assign(k, {});
    for (int i = 0; i < k; ++i) fit_directions(samples, resp, i, options, p);
    bool any = false;
    for (int i = 0; i < k; ++i) any = any || p.rank(i) > 0;
    if (!any) {
      p.directions.clear();
      p.spreads.clear();
    }
  }
  fit.responsibility = resp;
  p.validate();
  return fit;
}

}  // namespace vipflow
