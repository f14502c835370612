#include <cmath>

#include "binary_io.hpp"
#include "vipflow/diffusion.hpp"

namespace vipflow {

namespace {

constexpr char kTinyMagic[9] = "VFTINYDN";
constexpr std::uint32_t kTinyVersion = 1;

}  // namespace

struct TinyDenoiser::Forward {
  std::vector<double> act;  // [hidden][h*w], tanh outputs
  Frame out;
};

TinyDenoiser::TinyDenoiser(int channels, int hidden, int steps, std::uint64_t seed)
    : channels_(channels), hidden_(hidden), steps_(steps) {
  if (channels < 1 || hidden < 1 || steps < 1) throw ConfigError("tiny denoiser: sizes must be positive");
  params_.assign(b2_offset() + channels_, 0.0);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> w1(0.0, 1.0 / std::sqrt(9.0 * channels_));
  std::normal_distribution<double> w2(0.0, 1.0 / std::sqrt(static_cast<double>(hidden_)));
  for (std::size_t i = w1_offset(); i < b1_offset(); ++i) params_[i] = w1(rng);
  for (std::size_t i = w2_offset(); i < b2_offset(); ++i) params_[i] = w2(rng);
}

TinyDenoiser::Forward TinyDenoiser::forward(const Frame& x, int t) const {
  if (x.channels() != channels_) {
    throw ShapeError("tiny denoiser built for " + std::to_string(channels_) + " channels, got " + x.shape_string());
  }
  if (t < 1 || t > steps_) throw ConfigError("tiny denoiser: step " + std::to_string(t) + " out of range");
  const int h = x.height(), w = x.width();
  const std::size_t plane = x.plane_size();
  Forward fw;
  fw.act.assign(static_cast<std::size_t>(hidden_) * plane, 0.0);
  const double* w1 = params_.data() + w1_offset();
  const double* b1 = params_.data() + b1_offset();
  const double* emb = params_.data() + emb_offset() + static_cast<std::size_t>(t - 1) * hidden_;
  for (int k = 0; k < hidden_; ++k) {
    double* a = fw.act.data() + k * plane;
    for (std::size_t p = 0; p < plane; ++p) a[p] = b1[k] + emb[k];
    for (int c = 0; c < channels_; ++c) {
      auto xc = x.channel(c);
      for (int oy = -1; oy <= 1; ++oy) {
        for (int ox = -1; ox <= 1; ++ox) {
          const double wt = w1[(k * channels_ + c) * 9 + (oy + 1) * 3 + (ox + 1)];
          for (int y = std::max(0, -oy); y < std::min(h, h - oy); ++y) {
            for (int xx = std::max(0, -ox); xx < std::min(w, w - ox); ++xx) {
              a[y * w + xx] += wt * xc[(y + oy) * w + xx + ox];
            }
          }
        }
      }
    }
    for (std::size_t p = 0; p < plane; ++p) a[p] = std::tanh(a[p]);
  }
  const double* w2 = params_.data() + w2_offset();
  const double* b2 = params_.data() + b2_offset();
  fw.out = Frame(h, w, channels_);
  for (int c = 0; c < channels_; ++c) {
    auto oc = fw.out.channel(c);
    for (std::size_t p = 0; p < plane; ++p) oc[p] = b2[c];
    for (int k = 0; k < hidden_; ++k) {
      const double wt = w2[c * hidden_ + k];
      const double* a = fw.act.data() + k * plane;
      for (std::size_t p = 0; p < plane; ++p) oc[p] += wt * a[p];
    }
  }
  return fw;
}

Frame TinyDenoiser::predict(const Frame& x_t, int t, const Frame*) const { return forward(x_t, t).out; }

namespace {

// d<out, cot>/d(pre-activation) for every hidden unit.
std::vector<double> hidden_grad(const std::vector<double>& act, const Frame& cot, const double* w2, int channels,
                                int hidden) {
  const std::size_t plane = cot.plane_size();
  std::vector<double> g(static_cast<std::size_t>(hidden) * plane, 0.0);
  for (int k = 0; k < hidden; ++k) {
    double* gk = g.data() + k * plane;
    for (int c = 0; c < channels; ++c) {
      const double wt = w2[c * hidden + k];
      auto cc = cot.channel(c);
      for (std::size_t p = 0; p < plane; ++p) gk[p] += wt * cc[p];
    }
    const double* a = act.data() + k * plane;
    for (std::size_t p = 0; p < plane; ++p) gk[p] *= 1.0 - a[p] * a[p];
  }
  return g;
}

}  // namespace

Frame TinyDenoiser::vjp(const Frame& x_t, int t, const Frame& cot, const Frame*) const {
  if (!cot.same_shape(x_t)) throw ShapeError("tiny denoiser vjp: cotangent shape mismatch");
  const Forward fw = forward(x_t, t);
  const auto g = hidden_grad(fw.act, cot, params_.data() + w2_offset(), channels_, hidden_);
  const int h = x_t.height(), w = x_t.width();
  const std::size_t plane = x_t.plane_size();
  const double* w1 = params_.data() + w1_offset();
  Frame out(h, w, channels_);
  for (int k = 0; k < hidden_; ++k) {
    const double* gk = g.data() + k * plane;
    for (int c = 0; c < channels_; ++c) {
      auto oc = out.channel(c);
      for (int oy = -1; oy <= 1; ++oy) {
        for (int ox = -1; ox <= 1; ++ox) {
          const double wt = w1[(k * channels_ + c) * 9 + (oy + 1) * 3 + (ox + 1)];
          for (int y = std::max(0, -oy); y < std::min(h, h - oy); ++y) {
            for (int xx = std::max(0, -ox); xx < std::min(w, w - ox); ++xx) {
              oc[(y + oy) * w + xx + ox] += wt * gk[y * w + xx];
            }
          }
        }
      }
    }
  }
  return out;
}

void TinyDenoiser::backward_params(const Frame& x, int t, const Forward& fw, const Frame& cot,
                                   std::span<double> grad) const {
  const int h = x.height(), w = x.width();
  const std::size_t plane = x.plane_size();
  const auto g = hidden_grad(fw.act, cot, params_.data() + w2_offset(), channels_, hidden_);
  double* gw1 = grad.data() + w1_offset();
  double* gb1 = grad.data() + b1_offset();
  double* gemb = grad.data() + emb_offset() + static_cast<std::size_t>(t - 1) * hidden_;
  double* gw2 = grad.data() + w2_offset();
  double* gb2 = grad.data() + b2_offset();
  for (int c = 0; c < channels_; ++c) {
    auto cc = cot.channel(c);
    for (std::size_t p = 0; p < plane; ++p) gb2[c] += cc[p];
    for (int k = 0; k < hidden_; ++k) {
      const double* a = fw.act.data() + k * plane;
      double s = 0.0;
      for (std::size_t p = 0; p < plane; ++p) s += cc[p] * a[p];
      gw2[c * hidden_ + k] += s;
    }
  }
  for (int k = 0; k < hidden_; ++k) {
    const double* gk = g.data() + k * plane;
    double s = 0.0;
    for (std::size_t p = 0; p < plane; ++p) s += gk[p];
    gb1[k] += s;
    gemb[k] += s;
    for (int c = 0; c < channels_; ++c) {
      auto xc = x.channel(c);
      for (int oy = -1; oy <= 1; ++oy) {
        for (int ox = -1; ox <= 1; ++ox) {
          double acc = 0.0;
          for (int y = std::max(0, -oy); y < std::min(h, h - oy); ++y) {
            for (int xx = std::max(0, -ox); xx < std::min(w, w - ox); ++xx) {
              acc += gk[y * w + xx] * xc[(y + oy) * w + xx + ox];
            }
          }
          gw1[(k * channels_ + c) * 9 + (oy + 1) * 3 + (ox + 1)] += acc;
        }
      }
    }
  }
}

std::vector<double> TinyDenoiser::train(std::span<const Frame> batch, const DiffusionSchedule& sched,
                                        const TrainOptions& options) {
  if (batch.empty()) throw ConfigError("tiny denoiser: empty training batch");
  if (sched.steps() != steps_) throw ConfigError("tiny denoiser: schedule length differs from embedding table");
  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<int> step(1, steps_);
  const double beta1 = 0.9, beta2 = 0.999, eps_adam = 1e-8;
  std::vector<double> m(params_.size(), 0.0), v(params_.size(), 0.0), grad(params_.size());
  std::vector<double> losses;
  losses.reserve(options.steps);
  for (int it = 1; it <= options.steps; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double loss = 0.0;
    for (const Frame& x0 : batch) {
      const int t = step(rng);
      const Frame eps = gaussian_like(x0.height(), x0.width(), x0.channels(), rng);
      const Frame xt = forward_diffuse(x0, t, eps, sched);
      const Forward fw = forward(xt, t);
      Frame cot = fw.out;
      for (std::size_t i = 0; i < cot.size(); ++i) {
        const double r = fw.out[i] - eps[i];
        loss += r * r;
        cot[i] = 2.0 * r / static_cast<double>(batch.size());
      }
      backward_params(xt, t, fw, cot, grad);
    }
    losses.push_back(loss / static_cast<double>(batch.size()));
    const double c1 = 1.0 - std::pow(beta1, it), c2 = 1.0 - std::pow(beta2, it);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m[i] = beta1 * m[i] + (1 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1 - beta2) * grad[i] * grad[i];
      params_[i] -= options.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_adam);
    }
  }
  return losses;
}

void TinyDenoiser::save(const std::filesystem::path& path) const {
  detail::LeWriter w(path);
  w.magic(kTinyMagic);
  w.u32(kTinyVersion);
  w.u32(static_cast<std::uint32_t>(channels_));
  w.u32(static_cast<std::uint32_t>(hidden_));
  w.u32(static_cast<std::uint32_t>(steps_));
  for (double p : params_) w.f64(p);
  w.finish();
}

TinyDenoiser TinyDenoiser::load(const std::filesystem::path& path) {
  detail::LeReader r(path);
  r.expect_magic(kTinyMagic);
  if (r.u32() != kTinyVersion) throw IoError("unsupported tiny denoiser version in " + path.string());
  const auto c = r.u32(), h = r.u32(), s = r.u32();
  if (c == 0 || c > 4 || h == 0 || h > 4096 || s == 0 || s > 100000) throw IoError("implausible tiny denoiser header");
  TinyDenoiser net(static_cast<int>(c), static_cast<int>(h), static_cast<int>(s));
  for (auto& p : net.params_) p = r.f64();
  return net;
}

}  // namespace vipflow
