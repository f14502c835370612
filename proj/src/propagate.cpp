#include "vipflow/propagate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "sampling.hpp"

namespace vipflow {

PropagationState PropagationState::initial(int target, const Frame& frame, const Mask& mask) {
  PropagationState s;
  s.target = target;
  s.filled = apply_mask(frame, mask);
  s.invalid = mask;
  s.provenance.assign(mask.size(), target);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) s.provenance[i] = kNoSource;
  }
  return s;
}

void PropagationState::validate() const {
  if (!invalid.matches(filled) || provenance.size() != invalid.size()) {
    throw ShapeError("propagation state: inconsistent sizes");
  }
  for (std::size_t i = 0; i < invalid.size(); ++i) {
    if (invalid[i] && provenance[i] != kNoSource) {
      throw ConfigError("propagation state: invalid pixel " + std::to_string(i) + " has a provenance");
    }
  }
}

WarpResult backward_warp(const Frame& src, const Mask& src_valid, const FlowField& flow) {
  if (!flow.matches(src) || !src_valid.matches(src)) {
    throw ShapeError("backward_warp: src " + src.shape_string() + ", validity " + src_valid.shape_string() +
                     ", flow " + flow.shape_string());
  }
  const int h = src.height(), w = src.width();
  WarpResult out{Frame(h, w, src.channels()), Mask(h, w)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto fp = detail::footprint(x + flow.u(y, x), y + flow.v(y, x), h, w);
      if (!fp.inside) continue;
      bool ok = src_valid.test(fp.y0, fp.x0);
      if (fp.fx > 0.0) ok = ok && src_valid.test(fp.y0, fp.x0 + 1);
      if (fp.fy > 0.0) ok = ok && src_valid.test(fp.y0 + 1, fp.x0);
      if (fp.fx > 0.0 && fp.fy > 0.0) ok = ok && src_valid.test(fp.y0 + 1, fp.x0 + 1);
      for (int c = 0; c < src.channels(); ++c) out.image.at(c, y, x) = detail::sample(src.channel(c), w, fp);
      out.validity.set(y, x, ok);
    }
  }
  return out;
}

ColorFit fit_color(const Frame& warped, const Frame& target, const Mask& overlap) {
  if (!warped.same_shape(target) || !overlap.matches(warped)) {
    throw ShapeError("color_compensate: shape mismatch");
  }
  const int channels = warped.channels();
  ColorFit fit;
  fit.gain.assign(channels, 1.0);
  fit.bias.assign(channels, 0.0);
  fit.overlap = overlap.count();
  if (fit.overlap == 0) {
    fit.warnings.push_back("empty overlap; identity color transform");
    return fit;
  }
  if (fit.overlap < kMinColorOverlap) {
    fit.warnings.push_back("overlap of " + std::to_string(fit.overlap) + " pixels; identity color transform");
    return fit;
  }
  fit.identity = false;
  const double n = static_cast<double>(fit.overlap);
  for (int c = 0; c < channels; ++c) {
    auto wc = warped.channel(c);
    auto tc = target.channel(c);
    double sw = 0.0, st = 0.0;
    for (std::size_t i = 0; i < wc.size(); ++i) {
      if (!overlap[i]) continue;
      sw += wc[i];
      st += tc[i];
    }
    const double mw = sw / n, mt = st / n;
    double sww = 0.0, swt = 0.0;
    for (std::size_t i = 0; i < wc.size(); ++i) {
      if (!overlap[i]) continue;
      sww += (wc[i] - mw) * (wc[i] - mw);
      swt += (wc[i] - mw) * (tc[i] - mt);
    }
    // flat warped content: the gain is unidentifiable, fit the offset only
    const double a = sww > 1e-12 * n ? swt / sww : 1.0;
    fit.gain[c] = a;
    fit.bias[c] = mt - a * mw;
  }
  return fit;
}

Frame color_compensate(const Frame& warped, const Frame& target, const Mask& overlap, const Mask& fill_region,
                       ColorFit* fit_out) {
  if (!fill_region.matches(warped)) throw ShapeError("color_compensate: fill region size mismatch");
  ColorFit fit = fit_color(warped, target, overlap);
  Frame out = warped;
  if (!fit.identity) {
    for (int c = 0; c < out.channels(); ++c) {
      auto ch = out.channel(c);
      for (std::size_t i = 0; i < ch.size(); ++i) {
        if (fill_region[i]) ch[i] = std::clamp(fit.gain[c] * ch[i] + fit.bias[c], 0.0, 1.0);
      }
    }
  }
  if (fit_out) *fit_out = std::move(fit);
  return out;
}

PropagationStep propagate_from(const PropagationState& state, int source, const Frame& src, const Mask& src_mask,
                               const FlowField& flow, const OcclusionMask* occlusion,
                               const PropagateOptions& options) {
  if (!src.same_shape(state.filled) || !src_mask.matches(src) || !flow.matches(src) ||
      (occlusion && !occlusion->matches(src))) {
    throw ShapeError("propagate_from: target " + state.filled.shape_string() + ", source " + src.shape_string() +
                     ", source mask " + src_mask.shape_string() + ", flow " + flow.shape_string());
  }
  const WarpResult warp = backward_warp(src, src_mask.complement(), flow);

  const int h = src.height(), w = src.width();
  PropagationStep step{state, Mask(h, w), {}};
  Mask overlap(h, w);
  for (std::size_t i = 0; i < step.propagated.size(); ++i) {
    const bool usable = warp.validity[i] && !(occlusion && (*occlusion)[i]);
    step.propagated.set(i, state.invalid[i] && usable);
    overlap.set(i, usable && state.originally_valid(i));
  }
  if (step.propagated.none()) return step;

  Frame colored = warp.image;
  if (options.color_compensation) {
    colored = color_compensate(warp.image, state.filled, overlap, step.propagated, &step.color);
  }
  for (std::size_t i = 0; i < step.propagated.size(); ++i) {
    if (!step.propagated[i]) continue;
    for (int c = 0; c < src.channels(); ++c) step.state.filled.channel(c)[i] = colored.channel(c)[i];
    step.state.invalid.set(i, false);
    step.state.provenance[i] = source;
  }
  return step;
}

std::vector<int> reference_order(int target, int count) {
  std::vector<int> refs;
  for (int j = 0; j < count; ++j) {
    if (j != target) refs.push_back(j);
  }
  std::stable_sort(refs.begin(), refs.end(),
                   [target](int a, int b) { return std::abs(a - target) < std::abs(b - target); });
  return refs;
}

}  // namespace vipflow
