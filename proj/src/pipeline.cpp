#include "vipflow/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>

#include "json.hpp"
#include "sampling.hpp"
#include "vipflow/noiseopt.hpp"
#include "vipflow/propagate.hpp"
#include "vipflow/synthverse.hpp"

namespace vipflow {

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::PerFrame: return "per-frame";
    case Variant::PpOnly: return "pp-only";
    case Variant::NoOpt: return "no-opt";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  for (Variant v : kAllVariants) {
    if (variant_name(v) == name) return v;
  }
  throw ConfigError("unknown variant '" + name + "' (expected full, per-frame, pp-only or no-opt)");
}

std::string flow_source_name(FlowSource s) { return s == FlowSource::GroundTruth ? "gt" : "estimated"; }

FlowSource parse_flow_source(const std::string& name) {
  if (name == "gt") return FlowSource::GroundTruth;
  if (name == "estimated") return FlowSource::Estimated;
  throw ConfigError("unknown flow source '" + name + "' (expected gt or estimated)");
}

void InpaintConfig::validate() const {
  NoiseOptProblem p;
  p.gamma = gamma;
  p.eta0 = eta0;
  p.decay = decay;
  p.steps = steps;
  p.validate();
}

namespace {

std::mt19937_64 frame_rng(std::uint64_t seed, int frame) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(frame), 0x5eedu};
  return std::mt19937_64(seq);
}

// Single noise shared by every generation of the no-opt variant.
Frame fixed_noise(std::uint64_t seed, int h, int w, int c) {
  auto rng = frame_rng(seed, -1);
  return gaussian_like(h, w, c, rng);
}

Frame clamp01(Frame f) {
  for (auto& v : f.data()) v = std::clamp(v, 0.0, 1.0);
  return f;
}

// Writes `generated` into every still-invalid pixel of the state.
void fill_generated(PropagationState& state, const Frame& generated) {
  const Frame pasted = paste_back(clamp01(generated), state.filled, state.invalid);
  state.filled = pasted;
  for (std::size_t i = 0; i < state.invalid.size(); ++i) {
    if (state.invalid[i]) state.provenance[i] = kGenerated;
  }
  state.invalid = Mask(state.invalid.height(), state.invalid.width());
}

NoiseOptProblem make_problem(const InpaintConfig& config, const Frame& frame, const Mask& invalid) {
  NoiseOptProblem p;
  p.constraint_frame = frame;
  p.constraint_mask = invalid;
  p.gamma = config.gamma;
  p.eta0 = config.eta0;
  p.decay = config.decay;
  p.steps = config.steps;
  p.early_stop = config.early_stop;
  return p;
}

void record_trace(FrameRecord& rec, const OptimizationTrace& trace) {
  rec.iterations = static_cast<int>(trace.iterations.size());
  for (const auto& it : trace.iterations) rec.cond_losses.push_back(it.cond_loss);
  rec.final_cond_loss = trace.final_cond_loss;
}

InpaintResult inpaint_per_frame(const VideoSequence& seq, const InpaintConfig& config, const Denoiser& denoiser,
                                const DiffusionSchedule& sched) {
  InpaintResult res;
  res.report.variant = Variant::PerFrame;
  res.report.flow_source = "none";
  for (int k = 0; k < seq.size(); ++k) {
    PropagationState st = PropagationState::initial(k, seq.frames[k], seq.masks[k]);
    FrameRecord rec;
    rec.index = k;
    rec.invalid_before = rec.invalid_after_propagation = st.invalid.count();
    res.report.total_invalid += rec.invalid_before;
    if (rec.invalid_before > 0) {
      auto rng = frame_rng(config.seed, k);
      const OptimizationTrace trace = optimize_noise(make_problem(config, st.filled, st.invalid), denoiser, sched, rng);
      fill_generated(st, trace.output);
      rec.generated = true;
      record_trace(rec, trace);
      ++res.report.generation_runs;
    }
    res.report.visit_order.push_back(k);
    res.report.frames.push_back(rec);
    res.completed.frames.push_back(st.filled);
    res.completed.masks.push_back(st.invalid);
    res.provenance.push_back(st.provenance);
  }
  return res;
}

}  // namespace

StartFrameChoice select_start_frame(const VideoSequence& seq, const FlowProvider& flows) {
  seq.validate();
  const int n = seq.size();
  StartFrameChoice choice;
  choice.scores.assign(static_cast<std::size_t>(n), 0.0);
  for (int k = 0; k < n; ++k) {
    const Mask& mk = seq.masks[k];
    if (mk.none()) continue;
    const int h = mk.height(), w = mk.width();
    for (int j = 0; j < n; ++j) {
      if (j == k || seq.masks[j].none()) continue;
      std::vector<double> mj(seq.masks[j].data().begin(), seq.masks[j].data().end());
      const FlowField f = flows.flow(k, j);
      double score = 0.0;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          if (!mk.test(y, x)) continue;
          const auto fp = detail::footprint(x + f.u(y, x), y + f.v(y, x), h, w);
          if (fp.inside && detail::sample(mj, w, fp) >= 0.5) score += 1.0;
        }
      }
      choice.scores[static_cast<std::size_t>(k)] += score;
    }
  }
  for (int k = 1; k < n; ++k) {
    if (choice.scores[static_cast<std::size_t>(k)] > choice.scores[static_cast<std::size_t>(choice.index)]) {
      choice.index = k;
    }
  }
  return choice;
}

std::vector<int> visiting_order(int start, int count) {
  std::vector<int> order{start};
  for (int d = 1; static_cast<int>(order.size()) < count; ++d) {
    if (start + d < count) order.push_back(start + d);
    if (start - d >= 0) order.push_back(start - d);
  }
  return order;
}

InpaintResult inpaint_sequence(const VideoSequence& seq, const FlowProvider& flows, const InpaintConfig& config,
                               const Denoiser* denoiser, const DiffusionSchedule& sched) {
  const auto t0 = std::chrono::steady_clock::now();
  seq.validate();
  config.validate();
  bool any_masked = false;
  for (const Mask& m : seq.masks) any_masked = any_masked || !m.none();
  if (!denoiser && any_masked && config.variant != Variant::PpOnly) {
    throw ConfigError("variant " + variant_name(config.variant) + " needs a denoiser");
  }
  if (flows.frame_count() != seq.size() && config.variant != Variant::PerFrame) {
    throw ConfigError("flow provider covers " + std::to_string(flows.frame_count()) + " frames, sequence has " +
                      std::to_string(seq.size()));
  }
  if (config.variant == Variant::PerFrame) {
    InpaintResult res = inpaint_per_frame(seq, config, *denoiser, sched);
    res.report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
  }

  const int n = seq.size();
  InpaintResult res;
  InpaintReport& rep = res.report;
  rep.variant = config.variant;
  rep.flow_source = flows.name();
  std::vector<PropagationState> states;
  std::vector<bool> completed(static_cast<std::size_t>(n), false);
  for (int k = 0; k < n; ++k) {
    states.push_back(PropagationState::initial(k, seq.frames[k], seq.masks[k]));
    completed[static_cast<std::size_t>(k)] = seq.masks[k].none();
    rep.total_invalid += seq.masks[k].count();
  }
  rep.frames.resize(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    rep.frames[static_cast<std::size_t>(k)].index = k;
    rep.frames[static_cast<std::size_t>(k)].invalid_before = seq.masks[k].count();
  }

  if (rep.total_invalid > 0) {
    const StartFrameChoice start = select_start_frame(seq, flows);
    rep.start_frame = start.index;
    rep.start_scores = start.scores;
  } else {
    rep.start_scores.assign(static_cast<std::size_t>(n), 0.0);
  }
  rep.visit_order = visiting_order(rep.start_frame, n);

  const Frame& first = seq.frames.front();
  const Frame shared_z = config.variant == Variant::NoOpt
                             ? fixed_noise(config.seed, first.height(), first.width(), first.channels())
                             : Frame();
  const PropagateOptions popt{config.color_compensation};
  const Mask all_valid(first.height(), first.width());

  for (int k : rep.visit_order) {
    PropagationState& st = states[static_cast<std::size_t>(k)];
    FrameRecord& rec = rep.frames[static_cast<std::size_t>(k)];
    if (st.invalid.none()) continue;

    // completed frames first, then the remaining corrupted ones, nearest first
    std::vector<int> refs;
    const auto near = reference_order(k, n);
    for (int j : near) {
      if (completed[static_cast<std::size_t>(j)]) refs.push_back(j);
    }
    for (int j : near) {
      if (!completed[static_cast<std::size_t>(j)]) refs.push_back(j);
    }
    for (int j : refs) {
      if (st.invalid.none()) break;
      const bool done = completed[static_cast<std::size_t>(j)];
      const Frame& src = done ? states[static_cast<std::size_t>(j)].filled : seq.frames[j];
      const Mask& src_mask = done ? all_valid : seq.masks[j];
      if (src_mask.all()) continue;
      const FlowField f_kj = flows.flow(k, j);
      OcclusionMask occ;
      if (config.occlusion_gate) occ = fb_consistency(f_kj, flows.flow(j, k));
      PropagationStep step =
          propagate_from(st, j, src, src_mask, f_kj, config.occlusion_gate ? &occ : nullptr, popt);
      if (step.propagated.count() > 0) rec.sources.push_back(j);
      for (const auto& w : step.color.warnings) {
        rep.warnings.push_back("frame " + std::to_string(k) + " from " + std::to_string(j) + ": " + w);
      }
      st = std::move(step.state);
    }
    rec.invalid_after_propagation = st.invalid.count();

    if (!st.invalid.none()) {
      if (config.variant == Variant::PpOnly) {
        if (!denoiser) {
          // partial completion: the frame keeps its holes and is not used as a completed source
          rec.residual_invalid = st.invalid.count();
          rep.total_residual += rec.residual_invalid;
          continue;
        }
        auto rng = frame_rng(config.seed, k);
        const Frame z = gaussian_like(first.height(), first.width(), first.channels(), rng);
        fill_generated(st, sample(*denoiser, z, sched));
      } else if (config.variant == Variant::NoOpt) {
        fill_generated(st, sample(*denoiser, shared_z, sched));
      } else {
        auto rng = frame_rng(config.seed, k);
        const OptimizationTrace trace =
            optimize_noise(make_problem(config, st.filled, st.invalid), *denoiser, sched, rng);
        record_trace(rec, trace);
        fill_generated(st, trace.output);
      }
      rec.generated = true;
      ++rep.generation_runs;
    }
    completed[static_cast<std::size_t>(k)] = true;
  }

  if (const auto* est = dynamic_cast<const EstimatedFlowProvider*>(&flows)) {
    for (auto& w : est->warnings()) rep.warnings.push_back(std::move(w));
  }
  for (auto& st : states) {
    res.completed.frames.push_back(st.filled);
    res.completed.masks.push_back(st.invalid);
    res.provenance.push_back(st.provenance);
  }
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

std::string report_to_json(const InpaintReport& report, const InpaintConfig& config) {
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& f : report.frames) {
    frames.push_back({{"index", f.index},
                      {"invalid_before", f.invalid_before},
                      {"invalid_after_propagation", f.invalid_after_propagation},
                      {"residual_invalid", f.residual_invalid},
                      {"sources", f.sources},
                      {"generated", f.generated},
                      {"iterations", f.iterations},
                      {"cond_losses", f.cond_losses},
                      {"final_cond_loss", f.final_cond_loss}});
  }
  const nlohmann::json j = {
      {"variant", variant_name(report.variant)},
      {"flow_source", report.flow_source},
      {"config",
       {{"gamma", config.gamma},
        {"eta0", config.eta0},
        {"decay", config.decay},
        {"steps", config.steps},
        {"early_stop", config.early_stop},
        {"occlusion_gate", config.occlusion_gate},
        {"color_compensation", config.color_compensation},
        {"seed", config.seed}}},
      {"start_frame", report.start_frame},
      {"start_scores", report.start_scores},
      {"visit_order", report.visit_order},
      {"frames", frames},
      {"totals",
       {{"generation_runs", report.generation_runs},
        {"invalid_pixels", report.total_invalid},
        {"residual_invalid", report.total_residual}}},
      {"warnings", report.warnings},
  };
  return j.dump(2);
}

std::vector<AblationRow> run_ablation(const VideoSequence& seq, const EvalTarget& truth, const FlowProvider& flows,
                                      const InpaintConfig& config, const Denoiser& denoiser,
                                      const DiffusionSchedule& sched) {
  if (truth.clean.size() != static_cast<std::size_t>(seq.size())) {
    throw ConfigError("ablation needs ground truth for all " + std::to_string(seq.size()) + " frames, got " +
                      std::to_string(truth.clean.size()));
  }
  std::vector<AblationRow> rows;
  for (Variant v : kAllVariants) {
    InpaintConfig cfg = config;
    cfg.variant = v;
    const InpaintResult res = inpaint_sequence(seq, flows, cfg, &denoiser, sched);
    AblationRow row;
    row.variant = v;
    row.metrics = evaluate(res.completed.frames, truth.clean, truth.backward_flows, truth.occlusions, truth.flow_source);
    row.generation_runs = res.report.generation_runs;
    row.wall_seconds = res.report.wall_seconds;
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

GmmPrior default_prior(int height, int width, int channels, int frames, int rank) {
  const std::vector<Frame> train = training_frames(frames, height, width, channels);
  EmOptions options;
  options.rank = rank;
  return fit_gmm_prior(train, 1, options).prior;
}

std::vector<AblationSummary> summarize_ablation(const std::vector<std::vector<AblationRow>>& scenes) {
  if (scenes.empty()) throw ConfigError("ablation summary: no scenes");
  std::vector<AblationSummary> out;
  for (Variant v : kAllVariants) {
    std::vector<double> p, s, e;
    for (const auto& rows : scenes) {
      for (const AblationRow& r : rows) {
        if (r.variant != v) continue;
        p.push_back(r.metrics.psnr_mean);
        s.push_back(r.metrics.ssim_mean);
        e.push_back(r.metrics.e_warp_mean);
      }
    }
    if (p.empty()) continue;
    out.push_back({v, median(p), median(s), median(e), static_cast<int>(p.size())});
  }
  return out;
}

void write_ablation_csv(const std::vector<AblationSummary>& rows, std::ostream& os) {
  os << "variant,psnr,ssim,e_warp\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.9g\n", variant_name(r.variant).c_str(), r.psnr, r.ssim, r.e_warp);
    os << buf;
  }
}

}  // namespace vipflow
