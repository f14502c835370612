#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "vipflow/diffusion.hpp"
#include "vipflow/flowlab.hpp"
#include "vipflow/imaging.hpp"
#include "vipflow/metrics.hpp"
#include "vipflow/pipeline.hpp"
#include "vipflow/propagate.hpp"
#include "vipflow/synthverse.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vipflow;

namespace {

enum class Level { Error = 0, Warn = 1, Info = 2, Debug = 3 };

Level log_level() {
  static const Level level = [] {
    const char* env = std::getenv("VIPFLOW_LOG");
    const std::string v = env ? env : "warn";
    if (v == "error") return Level::Error;
    if (v == "info") return Level::Info;
    if (v == "debug") return Level::Debug;
    return Level::Warn;
  }();
  return level;
}

void log(Level level, const std::string& msg) {
  static const char* names[] = {"error", "warn", "info", "debug"};
  if (level <= log_level()) std::cerr << "vipflow [" << names[static_cast<int>(level)] << "] " << msg << '\n';
}

struct ScheduleArgs {
  int steps = 50;
  double beta_start = 1e-4;
  double beta_end = 0.2;

  DiffusionSchedule build() const { return DiffusionSchedule::linear(steps, beta_start, beta_end); }
  json to_json() const { return {{"steps", steps}, {"beta_start", beta_start}, {"beta_end", beta_end}}; }
};

struct InpaintArgs {
  InpaintConfig config;
  std::string variant = "full";
  std::string flow = "estimated";
  std::string gate = "on";
  std::string prior;

  InpaintConfig resolve() const {
    InpaintConfig c = config;
    c.variant = parse_variant(variant);
    c.flow_source = parse_flow_source(flow);
    c.occlusion_gate = gate == "on";
    c.validate();
    return c;
  }
};

json config_json(const InpaintConfig& c) {
  return {{"gamma", c.gamma},
          {"eta0", c.eta0},
          {"decay", c.decay},
          {"steps", c.steps},
          {"early_stop", c.early_stop},
          {"variant", variant_name(c.variant)},
          {"flow", flow_source_name(c.flow_source)},
          {"occlusion_gate", c.occlusion_gate},
          {"color_compensation", c.color_compensation},
          {"flows_upfront", c.flows_upfront},
          {"seed", c.seed}};
}

void add_inpaint_flags(CLI::App* cmd, InpaintArgs& a, ScheduleArgs& s) {
  cmd->add_option("--gamma", a.config.gamma, "weight of ||z - z0||^2")->capture_default_str();
  cmd->add_option("--eta0", a.config.eta0, "initial step size")->capture_default_str();
  cmd->add_option("--decay", a.config.decay, "step size decay per iteration")->capture_default_str();
  cmd->add_option("--steps", a.config.steps, "noise optimization iterations")->capture_default_str();
  cmd->add_option("--early-stop", a.config.early_stop, "stop once cond_loss falls below; <= 0 disables")
      ->capture_default_str();
  cmd->add_option("--seed", a.config.seed, "noise seed")->capture_default_str();
  cmd->add_option("--flow", a.flow, "flow source")->check(CLI::IsMember({"gt", "estimated"}))->capture_default_str();
  cmd->add_option("--occlusion-gate", a.gate, "skip pixels failing the forward-backward check")
      ->check(CLI::IsMember({"on", "off"}))
      ->capture_default_str();
  cmd->add_flag("!--no-color-compensation", a.config.color_compensation, "copy warped pixels without gain/offset");
  cmd->add_flag("--flows-upfront", a.config.flows_upfront, "estimate all frame pairs before starting");
  cmd->add_option("--prior", a.prior, "GMM prior file (default: fit on built-in training scenes)");
  cmd->add_option("--schedule-steps", s.steps, "diffusion steps T")->capture_default_str();
  cmd->add_option("--beta-start", s.beta_start, "first beta of the linear schedule")->capture_default_str();
  cmd->add_option("--beta-end", s.beta_end, "last beta of the linear schedule")->capture_default_str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
  if (!os) throw IoError("write failed for " + path.string());
}

void write_run_json(const fs::path& dir, const std::string& subcommand, json options) {
  json j = {{"tool", "vipflow"}, {"version", "0.1.0"}, {"subcommand", subcommand}, {"options", std::move(options)}};
  write_text(dir / "run.json", j.dump(2) + "\n");
}

fs::path output_dir_of(const fs::path& file) {
  return file.has_parent_path() ? file.parent_path() : fs::path(".");
}

GmmPrior load_or_fit_prior(const std::string& path, int h, int w, int c) {
  if (!path.empty()) {
    GmmPrior p = GmmPrior::load(path);
    if (p.means[0].height() != h || p.means[0].width() != w || p.means[0].channels() != c) {
      throw ConfigError("prior " + path + " is " + p.means[0].shape_string() + " but frames are " +
                        std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w));
    }
    return p;
  }
  log(Level::Info, "no --prior given, fitting the default prior on training scenes");
  return default_prior(h, w, c);
}

std::unique_ptr<FlowProvider> ground_truth_provider(const fs::path& dir, int frames) {
  GroundTruthFiles gt = load_ground_truth(dir, frames);
  return std::make_unique<ChainedFlowProvider>(std::move(gt.forward), std::move(gt.backward));
}

std::vector<std::uint16_t> encode_provenance(const std::vector<int>& p) {
  std::vector<std::uint16_t> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = static_cast<std::uint16_t>(p[i] + 2);
  return out;
}

// -- subcommands --------------------------------------------------------------

struct SynthArgs {
  std::string spec;
  bool suite = false;
  std::string out;
  std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a) {
  if (a.suite == !a.spec.empty()) throw ConfigError("synth: give exactly one of --spec or --suite");
  if (a.suite) {
    const auto suite = standard_suite();
    for (std::size_t i = 0; i < suite.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "scene_%02zu", i);
      save_synthetic(generate(suite[i], a.seed), fs::path(a.out) / name);
    }
    log(Level::Info, "wrote " + std::to_string(suite.size()) + " scenes to " + a.out);
  } else {
    const SceneSpec spec = load_scene(a.spec);
    save_synthetic(generate(spec, a.seed), a.out);
    log(Level::Info, "wrote " + std::to_string(spec.frames) + " frames to " + a.out);
  }
  write_run_json(a.out, "synth", {{"spec", a.spec}, {"suite", a.suite}, {"seed", a.seed}});
  return 0;
}

struct FitArgs {
  std::string frames;
  int training = 0;
  int components = 1;
  int rank = 16;
  int max_iterations = 200;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_fit_prior(const FitArgs& a) {
  if ((a.training > 0) == !a.frames.empty()) throw ConfigError("fit-prior: give exactly one of --frames or --training");
  std::vector<Frame> samples;
  if (!a.frames.empty()) {
    samples = load_frames(a.frames).frames;
  } else {
    samples = training_frames(a.training);
  }
  EmOptions options;
  options.rank = a.rank;
  options.seed = a.seed;
  options.max_iterations = a.max_iterations;
  const GmmFit fit = fit_gmm_prior(samples, a.components, options);
  fit.prior.save(a.out);
  json summary = {{"components", fit.prior.components()},
                  {"samples", samples.size()},
                  {"iterations", fit.log_likelihood.size()},
                  {"log_likelihood", fit.log_likelihood.empty() ? 0.0 : fit.log_likelihood.back()},
                  {"weights", fit.prior.weights},
                  {"variances", fit.prior.variances}};
  json ranks = json::array();
  for (int i = 0; i < fit.prior.components(); ++i) ranks.push_back(fit.prior.rank(i));
  summary["ranks"] = ranks;
  std::cout << summary.dump(2) << '\n';
  write_run_json(output_dir_of(a.out), "fit-prior",
                 {{"frames", a.frames}, {"training", a.training}, {"components", a.components}, {"rank", a.rank},
                  {"max_iterations", a.max_iterations}, {"seed", a.seed}, {"out", a.out}});
  return 0;
}

struct InpaintCmdArgs {
  std::string in;
  std::string out;
  std::string flows;
};

int cmd_inpaint(const InpaintCmdArgs& io, const InpaintArgs& ia, const ScheduleArgs& sa) {
  const InpaintConfig config = ia.resolve();
  const DiffusionSchedule sched = sa.build();
  const VideoSequence seq = load_sequence(io.in);
  const auto t0 = std::chrono::steady_clock::now();

  std::unique_ptr<FlowProvider> flows;
  if (config.flow_source == FlowSource::GroundTruth) {
    flows = ground_truth_provider(io.flows.empty() ? io.in : io.flows, seq.size());
  } else {
    auto est = std::make_unique<EstimatedFlowProvider>(seq);
    if (config.flows_upfront) est->precompute_all();
    flows = std::move(est);
  }

  std::optional<GmmDenoiser> denoiser;
  bool any_masked = false;
  for (const Mask& m : seq.masks) any_masked = any_masked || !m.none();
  if (any_masked) {
    const Frame& f = seq.frames[0];
    denoiser.emplace(load_or_fit_prior(ia.prior, f.height(), f.width(), f.channels()), sched);
  }
  const InpaintResult res = inpaint_sequence(seq, *flows, config, denoiser ? &*denoiser : nullptr, sched);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const fs::path out(io.out);
  save_sequence(res.completed, out);
  for (int k = 0; k < res.completed.size(); ++k) {
    const Frame& f = res.completed.frames[static_cast<std::size_t>(k)];
    char name[32];
    std::snprintf(name, sizeof name, "provenance_%04d.png", k);
    write_gray16_png(encode_provenance(res.provenance[static_cast<std::size_t>(k)]), f.height(), f.width(), out / name);
  }
  write_text(out / "report.json", report_to_json(res.report, config) + "\n");
  write_text(out / "timing.json", json({{"wall_seconds", seconds}}).dump(2) + "\n");
  json opts = config_json(config);
  opts["in"] = io.in;
  opts["flows"] = io.flows;
  opts["prior"] = ia.prior;
  opts["schedule"] = sa.to_json();
  write_run_json(out, "inpaint", opts);
  for (const auto& w : res.report.warnings) log(Level::Warn, w);
  log(Level::Info, "start frame " + std::to_string(res.report.start_frame) + ", " +
                       std::to_string(res.report.generation_runs) + " generation runs, " + std::to_string(seconds) + " s");
  return 0;
}

struct EvalArgs {
  std::string pred;
  std::string gt;
  std::string flows;
  std::string out;
  std::string csv;
};

int cmd_eval(const EvalArgs& a) {
  const std::vector<Frame> pred = load_frames(a.pred).frames;
  const std::vector<Frame> truth = load_frames(a.gt).frames;
  if (pred.size() != truth.size()) {
    throw ConfigError("eval: " + std::to_string(pred.size()) + " predicted frames vs " + std::to_string(truth.size()) +
                      " ground-truth frames");
  }
  const GroundTruthFiles gt = load_ground_truth(a.flows.empty() ? a.gt : a.flows, static_cast<int>(truth.size()));
  const MetricReport report = evaluate(pred, truth, gt.backward, gt.occlusions, "gt");
  std::ostringstream js;
  write_metrics_json(report, js);
  if (a.out.empty()) {
    std::cout << js.str();
  } else {
    write_text(a.out, js.str());
    write_run_json(output_dir_of(a.out), "eval",
                   {{"pred", a.pred}, {"gt", a.gt}, {"flows", a.flows}, {"out", a.out}, {"csv", a.csv}});
  }
  if (!a.csv.empty()) {
    std::ostringstream cs;
    write_metrics_csv(report, cs);
    write_text(a.csv, cs.str());
  }
  return 0;
}

struct AblateArgs {
  std::string scenes;
  std::string out;
  std::string per_scene;
  int jobs = 1;
};

struct SceneInput {
  std::string name;
  SceneSpec spec;
  VideoSequence seq;
  EvalTarget truth;
  std::vector<FlowField> forward;
};

std::vector<SceneInput> ablation_scenes(const std::string& dir) {
  std::vector<SceneInput> out;
  if (dir.empty()) {
    const auto suite = standard_suite();
    for (std::size_t i = 0; i < suite.size(); ++i) {
      SyntheticVideo v = generate(suite[i]);
      char name[32];
      std::snprintf(name, sizeof name, "scene_%02zu", i);
      out.push_back({name, suite[i], corrupt(v.clean, v.masks), {v.clean, v.backward_flows, v.occlusions, "gt"},
                     v.forward_flows});
    }
    return out;
  }
  std::vector<fs::path> subdirs;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory() && fs::exists(e.path() / "scene.json")) subdirs.push_back(e.path());
  }
  std::sort(subdirs.begin(), subdirs.end());
  if (subdirs.empty()) throw ConfigError("ablate: no scene directories with scene.json under " + dir);
  for (const auto& p : subdirs) {
    const VideoSequence clean = load_sequence(p);
    GroundTruthFiles gt = load_ground_truth(p, clean.size());
    out.push_back({p.filename().string(), load_scene(p / "scene.json"), corrupt(clean.frames, clean.masks),
                   {clean.frames, gt.backward, gt.occlusions, "gt"}, gt.forward});
  }
  return out;
}

int cmd_ablate(const AblateArgs& a, const InpaintArgs& ia, const ScheduleArgs& sa) {
  if (a.jobs < 1) throw ConfigError("--jobs must be >= 1");
  const InpaintConfig config = ia.resolve();
  const DiffusionSchedule sched = sa.build();
  const std::vector<SceneInput> scenes = ablation_scenes(a.scenes);
  const Frame& f0 = scenes[0].seq.frames[0];
  const GmmDenoiser denoiser(load_or_fit_prior(ia.prior, f0.height(), f0.width(), f0.channels()), sched);

  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::vector<AblationRow>> results(scenes.size());
  std::vector<std::string> errors(scenes.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < scenes.size(); i = next++) {
      try {
        const SceneInput& s = scenes[i];
        std::unique_ptr<FlowProvider> flows;
        if (config.flow_source == FlowSource::GroundTruth) {
          flows = std::make_unique<ChainedFlowProvider>(s.forward, s.truth.backward_flows);
        } else {
          flows = std::make_unique<EstimatedFlowProvider>(s.seq);
        }
        results[i] = run_ablation(s.seq, s.truth, *flows, config, denoiser, sched);
        std::lock_guard lock(log_mutex);
        log(Level::Info, "finished " + s.name);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  const int threads = std::min<int>(a.jobs, static_cast<int>(scenes.size()));
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    if (!errors[i].empty()) throw Error("ablate: scene " + scenes[i].name + ": " + errors[i]);
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const auto summary = summarize_ablation(results);
  std::ostringstream csv;
  write_ablation_csv(summary, csv);
  write_text(a.out, csv.str());
  if (!a.per_scene.empty()) {
    std::ostringstream ps;
    ps << "scene,variant,psnr,ssim,e_warp,generation_runs\n";
    char buf[256];
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      for (const auto& r : results[i]) {
        std::snprintf(buf, sizeof buf, "%s,%s,%.6f,%.6f,%.9g,%d\n", scenes[i].name.c_str(),
                      variant_name(r.variant).c_str(), r.metrics.psnr_mean, r.metrics.ssim_mean, r.metrics.e_warp_mean,
                      r.generation_runs);
        ps << buf;
      }
    }
    write_text(a.per_scene, ps.str());
  }
  const fs::path dir = output_dir_of(a.out);
  write_text(dir / "timing.json", json({{"wall_seconds", seconds}, {"jobs", a.jobs}}).dump(2) + "\n");
  json opts = config_json(config);
  opts.erase("variant");
  opts["scenes"] = a.scenes;
  opts["prior"] = ia.prior;
  opts["schedule"] = sa.to_json();
  opts["out"] = a.out;
  opts["per_scene"] = a.per_scene;
  write_run_json(dir, "ablate", opts);
  std::cout << csv.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vipflow: training-free video inpainting with flow-guided propagation and noise-optimized diffusion"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "render a synthetic scene (frames, masks, flows, occlusions)");
  c_synth->add_option("--spec", synth.spec, "scene JSON")->check(CLI::ExistingFile);
  c_synth->add_flag("--suite", synth.suite, "write the ten standard scenes as scene_NN subdirectories");
  c_synth->add_option("--out", synth.out, "output directory")->required();
  c_synth->add_option("--seed", synth.seed, "texture seed offset")->capture_default_str();

  FitArgs fit;
  auto* c_fit = app.add_subcommand("fit-prior", "fit a Gaussian-mixture prior with EM");
  c_fit->add_option("--frames", fit.frames, "directory of frame_NNNN.png")->check(CLI::ExistingDirectory);
  c_fit->add_option("--training", fit.training, "use N built-in training frames instead of --frames");
  c_fit->add_option("-K,--components", fit.components, "mixture components")->capture_default_str();
  c_fit->add_option("--rank", fit.rank, "principal directions per component (0 = isotropic)")->capture_default_str();
  c_fit->add_option("--max-iterations", fit.max_iterations, "EM iteration cap")->capture_default_str();
  c_fit->add_option("--seed", fit.seed, "initialization seed")->capture_default_str();
  c_fit->add_option("--out", fit.out, "prior file")->required();

  InpaintCmdArgs inp;
  InpaintArgs inp_args;
  ScheduleArgs inp_sched;
  auto* c_inp = app.add_subcommand("inpaint", "complete a masked sequence");
  c_inp->add_option("--in", inp.in, "directory with frame_NNNN.png and mask_NNNN.png")->required()->check(
      CLI::ExistingDirectory);
  c_inp->add_option("--out", inp.out, "output directory")->required();
  c_inp->add_option("--flows", inp.flows, "ground-truth flow directory for --flow gt (default: --in)");
  c_inp->add_option("--variant", inp_args.variant, "pipeline variant")
      ->check(CLI::IsMember({"full", "per-frame", "pp-only", "no-opt"}))
      ->capture_default_str();
  add_inpaint_flags(c_inp, inp_args, inp_sched);

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "PSNR, SSIM and E_warp of a completion");
  c_eval->add_option("--pred", ev.pred, "predicted frames")->required()->check(CLI::ExistingDirectory);
  c_eval->add_option("--gt", ev.gt, "ground-truth frames")->required()->check(CLI::ExistingDirectory);
  c_eval->add_option("--flows", ev.flows, "ground-truth flow directory (default: --gt)");
  c_eval->add_option("--out", ev.out, "metrics JSON (default: stdout)");
  c_eval->add_option("--csv", ev.csv, "per-frame CSV");

  AblateArgs ab;
  InpaintArgs ab_args;
  ScheduleArgs ab_sched;
  auto* c_ab = app.add_subcommand("ablate", "run all variants over a set of scenes");
  c_ab->add_option("--scenes", ab.scenes, "directory of synth outputs (default: the standard suite)")
      ->check(CLI::ExistingDirectory);
  c_ab->add_option("--out", ab.out, "CSV of per-variant medians")->required();
  c_ab->add_option("--per-scene", ab.per_scene, "CSV of per-scene metrics");
  c_ab->add_option("--jobs", ab.jobs, "scenes processed in parallel")->capture_default_str();
  add_inpaint_flags(c_ab, ab_args, ab_sched);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*c_synth) return cmd_synth(synth);
    if (*c_fit) return cmd_fit_prior(fit);
    if (*c_inp) return cmd_inpaint(inp, inp_args, inp_sched);
    if (*c_eval) return cmd_eval(ev);
    if (*c_ab) return cmd_ablate(ab, ab_args, ab_sched);
  } catch (const ConfigError& e) {
    log(Level::Error, e.what());
    return 2;
  } catch (const std::exception& e) {
    log(Level::Error, e.what());
    return 1;
  }
  return 2;
}
