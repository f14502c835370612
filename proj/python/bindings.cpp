#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <optional>

#include "vipflow/diffusion.hpp"
#include "vipflow/error.hpp"
#include "vipflow/flowlab.hpp"
#include "vipflow/imaging.hpp"
#include "vipflow/metrics.hpp"
#include "vipflow/pipeline.hpp"
#include "vipflow/synthverse.hpp"

namespace py = pybind11;
using namespace vipflow;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using MaskArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

// Frames cross the boundary as (C, H, W) float64 arrays; (H, W) means one channel.
Frame to_frame(const Array& a) {
  if (a.ndim() == 2) {
    Frame f(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), 1);
    std::copy(a.data(), a.data() + a.size(), f.data().begin());
    return f;
  }
  if (a.ndim() != 3) throw ShapeError("expected a (C, H, W) or (H, W) array, got " + std::to_string(a.ndim()) + " dims");
  Frame f(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)), static_cast<int>(a.shape(0)));
  std::copy(a.data(), a.data() + a.size(), f.data().begin());
  return f;
}

Array from_frame(const Frame& f) {
  Array a({f.channels(), f.height(), f.width()});
  std::copy(f.data().begin(), f.data().end(), a.mutable_data());
  return a;
}

Mask to_mask(const MaskArray& a) {
  if (a.ndim() != 2) throw ShapeError("expected an (H, W) mask");
  Mask m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  for (py::ssize_t i = 0; i < a.size(); ++i) m.set(static_cast<std::size_t>(i), a.data()[i] != 0);
  return m;
}

MaskArray from_mask(const Mask& m) {
  MaskArray a({m.height(), m.width()});
  std::copy(m.data().begin(), m.data().end(), a.mutable_data());
  return a;
}

// Flows are (2, H, W): u then v.
FlowField to_flow(const Array& a) {
  if (a.ndim() != 3 || a.shape(0) != 2) throw ShapeError("expected a (2, H, W) flow array");
  FlowField f(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)));
  const std::size_t n = f.size();
  std::copy(a.data(), a.data() + n, f.u_data().begin());
  std::copy(a.data() + n, a.data() + 2 * n, f.v_data().begin());
  return f;
}

Array from_flow(const FlowField& f) {
  Array a({2, f.height(), f.width()});
  std::copy(f.u_data().begin(), f.u_data().end(), a.mutable_data());
  std::copy(f.v_data().begin(), f.v_data().end(), a.mutable_data() + f.size());
  return a;
}

template <class T, class F>
std::vector<T> convert_all(const std::vector<Array>& in, F f) {
  std::vector<T> out;
  for (const auto& a : in) out.push_back(f(a));
  return out;
}

py::list frames_out(const std::vector<Frame>& fs) {
  py::list l;
  for (const auto& f : fs) l.append(from_frame(f));
  return l;
}

py::list flows_out(const std::vector<FlowField>& fs) {
  py::list l;
  for (const auto& f : fs) l.append(from_flow(f));
  return l;
}

py::list masks_out(const std::vector<Mask>& ms) {
  py::list l;
  for (const auto& m : ms) l.append(from_mask(m));
  return l;
}

py::dict synth(const std::string& spec_json, std::uint64_t seed) {
  const SyntheticVideo v = generate(scene_from_json(spec_json), seed);
  py::dict d;
  d["clean"] = frames_out(v.clean);
  d["masks"] = masks_out(v.masks);
  d["forward_flows"] = flows_out(v.forward_flows);
  d["backward_flows"] = flows_out(v.backward_flows);
  d["occlusions"] = masks_out(v.occlusions);
  return d;
}

py::tuple inpaint(const std::vector<Array>& frames, const std::vector<MaskArray>& masks,
                  const std::optional<std::vector<Array>>& forward_flows,
                  const std::optional<std::vector<Array>>& backward_flows, const std::string& variant, double gamma,
                  double eta0, double decay, int steps, double early_stop, std::uint64_t seed, bool occlusion_gate,
                  bool color_compensation, const std::string& prior) {
  VideoSequence seq;
  for (const auto& f : frames) seq.frames.push_back(to_frame(f));
  for (const auto& m : masks) seq.masks.push_back(to_mask(m));
  seq.validate();
  InpaintConfig cfg;
  cfg.variant = parse_variant(variant);
  cfg.gamma = gamma;
  cfg.eta0 = eta0;
  cfg.decay = decay;
  cfg.steps = steps;
  cfg.early_stop = early_stop;
  cfg.seed = seed;
  cfg.occlusion_gate = occlusion_gate;
  cfg.color_compensation = color_compensation;

  std::unique_ptr<FlowProvider> flows;
  if (forward_flows.has_value() != backward_flows.has_value()) {
    throw ConfigError("give both forward_flows and backward_flows, or neither");
  }
  if (forward_flows) {
    cfg.flow_source = FlowSource::GroundTruth;
    flows = std::make_unique<ChainedFlowProvider>(convert_all<FlowField>(*forward_flows, to_flow),
                                                  convert_all<FlowField>(*backward_flows, to_flow));
  } else {
    flows = std::make_unique<EstimatedFlowProvider>(seq);
  }
  const DiffusionSchedule sched = DiffusionSchedule::linear();
  const Frame& f0 = seq.frames.front();
  std::optional<GmmDenoiser> denoiser;
  bool any_masked = false;
  for (const auto& m : seq.masks) any_masked = any_masked || !m.none();
  if (any_masked) {
    denoiser.emplace(prior.empty() ? default_prior(f0.height(), f0.width(), f0.channels()) : GmmPrior::load(prior),
                     sched);
  }
  InpaintResult r;
  {
    py::gil_scoped_release release;
    r = inpaint_sequence(seq, *flows, cfg, denoiser ? &*denoiser : nullptr, sched);
  }
  py::list prov;
  for (const auto& p : r.provenance) {
    py::array_t<int> a({f0.height(), f0.width()});
    std::copy(p.begin(), p.end(), a.mutable_data());
    prov.append(a);
  }
  return py::make_tuple(frames_out(r.completed.frames), prov, report_to_json(r.report, cfg));
}

}  // namespace

PYBIND11_MODULE(_vipflow, m) {
  m.doc() = "Flow-guided video inpainting with noise-optimized diffusion";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("synth", &synth, py::arg("spec_json"), py::arg("seed") = 0,
        "Render a scene from its JSON spec. Returns clean frames, masks, flows and occlusions.");
  m.def(
      "standard_suite", [] {
        std::vector<std::string> out;
        for (const auto& s : standard_suite()) out.push_back(scene_to_json(s));
        return out;
      },
      "JSON specs of the ten ablation scenes.");
  m.def("inpaint", &inpaint, py::arg("frames"), py::arg("masks"), py::arg("forward_flows") = py::none(),
        py::arg("backward_flows") = py::none(), py::arg("variant") = "full", py::arg("gamma") = 1e-3,
        py::arg("eta0") = 0.01, py::arg("decay") = 0.9, py::arg("steps") = 50, py::arg("early_stop") = 1e-6,
        py::arg("seed") = 0, py::arg("occlusion_gate") = true, py::arg("color_compensation") = true,
        py::arg("prior") = "",
        "Complete a masked sequence. Returns (frames, provenance, report_json).");
  m.def(
      "estimate_flow",
      [](const Array& a, const Array& b) { return from_flow(estimate_flow(to_frame(a), to_frame(b)).flow); },
      py::arg("a"), py::arg("b"), "Dense flow from a to b as a (2, H, W) array.");
  m.def(
      "psnr", [](const Array& a, const Array& b) { return psnr(to_frame(a), to_frame(b)); }, py::arg("a"),
      py::arg("b"));
  m.def(
      "ssim", [](const Array& a, const Array& b) { return ssim(to_frame(a), to_frame(b)); }, py::arg("a"),
      py::arg("b"));
  m.def(
      "warp_error",
      [](const std::vector<Array>& frames, const std::vector<Array>& flows,
         const std::optional<std::vector<MaskArray>>& occlusions) {
        std::vector<OcclusionMask> occ;
        if (occlusions) {
          for (const auto& o : *occlusions) occ.push_back(to_mask(o));
        }
        return warp_error(convert_all<Frame>(frames, to_frame), convert_all<FlowField>(flows, to_flow), occ).mean;
      },
      py::arg("frames"), py::arg("flows"), py::arg("occlusions") = py::none(),
      "Mean E_warp; flows[k] is the backward flow from frame k+1 to frame k.");
  m.def(
      "read_flo", [](const std::string& path) { return from_flow(read_flo(path)); }, py::arg("path"));
  m.def(
      "write_flo", [](const Array& flow, const std::string& path) { write_flo(to_flow(flow), path); },
      py::arg("flow"), py::arg("path"));
  m.def(
      "fit_prior",
      [](const std::vector<Array>& frames, int components, int rank, const std::string& path, std::uint64_t seed) {
        EmOptions o;
        o.rank = rank;
        o.seed = seed;
        const GmmFit fit = fit_gmm_prior(convert_all<Frame>(frames, to_frame), components, o);
        fit.prior.save(path);
        return fit.log_likelihood.empty() ? 0.0 : fit.log_likelihood.back();
      },
      py::arg("frames"), py::arg("components") = 1, py::arg("rank") = 16, py::arg("path"), py::arg("seed") = 0,
      "Fit a prior and save it; returns the final log-likelihood.");
}
