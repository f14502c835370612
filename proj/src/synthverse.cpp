#include "vipflow/synthverse.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"
#include "sampling.hpp"

namespace vipflow {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix(a ^ splitmix(b)); }

double lattice(std::uint64_t seed, std::int64_t ix, std::int64_t iy) {
  const std::uint64_t h = mix(mix(seed, static_cast<std::uint64_t>(ix)), static_cast<std::uint64_t>(iy));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double quintic(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

double value_noise(std::uint64_t seed, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
  const double tx = quintic(x - fx), ty = quintic(y - fy);
  const double a = lattice(seed, ix, iy), b = lattice(seed, ix + 1, iy);
  const double c = lattice(seed, ix, iy + 1), d = lattice(seed, ix + 1, iy + 1);
  return (1 - ty) * ((1 - tx) * a + tx * b) + ty * ((1 - tx) * c + tx * d);
}

// Value noise with a scene-wide brightness offset, a per-channel tint, a
// coarse luminance octave shared by all channels and two per-channel detail
// octaves. Centered on 0.5; the caller clamps.
double texture(std::uint64_t seed, int channel, double scale, double x, double y) {
  const std::uint64_t s = mix(seed, static_cast<std::uint64_t>(channel) + 101);
  const std::uint64_t lum = mix(seed, 0x4c554dULL);
  const double offset = lattice(lum, 7, 7) - 0.5;
  const double tint = lattice(s, 9, 9) - 0.5;
  const double coarse = value_noise(lum, x / (4.0 * scale), y / (4.0 * scale)) - 0.5;
  const double detail = 0.65 * value_noise(s, x / scale, y / scale) +
                        0.35 * value_noise(s ^ 0x5bd1e995ULL, 2.0 * x / scale, 2.0 * y / scale) - 0.5;
  return 0.5 + 0.3 * offset + 0.1 * tint + 0.3 * coarse + 0.4 * detail;
}

double wrap_coord(double v, int period) {
  double r = std::fmod(v, static_cast<double>(period));
  return r < 0 ? r + period : r;
}

// Sprite-local coordinates of pixel (x, y) in frame k, or false if outside.
bool sprite_local(const SceneSpec& spec, const SpriteSpec& s, int k, int y, int x, double& lx, double& ly) {
  lx = x - (s.start.x + s.velocity.x * k);
  ly = y - (s.start.y + s.velocity.y * k);
  if (spec.wrap) {
    lx = wrap_coord(lx, spec.width);
    ly = wrap_coord(ly, spec.height);
  }
  return lx >= 0.0 && ly >= 0.0 && lx < s.width && ly < s.height;
}

Vec2 layer_velocity(const SceneSpec& spec, int layer) {
  return layer < 0 ? spec.pan : spec.sprites[static_cast<std::size_t>(layer)].velocity;
}

struct RectShape {
  int rows = 0, cols = 0, count = 0;
};

RectShape rect_shape(const SceneSpec& spec) {
  RectShape r;
  r.count = static_cast<int>(std::lround(spec.mask.fraction * spec.height * spec.width));
  r.cols = std::clamp(static_cast<int>(std::lround(std::sqrt(static_cast<double>(r.count) * spec.width / spec.height))),
                      1, spec.width);
  r.rows = (r.count + r.cols - 1) / r.cols;
  if (r.rows > spec.height) {
    r.rows = spec.height;
    r.cols = (r.count + r.rows - 1) / r.rows;
  }
  return r;
}

Mask rect_mask(const SceneSpec& spec, int k) {
  const RectShape r = rect_shape(spec);
  int top = (spec.height - r.rows) / 2, left = (spec.width - r.cols) / 2;
  if (spec.mask.script == MaskScript::MovingRect) {
    top += static_cast<int>(std::lround(spec.mask.velocity.y * k));
    left += static_cast<int>(std::lround(spec.mask.velocity.x * k));
  }
  Mask m(spec.height, spec.width);
  // full rows then a partial last row, so the count is exact when unclipped
  for (int i = 0; i < r.count; ++i) {
    const int y = top + i / r.cols, x = left + i % r.cols;
    if (y >= 0 && x >= 0 && y < spec.height && x < spec.width) m.set(y, x);
  }
  return m;
}

Vec2 vec_from_json(const nlohmann::json& j, const std::string& field) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    throw ConfigError("field '" + field + "': expected [x, y]");
  }
  return {j[0].get<double>(), j[1].get<double>()};
}

template <typename T>
T get_field(const nlohmann::json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("field '" + where + key + "': wrong type");
  }
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
      throw ConfigError("unknown field '" + where + key + "'");
    }
  }
}

const char* script_name(MaskScript s) {
  switch (s) {
    case MaskScript::StationaryRect: return "stationary_rect";
    case MaskScript::MovingRect: return "moving_rect";
    case MaskScript::SpriteShape: return "sprite";
  }
  return "?";
}

}  // namespace

std::vector<std::string> SceneSpec::problems() const {
  std::vector<std::string> out;
  if (height < kMinFrameSide) out.push_back("height must be >= 8, got " + std::to_string(height));
  if (width < kMinFrameSide) out.push_back("width must be >= 8, got " + std::to_string(width));
  if (channels != 1 && channels != 3) out.push_back("channels must be 1 or 3, got " + std::to_string(channels));
  if (frames < 1) out.push_back("frames must be >= 1, got " + std::to_string(frames));
  if (!(texture_scale > 0.0)) out.push_back("texture_scale must be > 0");
  if (!std::isfinite(pan.x) || !std::isfinite(pan.y)) out.push_back("pan must be finite");
  if (!std::isfinite(brightness_step)) out.push_back("brightness_step must be finite");
  if (!(mask.fraction > 0.0 && mask.fraction <= 0.9)) {
    out.push_back("mask.fraction must be in (0, 0.9], got " + std::to_string(mask.fraction));
  }
  if (mask.dilation < 0) out.push_back("mask.dilation must be >= 0");
  if (mask.script == MaskScript::SpriteShape && sprites.empty()) {
    out.push_back("mask.script 'sprite' needs at least one sprite");
  }
  for (std::size_t i = 0; i < sprites.size(); ++i) {
    const SpriteSpec& s = sprites[i];
    const std::string name = "sprites[" + std::to_string(i) + "]";
    if (s.width < 1 || s.height < 1 || s.width > width || s.height > height) {
      out.push_back(name + " size " + std::to_string(s.width) + "x" + std::to_string(s.height) +
                    " does not fit the frame");
      continue;
    }
    if (wrap) continue;
    // motion is linear, so checking the first and last frame covers all
    for (int k : {0, std::max(frames - 1, 0)}) {
      const double x = s.start.x + s.velocity.x * k, y = s.start.y + s.velocity.y * k;
      if (x < 0.0 || y < 0.0 || x + s.width > width || y + s.height > height) {
        std::ostringstream msg;
        msg << name << " leaves the frame at frame " << k << " (top-left " << x << ", " << y
            << "); set wrap or change start/velocity";
        out.push_back(msg.str());
        break;
      }
    }
  }
  return out;
}

void SceneSpec::validate() const {
  const auto p = problems();
  if (p.empty()) return;
  std::string msg = "invalid scene spec:";
  for (const auto& s : p) msg += "\n  " + s;
  throw ConfigError(msg);
}

SceneSpec scene_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("scene spec is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("scene spec must be a JSON object");
  reject_unknown(j,
                 {"height", "width", "channels", "frames", "background_seed", "texture_scale", "pan", "sprites",
                  "mask", "brightness_step", "wrap"},
                 "");
  SceneSpec s;
  s.height = get_field(j, "height", s.height, "");
  s.width = get_field(j, "width", s.width, "");
  s.channels = get_field(j, "channels", s.channels, "");
  s.frames = get_field(j, "frames", s.frames, "");
  s.background_seed = get_field(j, "background_seed", s.background_seed, "");
  s.texture_scale = get_field(j, "texture_scale", s.texture_scale, "");
  s.brightness_step = get_field(j, "brightness_step", s.brightness_step, "");
  s.wrap = get_field(j, "wrap", s.wrap, "");
  if (j.contains("pan")) s.pan = vec_from_json(j["pan"], "pan");
  if (j.contains("sprites")) {
    if (!j["sprites"].is_array()) throw ConfigError("field 'sprites': expected an array");
    for (std::size_t i = 0; i < j["sprites"].size(); ++i) {
      const auto& js = j["sprites"][i];
      const std::string where = "sprites[" + std::to_string(i) + "].";
      if (!js.is_object()) throw ConfigError("field 'sprites[" + std::to_string(i) + "]': expected an object");
      reject_unknown(js, {"texture_seed", "width", "height", "velocity", "start"}, where);
      SpriteSpec sp;
      sp.texture_seed = get_field(js, "texture_seed", sp.texture_seed, where);
      sp.width = get_field(js, "width", sp.width, where);
      sp.height = get_field(js, "height", sp.height, where);
      if (js.contains("velocity")) sp.velocity = vec_from_json(js["velocity"], where + "velocity");
      if (js.contains("start")) sp.start = vec_from_json(js["start"], where + "start");
      s.sprites.push_back(sp);
    }
  }
  if (j.contains("mask")) {
    const auto& jm = j["mask"];
    if (!jm.is_object()) throw ConfigError("field 'mask': expected an object");
    reject_unknown(jm, {"script", "fraction", "velocity", "dilation"}, "mask.");
    const std::string script = get_field<std::string>(jm, "script", "stationary_rect", "mask.");
    if (script == "stationary_rect") {
      s.mask.script = MaskScript::StationaryRect;
    } else if (script == "moving_rect") {
      s.mask.script = MaskScript::MovingRect;
    } else if (script == "sprite") {
      s.mask.script = MaskScript::SpriteShape;
    } else {
      throw ConfigError("field 'mask.script': unknown script '" + script +
                        "' (expected stationary_rect, moving_rect or sprite)");
    }
    s.mask.fraction = get_field(jm, "fraction", s.mask.fraction, "mask.");
    s.mask.dilation = get_field(jm, "dilation", s.mask.dilation, "mask.");
    if (jm.contains("velocity")) s.mask.velocity = vec_from_json(jm["velocity"], "mask.velocity");
  }
  return s;
}

std::string scene_to_json(const SceneSpec& s) {
  nlohmann::json j = {{"height", s.height},
                      {"width", s.width},
                      {"channels", s.channels},
                      {"frames", s.frames},
                      {"background_seed", s.background_seed},
                      {"texture_scale", s.texture_scale},
                      {"pan", {s.pan.x, s.pan.y}},
                      {"brightness_step", s.brightness_step},
                      {"wrap", s.wrap}};
  j["sprites"] = nlohmann::json::array();
  for (const auto& sp : s.sprites) {
    j["sprites"].push_back({{"texture_seed", sp.texture_seed},
                            {"width", sp.width},
                            {"height", sp.height},
                            {"velocity", {sp.velocity.x, sp.velocity.y}},
                            {"start", {sp.start.x, sp.start.y}}});
  }
  j["mask"] = {{"script", script_name(s.mask.script)},
               {"fraction", s.mask.fraction},
               {"velocity", {s.mask.velocity.x, s.mask.velocity.y}},
               {"dilation", s.mask.dilation}};
  return j.dump(2);
}

SceneSpec load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scene spec " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return scene_from_json(ss.str());
}

SceneMotion::SceneMotion(SceneSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

int SceneMotion::layer(int k, int y, int x) const {
  for (int i = static_cast<int>(spec_.sprites.size()) - 1; i >= 0; --i) {
    double lx, ly;
    if (sprite_local(spec_, spec_.sprites[static_cast<std::size_t>(i)], k, y, x, lx, ly)) return i;
  }
  return -1;
}

FlowField SceneMotion::flow(int k, int j) const {
  if (k < 0 || j < 0 || k >= spec_.frames || j >= spec_.frames) {
    throw ConfigError("flow pair (" + std::to_string(k) + ", " + std::to_string(j) + ") out of range");
  }
  FlowField f(spec_.height, spec_.width);
  for (int y = 0; y < spec_.height; ++y) {
    for (int x = 0; x < spec_.width; ++x) {
      const Vec2 v = layer_velocity(spec_, layer(k, y, x));
      f.set(y, x, v.x * (j - k), v.y * (j - k));
    }
  }
  return f;
}

OcclusionMask SceneMotion::occlusion(int j, int k) const {
  const FlowField f = flow(j, k);
  OcclusionMask occ(spec_.height, spec_.width);
  for (int y = 0; y < spec_.height; ++y) {
    for (int x = 0; x < spec_.width; ++x) {
      const int own = layer(j, y, x);
      const auto fp = detail::footprint(x + f.u(y, x), y + f.v(y, x), spec_.height, spec_.width);
      bool ok = fp.inside;
      for (int dy = 0; ok && dy <= (fp.fy > 0.0 ? 1 : 0); ++dy) {
        for (int dx = 0; ok && dx <= (fp.fx > 0.0 ? 1 : 0); ++dx) {
          ok = layer(k, fp.y0 + dy, fp.x0 + dx) == own;
        }
      }
      if (!ok) occ.set(y, x);
    }
  }
  return occ;
}

SyntheticVideo generate(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  SyntheticVideo out;
  out.spec = spec;
  const SceneMotion motion(spec);
  const std::uint64_t bg_seed = mix(spec.background_seed, seed);
  for (int k = 0; k < spec.frames; ++k) {
    Frame f(spec.height, spec.width, spec.channels);
    for (int y = 0; y < spec.height; ++y) {
      for (int x = 0; x < spec.width; ++x) {
        const int l = motion.layer(k, y, x);
        for (int c = 0; c < spec.channels; ++c) {
          double v;
          if (l < 0) {
            v = texture(bg_seed, c, spec.texture_scale, x - spec.pan.x * k, y - spec.pan.y * k);
          } else {
            const SpriteSpec& s = spec.sprites[static_cast<std::size_t>(l)];
            double lx, ly;
            sprite_local(spec, s, k, y, x, lx, ly);
            // sprites use a coarser lattice so they read as distinct objects
            v = texture(mix(s.texture_seed, seed) ^ 0xa5a5ULL, c, spec.texture_scale * 0.75, lx, ly);
          }
          f.at(c, y, x) = std::clamp(v + spec.brightness_step * k, 0.0, 1.0);
        }
      }
    }
    out.clean.push_back(std::move(f));

    Mask m(spec.height, spec.width);
    if (spec.mask.script == MaskScript::SpriteShape) {
      const int d = spec.mask.dilation;
      for (int y = 0; y < spec.height; ++y) {
        for (int x = 0; x < spec.width; ++x) {
          if (motion.layer(k, y, x) < 0) continue;
          for (int dy = -d; dy <= d; ++dy) {
            for (int dx = -d; dx <= d; ++dx) {
              const int yy = y + dy, xx = x + dx;
              if (yy >= 0 && xx >= 0 && yy < spec.height && xx < spec.width) m.set(yy, xx);
            }
          }
        }
      }
    } else {
      m = rect_mask(spec, k);
    }
    out.masks.push_back(std::move(m));
  }
  for (int k = 0; k + 1 < spec.frames; ++k) {
    out.forward_flows.push_back(motion.flow(k, k + 1));
    out.backward_flows.push_back(motion.flow(k + 1, k));
    out.occlusions.push_back(motion.occlusion(k + 1, k));
  }
  return out;
}

VideoSequence corrupt(const std::vector<Frame>& clean, const std::vector<Mask>& masks) {
  if (clean.size() != masks.size()) {
    throw ShapeError("corrupt: " + std::to_string(clean.size()) + " frames vs " + std::to_string(masks.size()) +
                     " masks");
  }
  VideoSequence seq;
  for (std::size_t k = 0; k < clean.size(); ++k) {
    seq.frames.push_back(apply_mask(clean[k], masks[k]));
    seq.masks.push_back(masks[k]);
  }
  seq.validate();
  return seq;
}

std::vector<Frame> training_frames(int count, int height, int width, int channels, std::uint64_t first_seed) {
  if (count < 1) throw ConfigError("training_frames: count must be >= 1");
  std::vector<Frame> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int q = 0; q < count; ++q) {
    SceneSpec s;
    s.height = height;
    s.width = width;
    s.channels = channels;
    s.frames = 1;
    s.background_seed = first_seed + static_cast<std::uint64_t>(q);
    out.push_back(std::move(generate(s).clean[0]));
  }
  return out;
}

std::vector<SceneSpec> standard_suite() {
  std::vector<SceneSpec> suite;
  auto base = [](std::uint64_t seed, Vec2 pan) {
    SceneSpec s;
    s.background_seed = seed;
    s.pan = pan;
    return s;
  };
  {
    SceneSpec s = base(11, {1.0, 0.0});
    s.mask.fraction = 0.2;
    suite.push_back(s);
  }
  {
    SceneSpec s = base(12, {0.0, 1.0});
    s.mask.fraction = 0.25;
    suite.push_back(s);
  }
  {
    SceneSpec s = base(13, {-1.5, 0.5});
    s.mask.fraction = 0.2;
    suite.push_back(s);
  }
  {
    SceneSpec s = base(14, {0.5, 0.0});
    s.mask.fraction = 0.3;
    suite.push_back(s);
  }
  {
    SceneSpec s = base(15, {1.0, 1.0});
    s.mask.script = MaskScript::MovingRect;
    s.mask.fraction = 0.15;
    s.mask.velocity = {-1.0, 0.0};
    suite.push_back(s);
  }
  {
    SceneSpec s = base(16, {0.0, 0.0});
    s.sprites.push_back({21, 14, 14, {3.0, 0.0}, {4.0, 25.0}});
    s.mask.script = MaskScript::SpriteShape;
    suite.push_back(s);
  }
  {
    SceneSpec s = base(17, {1.0, 0.0});
    s.sprites.push_back({22, 12, 16, {-2.0, 1.0}, {44.0, 10.0}});
    s.mask.script = MaskScript::SpriteShape;
    suite.push_back(s);
  }
  {
    SceneSpec s = base(18, {-1.0, 0.0});
    s.mask.script = MaskScript::MovingRect;
    s.mask.fraction = 0.12;
    s.mask.velocity = {1.0, 1.0};
    suite.push_back(s);
  }
  {
    SceneSpec s = base(19, {0.75, -0.5});
    s.mask.fraction = 0.25;
    s.brightness_step = 0.01;
    suite.push_back(s);
  }
  {
    SceneSpec s = base(20, {2.0, 0.0});
    s.sprites.push_back({23, 10, 10, {-1.0, 0.0}, {40.0, 40.0}});
    s.mask.fraction = 0.2;
    suite.push_back(s);
  }
  return suite;
}

namespace {

std::string flo_name(int k) {
  std::ostringstream ss;
  ss << "flow_" << std::setw(4) << std::setfill('0') << k << ".flo";
  return ss.str();
}

std::string occl_name(int k) {
  std::ostringstream ss;
  ss << "occl_" << std::setw(4) << std::setfill('0') << k << ".png";
  return ss.str();
}

}  // namespace

void save_synthetic(const SyntheticVideo& video, const std::filesystem::path& dir) {
  VideoSequence seq{video.clean, video.masks};
  save_sequence(seq, dir);
  std::filesystem::create_directories(dir / "forward");
  for (std::size_t k = 0; k < video.backward_flows.size(); ++k) {
    write_flo(video.backward_flows[k], dir / flo_name(static_cast<int>(k)));
    write_flo(video.forward_flows[k], dir / "forward" / flo_name(static_cast<int>(k)));
    write_mask_png(video.occlusions[k], dir / occl_name(static_cast<int>(k)));
  }
  std::ofstream js(dir / "scene.json");
  js << scene_to_json(video.spec) << '\n';
  if (!js) throw IoError("cannot write " + (dir / "scene.json").string());
}

GroundTruthFiles load_ground_truth(const std::filesystem::path& dir, int frames) {
  GroundTruthFiles gt;
  for (int k = 0; k + 1 < frames; ++k) {
    gt.backward.push_back(read_flo(dir / flo_name(k)));
    const auto fwd = dir / "forward" / flo_name(k);
    if (std::filesystem::exists(fwd)) gt.forward.push_back(read_flo(fwd));
    const auto occ = dir / occl_name(k);
    if (std::filesystem::exists(occ)) gt.occlusions.push_back(read_mask_png(occ));
  }
  if (!gt.forward.empty() && gt.forward.size() != gt.backward.size()) {
    throw IoError("incomplete forward flows in " + dir.string());
  }
  if (!gt.occlusions.empty() && gt.occlusions.size() != gt.backward.size()) {
    throw IoError("incomplete occlusion maps in " + dir.string());
  }
  return gt;
}

}  // namespace vipflow
