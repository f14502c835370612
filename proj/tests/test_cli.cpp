#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "test_util.hpp"
#include "vipflow/flowlab.hpp"
#include "vipflow/synthverse.hpp"

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(VIPFLOW_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int count_ext(const fs::path& dir, const std::string& prefix, const std::string& ext) {
  int n = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind(prefix, 0) == 0 && e.path().extension() == ext) ++n;
  }
  return n;
}

void write_spec(const fs::path& path, const std::string& json) {
  std::ofstream(path) << json;
}

}  // namespace

TEST_CASE("synth writes frames, masks and flows") {
  testutil::TempDir tmp("cli_synth");
  const fs::path spec = tmp.path() / "s.json";
  write_spec(spec, R"({"height": 16, "width": 16, "frames": 4, "pan": [1, 0]})");
  REQUIRE(run("synth --spec " + spec.string() + " --out " + (tmp.path() / "a").string()) == 0);
  CHECK(count_ext(tmp.path() / "a", "frame_", ".png") == 4);
  CHECK(count_ext(tmp.path() / "a", "mask_", ".png") == 4);
  CHECK(count_ext(tmp.path() / "a", "flow_", ".flo") == 3);
  REQUIRE(run("synth --spec " + spec.string() + " --out " + (tmp.path() / "b").string()) == 0);
  for (const auto& e : fs::directory_iterator(tmp.path() / "a")) {
    if (e.is_regular_file()) CHECK(slurp(e.path()) == slurp(tmp.path() / "b" / e.path().filename()));
  }
}

TEST_CASE("invalid input exits with status 2") {
  testutil::TempDir tmp("cli_bad");
  const fs::path spec = tmp.path() / "s.json";
  write_spec(spec, R"({"height": 16, "width": 16, "frames": 6,
                       "sprites": [{"width": 4, "height": 4, "start": [14, 2], "velocity": [3, 0]}]})");
  CHECK(run("synth --spec " + spec.string() + " --out " + (tmp.path() / "x").string()) == 2);
  CHECK(run("inpaint --in " + (tmp.path() / "missing").string() + " --out " + tmp.path().string()) == 2);
  CHECK(run("frobnicate") == 2);
}

TEST_CASE("inpaint on an unmasked clip and eval against itself") {
  testutil::TempDir tmp("cli_inpaint");
  const fs::path spec = tmp.path() / "s.json";
  write_spec(spec, R"({"height": 16, "width": 16, "frames": 3, "pan": [1, 0], "mask": {"fraction": 0.05}})");
  const fs::path scene = tmp.path() / "scene";
  REQUIRE(run("synth --spec " + spec.string() + " --out " + scene.string()) == 0);
  vipflow::VideoSequence seq = vipflow::load_sequence(scene);
  for (int k = 0; k < seq.size(); ++k) vipflow::write_mask_png(vipflow::Mask(16, 16), scene / vipflow::mask_filename(k));

  const fs::path out = tmp.path() / "out";
  REQUIRE(run("inpaint --in " + scene.string() + " --out " + out.string() + " --flow gt --steps 2") == 0);
  const auto report = nlohmann::json::parse(slurp(out / "report.json"));
  CHECK(report["totals"]["generation_runs"] == 0);
  for (int k = 0; k < 3; ++k) {
    CHECK(slurp(out / vipflow::frame_filename(k)) == slurp(scene / vipflow::frame_filename(k)));
  }
  const fs::path metrics = tmp.path() / "m.json";
  REQUIRE(run("eval --pred " + out.string() + " --gt " + scene.string() + " --flows " + scene.string() + " --out " +
              metrics.string()) == 0);
  const auto m = nlohmann::json::parse(slurp(metrics));
  CHECK(m["psnr"]["mean"] == 99.0);
  CHECK(m["e_warp"]["mean"].get<double>() < 1e-4);
}
