#include <cmath>
#include <sstream>

#include "doctest.h"
#include "test_util.hpp"
#include "vipflow/metrics.hpp"
#include "vipflow/synthverse.hpp"

using namespace vipflow;

TEST_CASE("psnr reference values") {
  const Frame a = testutil::random_frame(12, 12, 3, 1);
  CHECK(psnr(a, a) == kPsnrCap);
  CHECK(psnr(Frame(12, 12, 3, 0.2), Frame(12, 12, 3, 0.3)) == doctest::Approx(20.0));
  CHECK(psnr(Frame(12, 12, 3, 0.0), Frame(12, 12, 3, 1.0)) == doctest::Approx(0.0));
  CHECK_THROWS_AS(psnr(a, Frame(12, 11, 3)), ShapeError);
}

TEST_CASE("ssim reference values") {
  const Frame a = testutil::smooth_texture(16, 16, 3, 2);
  CHECK(ssim(a, a) == doctest::Approx(1.0));
  Frame b(16, 16, 1), inv(16, 16, 1);
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) {
      b.at(0, y, x) = (x + y) % 2;
      inv.at(0, y, x) = 1 - (x + y) % 2;
    }
  }
  CHECK(ssim(b, inv) < 0.0);
  Frame brighter = a;
  for (auto& v : brighter.data()) v += 0.1;
  const double s = ssim(a, brighter);
  CHECK(s > 0.0);
  CHECK(s < 1.0);
  CHECK_THROWS(ssim(Frame(8, 8, 1), Frame(8, 8, 1)));
}

TEST_CASE("warp error of a static and a translating clip") {
  const Frame f = testutil::smooth_texture(16, 16, 3, 3);
  const std::vector<Frame> still(4, f);
  std::vector<FlowField> zero(3, FlowField(16, 16));
  CHECK(warp_error(still, zero, {}).mean == 0.0);

  SceneSpec spec;
  spec.height = 24;
  spec.width = 24;
  spec.frames = 4;
  spec.pan = {1.0, -1.0};
  const SyntheticVideo v = generate(spec, 4);
  const WarpErrorResult r = warp_error(v.clean, v.backward_flows, v.occlusions);
  CHECK(r.mean < 1e-4);
  CHECK(r.per_pair.size() == 3);
  CHECK(r.skipped_pairs.empty());
  // warping along the wrong flow is penalised
  CHECK(warp_error(v.clean, std::vector<FlowField>(3, FlowField(24, 24)), {}).mean > 50 * r.mean);
}

TEST_CASE("metric report serialisation") {
  SceneSpec spec;
  spec.height = 16;
  spec.width = 16;
  spec.frames = 3;
  const SyntheticVideo v = generate(spec, 5);
  const MetricReport r = evaluate(v.clean, v.clean, v.backward_flows, v.occlusions, "gt");
  CHECK(r.psnr_mean == kPsnrCap);
  CHECK(r.ssim_mean == doctest::Approx(1.0));
  CHECK(r.e_warp_mean == doctest::Approx(0.0).epsilon(1e-12));
  std::ostringstream js, csv;
  write_metrics_json(r, js);
  write_metrics_csv(r, csv);
  CHECK(js.str().find("\"flow_source\"") != std::string::npos);
  const std::string text = csv.str();
  CHECK(text.rfind("frame,psnr,ssim,e_warp\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 4);
}
