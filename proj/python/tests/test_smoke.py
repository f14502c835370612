import json

import numpy as np
import pytest

import vipflow


def small_scene(**extra):
    spec = {"height": 16, "width": 16, "frames": 3, "pan": [1, 0]}
    spec.update(extra)
    return vipflow.synth(json.dumps(spec), 1)


def test_synth_shapes():
    v = small_scene()
    assert len(v["clean"]) == 3
    assert v["clean"][0].shape == (3, 16, 16)
    assert v["masks"][0].shape == (16, 16)
    assert v["forward_flows"][0].shape == (2, 16, 16)
    assert np.all(v["forward_flows"][0][0] == 1.0)
    assert len(vipflow.standard_suite()) == 10


def test_metrics():
    v = small_scene()
    a = v["clean"][0]
    assert vipflow.psnr(a, a) == 99.0
    assert vipflow.ssim(a, a) == pytest.approx(1.0)
    assert vipflow.warp_error(v["clean"], v["backward_flows"], v["occlusions"]) < 1e-4


def test_flo_round_trip(tmp_path):
    flow = np.random.default_rng(0).normal(size=(2, 5, 7)).astype(np.float32).astype(np.float64)
    vipflow.write_flo(flow, str(tmp_path / "f.flo"))
    assert np.array_equal(vipflow.read_flo(str(tmp_path / "f.flo")), flow)


def test_inpaint_unmasked_is_identity():
    v = small_scene()
    masks = [np.zeros((16, 16), np.uint8)] * 3
    frames, provenance, report = vipflow.inpaint(v["clean"], masks, v["forward_flows"], v["backward_flows"])
    assert report["totals"]["generation_runs"] == 0
    for got, want in zip(frames, v["clean"]):
        assert np.array_equal(got, want)
    assert np.array_equal(provenance[1], np.ones((16, 16), int))


def test_inpaint_fills_holes_with_prior(tmp_path):
    v = small_scene(mask={"fraction": 0.2})
    masked = [f * (1 - m) for f, m in zip(v["clean"], v["masks"])]
    prior = tmp_path / "p.gmm"
    vipflow.fit_prior(v["clean"], components=1, rank=2, path=str(prior))
    frames, provenance, report = vipflow.inpaint(masked, v["masks"], prior=str(prior), steps=3)
    assert report["totals"]["residual_invalid"] == 0
    assert all(f.min() >= 0.0 and f.max() <= 1.0 for f in frames)
    for f, m, src in zip(frames, v["masks"], masked):
        assert np.array_equal(f[:, m == 0], src[:, m == 0])


def test_errors_map_to_python_exceptions():
    with pytest.raises(ValueError):
        vipflow.synth('{"height": 4}')
    with pytest.raises(ValueError):
        vipflow.inpaint([np.zeros((3, 8, 8))], [np.zeros((8, 9), np.uint8)])
