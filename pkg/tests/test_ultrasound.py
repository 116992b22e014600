import dataclasses

import numpy as np
import pytest

from rvasim.errors import NoIntersection, NoVesselDetected
from rvasim.kinematics import RigidTransform
from rvasim.phantom import ScenarioParams, cross_section, make_rat_tail_scenario
from rvasim.procedure import PROBE_DOWN
from rvasim.rng import stream
from rvasim.ultrasound import (
    UltrasoundFrame,
    UsConfig,
    detect_needle_tip,
    detect_vessel,
    echo_amplitude,
    image_plane_pose,
    quality_score,
    read_pgm,
    render_frame,
    render_needle,
    render_settled,
    to_uint8,
    write_pgm,
)

CFG = UsConfig()


def probe_over(block):
    mid = block.vessels[0].midpoint()
    return RigidTransform(PROBE_DOWN, [mid[0], mid[1], block.skin_z])


def rat_block(diameter, seed=0):
    return make_rat_tail_scenario(seed, ScenarioParams(fixed_diameter_mm=diameter))


def truth_center(block, probe, cfg=CFG):
    return cross_section(block, image_plane_pose(probe, cfg))[0].center_2d


def lumen_span_px(block, cfg=CFG):
    probe = probe_over(block)
    plane = image_plane_pose(probe, cfg)
    amp = echo_amplitude(block, plane, cfg)
    c = truth_center(block, probe, cfg) / cfg.resolution_mm_per_px
    row = amp[int(round(c[1])), :]
    col = amp[:, int(round(c[0]))]
    dark = lambda line: int(np.sum(line < 0.5))
    return dark(row), dark(col)


def flat_frame(level=128.0, shape=(160, 128)):
    return UltrasoundFrame(np.full(shape, level), RigidTransform.identity(), 0.1)


def test_config_defaults():
    assert (CFG.gain_db, CFG.depth_cm, CFG.dynamic_range_db, CFG.frequency_mhz) == (80.0, 1.6, 80.0, 14.2)
    assert (CFG.enhancement_level, CFG.grayscale_map, CFG.frame_correlation) == (3, 14, 2)
    assert CFG.resolution_mm_per_px == 0.1
    assert CFG.shape == (160, 128)


@pytest.mark.parametrize("field,value", [("gain_db", 0.0), ("resolution_mm_per_px", -0.1),
                                         ("frame_correlation", 0), ("depth_cm", 1.605)])
def test_config_rejects_bad_values(field, value):
    with pytest.raises(ValueError):
        dataclasses.replace(CFG, **{field: value})


def test_lumen_span_4mm(phantom):
    row, col = lumen_span_px(phantom)
    assert abs(row - 40) <= 1 and abs(col - 40) <= 1


def test_lumen_span_07mm():
    row, col = lumen_span_px(rat_block(0.7))
    assert abs(row - 7) <= 1 and abs(col - 7) <= 1


def test_frame_determinism(phantom):
    probe = probe_over(phantom)
    a = render_frame(phantom, probe, CFG, stream(5, 3))
    b = render_frame(phantom, probe, CFG, stream(5, 3))
    assert a.pixels.tobytes() == b.pixels.tobytes()
    c = render_frame(phantom, probe, CFG, stream(6, 3))
    assert a.pixels.tobytes() != c.pixels.tobytes()


def test_frame_correlation_blend(phantom):
    probe = probe_over(phantom)
    prev = render_frame(phantom, probe, CFG, stream(1, 3))
    fresh = render_frame(phantom, probe, CFG, stream(2, 3))
    blended = render_frame(phantom, probe, CFG, stream(2, 3), prev_frame=prev)
    assert np.allclose(blended.pixels, (prev.pixels + fresh.pixels) / 2.0, atol=1e-12)
    single = dataclasses.replace(CFG, frame_correlation=1)
    fresh1 = render_frame(phantom, probe, single, stream(2, 3))
    with_prev = render_frame(phantom, probe, single, stream(2, 3), prev_frame=prev)
    assert np.array_equal(fresh1.pixels, with_prev.pixels)


def test_settled_frame_equals_two_renders(phantom):
    probe = probe_over(phantom)
    rng = stream(4, 3)
    first = render_frame(phantom, probe, CFG, rng)
    second = render_frame(phantom, probe, CFG, rng, prev_frame=first, frame_index=1)
    settled = render_settled(phantom, probe, CFG, stream(4, 3))
    assert np.array_equal(settled.pixels, second.pixels)
    assert settled.frame_index == 1


def test_plane_missing_block(phantom):
    probe = RigidTransform(PROBE_DOWN, [0.0, 0.0, 1000.0])
    with pytest.raises(NoIntersection):
        render_frame(phantom, probe, CFG, stream(0, 3))


def test_pixels_in_range(phantom):
    px = render_settled(phantom, probe_over(phantom), CFG, stream(0, 3)).pixels
    assert px.min() >= 0.0 and px.max() <= 255.0


# --- needle overlay ---------------------------------------------------------


def test_render_needle_absent_tip(phantom):
    frame = render_frame(phantom, probe_over(phantom), CFG, stream(0, 3))
    assert render_needle(frame, None) is frame


def test_render_needle_center_saturates():
    frame = flat_frame(60.0)
    out = render_needle(frame, (6.4, 8.0, 0.0))
    assert out.pixels.max() == 255.0
    assert out.pixels[80, 64] == 255.0


def test_render_needle_out_of_slab():
    frame = flat_frame(60.0)
    assert np.array_equal(render_needle(frame, (6.4, 8.0, 1.0)).pixels, frame.pixels)


def test_needle_tip_round_trip(phantom):
    base = render_settled(phantom, probe_over(phantom), CFG, stream(0, 3))
    rng = np.random.default_rng(1)
    for _ in range(50):
        tip = rng.uniform([1.0, 1.0], [11.8, 15.0])
        found = detect_needle_tip(render_needle(base, tip))
        assert found is not None
        assert np.linalg.norm(found.center_mm - tip) <= 0.1


def test_no_needle_no_detection(phantom):
    frame = render_settled(phantom, probe_over(phantom), CFG, stream(0, 3))
    assert detect_needle_tip(frame) is None


def test_needle_detector_prefers_brighter_blob():
    yy, xx = np.mgrid[0:160, 0:128]

    def blob(cx, cy, peak):
        return peak * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / 8.0)

    px = np.maximum(np.maximum(blob(30, 40, 252.0), blob(90, 120, 255.0)), 50.0)
    found = detect_needle_tip(UltrasoundFrame(px, RigidTransform.identity(), 0.1))
    assert np.allclose(found.center_px, [90, 120], atol=0.5)


# --- quality score ----------------------------------------------------------


def test_quality_uniform_frame_is_zero():
    assert quality_score(flat_frame()) == 0.0


def test_quality_phantom_clears_gate(phantom):
    probe = probe_over(phantom)
    for seed in range(10):
        assert quality_score(render_settled(phantom, probe, CFG, stream(seed, 3))) > 1.5


def test_quality_drops_with_speckle(phantom):
    probe = probe_over(phantom)
    q1 = quality_score(render_settled(phantom, probe, CFG, stream(0, 3)))
    q2 = quality_score(render_settled(phantom, probe, dataclasses.replace(CFG, speckle_gain=2.0), stream(0, 3)))
    assert q2 < q1


def test_quality_monotone_in_speckle_variance(phantom):
    probe = probe_over(phantom)
    for seed in range(8):
        qs = [quality_score(render_settled(phantom, probe, dataclasses.replace(CFG, speckle_gain=float(np.sqrt(v))),
                                           stream(seed, 3)))
              for v in (1.0, 2.0, 4.0, 7.0, 10.0)]
        assert all(b <= a for a, b in zip(qs, qs[1:]))


def test_quality_fails_gate_at_tenfold_variance(phantom):
    cfg = dataclasses.replace(CFG, speckle_gain=float(np.sqrt(10.0)))
    probe = probe_over(phantom)
    assert all(quality_score(render_settled(phantom, probe, cfg, stream(s, 3))) < 1.5 for s in range(10))


# --- vessel detection -------------------------------------------------------


def test_detect_phantom_center(phantom):
    probe = probe_over(phantom)
    det = detect_vessel(render_settled(phantom, probe, CFG, stream(0, 3)))
    assert np.linalg.norm(det.center_mm - truth_center(phantom, probe)) <= 0.1
    assert det.diameter_mm == pytest.approx(4.0, abs=0.2)
    assert 0.0 <= det.confidence <= 1.0


def test_detect_uniform_frame():
    with pytest.raises(NoVesselDetected):
        detect_vessel(flat_frame())


def test_detect_small_vessel_diameter():
    block = rat_block(0.44)
    det = detect_vessel(render_settled(block, probe_over(block), CFG, stream(0, 3)))
    assert det.diameter_mm == pytest.approx(0.44, abs=0.2)


def test_detection_mm_px_consistency():
    for d in (0.44, 0.7, 1.0):
        block = rat_block(d, seed=3)
        frame = render_settled(block, probe_over(block), CFG, stream(1, 3))
        det = detect_vessel(frame)
        assert np.array_equal(det.center_mm, det.center_px * frame.mm_per_px)


@pytest.mark.parametrize("diameter", [0.44, 0.7, 1.0, 4.0])
def test_render_detect_round_trip(diameter, phantom):
    block = phantom if diameter == 4.0 else rat_block(diameter)
    probe = probe_over(block)
    truth = truth_center(block, probe)
    ok = 0
    for seed in range(200):
        try:
            det = detect_vessel(render_settled(block, probe, CFG, stream(seed, 3)))
        except NoVesselDetected:
            continue
        center_err = np.linalg.norm(det.center_mm - truth) / CFG.resolution_mm_per_px
        diam_err = abs(det.diameter_mm - diameter) / CFG.resolution_mm_per_px
        ok += center_err <= 1.0 and diam_err <= 2.0
    assert ok >= 190


# --- export -----------------------------------------------------------------


def test_pgm_round_trip(tmp_path, phantom):
    frame = render_settled(phantom, probe_over(phantom), CFG, stream(0, 3), frame_index=4)
    path = write_pgm(frame, tmp_path / "f.pgm")
    px, fields = read_pgm(path)
    assert np.array_equal(px, to_uint8(frame))
    assert float(fields["mm_per_px"]) == 0.1
    assert fields["frame_index"] == "5"
    assert path.read_bytes().startswith(b"P5\n# mm_per_px=")
