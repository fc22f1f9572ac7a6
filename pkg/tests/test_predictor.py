import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from declutter.predictor import (
    GripperSpec, PredictorConfig, ProbMatrix, expected_area, grasp_prob, overlap_prob,
    prob_matrix,
)
from declutter.raster import BitMask, GridMeta, rasterize_ellipse
from helpers import disc_mask, rect_mask

META = GridMeta(120, 120, 0.002, (0.001, 0.001))
GRIP = GripperSpec()
CFG = PredictorConfig()


def brute_overlap(grasp, seg, gripper=GRIP):
    return int(np.count_nonzero(rasterize_ellipse(gripper.ellipse(grasp), seg.meta).cells
                                & seg.cells))


def test_formula_examples():
    assert overlap_prob(0, 100) == 0.0
    assert overlap_prob(100, 100) == 0.5
    assert overlap_prob(300, 100) == 0.75
    assert overlap_prob(900, 100) == pytest.approx(0.9)


def test_disjoint_segment_gives_zero():
    seg = rect_mask(META, 0, 5, 0, 5)
    assert grasp_prob((0.2, 0.2, 0.0), seg, GRIP, CFG) == 0.0


def test_full_coverage_segment():
    x, y = META.cell_to_world(60, 60)
    ell = rasterize_ellipse(GRIP.ellipse((x, y, 0.3)), META)
    a = ell.area_pixels()
    p = grasp_prob((x, y, 0.3), ell, GRIP, CFG)
    assert p == pytest.approx(a / (a + 100))


def test_b_scales_with_resolution():
    assert CFG.b_pixels(META) == 100
    assert CFG.b_pixels(GridMeta(10, 10, 0.001)) == pytest.approx(400)
    assert CFG.b_pixels(GridMeta(10, 10, 0.004)) == pytest.approx(25)


def test_p_roughly_resolution_independent():
    fine = GridMeta(240, 240, 0.001, (0.0005, 0.0005))
    seg_c = disc_mask(META, 0.12, 0.12, 0.03)
    seg_f = disc_mask(fine, 0.12, 0.12, 0.03)
    g = (0.14, 0.12, 0.4)
    assert grasp_prob(g, seg_c, GRIP, CFG) == pytest.approx(grasp_prob(g, seg_f, GRIP, CFG),
                                                            abs=0.01)


@settings(max_examples=40, deadline=None)
@given(x=st.floats(0.0, 0.24), y=st.floats(0.0, 0.24), th=st.floats(-math.pi / 2, math.pi / 2),
       seed=st.integers(0, 100))
def test_prob_matrix_equals_elementwise(x, y, th, seed):
    rng = np.random.default_rng(seed)
    segs = [disc_mask(META, *rng.uniform(0.02, 0.22, 2), rng.uniform(0.01, 0.05))
            for _ in range(3)]
    grasps = [(x, y, th), (float(rng.uniform(0, 0.24)), float(rng.uniform(0, 0.24)), 0.0)]
    P = prob_matrix(grasps, segs, GRIP, CFG)
    for i, g in enumerate(grasps):
        for j, s in enumerate(segs):
            a = brute_overlap(g, s)
            assert P.p[i, j] == pytest.approx(a / (a + 100), abs=0, rel=1e-12)
            assert P.p[i, j] == grasp_prob(g, s, GRIP, CFG)


def test_prob_matrix_shapes():
    segs = [disc_mask(META, 0.1, 0.1, 0.02)]
    assert prob_matrix([], segs, GRIP, CFG).p.shape == (0, 1)
    P = prob_matrix([(0.1, 0.1, 0.0)] * 2, segs, GRIP, CFG)
    assert np.array_equal(P.p[0], P.p[1])
    assert P.p.max() < 1


def test_monotone_in_area():
    ps = [overlap_prob(a, 100.0) for a in range(0, 2000, 7)]
    assert all(b > a for a, b in zip(ps, ps[1:]))
    assert max(ps) < 1


def test_translation_equivariance():
    seg = disc_mask(META, 0.08, 0.1, 0.03)
    shifted = BitMask(META, np.roll(seg.cells, (7, 11), axis=(0, 1)))
    g = (0.1, 0.09, 0.5)
    g2 = (0.1 + 11 * 0.002, 0.09 + 7 * 0.002, 0.5)
    assert grasp_prob(g, seg, GRIP, CFG) == grasp_prob(g2, shifted, GRIP, CFG)


def test_circle_gripper_is_rotation_invariant():
    circ = GripperSpec(0.06, 0.06)
    seg = rect_mask(META, 40, 70, 30, 100)
    x, y = META.cell_to_world(55, 65)
    ps = {grasp_prob((x, y, th), seg, circ, CFG) for th in np.linspace(-1.5, 1.5, 7)}
    assert len(ps) == 1


def test_expected_area_examples():
    assert expected_area((0.2, 0.2, 0.0), [], GRIP, CFG) == 0.0
    assert expected_area((0.2, 0.2, 0.0), [rect_mask(META, 0, 3, 0, 3)], GRIP, CFG) == 0.0
    # a = 100 overlap with a 400-pixel segment: 0.5 * 400
    seg = np.zeros(META.shape, dtype=bool)
    x, y = META.cell_to_world(60, 60)
    rr, cc = np.nonzero(rasterize_ellipse(GRIP.ellipse((x, y, 0.0)), META).cells)
    seg[rr[:100], cc[:100]] = True
    seg[0:10, 0:30] = True
    seg = BitMask(META, seg)
    assert seg.area_pixels() == 400
    assert expected_area((x, y, 0.0), [seg], GRIP, CFG) == pytest.approx(200)


def test_validation():
    with pytest.raises(ValueError):
        ProbMatrix(np.array([[1.0]]))
    with pytest.raises(ValueError):
        PredictorConfig(b=0)
    with pytest.raises(ValueError):
        GripperSpec(0.02, 0.04)
