import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from declutter import harness
from declutter import scene as sc
from declutter.config import Config
from declutter.predictor import GripperSpec, PredictorConfig
from declutter.raster import GridMeta

META = GridMeta(100, 80, 0.002, (0.001, 0.001))
GRIP = GripperSpec()
PRED = PredictorConfig()


def rect(gid, w, h, x, y, thick=0.01):
    shape = sc.GarmentShape(((-w / 2, -h / 2), (w / 2, -h / 2), (w / 2, h / 2), (-w / 2, h / 2)))
    return sc.Garment(gid, shape, x, y, 0.0, thick)


def test_height_field():
    assert not sc.height_field(sc.Scene(META)).values.any()
    a, b = rect(0, 0.06, 0.04, 0.05, 0.05), rect(1, 0.06, 0.04, 0.08, 0.05)
    h = sc.height_field(sc.Scene(META, (a, b))).values
    both = a.mask(META).cells & b.mask(META).cells
    assert both.any()
    assert np.allclose(h[both], 0.02)
    single = sc.height_field(sc.Scene(META, (a,))).values
    assert single.max() == pytest.approx(0.01)
    assert np.allclose(single[a.mask(META).cells], 0.01)


def test_full_occlusion():
    under = rect(0, 0.02, 0.02, 0.08, 0.08)
    over = rect(1, 0.06, 0.06, 0.08, 0.08)
    obs = sc.observe(sc.Scene(META, (under, over)))
    assert len(obs.segments) == 1 and obs.truth_link[0] == 1
    assert obs.foreground == (under.mask(META) | over.mask(META))
    assert obs.heights.max() == pytest.approx(0.02)


def test_disjoint_garments_each_fully_visible():
    gs = tuple(rect(i, 0.02, 0.02, 0.02 + 0.05 * i, 0.04) for i in range(3))
    obs = sc.observe(sc.Scene(META, gs))
    assert len(obs.segments) == 3
    for sid, m in obs.segments:
        assert m == gs[obs.truth_link[sid]].mask(META)


def test_half_covered_segment_is_exposed_half():
    bottom = rect(0, 0.08, 0.04, 0.1, 0.08)
    top = rect(1, 0.04, 0.04, 0.12, 0.08)
    obs = sc.observe(sc.Scene(META, (bottom, top)))
    sid = next(s for s, g in obs.truth_link.items() if g == 0)
    seg = dict(obs.segments)[sid]
    assert seg == bottom.mask(META) - top.mask(META)
    assert seg.area_pixels() == pytest.approx(bottom.mask(META).area_pixels() / 2, rel=0.05)


def test_min_visible_hides_slivers():
    bottom = rect(0, 0.06, 0.06, 0.08, 0.08)
    top = rect(1, 0.06, 0.056, 0.08, 0.08)
    # the exposed strip is 2 rows x 30 columns
    assert len(sc.observe(sc.Scene(META, (bottom, top)), min_visible=61).segments) == 1
    assert len(sc.observe(sc.Scene(META, (bottom, top)), min_visible=60).segments) == 2
    assert len(sc.observe(sc.Scene(META, (bottom, top)), min_visible=1).segments) == 2


@pytest.fixture(scope="module")
def scenes():
    cfg = Config()
    return [harness.episode_scene(cfg, s) for s in range(8)]


def test_observation_invariants(scenes):
    for s in scenes:
        obs = sc.observe(s)
        union = np.zeros(s.meta.shape, dtype=bool)
        for g in s.stack:
            union |= g.mask(s.meta).cells
        assert np.array_equal(obs.foreground.cells, union)
        total = np.zeros(s.meta.shape, dtype=int)
        for _, m in obs.segments:
            assert m.issubset(obs.foreground)
            total += m.cells
        assert total.max() <= 1
        assert obs.heights.values.min() >= 0
        assert [sid for sid, _ in obs.segments] == list(range(len(obs.segments)))


def test_generate_scene(scenes):
    lib = harness.library()
    assert len(lib) == 10
    assert len(scenes[0]) == 10 and sorted(scenes[0].ids) == list(range(10))
    rng = np.random.default_rng(0)
    assert len(sc.generate_scene(lib, 0, rng, META)) == 0
    a = sc.generate_scene(lib, 5, np.random.default_rng(42))
    b = sc.generate_scene(lib, 5, np.random.default_rng(42))
    assert a == b
    with pytest.raises(ValueError):
        sc.generate_scene(lib, 11, rng)


def test_library_areas_and_thickness():
    meta = Config().grid()
    lib = harness.library()
    areas = [g.nominal_area(meta) * 0.002 ** 2 for g in lib]
    assert areas == pytest.approx(np.linspace(0.01, 0.06, 10).tolist(), rel=0.02)
    assert all(0.005 <= g.thickness <= 0.015 for g in lib)


def test_shuffle(scenes):
    s = scenes[0]
    assert sc.shuffle(s, 0, np.random.default_rng(1)) == s
    a = sc.shuffle(s, 10, np.random.default_rng(1))
    b = sc.shuffle(s, 10, np.random.default_rng(1))
    assert a == b and sorted(a.ids) == sorted(s.ids)


def test_grasp_over_empty_region():
    s = sc.Scene(META, (rect(0, 0.02, 0.02, 0.02, 0.02),))
    out, held = sc.apply_grasp(s, (0.17, 0.14, 0.0), GRIP, PRED, np.random.default_rng(0))
    assert held == [] and out == s


def test_stacked_large_garments_usually_both_held():
    s = sc.Scene(META, (rect(0, 0.12, 0.08, 0.1, 0.08), rect(1, 0.12, 0.08, 0.1, 0.08)))
    p = sc.true_probs(s, (0.1, 0.08, 0.0), GRIP, PRED)
    assert np.all(p > 0.85)
    rng = np.random.default_rng(3)
    both = sum(len(sc.apply_grasp(s, (0.1, 0.08, 0.0), GRIP, PRED, rng)[1]) == 2
               for _ in range(4000))
    assert both / 4000 == pytest.approx(p[0] * p[1], abs=0.02)


def test_held_preserve_stack_order():
    gs = tuple(rect(i, 0.1, 0.1, 0.1, 0.08) for i in range(4))
    s = sc.Scene(META, gs)
    rng = np.random.default_rng(0)
    for _ in range(50):
        _, held = sc.apply_grasp(s, (0.1, 0.08, 0.0), GRIP, PRED, rng)
        ids = [g.id for g in held]
        assert ids == sorted(ids)


def test_place_translation_and_compaction():
    fine = GridMeta(400, 400, 0.0005, (0.00025, 0.00025))
    g = rect(0, 0.06, 0.04, 0.05, 0.05)
    s = sc.Scene(fine)
    assert sc.apply_place(s, [], (0.1, 0.1)) == s
    moved = sc.apply_place(s, [g], (0.12, 0.1), compaction=1.0).stack[-1]
    m = moved.mask(fine)
    rows, cols = np.nonzero(m.cells)
    cx, cy = fine.cell_to_world(rows.mean(), cols.mean())
    assert (cx, cy) == pytest.approx((0.12, 0.1), abs=0.0005)
    assert m.area_pixels() == g.mask(fine).area_pixels()
    shrunk = sc.apply_place(s, [g], (0.1, 0.1), compaction=0.9).stack[-1]
    ratio = shrunk.mask(fine).area_pixels() / g.mask(fine).area_pixels()
    assert ratio == pytest.approx(0.81, abs=0.01)


def test_place_puts_held_on_top_and_clips():
    a, b, c = (rect(i, 0.02, 0.02, 0.02 + 0.03 * i, 0.02) for i in range(3))
    s = sc.apply_place(sc.Scene(META, (a,)), [b, c], (0.199, 0.159))
    assert s.ids == [0, 1, 2]
    assert 0 < s.stack[-1].mask(META).area_pixels() < c.mask(META).area_pixels()


def test_compaction_floor():
    g = rect(0, 0.06, 0.04, 0.05, 0.05)
    for _ in range(20):
        g = sc.apply_place(sc.Scene(META), [g], (0.1, 0.1)).stack[-1]
    assert g.scale == pytest.approx(0.6)


def test_transport_and_conservation(scenes):
    s = scenes[1]
    rng = np.random.default_rng(5)
    basket = 0
    n = len(s)
    for _ in range(200):
        if not s.stack:
            break
        x, y = sc.random_foreground_point(sc.foreground(s), s.meta, rng)
        s, held = sc.apply_grasp(s, (x, y, 0.0), GRIP, PRED, rng)
        assert len(s) + len(held) + basket == n
        s = sc.transport(s, held)
        basket += len(held)
    assert not s.stack and basket == n
    assert not sc.observe(s).foreground.any()


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_shuffle_keeps_height_nonnegative_and_ids(seed):
    lib = harness.library()
    s = sc.generate_scene(lib, 4, np.random.default_rng(seed))
    h = sc.height_field(s).values
    assert h.min() >= 0
    assert len(set(s.ids)) == 4


def test_generate_separated():
    lib = harness.small_library()
    s = sc.generate_separated(lib, 12, np.random.default_rng(0), Config().grid())
    total = np.zeros(s.meta.shape, dtype=int)
    for g in s.stack:
        m = g.mask(s.meta)
        assert m.area_pixels() == g.nominal_area(s.meta)
        total += m.cells
    assert total.max() == 1
    assert len(sc.observe(s).segments) == 12
    with pytest.raises(RuntimeError, match="12"):
        sc.generate_separated(harness.library(), 12, np.random.default_rng(0), META,
                              attempts=20)
