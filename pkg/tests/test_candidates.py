import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from declutter.candidates import (
    CandidateConfig, GraspCandidate, conflict, conflict_pairs, orientations,
    partition_foreground, sample_candidates,
)
from declutter.raster import BitMask
from helpers import META64, random_blobs, rect_mask


def brute_keys(fg, segs, r):
    """Per foreground cell: set of segments with some cell within ``r`` (meters)."""
    cs = fg.meta.cell_size
    rows, cols = np.nonzero(fg.cells)
    keys = {}
    pts = [np.argwhere(s.cells) for s in segs]
    for rr, cc in zip(rows, cols):
        key = frozenset(j for j, p in enumerate(pts)
                        if np.min(np.hypot(p[:, 0] - rr, p[:, 1] - cc)) * cs <= r + 1e-12)
        keys[(rr, cc)] = key
    return keys


def check_partitions(fg, segs, r):
    parts = partition_foreground(fg, segs, r)
    expect = brute_keys(fg, segs, r)
    seen = np.zeros(fg.meta.shape, dtype=int)
    for p in parts:
        cells = p.cells.cells
        seen += cells
        for rc in map(tuple, np.argwhere(cells)):
            assert expect[rc] == p.key
    assert np.array_equal(seen, fg.cells.astype(int))
    assert len({p.key for p in parts}) == len(parts)
    return parts


def scene64(seed):
    rng = np.random.default_rng(seed)
    segs = random_blobs(rng, META64, int(rng.integers(1, 5)))
    fg = np.zeros(META64.shape, dtype=bool)
    for s in segs:
        fg |= s.cells
    # disjoint segments, like topmost-visible regions
    claimed = np.zeros_like(fg)
    out = []
    for s in segs:
        own = s.cells & ~claimed
        claimed |= own
        if own.any():
            out.append(BitMask(META64, own))
    return BitMask(META64, fg), out


@pytest.mark.parametrize("seed", range(6))
def test_partitions_match_brute_force(seed):
    fg, segs = scene64(seed)
    check_partitions(fg, segs, float(np.random.default_rng(seed).uniform(0.002, 0.02)))


def test_far_segments_two_partitions():
    a, b = rect_mask(META64, 2, 10, 2, 10), rect_mask(META64, 40, 60, 40, 60)
    parts = check_partitions(a | b, [a, b], 0.004)
    assert [p.key for p in parts] == [frozenset({0}), frozenset({1})]


def test_adjacent_segments_make_boundary_partition():
    a, b = rect_mask(META64, 10, 40, 5, 20), rect_mask(META64, 10, 40, 21, 40)
    parts = check_partitions(a | b, [a, b], 5 * 0.002)
    assert sorted(map(sorted, (p.key for p in parts))) == [[0], [0, 1], [1]]
    both = next(p for p in parts if len(p.key) == 2).cells.cells
    cols = np.nonzero(both.any(axis=0))[0]
    assert cols.min() >= 21 - 5 and cols.max() <= 20 + 5


def test_empty_key_partition_for_hidden_garment():
    fg = rect_mask(META64, 0, 64, 0, 64)
    seg = rect_mask(META64, 0, 5, 0, 5)
    parts = check_partitions(fg, [seg], 0.004)
    assert parts[0].key == frozenset()
    cands = sample_candidates(parts, CandidateConfig(), np.random.default_rng(0))
    assert all(c.partition_id != parts[0].id for c in cands)


def test_candidate_counts_and_orientations():
    fg = rect_mask(META64, 10, 20, 10, 20)
    parts = partition_foreground(fg, [fg], 0.004)
    cands = sample_candidates(parts, CandidateConfig(k=5, l=6), np.random.default_rng(1))
    assert len(cands) == 30
    assert sorted({c.theta for c in cands}) == pytest.approx(
        [-math.pi / 2 + t * math.pi / 6 for t in range(6)])
    for c in cands:
        assert fg.cells[fg.meta.world_to_cell(c.x, c.y)]
    pts = {(c.x, c.y) for c in cands}
    assert len(pts) == 5


def test_small_partition_is_clamped():
    fg = rect_mask(META64, 10, 11, 10, 12)
    parts = partition_foreground(fg, [fg], 0.004)
    cands = sample_candidates(parts, CandidateConfig(k=5, l=6), np.random.default_rng(1))
    assert len(cands) == 12
    assert sample_candidates([], CandidateConfig(), np.random.default_rng(0)) == []


def test_sampling_reproducible():
    fg, segs = scene64(3)
    parts = partition_foreground(fg, segs, 0.01)
    a = sample_candidates(parts, CandidateConfig(), np.random.default_rng(9))
    b = sample_candidates(parts, CandidateConfig(), np.random.default_rng(9))
    assert a == b


def test_orientations_half_open():
    th = orientations(6)
    assert th[0] == -math.pi / 2 and th[-1] < math.pi / 2
    assert len(set(th)) == 6


def test_conflicts():
    a = GraspCandidate(0.1, 0.1, 0.0, 3)
    b = GraspCandidate(0.1, 0.1, 0.5, 3)
    c = GraspCandidate(0.2, 0.1, 0.0, 4)
    assert conflict(a, b) and conflict(b, a)
    assert not conflict(a, c) and not conflict(c, a)
    assert conflict_pairs([a, b, c]) == {(0, 1)}


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), r=st.floats(0.001, 0.03))
def test_partition_cover_property(seed, r):
    fg, segs = scene64(seed)
    parts = partition_foreground(fg, segs, r)
    total = sum(p.size for p in parts)
    assert total == fg.area_pixels()
    ids = [p.id for p in parts]
    assert ids == list(range(len(parts)))
    keys = [tuple(sorted(p.key)) for p in parts]
    assert keys == sorted(keys)


def test_config_validation():
    with pytest.raises(ValueError):
        CandidateConfig(r=0)
    with pytest.raises(ValueError):
        CandidateConfig(k=0)
