import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import brute_children, scan_order
from nnoc.errors import (
    BitdepthUnderflow,
    BitdepthUnsupported,
    CoordinateOutOfRange,
    EmptyParent,
    OccupancyOutsideCandidates,
)
from nnoc.geometry import (
    CURRENT,
    NEXT,
    CandidateList,
    PAST1,
    PAST2,
    SectionBuffer,
    VoxelSet,
    build_pyramid,
    buffer_advance,
    downsample,
    gen_candidates,
    sections_with_candidates,
    voxelize,
)


def tuples(vs):
    return [tuple(p) for p in vs.coords.tolist()]


def test_voxelize_dedups():
    vs = voxelize([(0, 0, 0), (0, 0, 0)], 2)
    assert vs.bitdepth == 2 and tuples(vs) == [(0, 0, 0)]


def test_voxelize_max_coordinate():
    assert tuples(voxelize([(3, 3, 3)], 2)) == [(3, 3, 3)]


@pytest.mark.parametrize("pt", [(4, 0, 0), (0, -1, 0), (0, 0, 4)])
def test_voxelize_out_of_range(pt):
    with pytest.raises(CoordinateOutOfRange):
        voxelize([pt], 2)


def test_voxelize_bad_bitdepth():
    with pytest.raises(BitdepthUnsupported):
        voxelize([(0, 0, 0)], 1)


def test_downsample_examples():
    assert tuples(downsample(voxelize([(5, 6, 7)], 3))) == [(2, 3, 3)]
    assert tuples(downsample(voxelize([(0, 0, 0), (1, 1, 1)], 3))) == [(0, 0, 0)]
    d = downsample(VoxelSet.empty(3))
    assert d.bitdepth == 2 and len(d) == 0
    with pytest.raises(BitdepthUnderflow):
        downsample(VoxelSet.empty(2))


def test_build_pyramid_examples():
    pyr = build_pyramid(voxelize([(7, 7, 7)], 3))
    assert [p.bitdepth for p in pyr] == [2, 3]
    assert tuples(pyr[0]) == [(3, 3, 3)] and tuples(pyr[1]) == [(7, 7, 7)]
    base = voxelize([(1, 2, 3)], 2)
    assert build_pyramid(base) == [base]
    pyr = build_pyramid(voxelize([(5, 6, 7), (4, 6, 6)], 3))
    assert tuples(pyr[0]) == [(2, 3, 3)]


def test_gen_candidates_examples():
    cl = gen_candidates(voxelize([(1, 2, 3)], 2))
    pts = [tuple(p) for p in cl.coords.tolist()]
    assert len(pts) == 8 and pts[0] == (2, 4, 6)
    assert {p[0] for p in pts} == {2, 3} and {p[1] for p in pts} == {4, 5} and {p[2] for p in pts} == {6, 7}

    cl = gen_candidates(voxelize([(0, 0, 0), (0, 0, 1)], 2))
    pts = [tuple(p) for p in cl.coords.tolist()]
    assert pts == brute_children([(0, 0, 0), (0, 0, 1)])
    assert {p[2] for p in pts[:8]} == {0, 1} and {p[2] for p in pts[8:]} == {2, 3}


def test_sections_examples():
    assert sections_with_candidates(gen_candidates(voxelize([(0, 0, 3)], 2))) == [6, 7]
    assert sections_with_candidates(CandidateList(3, np.zeros((0, 3), dtype=np.int64))) == []
    with pytest.raises(EmptyParent):
        gen_candidates(VoxelSet.empty(2))
    assert sections_with_candidates(gen_candidates(voxelize([(0, 0, 0), (0, 0, 2)], 2))) == [0, 1, 4, 5]


coords = st.lists(st.tuples(*[st.integers(0, 15)] * 3), min_size=1, max_size=60)


@given(coords)
@settings(max_examples=60, deadline=None)
def test_voxelset_sorted_unique(pts):
    vs = voxelize(pts, 4)
    got = tuples(vs)
    assert got == scan_order(set(pts))
    assert len(vs) == len(set(pts))


@given(coords)
@settings(max_examples=60, deadline=None)
def test_candidates_match_brute_force(pts):
    parent = voxelize(pts, 4)
    cl = gen_candidates(parent)
    assert [tuple(p) for p in cl.coords.tolist()] == brute_children(tuples(parent))
    assert len(cl) == 8 * len(parent)
    assert np.all(np.diff(cl.keys) > 0)


@given(coords)
@settings(max_examples=40, deadline=None)
def test_pyramid_is_nested(pts):
    pyr = build_pyramid(voxelize(pts, 4))
    assert [p.bitdepth for p in pyr] == [2, 3, 4]
    for parent, child in zip(pyr[:-1], pyr[1:]):
        assert {(x >> 1, y >> 1, z >> 1) for x, y, z in tuples(child)} == set(tuples(parent))
        assert child.as_set() <= {tuple(p) for p in gen_candidates(parent).coords.tolist()}


def _scene(seed, r=4, n=12):
    rng = np.random.default_rng(seed)
    parent = voxelize(rng.integers(0, 1 << (r - 1), size=(n, 3)), r - 1)
    cl = gen_candidates(parent)
    occ = (rng.random(len(cl)) < 0.4).astype(np.uint8)
    return cl, occ


def _section_grid(cl, occ, z, size):
    g = np.zeros((size, size), dtype=np.uint8)
    sel = cl.coords[:, 2] == z
    c = cl.coords[sel]
    g[c[:, 0], c[:, 1]] = occ[sel] if occ is not None else 1
    return g


@pytest.mark.parametrize("dense", [True, False])
@pytest.mark.parametrize("seed", range(6))
def test_two_advances_match_direct_construction(seed, dense):
    cl, occ = _scene(seed)
    size = 1 << cl.bitdepth
    zs = sections_with_candidates(cl)
    z0 = zs[0]
    buf = SectionBuffer(cl, z0=z0, dense=dense)
    for z in (z0, z0 + 1):
        buffer_advance(buf, _section_grid(cl, occ, z, size))
    ref = SectionBuffer.at_section(cl, z0 + 2, occ, dense=dense)
    for a, b in zip(buf.images(), ref.images()):
        assert np.array_equal(a, b)
    # oracle: images assembled directly from the coordinate lists
    assert np.array_equal(buf.image(PAST2), _section_grid(cl, occ, z0, size))
    assert np.array_equal(buf.image(PAST1), _section_grid(cl, occ, z0 + 1, size))
    assert np.array_equal(buf.image(CURRENT), _section_grid(cl, None, z0 + 2, size))
    assert np.array_equal(buf.image(NEXT), _section_grid(cl, None, z0 + 3, size))


def test_advance_with_zero_grid_gives_empty_past():
    cl, _ = _scene(0)
    buf = SectionBuffer(cl)
    buf.advance(np.zeros((16, 16), dtype=np.uint8))
    assert not buf.image(PAST1).any()


def test_advance_rejects_bits_outside_candidates():
    cl = gen_candidates(voxelize([(0, 0, 0)], 3))
    buf = SectionBuffer(cl)
    grid = np.zeros((16, 16), dtype=np.uint8)
    grid[5, 5] = 1
    with pytest.raises(OccupancyOutsideCandidates):
        buf.advance(grid)


@pytest.mark.parametrize("dense", [True, False])
def test_move_to_jump_equals_stepping(dense):
    cl, occ = _scene(3, r=5, n=20)
    zs = sections_with_candidates(cl)
    a = SectionBuffer(cl, z0=zs[0], dense=dense)
    for z in zs:
        a.move_to(z)
        ref = SectionBuffer.at_section(cl, z, occ, dense=dense)
        # record true occupancy so later sections see it in their past images
        for (x, y, zz), bit in zip(cl.coords.tolist(), occ.tolist()):
            if zz == z:
                a.set_occupancy(x, y, bit)
        assert all(np.array_equal(p, q) for p, q in zip(a.images()[:2], ref.images()[:2]))


@given(coords)
@settings(max_examples=40, deadline=None)
def test_children_cover_exactly_their_parents(pts):
    parent = voxelize(pts, 4)
    cl = gen_candidates(parent)
    assert downsample(VoxelSet(5, cl.coords)) == parent


@given(coords)
@settings(max_examples=40, deadline=None)
def test_voxels_are_candidates_of_their_parents(pts):
    vs = voxelize(pts, 4)
    cl = gen_candidates(downsample(vs))
    assert np.all(cl.occupancy(vs).sum() == len(vs))
