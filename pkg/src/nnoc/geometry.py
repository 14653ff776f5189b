"""Octree pyramid, candidate generation and the sliding section buffer.

Coordinates are integer ``(x, y, z)`` triples.  Everything that has an order
uses the scan order of the coder: lexicographic in ``(z, x, y)``, i.e.
section by section along z, row by row (x) inside a section, then column (y).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BitdepthUnderflow,
    BitdepthUnsupported,
    CoordinateOutOfRange,
    EmptyParent,
    OccupancyOutsideCandidates,
    PositionNotCandidate,
)

MIN_BITDEPTH = 2
MAX_BITDEPTH = 16
# Section images are dense numpy grids up to this depth, hash sets above it.
DENSE_MAX_BITDEPTH = 12

_CHILD_OFFSETS = np.array(
    [(a, b, c) for c in (0, 1) for a in (0, 1) for b in (0, 1)], dtype=np.int64
)


def scan_keys(coords, bitdepth):
    """Integer keys whose natural order is the (z, x, y) scan order."""
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
    return (coords[:, 2] << (2 * bitdepth)) | (coords[:, 0] << bitdepth) | coords[:, 1]


def keys_to_coords(keys, bitdepth):
    keys = np.asarray(keys, dtype=np.int64)
    mask = (1 << bitdepth) - 1
    return np.stack([(keys >> bitdepth) & mask, keys & mask, keys >> (2 * bitdepth)], axis=1)


def _check_bitdepth(bitdepth):
    if not isinstance(bitdepth, (int, np.integer)) or not MIN_BITDEPTH <= bitdepth <= MAX_BITDEPTH:
        raise BitdepthUnsupported(f"bitdepth {bitdepth!r} not in [{MIN_BITDEPTH}, {MAX_BITDEPTH}]")
    return int(bitdepth)


@dataclass(frozen=True, eq=False)
class VoxelSet:
    """Deduplicated voxel coordinates at one octree resolution.

    ``coords`` is an ``(n, 3)`` int64 array kept in scan order, so two equal
    sets always have identical arrays.
    """

    bitdepth: int
    coords: np.ndarray = field(repr=False)

    def __post_init__(self):
        _check_bitdepth(self.bitdepth)
        c = np.asarray(self.coords, dtype=np.int64).reshape(-1, 3)
        if len(c):
            bad = np.flatnonzero(((c < 0) | (c >= (1 << self.bitdepth))).any(axis=1))
            if len(bad):
                raise CoordinateOutOfRange(c[bad[0]], self.bitdepth)
        keys = np.unique(scan_keys(c, self.bitdepth))
        c = keys_to_coords(keys, self.bitdepth)
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    @classmethod
    def empty(cls, bitdepth):
        return cls(bitdepth, np.zeros((0, 3), dtype=np.int64))

    def __len__(self):
        return len(self.coords)

    def __iter__(self):
        return (tuple(int(v) for v in p) for p in self.coords)

    def __contains__(self, point):
        key = scan_keys([point], self.bitdepth)[0]
        keys = self.keys
        i = np.searchsorted(keys, key)
        return bool(i < len(keys) and keys[i] == key)

    def __eq__(self, other):
        if not isinstance(other, VoxelSet):
            return NotImplemented
        return self.bitdepth == other.bitdepth and np.array_equal(self.coords, other.coords)

    def __hash__(self):
        return hash((self.bitdepth, self.coords.tobytes()))

    @property
    def keys(self):
        return scan_keys(self.coords, self.bitdepth)

    def as_set(self):
        return set(iter(self))


@dataclass(frozen=True, eq=False)
class CandidateList:
    """Children of every parent voxel, sorted in scan order."""

    bitdepth: int
    coords: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.coords)

    @property
    def keys(self):
        return scan_keys(self.coords, self.bitdepth)

    def occupancy(self, vs: VoxelSet):
        """Per-candidate 0/1 occupancy of ``vs`` (uint8, aligned with coords)."""
        if len(vs) == 0 or len(self) == 0:
            return np.zeros(len(self), dtype=np.uint8)
        keys = vs.keys
        ck = self.keys
        idx = np.minimum(np.searchsorted(keys, ck), len(keys) - 1)
        return (keys[idx] == ck).astype(np.uint8)

    def section_bounds(self):
        """``{z: (start, stop)}`` slices into ``coords`` for each non-empty section."""
        z = self.coords[:, 2]
        zs, starts = np.unique(z, return_index=True)
        stops = np.append(starts[1:], len(z))
        return {int(a): (int(b), int(c)) for a, b, c in zip(zs, starts, stops)}


def voxelize(points, bitdepth) -> VoxelSet:
    bitdepth = _check_bitdepth(bitdepth)
    pts = np.asarray(points)
    if pts.size == 0:
        return VoxelSet.empty(bitdepth)
    pts = pts.reshape(-1, 3)
    if not np.issubdtype(pts.dtype, np.integer):
        rounded = np.floor(pts)
        if not np.array_equal(rounded, pts):
            raise CoordinateOutOfRange(pts[np.flatnonzero((rounded != pts).any(axis=1))[0]], bitdepth)
        pts = rounded
    return VoxelSet(bitdepth, pts.astype(np.int64))


def downsample(vs: VoxelSet) -> VoxelSet:
    if vs.bitdepth <= MIN_BITDEPTH:
        raise BitdepthUnderflow(f"cannot downsample below {MIN_BITDEPTH} bits")
    return VoxelSet(vs.bitdepth - 1, vs.coords >> 1)


def build_pyramid(vs: VoxelSet) -> list[VoxelSet]:
    """Resolutions 2..R; element ``i`` holds bitdepth ``i + 2``."""
    levels = [vs]
    while levels[-1].bitdepth > MIN_BITDEPTH:
        levels.append(downsample(levels[-1]))
    return levels[::-1]


def gen_candidates(parent: VoxelSet) -> CandidateList:
    if len(parent) == 0:
        raise EmptyParent("no parent voxels to split")
    r = parent.bitdepth + 1
    _check_bitdepth(r)
    children = (parent.coords[:, None, :] * 2 + _CHILD_OFFSETS[None]).reshape(-1, 3)
    keys = np.sort(scan_keys(children, r))
    return CandidateList(r, keys_to_coords(keys, r))


def sections_with_candidates(cl: CandidateList) -> list[int]:
    if len(cl) == 0:
        return []
    return [int(z) for z in np.unique(cl.coords[:, 2])]


# Logical image slots of a SectionBuffer.
PAST2, PAST1, CURRENT, CURRENT_CAND, NEXT = range(5)


class SectionBuffer:
    """Sliding window of binary section images around section ``z0``.

    Logical images:

    * ``PAST2`` / ``PAST1`` -- final occupancy of sections z0-2 and z0-1
    * ``CURRENT`` -- section z0 starting as candidacy; a candidate is cleared
      once it is coded as empty, so scanned positions read as occupancy and
      the rest as candidacy
    * ``CURRENT_CAND`` -- candidacy of z0, never modified
    * ``NEXT`` -- candidacy of z0+1

    Physical storage is recycled on every advance and only the positions
    that were set get cleared, so sliding costs O(candidates) rather than
    O(4^r).  Depths above ``DENSE_MAX_BITDEPTH`` use sets of (x, y).
    """

    PAD = 2

    def __init__(self, candidates: CandidateList, z0=None, dense=None):
        self.bitdepth = candidates.bitdepth
        self.size = 1 << self.bitdepth
        self.candidates = candidates
        self._bounds = candidates.section_bounds()
        self.dense = self.bitdepth <= DENSE_MAX_BITDEPTH if dense is None else dense
        if self.dense:
            side = self.size + 2 * self.PAD
            self._grid = np.zeros((5, side, side), dtype=np.uint8)
        else:
            self._sets = [set() for _ in range(5)]
        self._slot = np.arange(5)
        self._held = [None] * 5  # section whose candidates bound the set bits of each physical slot
        if z0 is None:
            z0 = min(self._bounds) if self._bounds else 0
        self.z0 = int(z0)
        self._load(self.z0)

    # -- low level ---------------------------------------------------------
    def section_xy(self, z):
        span = self._bounds.get(int(z))
        if span is None:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        c = self.candidates.coords[span[0]:span[1]]
        return c[:, 0], c[:, 1]

    def _write(self, phys, xs, ys, value):
        if len(xs) == 0:
            return
        if self.dense:
            self._grid[phys, xs + self.PAD, ys + self.PAD] = value
        elif value:
            self._sets[phys].update(zip(xs.tolist(), ys.tolist()))
        else:
            self._sets[phys].difference_update(zip(xs.tolist(), ys.tolist()))

    def _clear(self, phys):
        z = self._held[phys]
        if z is not None:
            if self.dense:
                self._write(phys, *self.section_xy(z), 0)
            else:
                self._sets[phys].clear()
        self._held[phys] = None

    def _fill_candidacy(self, phys, z):
        self._clear(phys)
        self._write(phys, *self.section_xy(z), 1)
        self._held[phys] = z

    def _load(self, z0):
        for logical in range(5):
            self._clear(self._slot[logical])
        self._fill_candidacy(self._slot[CURRENT], z0)
        self._fill_candidacy(self._slot[CURRENT_CAND], z0)
        self._fill_candidacy(self._slot[NEXT], z0 + 1)

    def _get(self, logical, x, y):
        phys = self._slot[logical]
        if self.dense:
            return int(self._grid[phys, x + self.PAD, y + self.PAD])
        return int((x, y) in self._sets[phys])

    # -- public ------------------------------------------------------------
    def is_candidate(self, x, y):
        return bool(self._get(CURRENT_CAND, x, y))

    def set_occupancy(self, x, y, bit):
        """Record the coded occupancy of candidate (x, y, z0)."""
        if not self.is_candidate(x, y):
            raise PositionNotCandidate(f"({x}, {y}, {self.z0}) is not a candidate")
        if not bit:
            phys = self._slot[CURRENT]
            if self.dense:
                self._grid[phys, x + self.PAD, y + self.PAD] = 0
            else:
                self._sets[phys].discard((x, y))

    def gather(self, xs, ys, images, dxs, dys):
        """Read ``image[k]`` at ``(x + dx[k], y + dy[k])`` for every position.

        ``xs``/``ys`` may be scalars or 1-D arrays; the result has shape
        ``(len(xs), len(images))`` (or ``(len(images),)`` for scalars).
        Positions outside the grid read 0.
        """
        phys = self._slot[images]
        if self.dense:
            xi = np.add.outer(xs, dxs) + self.PAD
            yi = np.add.outer(ys, dys) + self.PAD
            return self._grid[phys, xi, yi]
        xs_a = np.atleast_1d(xs)
        ys_a = np.atleast_1d(ys)
        out = np.zeros((len(xs_a), len(images)), dtype=np.uint8)
        sets = [self._sets[p] for p in phys]
        for i, (x, y) in enumerate(zip(xs_a.tolist(), ys_a.tolist())):
            for k, (s, dx, dy) in enumerate(zip(sets, dxs.tolist(), dys.tolist())):
                if (x + dx, y + dy) in s:
                    out[i, k] = 1
        return out if np.ndim(xs) else out[0]

    def image(self, logical):
        """Dense copy of one logical image (2^r x 2^r)."""
        phys = self._slot[logical]
        if self.dense:
            p = self.PAD
            return self._grid[phys, p:p + self.size, p:p + self.size].copy()
        img = np.zeros((self.size, self.size), dtype=np.uint8)
        if self._sets[phys]:
            xy = np.array(sorted(self._sets[phys]))
            img[xy[:, 0], xy[:, 1]] = 1
        return img

    def images(self):
        """The four section images (z0-2, z0-1, z0, z0+1)."""
        return [self.image(PAST2), self.image(PAST1), self.image(CURRENT), self.image(NEXT)]

    def advance(self, decoded=None):
        """Slide up one section.

        ``decoded`` is the final occupancy of section z0, either a 2^r x 2^r
        grid or ``None`` to take what was recorded with ``set_occupancy``.
        """
        z0 = self.z0
        cur = self._slot[CURRENT]
        if decoded is not None:
            decoded = np.asarray(decoded).astype(bool)
            xs, ys = self.section_xy(z0)
            cand = np.zeros((self.size, self.size), dtype=bool)
            cand[xs, ys] = True
            if (decoded & ~cand).any():
                raise OccupancyOutsideCandidates(f"decoded bits outside candidates of section {z0}")
            self._clear(cur)
            ox, oy = np.nonzero(decoded)
            self._write(cur, ox, oy, 1)
            self._held[cur] = z0
        old = self._slot.copy()
        slot = self._slot
        slot[PAST2] = old[PAST1]
        slot[PAST1] = old[CURRENT]
        slot[CURRENT] = old[PAST2]
        slot[CURRENT_CAND] = old[NEXT]
        slot[NEXT] = old[CURRENT_CAND]
        self.z0 = z0 + 1
        self._fill_candidacy(slot[CURRENT], self.z0)
        self._fill_candidacy(slot[NEXT], self.z0 + 1)
        return self

    def move_to(self, z):
        """Advance to section ``z``, treating skipped sections as final."""
        if z < self.z0:
            raise ValueError("buffer only slides forward")
        if z - self.z0 >= 3:
            # the whole window is past the current data: rebuild directly
            self._clear(self._slot[PAST2])
            self._clear(self._slot[PAST1])
            self.z0 = int(z)
            self._load(self.z0)
            return self
        while self.z0 < z:
            self.advance()
        return self

    @classmethod
    def at_section(cls, candidates: CandidateList, z0, occupancy, dense=None):
        """Buffer state at the start of section ``z0`` built from scratch.

        ``occupancy`` holds the true 0/1 bits aligned with ``candidates``.
        """
        buf = cls(candidates, z0=z0, dense=dense)
        occupancy = np.asarray(occupancy)
        for logical, z in ((PAST2, z0 - 2), (PAST1, z0 - 1)):
            span = buf._bounds.get(z)
            if span is None:
                continue
            c = candidates.coords[span[0]:span[1]]
            on = occupancy[span[0]:span[1]].astype(bool)
            phys = buf._slot[logical]
            buf._write(phys, c[on, 0], c[on, 1], 1)
            buf._held[phys] = z
        return buf


def buffer_advance(buf: SectionBuffer, decoded) -> SectionBuffer:
    return buf.advance(decoded)
