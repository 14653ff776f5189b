"""Context templates, context extraction and training histograms.

A template is an ordered list of ``(dx, dy, dz)`` offsets around the voxel
being coded, sorted ascending by ``(dz, dx, dy)``.  Each offset reads either
the *occupancy* of an already coded voxel or the *candidacy* of a voxel that
has not been coded yet.  Which one is fixed per offset, because the scan
order makes the coded/uncoded status of every relative position constant.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import CorruptHistogramFile, PositionNotCandidate, SectionMismatch, UnknownVariant
from .geometry import (
    CURRENT,
    CURRENT_CAND,
    NEXT,
    PAST1,
    PAST2,
    CandidateList,
    SectionBuffer,
    VoxelSet,
    gen_candidates,
)
from .variants import get_variant, variant_by_id

OCCUPANCY = "occupancy"
CANDIDACY = "candidacy"

# template name -> (xy half-width, dz values, uses current-section occupancy)
_TEMPLATE_SHAPES = {
    "NNOC": (2, (-2, -1, 0, 1), True),
    "fNNOC": (2, (-2, -1, 0, 1), False),
    "fNNOC1": (2, (-2, -1, 0), False),
    "fNNOC2": (2, (-1, 0), False),
    "fNNOC3": (1, (-2, -1, 0, 1), False),
}
TEMPLATE_NAMES = tuple(_TEMPLATE_SHAPES)


def _causal_in_section(dx, dy):
    return dx < 0 or (dx == 0 and dy < 0)


@dataclass(frozen=True, eq=False)
class Template:
    name: str
    offsets: np.ndarray  # (n_C, 3) int64, columns dx, dy, dz
    tags: tuple
    images: np.ndarray  # logical SectionBuffer image read by each offset

    @property
    def n_c(self):
        return len(self.offsets)

    @property
    def dx(self):
        return self.offsets[:, 0]

    @property
    def dy(self):
        return self.offsets[:, 1]

    @property
    def dz(self):
        return self.offsets[:, 2]

    @property
    def sequential(self):
        """True when a context depends on occupancies of its own section."""
        return any(t == OCCUPANCY for t, dz in zip(self.tags, self.dz) if dz == 0)


@lru_cache(maxsize=None)
def template_offsets(name) -> Template:
    if name not in _TEMPLATE_SHAPES:
        # accept registry variant names too (fnnoc4 -> fNNOC template)
        try:
            name = get_variant(name).template
        except UnknownVariant:
            raise UnknownVariant(f"unknown template {name!r}") from None
    half, dzs, nnoc = _TEMPLATE_SHAPES[name]
    offsets, tags, images = [], [], []
    for dz in dzs:
        for dx in range(-half, half + 1):
            for dy in range(-half, half + 1):
                offsets.append((dx, dy, dz))
                if dz < 0:
                    tags.append(OCCUPANCY)
                    images.append(PAST2 if dz == -2 else PAST1)
                elif dz == 0 and nnoc and _causal_in_section(dx, dy):
                    tags.append(OCCUPANCY)
                    images.append(CURRENT)
                elif dz == 0:
                    tags.append(CANDIDACY)
                    images.append(CURRENT_CAND)
                else:
                    tags.append(CANDIDACY)
                    images.append(NEXT)
    off = np.array(offsets, dtype=np.int64)
    img = np.array(images, dtype=np.int64)
    off.setflags(write=False)
    img.setflags(write=False)
    return Template(name, off, tuple(tags), img)


def extract_context(buf: SectionBuffer, pos, variant) -> np.ndarray:
    """Context vector (uint8, length n_C) of candidate ``pos`` in the buffer's section."""
    t = template_offsets(variant)
    x, y, z = (int(v) for v in pos)
    if z != buf.z0:
        raise SectionMismatch(f"position in section {z}, buffer at {buf.z0}")
    if not buf.is_candidate(x, y):
        raise PositionNotCandidate(f"{(x, y, z)} is not a candidate")
    return buf.gather(x, y, t.images, t.dx, t.dy)


def extract_contexts(buf: SectionBuffer, xs, ys, variant) -> np.ndarray:
    """Contexts of many candidates of the current section at once (no checks)."""
    t = template_offsets(variant)
    return buf.gather(np.asarray(xs), np.asarray(ys), t.images, t.dx, t.dy)


def bulk_contexts(cl: CandidateList, occupancy, variant, chunk=1 << 16) -> np.ndarray:
    """Contexts of every candidate when all true occupancies are known.

    This is what the encoder sees: by construction each offset tagged as
    occupancy points at a voxel coded earlier, so the result equals what a
    decoder extracts from its section buffer at the same scan position.
    """
    t = template_offsets(variant)
    n = len(cl)
    out = np.zeros((n, t.n_c), dtype=np.uint8)
    if n == 0:
        return out
    r = cl.bitdepth
    size = 1 << r
    keys = cl.keys
    occ = np.asarray(occupancy, dtype=np.uint8)
    is_occ = np.array([tag == OCCUPANCY for tag in t.tags])
    for start in range(0, n, chunk):
        c = cl.coords[start:start + chunk]
        for k, (dx, dy, dz) in enumerate(t.offsets.tolist()):
            nx, ny, nz = c[:, 0] + dx, c[:, 1] + dy, c[:, 2] + dz
            inb = (nx >= 0) & (nx < size) & (ny >= 0) & (ny < size) & (nz >= 0) & (nz < size)
            nk = (nz << (2 * r)) | (nx << r) | ny
            idx = np.searchsorted(keys, nk)
            idx = np.minimum(idx, n - 1)
            found = inb & (keys[idx] == nk)
            if is_occ[k]:
                out[start:start + len(c), k] = found & (occ[idx] == 1)
            else:
                out[start:start + len(c), k] = found
    return out


class ContextHistogram:
    """Occurrence counts ``(no0, no1)`` per unique context.

    Contexts are stored bit-packed (``np.packbits`` order: element 0 is the
    most significant bit of byte 0) and kept sorted, so equal histograms have
    identical arrays and files.
    """

    def __init__(self, variant, n_bits, packed, n0, n1):
        self.variant = get_variant(variant).name
        self.n_bits = int(n_bits)
        self.packed = np.ascontiguousarray(packed, dtype=np.uint8).reshape(-1, (self.n_bits + 7) // 8)
        self.n0 = np.asarray(n0, dtype=np.uint64)
        self.n1 = np.asarray(n1, dtype=np.uint64)

    @classmethod
    def from_samples(cls, variant, contexts, bits):
        contexts = np.asarray(contexts, dtype=np.uint8)
        n_bits = template_offsets(variant).n_c
        if len(contexts) == 0:
            return cls.empty(variant)
        packed = np.packbits(contexts.reshape(-1, n_bits), axis=1)
        bits = np.asarray(bits).reshape(-1)
        uniq, inv = np.unique(packed, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        n0 = np.bincount(inv[bits == 0], minlength=len(uniq))
        n1 = np.bincount(inv[bits == 1], minlength=len(uniq))
        return cls(variant, n_bits, uniq, n0, n1)

    @classmethod
    def empty(cls, variant):
        n_bits = template_offsets(variant).n_c
        return cls(variant, n_bits, np.zeros((0, (n_bits + 7) // 8), np.uint8), [], [])

    def __len__(self):
        return len(self.packed)

    @property
    def total(self):
        return int(self.n0.sum() + self.n1.sum())

    def contexts(self):
        return np.unpackbits(self.packed, axis=1, count=self.n_bits)

    def counts(self):
        return np.stack([self.n0, self.n1], axis=1)

    def merge(self, *others):
        parts = [self, *others]
        for o in others:
            if o.n_bits != self.n_bits or o.variant != self.variant:
                raise ValueError("cannot merge histograms of different variants")
        packed = np.concatenate([p.packed for p in parts])
        if len(packed) == 0:
            return ContextHistogram.empty(self.variant)
        uniq, inv = np.unique(packed, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        n0 = np.zeros(len(uniq), dtype=np.uint64)
        n1 = np.zeros(len(uniq), dtype=np.uint64)
        np.add.at(n0, inv, np.concatenate([p.n0 for p in parts]))
        np.add.at(n1, inv, np.concatenate([p.n1 for p in parts]))
        return ContextHistogram(self.variant, self.n_bits, uniq, n0, n1)

    def __eq__(self, other):
        if not isinstance(other, ContextHistogram):
            return NotImplemented
        return (
            self.variant == other.variant
            and np.array_equal(self.packed, other.packed)
            and np.array_equal(self.n0, other.n0)
            and np.array_equal(self.n1, other.n1)
        )

    def stats(self):
        occ = (self.n0 + self.n1).astype(np.int64)
        return {
            "variant": self.variant,
            "context_bits": self.n_bits,
            "unique": len(self),
            "total": self.total,
            "ones": int(self.n1.sum()),
            "min_occurrences": int(occ.min()) if len(occ) else 0,
            "max_occurrences": int(occ.max()) if len(occ) else 0,
        }

    # file format: u8 variant id, u16 context length, u64 entry count, then
    # per entry packed bits, u64 no0, u64 no1 (all little-endian)
    _HEADER = struct.Struct("<BHQ")

    def to_bytes(self):
        nb = self.packed.shape[1]
        rec = np.zeros(len(self), dtype=[("ctx", np.uint8, (nb,)), ("n0", "<u8"), ("n1", "<u8")])
        rec["ctx"] = self.packed
        rec["n0"] = self.n0
        rec["n1"] = self.n1
        head = self._HEADER.pack(get_variant(self.variant).id, self.n_bits, len(self))
        return head + rec.tobytes()

    @classmethod
    def from_bytes(cls, data):
        if len(data) < cls._HEADER.size:
            raise CorruptHistogramFile("histogram file shorter than its header")
        vid, n_bits, count = cls._HEADER.unpack_from(data)
        try:
            variant = variant_by_id(vid)
        except UnknownVariant:
            raise CorruptHistogramFile(f"unknown variant id {vid}") from None
        if template_offsets(variant.template).n_c != n_bits:
            raise CorruptHistogramFile(f"context length {n_bits} does not match variant {variant.name}")
        nb = (n_bits + 7) // 8
        dt = np.dtype([("ctx", np.uint8, (nb,)), ("n0", "<u8"), ("n1", "<u8")])
        body = data[cls._HEADER.size:]
        if len(body) != count * dt.itemsize:
            raise CorruptHistogramFile("histogram entry count does not match file size")
        rec = np.frombuffer(body, dtype=dt)
        return cls(variant, n_bits, rec["ctx"], rec["n0"], rec["n1"])

    def save(self, path):
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


def level_samples(pyramid, variant):
    """Yield ``(bitdepth, candidates, contexts, occupancy)`` for resolutions 3..R."""
    for r_idx in range(1, len(pyramid)):
        parent, child = pyramid[r_idx - 1], pyramid[r_idx]
        if len(parent) == 0:
            continue
        cl = gen_candidates(parent)
        occ = cl.occupancy(child)
        yield child.bitdepth, cl, bulk_contexts(cl, occ, variant), occ


def collect_training_contexts(pyramid: list[VoxelSet], variant) -> ContextHistogram:
    """Histogram of every (context, occupancy) pair the encoder would code."""
    variant = get_variant(variant)
    ctxs, bits = [], []
    for _, _, ctx, occ in level_samples(pyramid, variant.template):
        ctxs.append(ctx)
        bits.append(occ)
    if not ctxs:
        return ContextHistogram.empty(variant)
    return ContextHistogram.from_samples(variant, np.concatenate(ctxs), np.concatenate(bits))
