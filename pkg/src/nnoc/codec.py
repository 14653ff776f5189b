"""Resolution-by-resolution octree coding and the ``NNOCBST1`` container.

The 4x4x4 level is stored raw in 64 bits.  Every finer level r = 3..R is
coded from the candidates of level r-1: a run-length section mask, then one
arithmetic-coded occupancy decision per candidate in (z, x, y) order, with
probabilities from the model applied to each candidate's context.

The container layout is documented in ``docs/bitstream.md``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .context import bulk_contexts, extract_contexts, template_offsets
from .entropy import RangeDecoder, RangeEncoder, rle_decode, rle_encode
from .errors import (
    EmptyCloud,
    HashMismatch,
    MaskInconsistent,
    ModelVariantMismatch,
    StreamCorrupt,
    UnknownVariant,
    WrongBitdepth,
)
from .geometry import MIN_BITDEPTH, CandidateList, SectionBuffer, VoxelSet, build_pyramid, gen_candidates
from .model import TOTAL, ModelParams, forward, quantize_counts
from .variants import get_variant, variant_by_id

MAGIC = b"NNOCBST1"
FORMAT_VERSION = 1
_ARCH_IDS = {"softmax2": 0, "sigmoid1": 1}
_HEADER = struct.Struct("<8sBBBBQQ")
HEADER_BYTES = _HEADER.size + 8  # header plus the base block
_LEN = struct.Struct("<I")


@dataclass
class Bitstream:
    variant: str
    arch: str
    bitdepth: int
    voxel_count: int
    model_hash: int
    base: int
    segments: list = field(default_factory=list)  # (mask bytes, payload bytes) for r = 3..R

    def to_bytes(self) -> bytes:
        out = [
            _HEADER.pack(MAGIC, FORMAT_VERSION, get_variant(self.variant).id, _ARCH_IDS[self.arch],
                         self.bitdepth, self.voxel_count, self.model_hash),
            struct.pack("<Q", self.base),
        ]
        for mask, payload in self.segments:
            out += [_LEN.pack(len(mask)), mask, _LEN.pack(len(payload)), payload]
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bitstream":
        if len(data) < HEADER_BYTES:
            raise StreamCorrupt("bitstream shorter than its header")
        magic, version, vid, arch_id, r, count, mhash = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise StreamCorrupt("bad bitstream magic")
        if version != FORMAT_VERSION:
            raise StreamCorrupt(f"unsupported bitstream version {version}")
        try:
            variant = variant_by_id(vid).name
        except UnknownVariant as exc:
            raise StreamCorrupt(str(exc)) from None
        arch = {v: k for k, v in _ARCH_IDS.items()}.get(arch_id)
        if arch is None or not MIN_BITDEPTH <= r <= 16:
            raise StreamCorrupt("bad arch id or bit-depth in header")
        (base,) = struct.unpack_from("<Q", data, _HEADER.size)
        pos = HEADER_BYTES
        segments = []
        for _ in range(r - MIN_BITDEPTH):
            parts = []
            for _ in range(2):
                if pos + 4 > len(data):
                    raise StreamCorrupt("truncated segment length")
                (n,) = _LEN.unpack_from(data, pos)
                pos += 4
                if pos + n > len(data):
                    raise StreamCorrupt("truncated segment")
                parts.append(bytes(data[pos:pos + n]))
                pos += n
            segments.append(tuple(parts))
        if pos != len(data):
            raise StreamCorrupt(f"{len(data) - pos} trailing bytes after last segment")
        return cls(variant, arch, r, count, mhash, base, segments)

    @property
    def size_bits(self):
        return 8 * len(self.to_bytes())


@dataclass
class LevelStats:
    bitdepth: int
    candidates: int
    occupied: int
    mask_bytes: int
    payload_bytes: int
    ideal_bits: float  # sum of -log2 of the quantized coding probabilities


# base level -----------------------------------------------------------------

def encode_base(vs: VoxelSet) -> int:
    """64-bit block; bit ``z*16 + x*4 + y`` is set iff (x, y, z) is occupied."""
    if vs.bitdepth != MIN_BITDEPTH:
        raise WrongBitdepth(f"base level must have bit-depth {MIN_BITDEPTH}, got {vs.bitdepth}")
    block = 0
    for x, y, z in vs:
        block |= 1 << (z * 16 + x * 4 + y)
    return block


def decode_base(block: int) -> VoxelSet:
    pts = [(i >> 2 & 3, i & 3, i >> 4) for i in range(64) if block >> i & 1]
    return VoxelSet(MIN_BITDEPTH, np.array(pts, dtype=np.int64).reshape(-1, 3))


# helpers --------------------------------------------------------------------

def _section_mask(cl: CandidateList):
    mask = np.zeros(1 << cl.bitdepth, dtype=np.uint8)
    if len(cl):
        mask[np.unique(cl.coords[:, 2])] = 1
    return mask


def _check_model(m: ModelParams, variant):
    v = get_variant(variant if variant is not None else m.variant)
    if v.name != m.variant or v.arch != m.arch or v.hidden_layers != m.hidden_layers:
        raise ModelVariantMismatch(f"model is {m.variant}/{m.arch}, stream needs {v.name}/{v.arch}")
    if template_offsets(v.template).n_c != m.n_c:
        raise ModelVariantMismatch(f"model n_C {m.n_c} does not fit template {v.template}")
    return v


def _ideal_bits(bits, c1):
    c = np.where(np.asarray(bits) == 1, c1, TOTAL - np.asarray(c1))
    return float(-np.log2(c / TOTAL).sum())


# encoder --------------------------------------------------------------------

def encode(vs: VoxelSet, m: ModelParams, variant=None, trace=None, stats=None) -> Bitstream:
    """Code ``vs`` losslessly.

    ``trace``, if a list, receives ``(bitdepth, (x, y, z), context, c1)``
    for every coded decision; ``stats`` receives one :class:`LevelStats`
    per resolution.
    """
    v = _check_model(m, variant)
    m32 = m.astype(np.float32)
    pyramid = build_pyramid(vs)
    bs = Bitstream(v.name, v.arch, vs.bitdepth, len(vs), m.content_hash, encode_base(pyramid[0]))
    for parent, child in zip(pyramid[:-1], pyramid[1:]):
        r = child.bitdepth
        if len(parent) == 0:
            cl = CandidateList(r, np.zeros((0, 3), dtype=np.int64))
        else:
            cl = gen_candidates(parent)
        occ = cl.occupancy(child)
        mask = rle_encode(_section_mask(cl))
        enc = RangeEncoder()
        c1 = np.zeros(0, dtype=np.int64)
        if len(cl):
            ctx = bulk_contexts(cl, occ, v.template)
            c1 = quantize_counts(forward(m32, ctx))
            for b, c in zip(occ.tolist(), c1.tolist()):
                enc.encode(b, c)
            if trace is not None:
                for pos, cx, c in zip(cl.coords.tolist(), ctx, c1.tolist()):
                    trace.append((r, tuple(pos), cx.tobytes(), c))
        payload = enc.finish()
        bs.segments.append((mask, payload))
        if stats is not None:
            stats.append(LevelStats(r, len(cl), int(occ.sum()), len(mask), len(payload), _ideal_bits(occ, c1)))
    return bs


# decoder --------------------------------------------------------------------

def _decode_level(parent: VoxelSet, mask_bytes, payload, m32, template, trace):
    r = parent.bitdepth + 1
    cl = gen_candidates(parent) if len(parent) else CandidateList(r, np.zeros((0, 3), dtype=np.int64))
    derived = _section_mask(cl)
    if rle_decode(mask_bytes, 1 << r) != derived.tolist():
        raise MaskInconsistent(f"section mask at r={r} disagrees with the candidates of r={r - 1}")
    occ = np.zeros(len(cl), dtype=np.uint8)
    if not len(cl):
        return VoxelSet.empty(r)
    t = template_offsets(template)
    dec = RangeDecoder(payload)
    buf = SectionBuffer(cl)
    memo = {}  # context bytes -> c1; forward() is a pure function of its row
    for z, (start, stop) in sorted(cl.section_bounds().items()):
        buf.move_to(z)
        xs = cl.coords[start:stop, 0]
        ys = cl.coords[start:stop, 1]
        if t.sequential:
            # each decoded bit feeds the next context: strictly one at a time
            for i, (x, y) in enumerate(zip(xs.tolist(), ys.tolist()), start):
                ctx = buf.gather(x, y, t.images, t.dx, t.dy)
                key = ctx.tobytes()
                c1 = memo.get(key)
                if c1 is None:
                    c1 = memo[key] = int(quantize_counts(forward(m32, ctx[None, :]))[0])
                bit = dec.decode(c1)
                buf.set_occupancy(x, y, bit)
                occ[i] = bit
                if trace is not None:
                    trace.append((r, (x, y, z), ctx.tobytes(), c1))
        else:
            ctx = extract_contexts(buf, xs, ys, t.name)
            c1s = quantize_counts(forward(m32, ctx)).tolist()
            for i, (x, y, c1) in enumerate(zip(xs.tolist(), ys.tolist(), c1s), start):
                bit = dec.decode(c1)
                buf.set_occupancy(x, y, bit)
                occ[i] = bit
            if trace is not None:
                for x, y, cx, c1 in zip(xs.tolist(), ys.tolist(), ctx, c1s):
                    trace.append((r, (x, y, z), cx.tobytes(), c1))
    return VoxelSet(r, cl.coords[occ == 1])


def decode(bs: Bitstream | bytes, m: ModelParams, trace=None) -> VoxelSet:
    if not isinstance(bs, Bitstream):
        bs = Bitstream.from_bytes(bs)
    if bs.model_hash != m.content_hash:
        raise HashMismatch("bitstream was coded with a different model")
    v = _check_model(m, bs.variant)
    if bs.arch != v.arch:
        raise ModelVariantMismatch("architecture id in header does not match variant")
    m32 = m.astype(np.float32)
    vs = decode_base(bs.base)
    for mask, payload in bs.segments:
        vs = _decode_level(vs, mask, payload, m32, v.template, trace)
    if len(vs) != bs.voxel_count:
        raise StreamCorrupt(f"decoded {len(vs)} voxels, header says {bs.voxel_count}")
    return vs


# rate -----------------------------------------------------------------------

@dataclass(frozen=True)
class Rate:
    bits: int
    bits_no_header: int
    voxels: int

    @property
    def bpov(self):
        return self.bits / self.voxels

    @property
    def bpov_no_header(self):
        return self.bits_no_header / self.voxels


def bpov(bs, vs) -> Rate:
    """Bits per occupied voxel of a stream (with and without the 28-byte header).

    ``bs`` may be a :class:`Bitstream`, raw bytes or a bit count; ``vs`` a
    :class:`VoxelSet` or a voxel count.
    """
    n = vs if isinstance(vs, (int, np.integer)) else len(vs)
    if n < 1:
        raise EmptyCloud("bpov undefined for an empty cloud")
    if isinstance(bs, Bitstream):
        bits = bs.size_bits
    elif isinstance(bs, (bytes, bytearray)):
        bits = 8 * len(bs)
    else:
        bits = int(bs)
    header = 8 * _HEADER.size
    return Rate(bits, max(bits - header, 0), int(n))


def codelength_bits(stats) -> float:
    return math.fsum(s.ideal_bits for s in stats)
