"""PLY reading/writing and voxelization of raw clouds to a target bit-depth."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateExtent,
    IoFailure,
    MalformedHeader,
    UnsupportedPlyVariant,
)
from .geometry import MAX_BITDEPTH, MIN_BITDEPTH, VoxelSet, _check_bitdepth

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


@dataclass
class RawPointCloud:
    points: np.ndarray  # (n, 3), integer or float
    bitdepth: int | None = None  # declared precision, if known

    def __len__(self):
        return len(self.points)

    @property
    def is_integer(self):
        p = self.points
        return np.issubdtype(p.dtype, np.integer) or bool(np.all(np.floor(p) == p))


def _parse_header(f):
    if f.readline().strip() != b"ply":
        raise MalformedHeader("missing 'ply' magic line")
    fmt = None
    elements = []  # [name, count, [(prop, dtype) | ("list", ...)]]
    while True:
        line = f.readline()
        if not line:
            raise MalformedHeader("header not terminated by end_header")
        tok = line.decode("ascii", "replace").split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "end_header":
            break
        if tok[0] == "format":
            fmt = tok[1] if len(tok) > 1 else None
        elif tok[0] == "element":
            if len(tok) != 3:
                raise MalformedHeader(f"bad element line: {line!r}")
            elements.append([tok[1], int(tok[2]), []])
        elif tok[0] == "property":
            if not elements:
                raise MalformedHeader("property before any element")
            if tok[1] == "list":
                elements[-1][2].append((tok[4], "list", tok[2], tok[3]))
            else:
                if tok[1] not in _PLY_TYPES:
                    raise MalformedHeader(f"unknown property type {tok[1]}")
                elements[-1][2].append((tok[2], _PLY_TYPES[tok[1]]))
        else:
            raise MalformedHeader(f"unexpected header line: {line!r}")
    if fmt not in ("ascii", "binary_little_endian"):
        raise UnsupportedPlyVariant(f"PLY format {fmt!r} not supported")
    return fmt, elements


def read_ply(path) -> RawPointCloud:
    """Vertex x, y, z of an ascii or binary little-endian PLY file."""
    with open(path, "rb") as f:
        fmt, elements = _parse_header(f)
        where = [i for i, e in enumerate(elements) if e[0] == "vertex"]
        if not where:
            raise MalformedHeader("no vertex element")
        if where[0] != 0:
            raise UnsupportedPlyVariant("vertex element must come first")
        name, count, props = elements[0]
        names = [p[0] for p in props]
        for axis in "xyz":
            if axis not in names:
                raise MalformedHeader(f"vertex element lacks property {axis}")
        if any(p[1] == "list" for p in props):
            raise UnsupportedPlyVariant("list properties on vertices are not supported")
        if fmt == "ascii":
            rows = []
            for _ in range(count):
                line = f.readline()
                if not line:
                    raise MalformedHeader("fewer vertex lines than declared")
                rows.append(line.split())
            table = np.array(rows, dtype=np.float64).reshape(count, len(props))
            cols = [table[:, names.index(a)] for a in "xyz"]
            dtypes = [np.dtype(props[names.index(a)][1]) for a in "xyz"]
        else:
            dt = np.dtype([(p[0], "<" + p[1]) for p in props])
            buf = f.read(dt.itemsize * count)
            if len(buf) != dt.itemsize * count:
                raise MalformedHeader("binary vertex block shorter than declared")
            rec = np.frombuffer(buf, dtype=dt)
            cols = [rec[a] for a in "xyz"]
            dtypes = [rec.dtype[a] for a in "xyz"]
    if all(np.issubdtype(d, np.integer) for d in dtypes):
        pts = np.stack(cols, axis=1).astype(np.int64)
    else:
        pts = np.stack(cols, axis=1).astype(np.float64)
    return RawPointCloud(pts)


def write_ply(vs: VoxelSet, path, binary=False):
    """Write integer voxel coordinates as a PLY vertex list."""
    header = (
        "ply\n"
        f"format {'binary_little_endian' if binary else 'ascii'} 1.0\n"
        f"comment bitdepth {vs.bitdepth}\n"
        f"element vertex {len(vs)}\n"
        "property int x\nproperty int y\nproperty int z\n"
        "end_header\n"
    )
    try:
        with open(path, "wb") as f:
            f.write(header.encode("ascii"))
            if binary:
                f.write(vs.coords.astype("<i4").tobytes())
            else:
                np.savetxt(f, vs.coords, fmt="%d")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def _declared_bitdepth(path):
    with open(path, "rb") as f:
        for _ in range(64):
            line = f.readline()
            if not line or line.startswith(b"end_header"):
                break
            tok = line.split()
            if len(tok) == 3 and tok[0] == b"comment" and tok[1] == b"bitdepth":
                return int(tok[2])
    return None


def load_voxels(path, bitdepth=None) -> VoxelSet:
    """Read a PLY and voxelize it, at its own depth unless ``bitdepth`` is given."""
    pc = read_ply(path)
    pc.bitdepth = _declared_bitdepth(path)
    if bitdepth is None:
        bitdepth = pc.bitdepth or _min_depth(pc.points)
    return requantize(pc, bitdepth)


def _min_depth(points):
    if len(points) == 0:
        return MIN_BITDEPTH
    top = int(np.max(points))
    return max(MIN_BITDEPTH, math.ceil(math.log2(top + 1)) if top > 0 else MIN_BITDEPTH)


def requantize(pc: RawPointCloud, target) -> VoxelSet:
    """Voxelize ``pc`` into ``[0, 2^target)``.

    * Non-negative integer clouds whose source depth (declared, else the
      smallest depth that holds them) is at most ``target`` pass unchanged.
    * Deeper integer clouds lose their low bits: ``floor(c / 2^(src - target))``,
      the same floor-halving the octree uses.
    * Anything else is shifted to the origin and scaled so the largest extent
      spans the full range: ``floor((c - min) * (2^target - 1) / extent)``.
    """
    target = _check_bitdepth(target)
    pts = np.asarray(pc.points)
    if len(pts) == 0:
        return VoxelSet.empty(target)
    if pc.is_integer and pts.min() >= 0:
        ints = pts.astype(np.int64)
        src = max(pc.bitdepth or 0, _min_depth(ints))
        if src <= MAX_BITDEPTH:
            if src <= target:
                return VoxelSet(target, ints)
            return VoxelSet(target, ints >> (src - target))
    lo = pts.min(axis=0)
    extent = float((pts.max(axis=0) - lo).max())
    if extent == 0:
        raise DegenerateExtent("all points coincide; no scale can be derived")
    scale = ((1 << target) - 1) / extent
    q = np.floor((pts - lo) * scale).astype(np.int64)
    return VoxelSet(target, np.clip(q, 0, (1 << target) - 1))


def list_ply(directory):
    return sorted(
        os.path.join(directory, n) for n in os.listdir(directory) if n.lower().endswith(".ply")
    )
