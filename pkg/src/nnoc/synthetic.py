"""Seeded synthetic scenes: voxelized planes and sphere shells.

Surfaces are sampled densely and floored onto the grid, which gives the
one-voxel-thick shells typical of voxelized captures.
"""

from __future__ import annotations

import numpy as np

from .geometry import VoxelSet


def _sphere(rng, size, n_per_area=6.0):
    r = rng.uniform(0.15, 0.4) * size
    c = rng.uniform(r, size - r, size=3)
    n = int(4 * np.pi * r * r * n_per_area) + 16
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return c + r * v


def _plane(rng, size, n_per_area=6.0):
    normal = rng.normal(size=3)
    normal /= np.linalg.norm(normal)
    a = np.cross(normal, [1.0, 0.0, 0.0] if abs(normal[0]) < 0.9 else [0.0, 1.0, 0.0])
    a /= np.linalg.norm(a)
    b = np.cross(normal, a)
    centre = rng.uniform(0.3, 0.7, size=3) * size
    half = rng.uniform(0.2, 0.5) * size
    n = int((2 * half) ** 2 * n_per_area) + 16
    u, w = rng.uniform(-half, half, size=(2, n))
    return centre + u[:, None] * a + w[:, None] * b


def surface_scene(seed, bitdepth=6, n_spheres=None, n_planes=None) -> VoxelSet:
    """Union of a few random sphere shells and planar patches."""
    rng = np.random.default_rng(seed)
    size = 1 << bitdepth
    if n_spheres is None:
        n_spheres = int(rng.integers(1, 3))
    if n_planes is None:
        n_planes = int(rng.integers(1, 3))
    pts = [_sphere(rng, size) for _ in range(n_spheres)] + [_plane(rng, size) for _ in range(n_planes)]
    p = np.floor(np.concatenate(pts)).astype(np.int64)
    p = p[((p >= 0) & (p < size)).all(axis=1)]
    return VoxelSet(bitdepth, p)


def random_scene(rng, bitdepth, fill) -> VoxelSet:
    """Uniformly random occupancy inside a random sub-box.

    ``fill`` is the occupied fraction of the box; at least one voxel is set.
    """
    size = 1 << bitdepth
    lo = rng.integers(0, size, size=3)
    hi = np.minimum(size, lo + rng.integers(1, size + 1, size=3))
    shape = hi - lo
    cells = int(np.prod(shape))
    n = max(1, int(round(fill * cells)))
    flat = rng.choice(cells, size=n, replace=False)
    pts = np.stack(np.unravel_index(flat, tuple(shape)), axis=1) + lo
    return VoxelSet(bitdepth, pts)
