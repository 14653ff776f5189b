import itertools

import numpy as np
import pytest

from nnoc.context import collect_training_contexts
from nnoc.geometry import VoxelSet, build_pyramid
from nnoc.model import TrainConfig, grad, init_for_variant, train
from nnoc.synthetic import surface_scene


def scan_order(points):
    """Brute-force (z, x, y) ordering of coordinate triples."""
    return sorted(points, key=lambda p: (p[2], p[0], p[1]))


def brute_children(parent_points):
    kids = []
    for x, y, z in parent_points:
        for a, b, c in itertools.product((0, 1), repeat=3):
            kids.append((2 * x + a, 2 * y + b, 2 * z + c))
    return scan_order(kids)


def brute_context(candidates, occupied, pos, variant, bitdepth):
    """Context of ``pos`` from scratch.

    Rules written out directly: sections below are read as occupancy,
    the section above as candidacy, and in the current section NNOC reads
    occupancy for positions already scanned (smaller x, or same x and
    smaller y) while fNNOC-style variants read candidacy everywhere.
    """
    dz_range = {"nnoc": (-2, 1), "fnnoc": (-2, 1), "fnnoc4": (-2, 1), "fnnoc5": (-2, 1),
                "fnnoc1": (-2, 0), "fnnoc2": (-1, 0), "fnnoc3": (-2, 1)}[variant]
    span = 1 if variant == "fnnoc3" else 2
    size = 1 << bitdepth
    x0, y0, z0 = pos
    out = []
    for dz in range(dz_range[0], dz_range[1] + 1):
        for dx in range(-span, span + 1):
            for dy in range(-span, span + 1):
                q = (x0 + dx, y0 + dy, z0 + dz)
                if not all(0 <= c < size for c in q):
                    out.append(0)
                    continue
                if dz < 0:
                    out.append(int(q in occupied))
                elif dz > 0:
                    out.append(int(q in candidates))
                elif variant == "nnoc" and (dx < 0 or (dx == 0 and dy < 0)):
                    out.append(int(q in occupied))
                else:
                    out.append(int(q in candidates))
    return out


def random_cloud(rng, bitdepth, n):
    size = 1 << bitdepth
    n = min(n, size ** 3)
    flat = rng.choice(size ** 3, size=n, replace=False)
    return VoxelSet(bitdepth, np.stack(np.unravel_index(flat, (size,) * 3), axis=1))


@pytest.fixture(scope="session")
def trained_models():
    """Small models trained on synthetic surfaces, one per variant name requested."""
    cache = {}

    def get(variant):
        if variant not in cache:
            scenes = [surface_scene(s, 5) for s in range(3)]
            hists = [collect_training_contexts(build_pyramid(v), variant) for v in scenes]
            hist = hists[0].merge(*hists[1:])
            cache[variant] = train(hist, cfg=TrainConfig(batch_size=512, max_epochs=8, seed=1))
        return cache[variant]

    return get


def ref_loss(m, x, counts):
    """Independent float64 codelength: explicit softmax / sigmoid, explicit log2."""
    h = np.asarray(x, dtype=np.float64)
    n = len(m.weights)
    for k in range(n):
        w = m.weights[k].astype(np.float64)
        b = m.biases[k].astype(np.float64)
        h = np.einsum("ij,nj->ni", w, h) + b
        if k < n - 1:
            h = np.where(h > 0, h, 0.0)
    if m.arch == "softmax2":
        top = h.max(axis=1, keepdims=True)
        e = np.exp(h - top)
        p1 = e[:, 0] / e.sum(axis=1)
    else:
        p1 = 1.0 / (1.0 + np.exp(-h[:, 0]))
    return -np.sum(counts[:, 0] * np.log2(1 - p1) + counts[:, 1] * np.log2(p1))


def fd_check(m, x, counts, rng, n_coords=24, h=1e-6):
    """Worst relative error between ``grad`` and central differences over sampled coordinates."""
    m64 = m.astype(np.float64)
    analytic = grad(m64, x, counts)
    flat = [p.copy() for p in m64.params()]
    errs = []
    for j, p in enumerate(flat):
        picks = rng.choice(p.size, size=min(n_coords, p.size), replace=False)
        for idx in picks:
            orig = p.flat[idx]
            p.flat[idx] = orig + h
            up = ref_loss(m64.with_params(flat), x, counts)
            p.flat[idx] = orig - h
            down = ref_loss(m64.with_params(flat), x, counts)
            p.flat[idx] = orig
            fd = (up - down) / (2 * h)
            a = analytic[j].flat[idx]
            errs.append(abs(a - fd) / max(abs(a), abs(fd), 1e-3))
    return max(errs)


def random_instance(rng, variant):
    m = init_for_variant(variant, seed=int(rng.integers(1 << 30)))
    # nonzero biases so the instance is not special
    m = m.with_params([p + rng.normal(scale=0.1, size=p.shape) for p in m.astype(np.float64).params()])
    n = int(rng.integers(1, 12))
    x = (rng.random((n, m.n_c)) < 0.4).astype(np.float64)
    counts = rng.integers(0, 50, size=(n, 2)).astype(np.float64)
    counts[counts.sum(axis=1) == 0, 1] = 1
    return m, x, counts
