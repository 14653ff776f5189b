"""Two-layer perceptron mapping a binary context to an occupancy probability.

The coding path (:func:`forward`) runs in float32 with a fixed accumulation
order: every neuron starts from its bias and adds the input terms one by one
in index order.  Each output element therefore depends only on its own input
row, so batching never changes a single bit of the result.  The encoder
batches whole resolutions while the NNOC decoder evaluates one context at a
time, and both must derive the same integer counts.

Training uses ordinary BLAS matrix products in float64; only the finished
float32 weights are used for coding.
"""

from __future__ import annotations

import hashlib
import logging
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CorruptModelFile,
    DegenerateProbability,
    EmptyHistogram,
    HashMismatch,
    LengthMismatch,
    UnknownVariant,
    UnsupportedContextLength,
    VersionMismatch,
)
from .variants import VARIANTS, get_variant, variant_by_id

log = logging.getLogger(__name__)

CONTEXT_LENGTHS = (100, 75, 50, 36)
ARCHS = ("softmax2", "sigmoid1")
PRECISION_BITS = 14
TOTAL = 1 << PRECISION_BITS
_LN2 = math.log(2.0)
_CHUNK = 4096
# Keeps forward() strictly inside (0, 1) after float64 rounding of the sigmoid.
_P_EPS = 2.0 ** -40


@dataclass(eq=False)
class ModelParams:
    """Weights of the perceptron.

    ``weights[k]`` has shape ``(out, in)`` and ``biases[k]`` shape ``(out,)``;
    the last layer is the output layer (2 units for softmax2, 1 for sigmoid1).
    """

    variant: str
    arch: str
    n_c: int
    weights: list = field(repr=False)
    biases: list = field(repr=False)

    @property
    def hidden_layers(self):
        return len(self.weights) - 1

    @property
    def layer_dims(self):
        return [(w.shape[0], w.shape[1]) for w in self.weights]

    @property
    def n_params(self):
        return int(sum(w.size + b.size for w, b in zip(self.weights, self.biases)))

    @property
    def dtype(self):
        return self.weights[0].dtype

    def params(self):
        """Flat list ``[W0, b0, W1, b1, ...]``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_params(self, flat, dtype=None):
        flat = [np.asarray(p, dtype=dtype) if dtype else np.asarray(p) for p in flat]
        return ModelParams(self.variant, self.arch, self.n_c, flat[0::2], flat[1::2])

    def astype(self, dtype):
        return self.with_params([p.copy() for p in self.params()], dtype=dtype)

    def is_finite(self):
        return all(np.isfinite(p).all() for p in self.params())

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return save_model(self) == save_model(other)

    @property
    def content_hash(self):
        return _content_hash(save_model(self)[:-8])


def _check_n_c(n_c):
    if n_c not in CONTEXT_LENGTHS:
        raise UnsupportedContextLength(f"context length {n_c} not in {CONTEXT_LENGTHS}")


def _default_variant(n_c, arch, hidden_layers):
    from .context import template_offsets

    for v in VARIANTS.values():
        if (
            template_offsets(v.template).n_c == n_c
            and v.arch == arch
            and v.hidden_layers == hidden_layers
        ):
            return v.name
    raise UnsupportedContextLength(f"no variant with n_C={n_c}, arch={arch}, {hidden_layers} hidden layers")


def _shapes(n_c, arch, hidden_layers):
    n_out = 2 if arch == "softmax2" else 1
    dims = [n_c] + [2 * n_c] * hidden_layers + [n_out]
    return [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]


def init_model(n_c, arch="softmax2", seed=0, hidden_layers=1, variant=None) -> ModelParams:
    """Glorot-uniform weights, zero biases, float32.

    Weights of a layer with ``fan_in`` inputs and ``fan_out`` outputs are
    drawn from U(-a, a), ``a = sqrt(6 / (fan_in + fan_out))``.
    """
    _check_n_c(n_c)
    if arch not in ARCHS:
        raise ValueError(f"unknown arch {arch!r}")
    if variant is None:
        variant = _default_variant(n_c, arch, hidden_layers)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for out, inp in _shapes(n_c, arch, hidden_layers):
        a = math.sqrt(6.0 / (inp + out))
        weights.append(rng.uniform(-a, a, size=(out, inp)).astype(np.float32))
        biases.append(np.zeros(out, dtype=np.float32))
    return ModelParams(get_variant(variant).name, arch, n_c, weights, biases)


def init_for_variant(variant, seed=0) -> ModelParams:
    from .context import template_offsets

    v = get_variant(variant)
    return init_model(template_offsets(v.template).n_c, v.arch, seed, v.hidden_layers, v.name)


def uniform_model(variant) -> ModelParams:
    """All-zero parameters: p1 = 0.5 for every context."""
    m = init_for_variant(variant)
    return m.with_params([np.zeros_like(p) for p in m.params()])


# -- coding-path inference -------------------------------------------------

def _dense_ordered(x, wt, b):
    """``b + sum_k x[:, k] * w[:, k]`` accumulated strictly in k order (float32).

    Three evaluation strategies, all producing the same values: terms with a
    zero input only ever add a signed zero, so skipping them is exact.
    """
    n_out = wt.shape[1]
    if n_out <= 8:
        # narrow output layer: sequential prefix sums along the input axis
        terms = x[:, :, None] * wt[None, :, :]
        first = np.broadcast_to(b, (x.shape[0], 1, n_out))
        return np.cumsum(np.concatenate([first, terms], axis=1), axis=1)[:, -1, :]
    h = np.empty((x.shape[0], n_out), dtype=np.float32)
    h[:] = b
    if x.shape[0] <= 4:
        for i in range(x.shape[0]):
            row = x[i]
            hi = h[i]
            for k in np.flatnonzero(row).tolist():
                v = row[k]
                if v == 1:
                    hi += wt[k]
                else:
                    hi += v * wt[k]
        return h
    tmp = np.empty_like(h)
    for k in range(x.shape[1]):
        np.multiply(x[:, k:k + 1], wt[k], out=tmp)
        h += tmp
    return h


def _transposed(m):
    # cached per ModelParams object; weights are treated as immutable once coding starts
    cached = m.__dict__.get("_wt")
    if cached is None:
        cached = [np.ascontiguousarray(w.T) for w in m.weights]
        m.__dict__["_wt"] = cached
    return cached


def _logit_diff32(m, x):
    h = x
    last = len(m.weights) - 1
    for k, (wt, b) in enumerate(zip(_transposed(m), m.biases)):
        h = _dense_ordered(h, wt, b)
        if k < last:
            h = np.maximum(h, np.float32(0))
    if m.arch == "softmax2":
        return h[:, 0] - h[:, 1]
    return h[:, 0]


def forward(m: ModelParams, batch) -> np.ndarray:
    """Occupancy probabilities p1 (float64) for a batch of contexts.

    softmax2: ``p1 = e^a1 / (e^a1 + e^a2)``; sigmoid1: ``p1 = 1 / (1 + e^-a)``.
    Bit-identical for a given row regardless of batch composition.
    """
    x = np.asarray(batch)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != m.n_c:
        raise LengthMismatch(f"context length {x.shape[1]} != model n_C {m.n_c}")
    m32 = m if m.dtype == np.float32 else m.astype(np.float32)
    inverse = None
    if len(x) > 64 and ((x == 0) | (x == 1)).all():
        # repeated contexts are evaluated once; rows are independent so this is exact
        packed = np.packbits(x.astype(bool), axis=1)
        packed, first, inverse = np.unique(packed, axis=0, return_index=True, return_inverse=True)
        x = x[first]
    x = x.astype(np.float32)
    d = np.empty(len(x), dtype=np.float32)
    for s in range(0, len(x), _CHUNK):
        d[s:s + _CHUNK] = _logit_diff32(m32, x[s:s + _CHUNK])
    if inverse is not None:
        d = d[inverse.reshape(-1)]
    p = 1.0 / (1.0 + np.exp(-d.astype(np.float64)))
    return np.clip(p, _P_EPS, 1.0 - _P_EPS)


# -- training-path maths (float64, BLAS) -----------------------------------

def _forward_cache(m, x):
    acts = [x]
    h = x
    last = len(m.weights) - 1
    for k, (w, b) in enumerate(zip(m.weights, m.biases)):
        z = h @ w.T + b
        h = np.maximum(z, 0.0) if k < last else z
        acts.append(h)
    out = acts[-1]
    d = out[:, 0] - out[:, 1] if m.arch == "softmax2" else out[:, 0]
    return d, acts


def _softplus(v):
    return np.logaddexp(0.0, v)


def logit_loss_bits(d, counts):
    """Occurrence-weighted codelength in bits from logit differences ``d`` (stable form)."""
    counts = np.asarray(counts, dtype=np.float64)
    return float((counts[:, 0] @ _softplus(d) + counts[:, 1] @ _softplus(-d)) / _LN2)


def model_loss_bits(m, contexts, counts, chunk=1 << 15):
    """Occurrence-weighted codelength of ``m`` over a histogram-shaped sample (float64 evaluation)."""
    m64 = m.astype(np.float64)
    counts = np.asarray(counts, dtype=np.float64)
    total = 0.0
    for s in range(0, len(contexts), chunk):
        d, _ = _forward_cache(m64, np.asarray(contexts[s:s + chunk], dtype=np.float64))
        total += logit_loss_bits(d, counts[s:s + chunk])
    return total


def loss(p, counts) -> float:
    """``-sum(no0 * log2 p0 + no1 * log2 p1)`` with ``p0 = 1 - p1``."""
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    counts = np.asarray(counts, dtype=np.float64).reshape(-1, 2)
    if len(p) != len(counts):
        raise LengthMismatch("one probability per context expected")
    if not ((p > 0) & (p < 1)).all():
        raise DegenerateProbability("probabilities must lie strictly inside (0, 1)")
    return float(-(counts[:, 0] @ np.log2(1.0 - p) + counts[:, 1] @ np.log2(p)))


def grad(m: ModelParams, batch, counts):
    """Analytic gradient of the codelength loss (bits) w.r.t. ``m.params()``.

    Evaluated in float64; returns arrays in the order of ``m.params()``.
    """
    m64 = m.astype(np.float64)
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != m.n_c:
        raise LengthMismatch(f"context length {x.shape[1]} != model n_C {m.n_c}")
    counts = np.asarray(counts, dtype=np.float64).reshape(-1, 2)
    d, acts = _forward_cache(m64, x)
    p1 = 1.0 / (1.0 + np.exp(-d))
    g_d = (counts.sum(axis=1) * p1 - counts[:, 1]) / _LN2
    if m.arch == "softmax2":
        delta = np.stack([g_d, -g_d], axis=1)
    else:
        delta = g_d[:, None]
    grads = []
    for k in range(len(m64.weights) - 1, -1, -1):
        grads.append(delta.sum(axis=0))
        grads.append(delta.T @ acts[k])
        if k:
            delta = (delta @ m64.weights[k]) * (acts[k] > 0)
    return grads[::-1]


# -- training --------------------------------------------------------------

@dataclass
class TrainConfig:
    batch_size: int = 30000
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    patience: int = 5
    max_epochs: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


class _Adam:
    def __init__(self, params, cfg):
        self.cfg = cfg
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        c = self.cfg
        self.t += 1
        bc1 = 1 - c.beta1 ** self.t
        bc2 = 1 - c.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= c.beta1
            m += (1 - c.beta1) * g
            v *= c.beta2
            v += (1 - c.beta2) * g * g
            p -= c.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + c.epsilon)


def _hist_arrays(hist):
    return hist.contexts().astype(np.float64), hist.counts().astype(np.float64)


def train(hist, val=None, cfg: TrainConfig | None = None, variant=None, init=None, history=None) -> ModelParams:
    """Fit a model to a context histogram with Adam and early stopping.

    Each epoch shuffles the unique contexts and takes one Adam step per
    batch of ``cfg.batch_size`` contexts, weighting every context by its
    occurrence counts.  After each epoch the validation loss (bits per
    occurrence) is computed on the float32 weights; training stops after
    ``cfg.patience`` epochs without improvement and the best weights seen,
    initial ones included, are returned.  Per-epoch records are appended to
    ``history`` when given.
    """
    cfg = cfg or TrainConfig()
    if len(hist) == 0 or hist.total == 0:
        raise EmptyHistogram("training histogram is empty")
    variant = get_variant(variant or hist.variant)
    model = init if init is not None else init_for_variant(variant, seed=cfg.seed)
    if model.n_c != hist.n_bits:
        raise LengthMismatch(f"histogram context length {hist.n_bits} != model n_C {model.n_c}")
    if val is None or len(val) == 0:
        val = hist
    x, counts = _hist_arrays(hist)
    vx, vcounts = _hist_arrays(val)
    v_total = max(vcounts.sum(), 1.0)
    t_total = counts.sum()
    rng = np.random.default_rng(cfg.seed)

    params = [p.astype(np.float64) for p in model.params()]
    opt = _Adam(params, cfg)

    def snapshot():
        return model.with_params([p.astype(np.float32) for p in params])

    best = snapshot()
    best_val = model_loss_bits(best, vx, vcounts) / v_total
    if history is not None:
        history.append({"epoch": 0, "train_bits": model_loss_bits(best, x, counts) / t_total,
                        "val_bits": best_val, "best_val_bits": best_val})
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(x))
        train_bits = 0.0
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            current = model.with_params(params)
            d, _ = _forward_cache(current, x[idx])
            train_bits += logit_loss_bits(d, counts[idx])
            opt.step(params, grad(current, x[idx], counts[idx]))
        cand = snapshot()
        if not cand.is_finite():
            log.warning("non-finite weights at epoch %d; stopping", epoch)
            break
        val_bits = model_loss_bits(cand, vx, vcounts) / v_total
        if val_bits < best_val:
            best, best_val, stale = cand, val_bits, 0
        else:
            stale += 1
        if history is not None:
            history.append({"epoch": epoch, "train_bits": train_bits / t_total,
                            "val_bits": val_bits, "best_val_bits": best_val})
        log.debug("epoch %d train %.5f val %.5f", epoch, train_bits / t_total, val_bits)
        if stale >= cfg.patience:
            break
    return best


# -- quantization ----------------------------------------------------------

@dataclass(frozen=True)
class QuantizedDist:
    c0: int
    c1: int


def quantize_counts(p1) -> np.ndarray:
    """Vectorised quantization: integer ``c1`` in [1, 2^14 - 1]."""
    c1 = np.rint(np.asarray(p1, dtype=np.float64) * TOTAL)
    return np.clip(c1, 1, TOTAL - 1).astype(np.int64)


def quantize(p1) -> QuantizedDist:
    c1 = int(quantize_counts(p1))
    return QuantizedDist(TOTAL - c1, c1)


# -- serialization ---------------------------------------------------------

MODEL_MAGIC = b"NNOCMDL1"
MODEL_VERSION = 1
_ARCH_IDS = {"softmax2": 0, "sigmoid1": 1}
_MODEL_HEAD = struct.Struct("<8sBBBHB")


def _content_hash(data: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def save_model(m: ModelParams) -> bytes:
    """Serialize to the ``NNOCMDL1`` layout (see docs/model_format.md)."""
    parts = [
        _MODEL_HEAD.pack(MODEL_MAGIC, MODEL_VERSION, get_variant(m.variant).id,
                         _ARCH_IDS[m.arch], m.n_c, len(m.weights))
    ]
    for out, inp in m.layer_dims:
        parts.append(struct.pack("<HH", out, inp))
    for w, b in zip(m.weights, m.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<Q", _content_hash(body))


def load_model(data: bytes) -> ModelParams:
    if len(data) < _MODEL_HEAD.size + 8:
        raise CorruptModelFile("model file truncated")
    magic, version, vid, arch_id, n_c, n_layers = _MODEL_HEAD.unpack_from(data)
    if magic != MODEL_MAGIC:
        raise CorruptModelFile("bad model magic")
    if version != MODEL_VERSION:
        raise VersionMismatch(f"model format version {version}, expected {MODEL_VERSION}")
    pos = _MODEL_HEAD.size
    dims = []
    for _ in range(n_layers):
        if pos + 4 > len(data):
            raise CorruptModelFile("model file truncated in layer table")
        dims.append(struct.unpack_from("<HH", data, pos))
        pos += 4
    need = pos + sum(4 * (o * i + o) for o, i in dims) + 8
    if len(data) != need:
        raise CorruptModelFile(f"model file has {len(data)} bytes, expected {need}")
    (stored,) = struct.unpack_from("<Q", data, len(data) - 8)
    if stored != _content_hash(data[:-8]):
        raise HashMismatch("model content hash does not match")
    weights, biases = [], []
    for out, inp in dims:
        w = np.frombuffer(data, dtype="<f4", count=out * inp, offset=pos).reshape(out, inp)
        pos += 4 * out * inp
        b = np.frombuffer(data, dtype="<f4", count=out, offset=pos)
        pos += 4 * out
        weights.append(w.astype(np.float32))
        biases.append(b.astype(np.float32))
    try:
        variant = variant_by_id(vid).name
        arch = {v: k for k, v in _ARCH_IDS.items()}[arch_id]
    except (KeyError, UnknownVariant) as exc:
        raise CorruptModelFile(str(exc)) from None
    if [tuple(d) for d in dims] != _shapes(n_c, arch, n_layers - 1):
        raise CorruptModelFile("layer dimensions inconsistent with n_C and arch")
    return ModelParams(variant, arch, n_c, weights, biases)


def model_hash(m: ModelParams) -> int:
    return m.content_hash
