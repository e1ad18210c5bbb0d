"""Embedding tables, lazy Adam and the binary checkpoint format.

Checkpoint layout (all little-endian)::

    magic      6 bytes   b"SKGCL1"
    byteorder  1 byte    b"<"
    width      u1        4 or 8 (bytes per float)
    dim        u4
    rows       4 x u8    ig_user, ig_item, kg_entity, kg_relation
    step       u8
    hyper      4 x f8    lr, beta1, beta2, eps
    manifest   u4 length + UTF-8 bytes
    payload    params, first moments, second moments; each as the four
               tables in the order above, row-major

so the payload occupies ``3 * width * dim * sum(rows)`` bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

TABLES = ("ig_user", "ig_item", "kg_entity", "kg_relation")
MAGIC = b"SKGCL1"
_HEADER = struct.Struct("<6scBI4QQ4d")


class CheckpointError(ValueError):
    pass


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, table):
        super().__init__(f"non-finite gradient in table {table!r}")
        self.table = table


@dataclass
class ModelParams:
    ig_user: np.ndarray
    ig_item: np.ndarray
    kg_entity: np.ndarray
    kg_relation: np.ndarray

    @property
    def dim(self):
        return self.ig_user.shape[1]

    @property
    def dtype(self):
        return self.ig_user.dtype

    def tables(self):
        return {name: getattr(self, name) for name in TABLES}

    def copy(self):
        return ModelParams(*(getattr(self, n).copy() for n in TABLES))

    def astype(self, dtype):
        return ModelParams(*(getattr(self, n).astype(dtype) for n in TABLES))

    def equals(self, other):
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in TABLES)


def xavier_bound(dim):
    """Half-width of the Xavier-uniform range with ``fan_in = fan_out = dim``."""
    return float(np.sqrt(6.0 / (dim + dim)))


def init_params(num_users, num_items, num_entities, num_relations, dim=64, seed=0, dtype=np.float32):
    """Xavier-uniform initialization of the four tables, deterministic in ``seed``."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    rng = np.random.default_rng(seed)
    bound = xavier_bound(dim)
    rows = (num_users, num_items, num_entities, num_relations)
    return ModelParams(*(rng.uniform(-bound, bound, size=(n, dim)).astype(dtype) for n in rows))


def init_params_for(bundle, dim=64, seed=0, dtype=np.float32):
    return init_params(bundle.num_users, bundle.num_items, bundle.kg.num_entities,
                       bundle.kg.num_relations, dim=dim, seed=seed, dtype=dtype)


@dataclass
class AdamState:
    """Moment accumulators per table; bias correction uses the global step."""

    m: dict
    v: dict
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **hyper):
        return cls({n: np.zeros_like(t) for n, t in params.tables().items()},
                   {n: np.zeros_like(t) for n, t in params.tables().items()}, **hyper)

    def copy(self):
        return AdamState({k: a.copy() for k, a in self.m.items()}, {k: a.copy() for k, a in self.v.items()},
                         self.step, self.lr, self.beta1, self.beta2, self.eps)


@dataclass
class Gradients:
    """Per-table gradients as ``(row ids, row values)``; absent rows are zero."""

    rows: dict = field(default_factory=dict)

    @classmethod
    def from_dense(cls, dense):
        out = {}
        for name, g in dense.items():
            idx = np.flatnonzero(np.any(g != 0, axis=1))
            out[name] = (idx, g[idx])
        return cls(out)

    def to_dense(self, params):
        dense = {}
        for name, table in params.tables().items():
            g = np.zeros_like(table)
            if name in self.rows:
                idx, val = self.rows[name]
                g[idx] = val
            dense[name] = g
        return dense


def adam_step(params, grads, state):
    """One Adam update in place, touching only rows present in ``grads``.

    Untouched rows keep their parameters and moments (lazy semantics). Raises
    :class:`NonFiniteGradientError` before modifying anything if a gradient
    is not finite.
    """
    for name, (idx, val) in grads.rows.items():
        if not np.all(np.isfinite(val)):
            raise NonFiniteGradientError(name)
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for name, (idx, val) in grads.rows.items():
        if idx.size == 0:
            continue
        table = getattr(params, name)
        m, v = state.m[name], state.v[name]
        dt = table.dtype
        m_rows = b1 * m[idx] + (1.0 - b1) * val
        v_rows = b2 * v[idx] + (1.0 - b2) * val * val
        m[idx] = m_rows
        v[idx] = v_rows
        m_hat = m_rows / corr1
        v_hat = v_rows / corr2
        table[idx] = (table[idx] - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(dt)
    return params, state


# --------------------------------------------------------------------------
# checkpoint


def checkpoint_size(dim, rows, width, manifest_bytes=0):
    """Exact file size in bytes for the documented layout."""
    return _HEADER.size + 4 + manifest_bytes + 3 * width * dim * sum(rows)


def _manifest_text(manifest):
    if manifest is None:
        return ""
    if isinstance(manifest, str):
        return manifest
    return "".join(f"{k}={v}\n" for k, v in manifest.items())


def save_checkpoint(path, params, state, manifest=None):
    width = params.dtype.itemsize
    if width not in (4, 8):
        raise CheckpointError(f"unsupported float width {width}")
    rows = [getattr(params, n).shape[0] for n in TABLES]
    text = _manifest_text(manifest).encode("utf-8")
    fmt = np.dtype(f"<f{width}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, b"<", width, params.dim, *rows, state.step,
                              state.lr, state.beta1, state.beta2, state.eps))
        fh.write(struct.pack("<I", len(text)))
        fh.write(text)
        for group in (params.tables(), state.m, state.v):
            for n in TABLES:
                fh.write(np.ascontiguousarray(group[n], dtype=fmt).tobytes())


def _parse_manifest(text):
    out = {}
    for line in text.splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k] = v
    return out


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(params, state, manifest)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size + 4:
        raise CheckpointError("truncated checkpoint header")
    magic, order, width, dim, *rest = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    if order != b"<":
        raise CheckpointError(f"unsupported byte order {order!r}")
    if width not in (4, 8):
        raise CheckpointError(f"unsupported float width {width}")
    rows, step, (lr, b1, b2, eps) = rest[:4], rest[4], rest[5:]
    off = _HEADER.size
    (mlen,) = struct.unpack_from("<I", data, off)
    off += 4
    if len(data) != checkpoint_size(dim, rows, width, mlen):
        raise CheckpointError("checkpoint size does not match its header")
    manifest = _parse_manifest(data[off:off + mlen].decode("utf-8"))
    off += mlen
    fmt = np.dtype(f"<f{width}")
    groups = []
    for _ in range(3):
        tabs = {}
        for n, r in zip(TABLES, rows):
            count = r * dim
            tabs[n] = np.frombuffer(data, dtype=fmt, count=count, offset=off).reshape(r, dim).astype(fmt.newbyteorder("="))
            off += count * width
        groups.append(tabs)
    params = ModelParams(*(groups[0][n] for n in TABLES))
    state = AdamState(groups[1], groups[2], step, lr, b1, b2, eps)
    return params, state, manifest
