"""Dense multi-index arrays and their partition norms.

For an array ``A`` with axes ``1..d`` and a partition ``J = {J_1, ..., J_k}``
of those axes, the partition norm is the supremum of the multilinear form

    sum_i A[i] * x1[i_{J_1}] * ... * xk[i_{J_k}]

over unit vectors ``x1..xk``, where ``xj`` is indexed by the combined range of
the axes in ``J_j``. One block gives the Frobenius norm, two blocks the
spectral norm of a matricization, singletons the injective tensor norm.

Combined ranges are flattened lexicographically in ascending axis order
(C order after sorting the axes). Witness vectors in certificates use the
same flattening.
"""
from __future__ import annotations

import json
import string
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._validation import check_finite_array
from .exceptions import (
    InvalidPartitionError,
    ShapeError,
    UnsupportedMethodError,
    ValidationError,
)
from .partitions import Partition, enumerate_partitions

METHODS = ("auto", "exact2", "alternating", "oracle")


@dataclass(frozen=True)
class MultiIndexArray:
    """Immutable dense real array with ``order >= 1`` axes."""

    values: np.ndarray

    def __post_init__(self):
        arr = check_finite_array(self.values, "array values")
        if arr.ndim < 1:
            raise ShapeError("a multi-index array needs at least one axis")
        if any(s < 1 for s in arr.shape):
            raise ShapeError(f"all axis sizes must be positive, got {arr.shape}")
        arr = np.array(arr, dtype=np.float64, copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def order(self) -> int:
        return self.values.ndim

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def __mul__(self, c: float) -> "MultiIndexArray":
        return MultiIndexArray(self.values * float(c))

    __rmul__ = __mul__

    def to_json(self) -> dict:
        return {
            "order": self.order,
            "shape": list(self.shape),
            "values": self.values.ravel().tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MultiIndexArray":
        try:
            shape = [int(s) for s in obj["shape"]]
            values = obj["values"]
            order = int(obj.get("order", len(shape)))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed array JSON: {exc}") from exc
        if order != len(shape):
            raise ShapeError(f"order {order} does not match shape {shape}")
        if len(values) != int(np.prod(shape)):
            raise ShapeError(
                f"{len(values)} values given for shape {shape} "
                f"({int(np.prod(shape))} expected)"
            )
        return cls(np.asarray(values, dtype=np.float64).reshape(shape))

    @classmethod
    def load(cls, path) -> "MultiIndexArray":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def as_array(A) -> np.ndarray:
    if isinstance(A, MultiIndexArray):
        return A.values
    return MultiIndexArray(A).values


@dataclass(frozen=True)
class NormConfig:
    """Knobs for the iterative norm algorithms.

    Restart vectors come from ``numpy.random.SeedSequence(seed)`` spawned
    once per restart, so the result does not depend on ``threads``.
    """

    restarts: int = 50
    tol: float = 1e-10
    max_iter: int = 500
    samples: int = 100_000
    seed: int = 0
    max_rerandomize: int = 10
    threads: int = 1
    batch: int = 20_000


@dataclass
class NormCertificate:
    value: float
    witnesses: list[np.ndarray]
    converged: bool = True
    iterations: int = 0
    degenerate: bool = False
    method: str = "exact"
    partition: Partition | None = field(default=None, repr=False)

    def to_json(self) -> dict:
        return {
            "value": float(self.value),
            "witnesses": [np.asarray(w).tolist() for w in self.witnesses],
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "degenerate": bool(self.degenerate),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "NormCertificate":
        return cls(
            value=float(obj["value"]),
            witnesses=[np.asarray(w, dtype=float) for w in obj["witnesses"]],
            converged=bool(obj["converged"]),
            iterations=int(obj["iterations"]),
            degenerate=bool(obj.get("degenerate", False)),
        )


# -- reshaping --------------------------------------------------------------

def _check_cover(order: int, J: Partition) -> None:
    if J.ground != tuple(range(1, order + 1)):
        raise InvalidPartitionError(
            f"partition {J} must cover all axes 1..{order} of the array"
        )


def block_tensor(A, J: Partition) -> np.ndarray:
    """Reshape ``A`` to one axis per block of ``J`` (lexicographic flattening)."""
    arr = as_array(A)
    _check_cover(arr.ndim, J)
    perm = [a - 1 for b in J.blocks for a in b]
    sizes = [int(np.prod([arr.shape[a - 1] for a in b])) for b in J.blocks]
    return np.ascontiguousarray(arr.transpose(perm)).reshape(sizes)


def matricize(A, row_axes: Sequence[int], col_axes: Sequence[int]) -> np.ndarray:
    """Unfold ``A`` into a matrix with ``row_axes`` as rows, ``col_axes`` as columns."""
    arr = as_array(A)
    rows = tuple(sorted(int(a) for a in row_axes))
    cols = tuple(sorted(int(a) for a in col_axes))
    if not rows or not cols:
        raise InvalidPartitionError("row and column axis sets must be nonempty")
    if set(rows) & set(cols):
        raise InvalidPartitionError("blocks not disjoint")
    _check_cover(arr.ndim, Partition([rows, cols]))
    perm = [a - 1 for a in rows + cols]
    nr = int(np.prod([arr.shape[a - 1] for a in rows]))
    return np.ascontiguousarray(arr.transpose(perm)).reshape(nr, -1)


# -- multilinear forms ------------------------------------------------------

def _contract_except(T: np.ndarray, xs: Sequence[np.ndarray], free: int) -> np.ndarray:
    out = T
    for b in range(T.ndim - 1, -1, -1):
        if b != free:
            out = np.tensordot(out, xs[b], axes=([b], [0]))
    return out


def _form(T: np.ndarray, xs: Sequence[np.ndarray]) -> float:
    out = T
    for b in range(T.ndim - 1, -1, -1):
        out = out @ xs[b]
    return float(out)


def multilinear_eval(A, J: Partition, witnesses: Sequence) -> float:
    """Evaluate the multilinear form of ``A`` under ``J`` at ``witnesses``."""
    T = block_tensor(A, J)
    if len(witnesses) != J.deg:
        raise ShapeError(f"{len(witnesses)} witnesses for {J.deg} blocks")
    xs = []
    for b, w in enumerate(witnesses):
        w = np.asarray(w, dtype=np.float64).ravel()
        if w.shape[0] != T.shape[b]:
            raise ShapeError(
                f"witness {b} has length {w.shape[0]}, block needs {T.shape[b]}"
            )
        xs.append(w)
    return _form(T, xs)


# -- algorithms -------------------------------------------------------------

def _unit(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.standard_normal(n)
    return v / np.linalg.norm(v)


def _alternating(T, xs, cfg: NormConfig, rng):
    """Block coordinate ascent from ``xs``; returns (value, xs, converged, iters)."""
    xs = list(xs)
    k = T.ndim
    value = _form(T, xs)
    best = (value, list(xs))
    rerand = 0
    for it in range(1, cfg.max_iter + 1):
        for b in range(k):
            c = _contract_except(T, xs, b)
            nc = float(np.linalg.norm(c))
            if nc == 0.0:
                # saddle configuration: the free block has no preferred direction
                rerand += 1
                if rerand > cfg.max_rerandomize:
                    return best[0], best[1], False, it
                xs[b] = _unit(rng, T.shape[b])
                continue
            rerand = 0
            xs[b] = c / nc
        new = _form(T, xs)
        if new > best[0]:
            best = (new, list(xs))
        if abs(new - value) <= cfg.tol * abs(new):
            return best[0], best[1], True, it
        value = new
    return best[0], best[1], False, cfg.max_iter


def _restart(T, cfg: NormConfig, seed_seq):
    rng = np.random.default_rng(seed_seq)
    xs = [_unit(rng, s) for s in T.shape]
    return _alternating(T, xs, cfg, rng)


def _batch_contract_except(T, X, free):
    letters = string.ascii_lowercase[: T.ndim]
    ops = [T]
    subs = [letters]
    for b in range(T.ndim):
        if b != free:
            ops.append(X[b])
            subs.append("z" + letters[b])
    expr = ",".join(subs) + "->z" + letters[free]
    return np.einsum(expr, *ops, optimize=True)


def _oracle_batch(T, cfg: NormConfig, rng, size):
    """Random unit tuples polished in bulk; returns (best value, witnesses, sweeps)."""
    k = T.ndim
    X = []
    for s in T.shape:
        V = rng.standard_normal((size, s))
        X.append(V / np.linalg.norm(V, axis=1, keepdims=True))
    val = (_batch_contract_except(T, X, 0) * X[0]).sum(axis=1)
    active = np.arange(size)
    sweeps = 0
    for sweeps in range(1, cfg.max_iter + 1):
        Xa = [x[active] for x in X]
        for b in range(k):
            C = _batch_contract_except(T, Xa, b)
            nc = np.linalg.norm(C, axis=1)
            bad = nc == 0
            if np.any(bad):
                C[bad] = rng.standard_normal((int(bad.sum()), T.shape[b]))
                nc[bad] = np.linalg.norm(C[bad], axis=1)
            Xa[b] = C / nc[:, None]
        new = nc
        for b in range(k):
            X[b][active] = Xa[b]
        done = new - val[active] <= cfg.tol * np.abs(new)
        val[active] = new
        active = active[~done]
        if active.size == 0:
            break
    i = int(np.argmax(val))
    return float(val[i]), [x[i].copy() for x in X], sweeps


def _zero_certificate(T, J, method):
    ws = []
    for s in T.shape:
        e = np.zeros(s)
        e[0] = 1.0
        ws.append(e)
    return NormCertificate(0.0, ws, True, 0, True, method, J)


def partition_norm(A, J: Partition, method: str = "auto",
                   config: NormConfig | None = None) -> NormCertificate:
    """Compute (or certify a lower bound on) the partition norm of ``A``.

    Parameters
    ----------
    A : MultiIndexArray or array_like
    J : Partition
        Must cover every axis of ``A``.
    method : {"auto", "exact2", "alternating", "oracle"}
        ``exact2`` uses the Frobenius norm or an SVD and needs ``deg(J) <= 2``.
        ``alternating`` runs block coordinate ascent from ``config.restarts``
        random starts; for three or more blocks the value is a lower bound.
        ``oracle`` draws ``config.samples`` random unit tuples and polishes
        each one by the same ascent. ``auto`` picks ``exact2`` when possible.

    Returns
    -------
    NormCertificate
        ``value`` equals the multilinear form at ``witnesses``.
    """
    if method not in METHODS:
        raise UnsupportedMethodError(f"unknown method {method!r}")
    cfg = config or NormConfig()
    T = block_tensor(A, J)
    k = T.ndim
    if method == "auto":
        method = "exact2" if k <= 2 else "alternating"
    if method == "exact2" and k > 2:
        raise UnsupportedMethodError(
            f"exact2 supports at most 2 blocks, partition {J} has {k}"
        )
    if not np.any(T):
        return _zero_certificate(T, J, method)
    # work on T / max|T| so tiny or huge entries neither underflow nor overflow
    scale = float(np.max(np.abs(T)))
    T_raw, T = T, T / scale

    if k == 1:
        r = float(np.linalg.norm(T))
        return NormCertificate(scale * r, [T / r], True, 0, False, method, J)

    if method == "exact2":
        U, s, Vt = np.linalg.svd(T, full_matrices=False)
        u, v = U[:, 0], Vt[0]
        return NormCertificate(scale * float(s[0]), [u, v], True, 0, False, method, J)

    if method == "alternating":
        seqs = np.random.SeedSequence(cfg.seed).spawn(cfg.restarts)
        if cfg.threads > 1:
            with ThreadPoolExecutor(cfg.threads) as pool:
                runs = list(pool.map(lambda s: _restart(T, cfg, s), seqs))
        else:
            runs = [_restart(T, cfg, s) for s in seqs]
        idx = max(range(len(runs)), key=lambda r: (runs[r][0], -r))
        _, xs, conv, iters = runs[idx]
        value = _form(T_raw, xs)
        return NormCertificate(value, xs, conv, iters, False, method, J)

    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    best_val, best_xs, total = -np.inf, None, 0
    remaining = cfg.samples
    while remaining > 0:
        size = min(cfg.batch, remaining)
        val, xs, sweeps = _oracle_batch(T, cfg, rng, size)
        total = max(total, sweeps)
        if val > best_val:
            best_val, best_xs = val, xs
        remaining -= size
    value = _form(T_raw, best_xs)
    return NormCertificate(value, best_xs, True, total, False, "oracle", J)


def frobenius_norm(A) -> float:
    return float(np.linalg.norm(as_array(A).ravel()))


def all_partition_norms(A, method: str = "auto",
                        config: NormConfig | None = None) -> dict[Partition, float]:
    arr = as_array(A)
    return {
        J: partition_norm(arr, J, method, config).value
        for J in enumerate_partitions(range(1, arr.ndim + 1))
    }
