"""Kernel ensembles on finite probability spaces and their conditional norms.

A :class:`KernelEnsemble` holds real kernels ``h_i`` for every index tuple
``i in {1..n}^d``. The variable in slot ``j`` at index ``i`` takes values in
a finite :class:`DiscreteSpace`; all spaces on one axis have the same number
of atoms ``m_j`` (their probabilities may differ). The table has shape
``(n,)*d + (m_1, ..., m_d)``: index axes first, then atom axes.

On finite spaces every square-integrable block function is a vector, and the
random norms of a kernel array reduce exactly to partition norms of the
probability-weighted array built by :func:`weighted_embedding`.
"""
from __future__ import annotations

import inspect
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

from ._validation import (
    check_axis_set,
    check_finite_array,
    check_moment_order,
    check_positive_int,
    check_probabilities,
)
from .exceptions import (
    BudgetExceededError,
    CanonicalityError,
    DomainError,
    ShapeError,
    ValidationError,
)
from .partitions import Partition, complement
from .tensor import MultiIndexArray, NormConfig, partition_norm

DEFAULT_BUDGET = 10**7
CANONICAL_TOL = 1e-10


@dataclass(frozen=True)
class DiscreteSpace:
    atoms: tuple
    probs: tuple

    def __init__(self, atoms: Sequence, probs: Sequence[float]):
        p = check_probabilities(probs)
        if len(atoms) != p.size:
            raise ShapeError(f"{len(atoms)} atoms but {p.size} probabilities")
        object.__setattr__(self, "atoms", tuple(atoms))
        object.__setattr__(self, "probs", tuple(float(x) for x in p))

    @property
    def size(self) -> int:
        return len(self.atoms)

    @classmethod
    def rademacher(cls) -> "DiscreteSpace":
        return cls([-1, 1], [0.5, 0.5])

    def to_json(self) -> dict:
        return {"atoms": list(self.atoms), "probs": list(self.probs)}

    @classmethod
    def from_json(cls, obj) -> "DiscreteSpace":
        try:
            return cls(obj["atoms"], obj["probs"])
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed space JSON: {exc}") from exc


@dataclass(frozen=True)
class OutcomeAssignment:
    """Chosen atom indices for every variable of the conditioned axes.

    ``atoms[j]`` is a length-``n`` integer array for each conditioned axis
    ``j`` (1-based).
    """

    atoms: dict

    def __post_init__(self):
        object.__setattr__(
            self, "atoms",
            {int(j): np.asarray(a, dtype=np.int64) for j, a in self.atoms.items()},
        )

    @property
    def axes(self) -> tuple[int, ...]:
        return tuple(sorted(self.atoms))


class Estimate(NamedTuple):
    value: float
    stderr: float
    exact: bool


@dataclass(frozen=True, eq=False)
class KernelEnsemble:
    """Kernels ``h_i`` of order ``d`` over index range ``n``.

    ``spaces[j][i]`` is the space of the variable in slot ``j`` (0-based
    here) at index ``i``. Construct through :meth:`from_spaces` or
    :meth:`shared` rather than directly.
    """

    d: int
    n: int
    spaces: tuple
    table: np.ndarray
    probs: tuple = field(repr=False, default=())

    def __post_init__(self):
        d = check_positive_int(self.d, "d")
        n = check_positive_int(self.n, "n")
        if len(self.spaces) != d or any(len(row) != n for row in self.spaces):
            raise ShapeError("spaces must be given for every axis and index")
        sizes = []
        for j, row in enumerate(self.spaces):
            m = {sp.size for sp in row}
            if len(m) != 1:
                raise ShapeError(f"spaces on axis {j + 1} differ in atom count")
            sizes.append(m.pop())
        table = check_finite_array(self.table, "kernel table")
        expected = (n,) * d + tuple(sizes)
        if table.shape != expected:
            raise ShapeError(f"table shape {table.shape}, expected {expected}")
        table = table.copy()
        table.setflags(write=False)
        probs = tuple(np.array([sp.probs for sp in row]) for row in self.spaces)
        for p in probs:
            p.setflags(write=False)
        object.__setattr__(self, "table", table)
        object.__setattr__(self, "probs", probs)

    # -- construction -------------------------------------------------------

    @classmethod
    def from_spaces(cls, spaces, table) -> "KernelEnsemble":
        spaces = tuple(tuple(row) for row in spaces)
        return cls(len(spaces), len(spaces[0]), spaces, np.asarray(table, float))

    @classmethod
    def shared(cls, kernel_table, space, n: int) -> "KernelEnsemble":
        """The i.i.d. case: one kernel for every index, one space per axis.

        ``space`` is a single :class:`DiscreteSpace` used on every axis or a
        list with one space per axis.
        """
        h = check_finite_array(kernel_table, "kernel table")
        d = h.ndim
        per_axis = [space] * d if isinstance(space, DiscreteSpace) else list(space)
        spaces = tuple(tuple([sp] * n) for sp in per_axis)
        table = np.broadcast_to(h, (n,) * d + h.shape)
        return cls(d, n, spaces, table)

    @classmethod
    def from_function(cls, func: Callable, space, n: int = 1, d: int | None = None,
                      indexed: bool = False) -> "KernelEnsemble":
        """Tabulate ``func`` on atom labels.

        With ``indexed=True`` the call is ``func(i, *atoms)`` with a 1-based
        index tuple ``i``; otherwise ``func(*atoms)`` shared by all indices.
        The order ``d`` defaults to the arity of ``func``.
        """
        if d is None and isinstance(space, DiscreteSpace):
            d = len(inspect.signature(func).parameters) - int(indexed)
        per_axis = [space] * d if isinstance(space, DiscreteSpace) else list(space)
        d = len(per_axis)
        if not indexed:
            h = np.array([func(*labels) for labels in
                          itertools.product(*[sp.atoms for sp in per_axis])],
                         dtype=float).reshape([sp.size for sp in per_axis])
            return cls.shared(h, per_axis, n)
        shape = (n,) * d + tuple(sp.size for sp in per_axis)
        table = np.empty(shape)
        for idx in itertools.product(range(n), repeat=d):
            for ai in itertools.product(*[range(sp.size) for sp in per_axis]):
                labels = [per_axis[j].atoms[a] for j, a in enumerate(ai)]
                table[idx + ai] = func(tuple(i + 1 for i in idx), *labels)
        spaces = tuple(tuple([sp] * n) for sp in per_axis)
        return cls(d, n, spaces, table)

    def with_table(self, table) -> "KernelEnsemble":
        return KernelEnsemble(self.d, self.n, self.spaces, table)

    def scaled(self, c: float) -> "KernelEnsemble":
        return self.with_table(self.table * float(c))

    # -- shape helpers ------------------------------------------------------

    @property
    def atom_counts(self) -> tuple[int, ...]:
        return self.table.shape[self.d:]

    def is_shared(self) -> bool:
        """True when every index carries the same kernel and spaces."""
        first = self.table[(0,) * self.d]
        if not np.array_equal(self.table, np.broadcast_to(first, self.table.shape)):
            return False
        return all(len(set(row)) == 1 for row in self.spaces)

    def base_kernel(self) -> "KernelEnsemble":
        """The ``n = 1`` ensemble of a shared kernel."""
        if not self.is_shared():
            raise DomainError("ensemble is not a shared i.i.d. kernel")
        spaces = tuple((row[0],) for row in self.spaces)
        return KernelEnsemble(self.d, 1, spaces, self.table[(slice(0, 1),) * self.d])

    def iid(self, n: int) -> "KernelEnsemble":
        """The shared kernel repeated over index range ``n``."""
        base = self if self.n == 1 else self.base_kernel()
        return KernelEnsemble.shared(base.table[(0,) * self.d],
                                     [row[0] for row in base.spaces], n)

    # -- serialization ------------------------------------------------------

    def to_json(self) -> dict:
        if self.is_shared():
            per_axis = [row[0] for row in self.spaces]
            out = {"d": self.d, "n": self.n}
            if len(set(per_axis)) == 1:
                out["space"] = per_axis[0].to_json()
            else:
                out["space"] = [sp.to_json() for sp in per_axis]
            out["kernelTable"] = self.table[(0,) * self.d].ravel().tolist()
            return out
        unique: list[DiscreteSpace] = []
        index = []
        for row in self.spaces:
            refs = []
            for sp in row:
                if sp not in unique:
                    unique.append(sp)
                refs.append(unique.index(sp))
            index.append(refs)
        return {
            "d": self.d,
            "n": self.n,
            "spaces": [sp.to_json() for sp in unique],
            "spaceIndex": index,
            "table": self.table.ravel().tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "KernelEnsemble":
        try:
            d, n = int(obj["d"]), int(obj["n"])
            if "kernelTable" in obj:
                sp = obj["space"]
                per_axis = ([DiscreteSpace.from_json(sp)] * d if isinstance(sp, dict)
                            else [DiscreteSpace.from_json(s) for s in sp])
                shape = [s.size for s in per_axis]
                h = np.asarray(obj["kernelTable"], dtype=float)
                if h.size != int(np.prod(shape)):
                    raise ShapeError(f"kernelTable has {h.size} entries, "
                                     f"expected {int(np.prod(shape))}")
                return cls.shared(h.reshape(shape), per_axis, n)
            unique = [DiscreteSpace.from_json(s) for s in obj["spaces"]]
            spaces = tuple(tuple(unique[k] for k in row) for row in obj["spaceIndex"])
            if len(spaces) != d:
                raise ShapeError(f"spaceIndex has {len(spaces)} axes, expected {d}")
            shape = (n,) * d + tuple(row[0].size for row in spaces)
            table = np.asarray(obj["table"], dtype=float)
            if table.size != int(np.prod(shape)):
                raise ShapeError(f"table has {table.size} entries, expected "
                                 f"{int(np.prod(shape))}")
            return cls(d, n, spaces, table.reshape(shape))
        except (KeyError, TypeError, IndexError) as exc:
            raise ValidationError(f"malformed kernel JSON: {exc}") from exc

    @classmethod
    def load(cls, path) -> "KernelEnsemble":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


# -- canonicalization -------------------------------------------------------

def _axis_weights(K: KernelEnsemble, j: int) -> np.ndarray:
    """Probabilities of axis ``j`` (0-based) shaped to broadcast against the table."""
    shape = [1] * (2 * K.d)
    shape[j] = K.n
    shape[K.d + j] = K.atom_counts[j]
    return K.probs[j].reshape(shape)


def conditional_means(K: KernelEnsemble) -> list[np.ndarray]:
    """``E_j h`` for each axis ``j``, with the averaged atom axis kept as size 1."""
    return [
        np.sum(K.table * _axis_weights(K, j), axis=K.d + j, keepdims=True)
        for j in range(K.d)
    ]


def canonicalize(K: KernelEnsemble) -> KernelEnsemble:
    """Apply ``prod_j (Id - E_j)`` to every kernel (top Hoeffding component)."""
    h = np.array(K.table)
    for j in range(K.d):
        h = h - np.sum(h * _axis_weights(K, j), axis=K.d + j, keepdims=True)
    return K.with_table(h)


def worst_conditional_mean(K: KernelEnsemble) -> tuple[int, int, float]:
    """(axis, index, mean) of the largest conditional mean; 1-based labels."""
    best = (1, 1, 0.0)
    for j, m in enumerate(conditional_means(K)):
        flat = np.abs(m)
        k = int(np.argmax(flat))
        if flat.flat[k] > abs(best[2]):
            pos = np.unravel_index(k, m.shape)
            best = (j + 1, int(pos[j]) + 1, float(m.flat[k]))
    return best


def is_canonical(K: KernelEnsemble, tol: float = CANONICAL_TOL) -> bool:
    if tol <= 0:
        raise DomainError("tol must be positive")
    return all(np.max(np.abs(m)) <= tol for m in conditional_means(K))


def require_canonical(K: KernelEnsemble, tol: float = CANONICAL_TOL) -> None:
    if not is_canonical(K, tol):
        raise CanonicalityError(*worst_conditional_mean(K))


# -- embeddings and conditional norms ----------------------------------------

def _check_I(K: KernelEnsemble, I) -> tuple[tuple[int, ...], tuple[int, ...]]:
    I = check_axis_set(I, K.d, "I")
    return I, complement(I, K.d)


def _embedding(K: KernelEnsemble, I, Ic, i_outer, a_outer) -> np.ndarray:
    """Weighted array over ``I`` with the ``I^c`` indices and atoms fixed (0-based)."""
    d = K.d
    sel: list = [slice(None)] * (2 * d)
    for j, i, a in zip(Ic, i_outer, a_outer):
        sel[j - 1] = i
        sel[d + j - 1] = a
    sub = K.table[tuple(sel)]  # axes: i_l for l in I, then a_l for l in I
    k = len(I)
    for pos, l in enumerate(I):
        w = np.sqrt(K.probs[l - 1])  # (n, m_l)
        shape = [1] * (2 * k)
        shape[pos] = K.n
        shape[k + pos] = K.atom_counts[l - 1]
        sub = sub * w.reshape(shape)
    perm = [x for pos in range(k) for x in (pos, k + pos)]
    sizes = [K.n * K.atom_counts[l - 1] for l in I]
    return np.ascontiguousarray(sub.transpose(perm)).reshape(sizes)


def _outer_atoms(outcome: OutcomeAssignment | None, Ic, i_outer) -> tuple[int, ...]:
    if not Ic:
        return ()
    if outcome is None:
        raise DomainError(f"an outcome assignment for axes {Ic} is required")
    if set(outcome.axes) != set(Ic):
        raise DomainError(f"outcome covers axes {outcome.axes}, expected {Ic}")
    return tuple(int(outcome.atoms[j][i]) for j, i in zip(Ic, i_outer))


def _check_outer_index(K, Ic, outer_index) -> tuple[int, ...]:
    outer_index = tuple(int(i) for i in outer_index)
    if len(outer_index) != len(Ic):
        raise DomainError(f"outer index {outer_index} does not match axes {Ic}")
    if any(not 1 <= i <= K.n for i in outer_index):
        raise DomainError(f"outer index {outer_index} outside 1..{K.n}")
    return tuple(i - 1 for i in outer_index)


def weighted_embedding(K: KernelEnsemble, I: Iterable[int], outer_index=(),
                       outcome: OutcomeAssignment | None = None) -> MultiIndexArray:
    """Probability-weighted array whose partition norms are the kernel norms.

    Axis ``l`` of the result (one per element of ``I``) has size
    ``n * m_l`` and is indexed by pairs ``(i_l, a_l)``, index-major. The
    entry is ``h_i(a) * prod_{l in I} sqrt(p_l[i_l, a_l])`` with the axes
    outside ``I`` fixed at ``outer_index`` (1-based) and the atoms chosen by
    ``outcome``.
    """
    I, Ic = _check_I(K, I)
    if not I:
        raise DomainError("the embedding needs a nonempty axis set")
    i_outer = _check_outer_index(K, Ic, outer_index)
    a_outer = _outer_atoms(outcome, Ic, i_outer)
    return MultiIndexArray(_embedding(K, I, Ic, i_outer, a_outer))


def _relabel(J: Partition, I: tuple[int, ...]) -> Partition:
    pos = {a: k + 1 for k, a in enumerate(I)}
    return Partition([[pos[a] for a in b] for b in J.blocks])


def _check_J(J: Partition, I) -> None:
    if J.ground != tuple(I):
        raise DomainError(f"partition {J} is not a partition of {tuple(I)}")


def conditional_partition_norm(K: KernelEnsemble, I, J: Partition, outer_index=(),
                               outcome: OutcomeAssignment | None = None,
                               method: str = "auto",
                               config: NormConfig | None = None) -> float:
    """Norm of the sub-array ``(h_i)_{i_I}`` at fixed outer indices and atoms.

    For ``I`` empty this is ``|h_i(a)|`` at the fully specified point.
    """
    I, Ic = _check_I(K, I)
    _check_J(J, I)
    i_outer = _check_outer_index(K, Ic, outer_index)
    a_outer = _outer_atoms(outcome, Ic, i_outer)
    if not I:
        return float(abs(K.table[i_outer + a_outer]))
    arr = _embedding(K, I, Ic, i_outer, a_outer)
    return partition_norm(arr, _relabel(J, I), method, config).value


def norm_table(K: KernelEnsemble, I, J: Partition, method: str = "auto",
               config: NormConfig | None = None,
               budget: int = DEFAULT_BUDGET) -> np.ndarray:
    """Conditional norms for every outer index and outer atom tuple.

    Shape is ``(n,)*c + (m_j for j in I^c)`` with ``c = #I^c``; a scalar
    array when ``I`` is every axis.
    """
    I, Ic = _check_I(K, I)
    _check_J(J, I)
    if not I:
        return np.abs(K.table)
    c = len(Ic)
    m_out = [K.atom_counts[j - 1] for j in Ic]
    count = K.n ** c * int(np.prod(m_out, dtype=np.int64))
    if count > budget:
        raise BudgetExceededError(count, budget, f"norm table for I={I}, J={J}")
    Jr = _relabel(J, I)
    out = np.empty((K.n,) * c + tuple(m_out))
    for i_outer in itertools.product(range(K.n), repeat=c):
        for a_outer in itertools.product(*[range(m) for m in m_out]):
            arr = _embedding(K, I, Ic, i_outer, a_outer)
            out[i_outer + a_outer] = partition_norm(arr, Jr, method, config).value
    return out


def _enumeration_size(K: KernelEnsemble, Ic) -> int:
    size = 1
    for j in Ic:
        size *= K.atom_counts[j - 1] ** K.n
    return size


def _max_over_outer(N: np.ndarray, states: np.ndarray, c: int, n: int) -> np.ndarray:
    """``max_{i_outer} N[i_outer, states[:, j, i_outer_j]]`` for a batch of states.

    ``states`` has shape ``(S, c, n)`` holding atom indices.
    """
    best = np.full(states.shape[0], -np.inf)
    for i_outer in itertools.product(range(n), repeat=c):
        atoms = tuple(states[:, j, i] for j, i in enumerate(i_outer))
        np.maximum(best, N[i_outer][atoms], out=best)
    return best


def _outer_probs(K: KernelEnsemble, Ic) -> list[np.ndarray]:
    return [K.probs[j - 1] for j in Ic]


def expected_max_conditional_norm(K: KernelEnsemble, I, J: Partition, p: float,
                                  mode: str = "exact", n_samples: int = 100_000,
                                  seed: int = 0, budget: int = DEFAULT_BUDGET,
                                  method: str = "auto",
                                  config: NormConfig | None = None) -> Estimate:
    """``E max_{i_outer} ||(h_i)_{i_I}||_J^p`` over the variables of ``I^c``.

    ``mode="exact"`` enumerates every joint outcome of the conditioned
    variables; ``mode="montecarlo"`` averages ``n_samples`` draws and reports
    the standard error. When ``I`` covers all axes the value is deterministic.
    """
    p = check_moment_order(p)
    I, Ic = _check_I(K, I)
    _check_J(J, I)
    N = norm_table(K, I, J, method, config, budget)
    c = len(Ic)
    if c == 0:
        return Estimate(float(N) ** p, 0.0, True)
    probs = _outer_probs(K, Ic)
    if mode == "exact":
        size = _enumeration_size(K, Ic)
        if size > budget:
            raise BudgetExceededError(size, budget, f"outer outcomes for I={I}, J={J}")
        parts = []
        for states, w in _enumerate_states(probs, K.n, chunk=1 << 16):
            vals = _max_over_outer(N, states, c, K.n)
            parts.append(float(np.dot(w, vals ** p)))
        return Estimate(math.fsum(parts), 0.0, True)
    if mode != "montecarlo":
        raise ValidationError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(seed)
    states = np.stack([_draw_atoms(rng, pr, n_samples) for pr in probs], axis=1)
    vals = _max_over_outer(N, states, c, K.n) ** p
    se = float(vals.std(ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else float("inf")
    return Estimate(float(vals.mean()), se, False)


def _draw_atoms(rng: np.random.Generator, probs: np.ndarray, size: int) -> np.ndarray:
    """Independent atom indices, shape ``(size, n)``, for a ``(n, m)`` probability table."""
    n, m = probs.shape
    cdf = np.cumsum(probs, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random((size, n))
    out = np.empty((size, n), dtype=np.int64)
    for i in range(n):
        out[:, i] = np.searchsorted(cdf[i], u[:, i], side="right")
    return np.minimum(out, m - 1)


def _enumerate_states(probs: list[np.ndarray], n: int, chunk: int):
    """Yield ``(states, weights)`` covering every joint outcome exactly once.

    ``states`` has shape ``(S, c, n)``; weights are product probabilities.
    """
    c = len(probs)
    sizes = [pr.shape[1] for pr in probs for _ in range(n)]
    flat_probs = [pr[i] for pr in probs for i in range(n)]
    total = int(np.prod(sizes, dtype=np.int64))
    for start in range(0, total, chunk):
        lin = np.arange(start, min(start + chunk, total), dtype=np.int64)
        digits = np.empty((lin.size, len(sizes)), dtype=np.int64)
        rem = lin
        for k in range(len(sizes) - 1, -1, -1):
            digits[:, k] = rem % sizes[k]
            rem = rem // sizes[k]
        w = np.ones(lin.size)
        for k, fp in enumerate(flat_probs):
            w = w * fp[digits[:, k]]
        yield digits.reshape(lin.size, c, n), w


def sup_conditional_norm(K: KernelEnsemble, I, J: Partition, method: str = "auto",
                         config: NormConfig | None = None,
                         budget: int = DEFAULT_BUDGET) -> float:
    """Largest conditional norm over outer indices and positive-probability atoms."""
    I, Ic = _check_I(K, I)
    _check_J(J, I)
    N = norm_table(K, I, J, method, config, budget)
    if not Ic:
        return float(N)
    # atoms of probability zero at a given index never occur
    mask = np.ones(N.shape, dtype=bool)
    c = len(Ic)
    for pos, j in enumerate(Ic):
        shape = [1] * N.ndim
        shape[pos] = K.n
        shape[c + pos] = K.atom_counts[j - 1]
        mask &= (K.probs[j - 1] > 0).reshape(shape)
    return float(np.max(np.where(mask, N, -np.inf)))


def random_ensemble(rng: np.random.Generator, d: int, n: int, m: int,
                    canonical: bool = True, uniform: bool = False,
                    shared_spaces: bool = False) -> KernelEnsemble:
    """Random kernel ensemble with ``m`` atoms per variable (test and calibration fixture)."""
    def space():
        probs = np.full(m, 1.0 / m) if uniform else rng.dirichlet(np.full(m, 2.0))
        probs = probs / probs.sum()
        return DiscreteSpace(list(range(m)), probs)

    if shared_spaces:
        spaces = tuple(tuple([space()] * n) for _ in range(d))
    else:
        spaces = tuple(tuple(space() for _ in range(n)) for _ in range(d))
    table = rng.standard_normal((n,) * d + (m,) * d)
    K = KernelEnsemble(d, n, spaces, table)
    return canonicalize(K) if canonical else K
