"""Multiple integrals of step kernels against compensated Poisson processes.

A step kernel on ``[0, T]^d`` is constant on each product of grid cells.
Its integral against ``d`` independent compensated processes is the
multilinear form ``Z = sum_i a_i prod_j dN~^(j)_{i_j}`` in the per-cell
compensated increments, so every norm reduces to a partition norm of the
coefficient array with axis ``l`` weighted by ``sqrt(dV^(l))`` per cell.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import product
from typing import Sequence

import numpy as np

from ._validation import check_finite_array, check_moment_order, check_nonnegative, check_positive
from .bounds import BoundReport, BoundTerm, index_pairs, pick
from .exceptions import ShapeError, UnsupportedMethodError, ValidationError
from .montecarlo import (
    FitResult,
    SampleRun,
    contract_batch,
    fit_constant,
    law_from_samples,
    run_sampler,
    tail_rows,
)
from .partitions import Partition
from .tensor import NormConfig, partition_norm

P_RANGE = (2.0, 64.0)
THRESHOLD_TOL = 1e-9


@dataclass(frozen=True)
class StepKernel:
    """Coefficients ``a`` on the cells of per-axis grids ``0 = t_0 < ... < t_k = T``."""

    grids: tuple
    coefficients: np.ndarray

    def __post_init__(self):
        grids = tuple(np.asarray(g, dtype=float) for g in self.grids)
        for j, g in enumerate(grids, start=1):
            if g.ndim != 1 or g.size < 2:
                raise ShapeError(f"grid for axis {j} needs at least two points")
            if not np.all(np.isfinite(g)) or np.any(np.diff(g) <= 0):
                raise ValidationError(f"grid for axis {j} must be strictly increasing")
            g.setflags(write=False)
        a = check_finite_array(self.coefficients, "coefficients")
        cells = tuple(g.size - 1 for g in grids)
        if a.shape != cells:
            raise ShapeError(f"coefficients have shape {a.shape}, grids give {cells}")
        a = a.copy()
        a.setflags(write=False)
        object.__setattr__(self, "grids", grids)
        object.__setattr__(self, "coefficients", a)

    @property
    def d(self) -> int:
        return len(self.grids)

    @property
    def cells(self) -> tuple[int, ...]:
        return self.coefficients.shape

    @classmethod
    def constant(cls, value: float, grids) -> "StepKernel":
        grids = [np.asarray(g, dtype=float) for g in grids]
        return cls(grids, np.full(tuple(g.size - 1 for g in grids), float(value)))

    def refine(self, axis: int, point: float) -> "StepKernel":
        """Same function on a grid with ``point`` inserted on ``axis`` (1-based)."""
        j = axis - 1
        g = self.grids[j]
        if not g[0] < point < g[-1] or np.any(g == point):
            raise ValidationError("refinement point must be a new interior point")
        k = int(np.searchsorted(g, point)) - 1
        grids = list(self.grids)
        grids[j] = np.insert(g, k + 1, point)
        a = np.insert(self.coefficients, k, np.take(self.coefficients, k, axis=j), axis=j)
        return StepKernel(grids, a)

    def to_json(self) -> dict:
        return {"d": self.d, "grids": [g.tolist() for g in self.grids],
                "coefficients": self.coefficients.ravel().tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "StepKernel":
        try:
            grids = [np.asarray(g, dtype=float) for g in obj["grids"]]
            coeffs = np.asarray(obj["coefficients"], dtype=float)
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed step kernel: {exc}") from exc
        if "d" in obj and int(obj["d"]) != len(grids):
            raise ShapeError("d does not match the number of grids")
        cells = tuple(g.size - 1 for g in grids)
        if coeffs.size != math.prod(cells):
            raise ShapeError(f"{coeffs.size} coefficients for cell counts {cells}")
        return cls(grids, coeffs.reshape(cells))

    @classmethod
    def load(cls, path) -> "StepKernel":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True)
class ProcessSpec:
    """Per-axis mean increments ``dLambda`` and variance increments ``dV`` per cell.

    Only the Poisson kind can be sampled; there ``dV == dLambda``.
    """

    lambda_increments: tuple
    variance_increments: tuple
    kind: str = "poisson"

    def __post_init__(self):
        lam = tuple(np.asarray(x, dtype=float) for x in self.lambda_increments)
        var = tuple(np.asarray(x, dtype=float) for x in self.variance_increments)
        if len(lam) != len(var):
            raise ShapeError("need one mean and one variance sequence per axis")
        for j, (l, v) in enumerate(zip(lam, var), start=1):
            if l.shape != v.shape or l.ndim != 1:
                raise ShapeError(f"axis {j}: increments must be matching 1-d sequences")
            if not (np.all(np.isfinite(l)) and np.all(np.isfinite(v))):
                raise ValidationError(f"axis {j}: increments must be finite")
            if np.any(l < 0) or np.any(v < 0):
                raise ValidationError(f"axis {j}: increments must be nonnegative")
            if self.kind == "poisson" and not np.allclose(l, v, rtol=1e-12, atol=0):
                raise ValidationError(f"axis {j}: a Poisson process has dV = dLambda")
        object.__setattr__(self, "lambda_increments", lam)
        object.__setattr__(self, "variance_increments", var)

    @property
    def d(self) -> int:
        return len(self.lambda_increments)

    @classmethod
    def homogeneous(cls, grids, rate: float = 1.0) -> "ProcessSpec":
        """Poisson processes of constant ``rate`` on the cells of ``grids``."""
        rate = check_nonnegative(rate, "rate")
        incs = [rate * np.diff(np.asarray(g, dtype=float)) for g in grids]
        return cls(incs, incs, "poisson")

    @classmethod
    def for_kernel(cls, h: StepKernel, rate: float = 1.0) -> "ProcessSpec":
        return cls.homogeneous(h.grids, rate)

    def check_kernel(self, h: StepKernel) -> None:
        if self.d != h.d:
            raise ShapeError(f"process has {self.d} axes, kernel has {h.d}")
        for j, (v, k) in enumerate(zip(self.variance_increments, h.cells), start=1):
            if v.size != k:
                raise ShapeError(f"axis {j}: {v.size} increments for {k} cells")

    def to_json(self) -> dict:
        return {"kind": self.kind, "perAxis": {
            "lambdaIncrements": [x.tolist() for x in self.lambda_increments],
            "varianceIncrements": [x.tolist() for x in self.variance_increments]}}

    @classmethod
    def from_json(cls, obj: dict) -> "ProcessSpec":
        try:
            per = obj["perAxis"]
            return cls(per["lambdaIncrements"], per["varianceIncrements"],
                       obj.get("kind", "poisson"))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed process spec: {exc}") from exc


# -- norms ---------------------------------------------------------------------

def weighted_coefficients(h: StepKernel, spec: ProcessSpec, I: Sequence[int]) -> np.ndarray:
    """Coefficients with each axis ``l`` in ``I`` scaled by ``sqrt(dV^(l))``."""
    spec.check_kernel(h)
    W = np.array(h.coefficients)
    for l in I:
        shape = [1] * h.d
        shape[l - 1] = -1
        W = W * np.sqrt(spec.variance_increments[l - 1]).reshape(shape)
    return W


def stepkernel_norm(h: StepKernel, spec: ProcessSpec, I, J: Partition,
                    method: str = "auto", config: NormConfig | None = None):
    """``||h||_J`` on the axes ``I``, as a function of the remaining cells.

    Returns a float when ``I`` is every axis, otherwise an array indexed by
    the cells of the complementary axes in ascending axis order.
    For ``I = {}`` this is ``|a|`` cell by cell.
    """
    I = tuple(sorted(int(a) for a in I))
    if J.ground != I:
        raise ValidationError(f"partition {J} does not cover axes {set(I) or '{}'}")
    if any(a < 1 or a > h.d for a in I):
        raise ValidationError(f"axes {I} outside 1..{h.d}")
    Ic = tuple(a for a in range(1, h.d + 1) if a not in I)
    W = weighted_coefficients(h, spec, I)
    if not I:
        return np.abs(W)
    pos = {a: k + 1 for k, a in enumerate(I)}
    Jr = Partition([pos[a] for a in b] for b in J.blocks)
    if not Ic:
        return partition_norm(W, Jr, method, config).value
    moved = np.moveaxis(W, [a - 1 for a in Ic], list(range(len(Ic))))
    outer = moved.shape[:len(Ic)]
    out = np.empty(outer)
    for idx in product(*(range(k) for k in outer)):
        out[idx] = partition_norm(moved[idx], Jr, method, config).value
    return out


def sup_stepkernel_norm(h: StepKernel, spec: ProcessSpec, I, J: Partition,
                        method: str = "auto", config: NormConfig | None = None) -> float:
    """Largest value of :func:`stepkernel_norm` over the complementary cells."""
    return float(np.max(stepkernel_norm(h, spec, I, J, method, config)))


# -- threshold bound -------------------------------------------------------------

def _sup_table(h, spec, method, config):
    return [(I, J, sup_stepkernel_norm(h, spec, I, J, method, config))
            for I, J in index_pairs(h.d)]


def _threshold(norms, d: int, p: float, constant: float) -> float:
    return constant * math.fsum(p ** ((d - len(I)) + J.deg / 2) * v for I, J, v in norms)


def _report(norms, d, p, constant, t=None, bound=None) -> BoundReport:
    terms = [BoundTerm(tuple(I), J, (d - len(I)) + J.deg / 2, v,
                       p ** ((d - len(I)) + J.deg / 2) * v) for I, J, v in norms]
    total = constant * math.fsum(t_.term_value for t_ in terms)
    dom = pick(terms, [t_.term_value for t_ in terms], largest=True)
    return BoundReport("poisson", constant, terms, p=p, t=t, total=total,
                       bound=math.exp(-p) if bound is None else bound, dominant=dom)


def poisson_threshold_bound(h: StepKernel, spec: ProcessSpec, p: float | None = None,
                            t: float | None = None, constant: float = 1.0,
                            method: str = "auto", config: NormConfig | None = None,
                            norms=None) -> BoundReport:
    """Level exceeded by ``|Z|`` with probability at most ``e^-p``.

    ``threshold(p) = constant * sum_{I, J} p^(#I^c + deg(J)/2) sup ||h||_J``
    is reported as ``total``. Given ``t`` instead of ``p``, the largest
    ``p`` in ``[2, 64]`` with ``threshold(p) <= t`` is found by bisection
    and ``bound = e^-p`` (1 when even ``p = 2`` is too large).
    """
    if (p is None) == (t is None):
        raise ValidationError("give exactly one of p and t")
    constant = check_positive(constant, "constant")
    norms = _sup_table(h, spec, method, config) if norms is None else norms
    d = h.d
    if p is not None:
        return _report(norms, d, check_moment_order(p), constant)
    t = check_nonnegative(t, "t")
    lo, hi = P_RANGE
    if all(v == 0 for _, _, v in norms):
        return _report(norms, d, hi, constant, t=t, bound=0.0 if t > 0 else 1.0)
    if _threshold(norms, d, lo, constant) > t:
        return _report(norms, d, lo, constant, t=t, bound=1.0)
    if _threshold(norms, d, hi, constant) <= t:
        return _report(norms, d, hi, constant, t=t)
    while True:
        mid = 0.5 * (lo + hi)
        if _threshold(norms, d, mid, constant) <= t:
            lo = mid
        else:
            hi = mid
        if _threshold(norms, d, hi, constant) - _threshold(norms, d, lo, constant) <= THRESHOLD_TOL \
                or hi - lo <= 1e-15 * hi:
            break
    return _report(norms, d, lo, constant, t=t)


# -- sampling and verification ---------------------------------------------------

def sample_multiple_integral(h: StepKernel, spec: ProcessSpec, seed: int, N: int,
                             p_list=(2.0, 4.0), t_grid=(), threads: int = 1,
                             keep_samples: bool = False) -> SampleRun:
    """Draws of ``Z = sum_i a_i prod_j (dN^(j)_{i_j} - dLambda^(j)_{i_j})``."""
    spec.check_kernel(h)
    if spec.kind != "poisson":
        raise UnsupportedMethodError(f"cannot sample processes of kind {spec.kind!r}")
    a = np.asarray(h.coefficients)
    lam = spec.lambda_increments

    def draw(rng, size):
        incs = [rng.poisson(l, size=(size, l.size)) - l for l in lam]
        return contract_batch(a, incs)

    return run_sampler(draw, seed, N, p_list, t_grid, threads, keep_samples)


def isometry_value(h: StepKernel, spec: ProcessSpec) -> float:
    """``E Z^2 = sum_i a_i^2 prod_j dV^(j)_{i_j}``."""
    W = weighted_coefficients(h, spec, range(1, h.d + 1))
    return float(np.sum(W * W))


def verify_poisson_bound(h: StepKernel, spec: ProcessSpec, constant: float = 1.0,
                         seed: int = 0, N: int = 1_000_000, p_grid=(2.0, 3.0, 4.0),
                         threads: int = 1, method: str = "auto",
                         config: NormConfig | None = None) -> dict:
    """Empirical ``P(|Z| > threshold(p))`` against ``e^-p`` for each ``p``.

    Levels where ``e^-p`` is below ``20 / N`` are reported as unresolvable.
    """
    norms = _sup_table(h, spec, method, config)
    p_grid = [check_moment_order(p) for p in p_grid]
    thresholds = [_threshold(norms, h.d, p, constant) for p in p_grid]
    run = sample_multiple_integral(h, spec, seed, N, (2.0,), thresholds, threads)
    rows = tail_rows(run.tail_gt, N, p_grid, [math.exp(-p) for p in p_grid], label="p")
    for row, thr in zip(rows, thresholds):
        row["threshold"] = thr
    return {"constant": constant, "N": N, "seed": seed, "rows": rows,
            "pass": all(r["status"] != "fail" for r in rows)}


def fit_poisson_constant(h: StepKernel, spec: ProcessSpec, seed: int, N: int,
                         p_grid=(2.0, 3.0, 4.0), method: str = "auto",
                         config: NormConfig | None = None) -> FitResult:
    """Fit the threshold constant on an independent calibration sample.

    For each ``p`` the required constant is the smallest ``c`` with
    ``P(|Z| > c * threshold_1(p)) <= e^-p`` under the sampled law.
    """
    norms = _sup_table(h, spec, method, config)
    run = sample_multiple_integral(h, spec, seed, N, (2.0,), keep_samples=True)
    law = law_from_samples(run.samples)
    instances = []
    for p in p_grid:
        p = check_moment_order(p)
        # pad by a relative 1e-12 so c * threshold never rounds below an atom
        need = law.quantile_abs(math.exp(-p)) * (1 + 1e-12)
        instances.append((need, _threshold(norms, h.d, p, 1.0)))
    return fit_constant(instances)
