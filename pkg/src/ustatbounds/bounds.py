"""Moment and tail bounds for canonical decoupled U-statistics.

Every bound is a sum or minimum over pairs ``(I, J)`` where ``I`` ranges
over subsets of the axes ``1..d`` and ``J`` over partitions of ``I``. Each
pair carries a power of ``p`` that depends on ``#I^c`` (the number of
conditioned axes) and ``deg(J)`` (the number of blocks):

* moment bound: ``p^(p*(#I^c + deg/2)) * E max ||(h_i)_{i_I}||_J^p``
* tail bound:   ``K exp(-(1/K) min (t / sup||(h_i)_{i_I}||_J)^(2/(deg + 2#I^c)))``

The universal constant ``K`` is never built in; callers supply it (see
:mod:`ustatbounds.montecarlo` for fitting one empirically).
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

from ._validation import check_moment_order, check_nonnegative, check_positive
from .kernels import (
    DEFAULT_BUDGET,
    KernelEnsemble,
    expected_max_conditional_norm,
    is_canonical,
    sup_conditional_norm,
)
from .partitions import Partition, axis_subsets, enumerate_partitions
from .tensor import NormConfig, as_array, partition_norm

TIE_RTOL = 1e-12


@dataclass
class BoundTerm:
    I: tuple[int, ...]
    J: Partition
    p_exponent: float
    norm_value: float
    term_value: float | None
    stderr: float = 0.0

    @property
    def key(self) -> tuple:
        return (len(self.I), self.J.blocks)

    def to_json(self) -> dict:
        return {
            "I": list(self.I),
            "J": str(self.J),
            "pExponent": self.p_exponent,
            "normValue": self.norm_value,
            "termValue": self.term_value,
            "stderr": self.stderr,
        }


@dataclass
class BoundReport:
    """Per-term decomposition of one bound evaluation.

    ``kind`` is ``"moment"``, ``"tail"``, ``"iid-tail"``, ``"chaos"`` or
    ``"poisson"``. Moment-type reports fill ``total``; tail-type reports
    fill ``exponent`` and ``bound``.
    """

    kind: str
    constant: float
    terms: list[BoundTerm]
    p: float | None = None
    t: float | None = None
    total: float | None = None
    exponent: float | None = None
    bound: float | None = None
    dominant: int | None = None
    extra: dict = field(default_factory=dict)

    @property
    def dominant_term(self) -> BoundTerm | None:
        return None if self.dominant is None else self.terms[self.dominant]

    def to_json(self) -> dict:
        dom = self.dominant_term
        out = {
            "kind": self.kind,
            "constant": self.constant,
            "p": self.p,
            "t": self.t,
            "total": self.total,
            "exponent": _finite_or_none(self.exponent),
            "bound": self.bound,
            "dominant": self.dominant,
            "dominantI": None if dom is None else list(dom.I),
            "dominantJ": None if dom is None else str(dom.J),
            "terms": [t.to_json() for t in self.terms],
        }
        out.update(self.extra)
        return out

    def csv_rows(self) -> list[dict]:
        return [
            {
                "kind": self.kind,
                "p": self.p,
                "t": self.t,
                "I": "{" + ",".join(map(str, term.I)) + "}",
                "J": str(term.J),
                "pExponent": term.p_exponent,
                "normValue": term.norm_value,
                "termValue": term.term_value,
                "dominant": k == self.dominant,
            }
            for k, term in enumerate(self.terms)
        ]


def _finite_or_none(x):
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return None
    return x


def write_csv(rows: Sequence[dict], path_or_buffer=None) -> str:
    """Write dict rows as CSV; returns the text when no path is given."""
    buf = io.StringIO()
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if v is None else v) for k, v in row.items()})
    text = buf.getvalue()
    if path_or_buffer is not None:
        with open(path_or_buffer, "w", newline="") as fh:
            fh.write(text)
    return text


def pick(terms: Sequence[BoundTerm], values: Sequence[float], largest: bool) -> int | None:
    """Index of the extreme value; near-ties go to the smallest (|I|, J) key."""
    idx = [k for k, v in enumerate(values) if v is not None and not math.isnan(v)]
    if not idx:
        return None
    best = max(values[k] for k in idx) if largest else min(values[k] for k in idx)
    tol = TIE_RTOL * abs(best) if math.isfinite(best) else 0.0
    close = [k for k in idx if abs(values[k] - best) <= tol or values[k] == best]
    return min(close, key=lambda k: terms[k].key)


def index_pairs(d: int):
    """Every ``(I, J)`` pair in reporting order."""
    for I in axis_subsets(d):
        for J in enumerate_partitions(I):
            yield I, J


# -- moment bound -------------------------------------------------------------

def moment_bound(K: KernelEnsemble, p: float, constant: float = 1.0,
                 mode: str = "exact", n_samples: int = 100_000, seed: int = 0,
                 budget: int = DEFAULT_BUDGET, method: str = "auto",
                 config: NormConfig | None = None) -> BoundReport:
    """Right-hand side of the p-th moment bound, term by term.

    ``total = constant * sum_{I, J} p^(p*(#I^c + deg(J)/2)) * E max ||.||_J^p``.
    The ``I = {}`` term uses ``|h_i|`` as its norm.
    """
    p = check_moment_order(p)
    constant = check_positive(constant, "constant")
    if not is_canonical(K):
        warnings.warn("moment bound evaluated for a non-canonical kernel", stacklevel=2)
    terms = []
    for k, (I, J) in enumerate(index_pairs(K.d)):
        exponent = (K.d - len(I)) + J.deg / 2
        est = expected_max_conditional_norm(
            K, I, J, p, mode=mode, n_samples=n_samples, seed=seed + k,
            budget=budget, method=method, config=config)
        factor = p ** (p * exponent)
        terms.append(BoundTerm(I, J, exponent, est.value ** (1 / p),
                               factor * est.value, factor * est.stderr))
    total = constant * math.fsum(t.term_value for t in terms)
    dom = pick(terms, [t.term_value for t in terms], largest=True)
    return BoundReport("moment", constant, terms, p=p, total=total, dominant=dom)


# -- tail bounds --------------------------------------------------------------

def sup_norms(K: KernelEnsemble, method: str = "auto", config: NormConfig | None = None,
              budget: int = DEFAULT_BUDGET) -> list[tuple[tuple, Partition, float]]:
    """``(I, J, sup ||(h_i)_{i_I}||_J)`` for every pair."""
    return [(I, J, sup_conditional_norm(K, I, J, method, config, budget))
            for I, J in index_pairs(K.d)]


def tail_from_norms(norms, d: int, t: float, constant: float = 1.0,
                    kind: str = "tail") -> BoundReport:
    """Tail bound at level ``t`` from precomputed sup norms.

    Terms with norm 0 impose no constraint and are left out of the minimum.
    """
    t = check_nonnegative(t, "t")
    constant = check_positive(constant, "constant")
    terms, values = [], []
    for I, J, norm in norms:
        power = J.deg + 2 * (d - len(I))
        if norm > 0:
            value = (t / norm) ** (2.0 / power)
        else:
            value = None
        terms.append(BoundTerm(tuple(I), J, (d - len(I)) + J.deg / 2, norm, value))
        values.append(value)
    if t == 0:
        dom = pick(terms, values, largest=False)
        return BoundReport(kind, constant, terms, t=t, exponent=0.0,
                           bound=min(1.0, constant), dominant=dom)
    dom = pick(terms, values, largest=False)
    if dom is None:
        return BoundReport(kind, constant, terms, t=t, exponent=math.inf,
                           bound=0.0, dominant=None)
    exponent = values[dom]
    bound = min(1.0, constant * math.exp(-exponent / constant))
    return BoundReport(kind, constant, terms, t=t, exponent=exponent,
                       bound=bound, dominant=dom)


def tail_bound(K: KernelEnsemble, t: float, constant: float = 1.0,
               method: str = "auto", config: NormConfig | None = None,
               budget: int = DEFAULT_BUDGET) -> BoundReport:
    """Bound on ``P(|Z| >= t)`` for bounded kernels."""
    return tail_from_norms(sup_norms(K, method, config, budget), K.d, t, constant)


def iid_sup_norms(kernel: KernelEnsemble, n: int, method: str = "auto",
                  config: NormConfig | None = None):
    """Sup norms of the ``n``-fold shared ensemble from its base kernel.

    Each ``I`` term scales as ``n^(#I/2)`` times the base kernel's norm, so
    the cost does not depend on ``n``.
    """
    base = kernel if kernel.n == 1 else kernel.base_kernel()
    return [(I, J, n ** (len(I) / 2) * v) for I, J, v in sup_norms(base, method, config)]


def iid_tail_bound(kernel: KernelEnsemble, n: int, t: float, constant: float = 1.0,
                   method: str = "auto", config: NormConfig | None = None) -> BoundReport:
    """Tail bound for ``n`` i.i.d. copies of one shared kernel."""
    report = tail_from_norms(iid_sup_norms(kernel, n, method, config), kernel.d, t,
                             constant, kind="iid-tail")
    report.extra["n"] = int(n)
    return report


def dominant_regime(K: KernelEnsemble, t_grid: Sequence[float], method: str = "auto",
                    config: NormConfig | None = None, norms=None):
    """``(t, I, J)`` attaining the tail exponent's minimum at each ``t``."""
    t_grid = [float(t) for t in t_grid]
    if any(t <= 0 for t in t_grid) or any(b < a for a, b in zip(t_grid, t_grid[1:])):
        raise ValueError("t grid must be positive and ascending")
    norms = norms if norms is not None else sup_norms(K, method, config)
    out = []
    for t in t_grid:
        rep = tail_from_norms(norms, K.d, t)
        dom = rep.dominant_term
        out.append((t, None if dom is None else dom.I, None if dom is None else dom.J))
    return out


# -- Gaussian chaos -----------------------------------------------------------

@dataclass
class ChaosEstimate:
    lower: float
    upper: float
    terms: list[BoundTerm]


def gaussian_chaos_estimate(A, p: float, method: str = "auto",
                            config: NormConfig | None = None) -> ChaosEstimate:
    """``sum_J p^(deg(J)/2) ||A||_J`` over all partitions of the axes of ``A``.

    The two-sided moment/tail estimates for decoupled Gaussian chaoses
    differ only in their constants, so ``lower == upper`` here.
    """
    p = check_moment_order(p)
    arr = as_array(A)
    axes = range(1, arr.ndim + 1)
    terms = []
    for J in enumerate_partitions(axes):
        norm = partition_norm(arr, J, method, config).value
        terms.append(BoundTerm(tuple(axes), J, J.deg / 2, norm, p ** (J.deg / 2) * norm))
    value = math.fsum(t.term_value for t in terms)
    return ChaosEstimate(value, value, terms)


def operator_norm_rhs(A, p: float, method: str = "auto", config: NormConfig | None = None) -> float:
    """``sum_J p^((1 + deg(J) - d)/2) ||A||_J`` for the expected random-operator norm."""
    arr = as_array(A)
    d = arr.ndim
    return math.fsum(
        p ** ((1 + J.deg - d) / 2) * partition_norm(arr, J, method, config).value
        for J in enumerate_partitions(range(1, d + 1))
    )
