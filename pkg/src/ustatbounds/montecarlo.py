"""Samplers, exact laws and constant fitting for bound verification.

All samplers split the ``N`` draws into fixed-size chunks. Chunk ``k`` uses
the generator seeded by ``SeedSequence(seed, spawn_key=(k,))``, and chunk
summaries are merged with exactly-rounded sums, so results are identical
for any number of worker threads.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, stats

from ._validation import check_moment_order, check_positive_int
from .bounds import (
    iid_sup_norms,
    moment_bound,
    operator_norm_rhs,
    sup_norms,
    tail_from_norms,
)
from .exceptions import BudgetExceededError, ShapeError, ValidationError
from .kernels import (
    DEFAULT_BUDGET,
    KernelEnsemble,
    _draw_atoms,
    _enumerate_states,
    is_canonical,
)
from .partitions import Partition
from .tensor import NormConfig, as_array, partition_norm

CHUNK = 1 << 16
TAIL_LEVEL = 0.99
MOMENT_SIGMAS = 4.0
RESOLVABLE_COUNT = 20


# -- batched contractions -----------------------------------------------------

def contract_batch(T: np.ndarray, vectors: Sequence[np.ndarray]) -> np.ndarray:
    """``sum_i T[i] v1[s, i1] ... vd[s, id]`` for every row ``s``."""
    S = vectors[0].shape[0]
    R = vectors[0] @ T.reshape(T.shape[0], -1)
    for j in range(1, T.ndim):
        R = np.einsum("sk,skr->sr", vectors[j], R.reshape(S, T.shape[j], -1))
    return R.reshape(S)


def _combined_table(K: KernelEnsemble) -> np.ndarray:
    """Table with axis ``j`` indexed by the pair ``(i_j, a_j)``, index-major."""
    d = K.d
    perm = [x for j in range(d) for x in (j, d + j)]
    sizes = [K.n * m for m in K.atom_counts]
    return np.ascontiguousarray(K.table.transpose(perm)).reshape(sizes)


def _one_hot(atoms: np.ndarray, m: int) -> np.ndarray:
    S, n = atoms.shape
    out = np.zeros((S, n * m))
    out[np.arange(S)[:, None], np.arange(n) * m + atoms] = 1.0
    return out


def evaluate_ustatistic(K: KernelEnsemble, atoms: Sequence[np.ndarray],
                        table: np.ndarray | None = None) -> np.ndarray:
    """``Z`` for given atom indices; ``atoms[j]`` has shape ``(S, n)``."""
    W = _combined_table(K) if table is None else table
    return contract_batch(W, [_one_hot(a, m) for a, m in zip(atoms, K.atom_counts)])


def draw_ustatistic(K: KernelEnsemble, rng: np.random.Generator, size: int,
                    return_atoms: bool = False, table: np.ndarray | None = None):
    """Draw ``size`` realizations of the decoupled U-statistic."""
    atoms = [_draw_atoms(rng, K.probs[j], size) for j in range(K.d)]
    Z = evaluate_ustatistic(K, atoms, table)
    return (Z, atoms) if return_atoms else Z


# -- run summaries -------------------------------------------------------------

@dataclass
class SampleRun:
    """Streamed summary of ``N`` draws of a statistic ``Z``.

    ``moments[p]`` is ``(mean |Z|^p, standard error)``. ``tail_ge[k]`` and
    ``tail_gt[k]`` count draws with ``|Z| >= t`` and ``|Z| > t`` for
    ``t = t_grid[k]``.
    """

    seed: int
    N: int
    mean: float
    mean_se: float
    moments: dict
    t_grid: list
    tail_ge: list
    tail_gt: list
    max_abs: float
    samples: np.ndarray | None = field(default=None, repr=False)

    def moment(self, p: float) -> tuple[float, float]:
        return self.moments[float(p)]

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "N": self.N,
            "mean": self.mean,
            "meanSE": self.mean_se,
            "moments": [{"p": p, "value": v, "se": se}
                        for p, (v, se) in sorted(self.moments.items())],
            "tGrid": list(self.t_grid),
            "tailGE": list(self.tail_ge),
            "tailGT": list(self.tail_gt),
            "maxAbs": self.max_abs,
        }


def _chunk_summary(Z: np.ndarray, p_list, t_grid):
    A = np.abs(Z)
    out = {"n": Z.size, "s1": float(np.sum(Z)), "s2": float(np.sum(Z * Z)),
           "max": float(A.max()) if Z.size else 0.0}
    for p in p_list:
        Ap = A ** p
        out[("m", p)] = float(np.sum(Ap))
        out[("v", p)] = float(np.sum(Ap * Ap))
    out["ge"] = [int(np.count_nonzero(A >= t)) for t in t_grid]
    out["gt"] = [int(np.count_nonzero(A > t)) for t in t_grid]
    return out


def _mean_se(total: float, total_sq: float, N: int) -> tuple[float, float]:
    mean = total / N
    if N < 2:
        return mean, math.inf
    var = max(total_sq - total * total / N, 0.0) / (N - 1)
    return mean, math.sqrt(var / N)


def run_sampler(draw: Callable[[np.random.Generator, int], np.ndarray], seed: int,
                N: int, p_list=(2.0,), t_grid=(), threads: int = 1,
                keep_samples: bool = False, chunk: int = CHUNK) -> SampleRun:
    """Run ``draw(rng, size)`` over seeded chunks and merge the summaries."""
    N = check_positive_int(N, "N")
    p_list = [float(p) for p in p_list]
    t_grid = [float(t) for t in t_grid]
    starts = list(range(0, N, chunk))

    def work(k):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,)))
        Z = np.asarray(draw(rng, min(chunk, N - starts[k])), dtype=float)
        return _chunk_summary(Z, p_list, t_grid), (Z if keep_samples else None)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, range(len(starts))))
    else:
        parts = [work(k) for k in range(len(starts))]
    sums = [s for s, _ in parts]
    mean, mean_se = _mean_se(math.fsum(s["s1"] for s in sums),
                             math.fsum(s["s2"] for s in sums), N)
    moments = {
        p: _mean_se(math.fsum(s[("m", p)] for s in sums),
                    math.fsum(s[("v", p)] for s in sums), N)
        for p in p_list
    }
    ge = [sum(s["ge"][k] for s in sums) for k in range(len(t_grid))]
    gt = [sum(s["gt"][k] for s in sums) for k in range(len(t_grid))]
    samples = np.concatenate([z for _, z in parts]) if keep_samples else None
    return SampleRun(seed, N, mean, mean_se, moments, t_grid, ge, gt,
                     max(s["max"] for s in sums), samples)


def sample_ustatistic(K: KernelEnsemble, seed: int, N: int, p_list=(2.0, 4.0),
                      t_grid=(), threads: int = 1,
                      keep_samples: bool = False) -> SampleRun:
    """``N`` independent draws of ``Z = sum_i h_i(X_{i_1}^(1), ..., X_{i_d}^(d))``."""
    W = _combined_table(K)
    return run_sampler(lambda rng, s: draw_ustatistic(K, rng, s, table=W), seed, N,
                       p_list, t_grid, threads, keep_samples)


def sample_gaussian_chaos(A, seed: int, N: int, p_list=(2.0, 4.0), t_grid=(),
                          threads: int = 1, keep_samples: bool = False) -> SampleRun:
    """Draws of ``sum_i a_i g^(1)_{i_1} ... g^(d)_{i_d}`` with independent Gaussians."""
    T = as_array(A)

    def draw(rng, size):
        return contract_batch(T, [rng.standard_normal((size, s)) for s in T.shape])

    return run_sampler(draw, seed, N, p_list, t_grid, threads, keep_samples)


# -- exact laws ----------------------------------------------------------------

@dataclass
class ExactLaw:
    values: np.ndarray
    probs: np.ndarray

    @property
    def support(self) -> list[tuple[float, float]]:
        return list(zip(self.values.tolist(), self.probs.tolist()))

    def moment(self, p: float) -> float:
        return math.fsum(np.abs(self.values) ** p * self.probs)

    def tail(self, t: float, strict: bool = False) -> float:
        """``P(|Z| >= t)``, or ``P(|Z| > t)`` with ``strict``."""
        a = np.abs(self.values)
        tol = 1e-12 * max(1.0, abs(t))
        mask = a > t + tol if strict else a >= t - tol
        return math.fsum(self.probs[mask])

    def quantile_abs(self, level: float) -> float:
        """Smallest ``q`` with ``P(|Z| > q) <= level``."""
        a = np.abs(self.values)
        order = np.argsort(a)
        a, pr = a[order], self.probs[order]
        for k in range(a.size):
            if math.fsum(pr[k + 1:][a[k + 1:] > a[k]]) <= level:
                return float(a[k])
        return float(a[-1])


def _group(values: np.ndarray, weights: np.ndarray) -> ExactLaw:
    scale = max(1.0, float(np.max(np.abs(values)))) if values.size else 1.0
    keys = np.round(values / scale, 12)
    uniq, inv = np.unique(keys, return_inverse=True)
    probs = np.zeros(uniq.size)
    np.add.at(probs, inv, weights)
    reps = np.zeros(uniq.size)
    reps[inv] = values
    keep = probs > 0
    return ExactLaw(reps[keep], probs[keep])


def exact_distribution(K: KernelEnsemble, budget: int = DEFAULT_BUDGET) -> ExactLaw:
    """Law of ``Z`` by enumerating every joint outcome of all ``n*d`` variables."""
    size = 1
    for m in K.atom_counts:
        size *= m ** K.n
    if size > budget:
        raise BudgetExceededError(size, budget, "exact law of Z")
    W = _combined_table(K)
    vals, wts = [], []
    for states, w in _enumerate_states(list(K.probs), K.n, chunk=CHUNK):
        atoms = [states[:, j, :] for j in range(K.d)]
        vals.append(evaluate_ustatistic(K, atoms, W))
        wts.append(w)
    return _group(np.concatenate(vals), np.concatenate(wts))


def law_from_samples(samples: np.ndarray) -> ExactLaw:
    """Empirical law, usable wherever an :class:`ExactLaw` is accepted."""
    samples = np.asarray(samples, dtype=float)
    return _group(samples, np.full(samples.size, 1.0 / samples.size))


# -- random operator norms -----------------------------------------------------

@dataclass
class NormCheck:
    empirical: float
    stderr: float
    rhs: float


def _singleton_norms(M: np.ndarray, config: NormConfig | None) -> np.ndarray:
    S = M.shape[0]
    if M.ndim == 2:
        return np.linalg.norm(M, axis=1)
    if M.ndim == 3:
        return np.linalg.norm(M, ord=2, axis=(1, 2))
    J = Partition.singletons(range(1, M.ndim))
    return np.array([partition_norm(M[s], J, "alternating", config).value
                     for s in range(S)])


def gaussian_matrix_norm_check(A, p: float, seed: int, N: int,
                               config: NormConfig | None = None) -> NormCheck:
    """Monte Carlo ``E||sum_k A[..., k] g_k||`` against its partition-norm bound.

    The inner norm is the injective norm over the first ``d - 1`` axes (the
    Euclidean norm for ``d = 2``, the spectral norm for ``d = 3``).
    """
    p = check_moment_order(p)
    T = as_array(A)
    if T.ndim < 2:
        raise ShapeError("need an array with at least two axes")
    rhs = operator_norm_rhs(T, p, config=config)
    if not np.any(T):
        return NormCheck(0.0, 0.0, 0.0)
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((N, T.shape[-1]))
    M = np.tensordot(g, T, axes=([1], [T.ndim - 1]))
    vals = _singleton_norms(M, config)
    se = float(vals.std(ddof=1) / math.sqrt(N)) if N > 1 else math.inf
    return NormCheck(float(vals.mean()), se, rhs)


# -- constant fitting -----------------------------------------------------------

@dataclass
class FitResult:
    """Empirical stand-in for an unspecified universal constant.

    ``constant`` is the largest calibration ratio ``lhs / rhs``.
    """

    constant: float
    calibration: list
    max_ratio: float
    infeasible: bool = False
    held_out_ratios: list = field(default_factory=list)
    violations: list = field(default_factory=list)

    def validate(self, instances) -> list[float]:
        """Record held-out ratios verbatim and flag those above ``constant``."""
        ratios = [_ratio(l, r) for l, r in instances]
        self.held_out_ratios.extend(ratios)
        start = len(self.held_out_ratios) - len(ratios)
        self.violations.extend(start + k for k, q in enumerate(ratios)
                               if q > self.constant)
        return ratios

    @property
    def passed(self) -> bool:
        return not self.infeasible and not self.violations

    def to_json(self) -> dict:
        return {
            "constant": self.constant,
            "maxRatio": self.max_ratio,
            "infeasible": self.infeasible,
            "calibrationRatios": [_ratio(l, r) for l, r in self.calibration],
            "heldOutRatios": list(self.held_out_ratios),
            "violations": list(self.violations),
        }


def _ratio(lhs: float, rhs: float) -> float:
    if rhs > 0:
        return lhs / rhs
    return math.inf if lhs > 0 else 0.0


def fit_constant(instances) -> FitResult:
    """Fit ``constant = max lhs / rhs`` over ``(lhs, rhs_at_constant_one)`` pairs."""
    instances = [(float(l), float(r)) for l, r in instances]
    if not instances:
        raise ValidationError("no calibration instances")
    ratios = [_ratio(l, r) for l, r in instances]
    worst = max(ratios)
    return FitResult(worst, instances, worst, infeasible=math.isinf(worst))


def ascend_ratio(ratio: Callable[[np.ndarray], float], x0, seed: int, steps: int = 150,
                 step_size: float = 0.3) -> tuple[np.ndarray, float]:
    """Climb ``ratio`` from ``x0`` with a seeded (1+1) evolution strategy.

    A universal constant is a supremum over instances, and the largest ratio
    among a few random instances underestimates it; climbing from each one
    gives calibration points much closer to the worst case. The step size
    grows after a success and shrinks after a failure.
    """
    rng = np.random.default_rng(seed)
    x = np.array(x0, dtype=float)
    fx = ratio(x)
    sigma = float(step_size)
    for _ in range(steps):
        y = x + sigma * rng.standard_normal(x.shape)
        fy = ratio(y)
        if fy > fx:
            x, fx = y, fy
            sigma *= 1.5
        else:
            sigma *= 0.85
    return x, fx


def tail_constant_required(prob: float, exponent: float) -> float:
    """Smallest ``K`` with ``K exp(-exponent / K) >= prob``."""
    if prob <= 0:
        return 0.0
    if exponent <= 0:
        return prob
    f = lambda logk: logk - exponent * math.exp(-logk) - math.log(prob)
    lo, hi = -50.0, 50.0
    return math.exp(optimize.brentq(f, lo, hi, xtol=1e-14, rtol=1e-14))


# -- verification ---------------------------------------------------------------

def binomial_ci(k: int, N: int, level: float = TAIL_LEVEL) -> tuple[float, float]:
    """Two-sided Clopper-Pearson interval for ``k`` successes out of ``N``."""
    a = 1 - level
    lo = 0.0 if k == 0 else float(stats.beta.ppf(a / 2, k, N - k + 1))
    hi = 1.0 if k == N else float(stats.beta.ppf(1 - a / 2, k + 1, N - k))
    return lo, hi


def verify_moment_bound(K: KernelEnsemble, p_list, constant: float = 1.0,
                        mode: str = "exact", seed: int = 0, N: int = 1_000_000,
                        threads: int = 1, budget: int = DEFAULT_BUDGET,
                        config: NormConfig | None = None) -> dict:
    """Compare ``E|Z|^p`` with the moment bound for each ``p``.

    ``mode="exact"`` uses the enumerated law of ``Z``; ``"montecarlo"`` uses
    ``N`` draws and passes unless the estimate exceeds the bound by more
    than four standard errors.
    """
    if not is_canonical(K):
        raise ValidationError("moment verification needs a canonical kernel")
    p_list = [check_moment_order(p) for p in p_list]
    if mode == "exact":
        law = exact_distribution(K, budget)
        lhs = {p: (law.moment(p), 0.0) for p in p_list}
    else:
        run = sample_ustatistic(K, seed, N, p_list, threads=threads)
        lhs = {p: run.moment(p) for p in p_list}
    rows = []
    for p in p_list:
        rhs = moment_bound(K, p, constant, budget=budget, config=config).total
        value, se = lhs[p]
        ok = value - MOMENT_SIGMAS * se <= rhs
        rows.append({"p": p, "lhs": value, "lhsSE": se, "rhs": rhs,
                     "ratio": _ratio(value, rhs), "pass": bool(ok)})
    return {"mode": mode, "constant": constant, "rows": rows,
            "pass": all(r["pass"] for r in rows)}


def tail_rows(counts: Sequence[int], N: int, t_grid, bounds: Sequence[float],
              level: float = TAIL_LEVEL, label: str = "t") -> list[dict]:
    """One verification row per level: empirical frequency, CI, bound, status."""
    rows = []
    for t, k, b in zip(t_grid, counts, bounds):
        lo, hi = binomial_ci(k, N, level)
        if b >= 1:
            status = "vacuous"
        elif b < RESOLVABLE_COUNT / N:
            status = "unresolvable"
        else:
            status = "pass" if hi <= b else "fail"
        rows.append({label: float(t), "count": int(k), "empirical": k / N,
                     "ciLow": lo, "ciHigh": hi, "bound": float(b), "status": status})
    return rows


def verify_tail_bound(K: KernelEnsemble, t_grid, constant: float = 1.0, seed: int = 0,
                      N: int = 1_000_000, n: int | None = None, threads: int = 1,
                      config: NormConfig | None = None) -> dict:
    """Empirical ``P(|Z| >= t)`` against the tail bound on a grid of ``t``.

    With ``n`` given, ``K`` is a shared base kernel: the bound uses the
    i.i.d. scaling and sampling uses the ``n``-fold expanded ensemble.
    """
    t_grid = [float(t) for t in t_grid]
    if n is None:
        norms = sup_norms(K, config=config)
        target, kind = K, "tail"
    else:
        norms = iid_sup_norms(K, n, config=config)
        target = K.iid(n)
        kind = "iid-tail"
    reports = [tail_from_norms(norms, K.d, t, constant, kind) for t in t_grid]
    run = sample_ustatistic(target, seed, N, p_list=(2.0,), t_grid=t_grid,
                            threads=threads)
    rows = tail_rows(run.tail_ge, N, t_grid, [r.bound for r in reports])
    for row, rep in zip(rows, reports):
        dom = rep.dominant_term
        row["exponent"] = rep.exponent if math.isfinite(rep.exponent) else None
        row["dominantI"] = None if dom is None else "{" + ",".join(map(str, dom.I)) + "}"
        row["dominantJ"] = None if dom is None else str(dom.J)
    return {"constant": constant, "N": N, "seed": seed, "n": target.n, "rows": rows,
            "pass": all(r["status"] != "fail" for r in rows)}


def fit_tail_constant(cases) -> FitResult:
    """Fit the tail-bound constant from ``(law, norms, d, t_grid)`` cases.

    For each ``t`` the required constant is the smallest ``K`` whose bound
    covers ``P(|Z| >= t)`` under the law; the fit is their maximum.
    """
    instances = []
    for law, norms, d, t_grid in cases:
        for t in t_grid:
            rep = tail_from_norms(norms, d, t)
            prob = law.tail(t)
            if rep.exponent is None or math.isinf(rep.exponent):
                instances.append((prob, 0.0))
            else:
                instances.append((tail_constant_required(prob, rep.exponent), 1.0))
    return fit_constant(instances)
