"""Brute-force references for the allocation machinery.

Nothing here goes through :func:`~natalloc.discrete.collapse` or the layer
curves: enumeration works row by row on the raw outcome table, and the Monte
Carlo estimator samples the marginals and applies equal priority directly.
"""

from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .discrete import TIE_QUANTUM, OutcomeTable, collapse, bind_distortion, naive_row_order_allocation, natural_allocation_unlimited
from .errors import DomainError

MAX_ENUMERATION_ROWS = 100_000
PERMUTATION_CAP = math.factorial(10)


@dataclass(frozen=True)
class McConfig:
    n: int = 1_000_000
    seed: int = 20240101
    batch: int = 100_000

    def __post_init__(self):
        if self.n < 1 or self.batch < 1:
            raise DomainError("sample count and batch size must be positive")


@dataclass(frozen=True)
class McResult:
    mean: np.ndarray
    stderr: np.ndarray
    n: int


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("NATALLOC_THREADS", "1")))
    except ValueError:
        return 1


def mc_equal_priority(marginals: Sequence, a: float, cfg: McConfig = McConfig()) -> McResult:
    """Mean equal-priority payment per line from independent samples.

    Standard errors use the pooled per-sample variance. Each batch draws from
    its own child seed, so results do not depend on how batches are scheduled.
    """
    sizes = [cfg.batch] * (cfg.n // cfg.batch)
    if cfg.n % cfg.batch:
        sizes.append(cfg.n % cfg.batch)
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(sizes))

    def run(k):
        rngs = [np.random.default_rng(s) for s in seeds[k].spawn(len(marginals))]
        draws = np.column_stack([m.rvs(sizes[k], r) for m, r in zip(marginals, rngs)])
        total = draws.sum(axis=1, keepdims=True)
        factor = np.where(total > a, a / np.where(total > 0, total, 1.0), 1.0)
        paid = draws * factor
        return paid.sum(axis=0), (paid * paid).sum(axis=0)

    with ThreadPoolExecutor(max_workers=_threads()) as ex:
        parts = list(ex.map(run, range(len(sizes))))
    n = cfg.n
    mean = sum(p[0] for p in parts) / n
    if n > 1:
        var = np.maximum(sum(p[1] for p in parts) / n - mean**2, 0.0) * n / (n - 1)
        stderr = np.sqrt(var / n)
    else:
        stderr = np.full(len(marginals), np.nan)
    return McResult(mean, stderr, cfg.n)


def enumerate_allocation(t: OutcomeTable, d, assets: Sequence[float] = (math.inf,), quantum: float = TIE_QUANTUM) -> np.ndarray:
    """E_Q[X_i(a)] by summation over the rows of ``t``; shape ``(len(assets), n_lines)``.

    Each row receives risk-adjusted mass ``p_r / P(X = x_r) * (g(P(X >= x_r)) - g(P(X > x_r)))``,
    i.e. the distorted mass of its tie class shared in proportion to ``p``.
    """
    n = len(t.probs)
    if n > MAX_ENUMERATION_ROWS:
        raise DomainError(f"enumeration limited to {MAX_ENUMERATION_ROWS} rows, table has {n}")
    totals = t.totals
    keys = np.round(totals / quantum).astype(np.int64)
    order = np.argsort(keys, kind="stable")
    sk = keys[order]
    cum = np.concatenate(([0.0], np.cumsum(t.probs[order].astype(np.longdouble)))).astype(float)
    lo = np.searchsorted(sk, keys, side="left")
    hi = np.searchsorted(sk, keys, side="right")
    top = cum[-1]
    s_ge = np.clip(top - cum[lo], 0.0, 1.0)
    s_gt = np.clip(top - cum[hi], 0.0, 1.0)
    s_gt[hi == n] = 0.0
    s_ge[lo == 0] = 1.0
    p_tie = cum[hi] - cum[lo]
    q_row = t.probs / p_tie * (np.asarray(d.g(s_ge)) - np.asarray(d.g(s_gt)))
    out = np.empty((len(assets), t.n_lines))
    for k, a in enumerate(assets):
        factor = np.where(totals <= a, 1.0, a / np.where(totals > 0, totals, 1.0))
        for i in range(t.n_lines):
            out[k, i] = math.fsum(q_row * t.losses[:, i] * factor)
    return out


@dataclass(frozen=True)
class OrderingReport:
    """Range of row-order allocations across permutations of tied rows."""

    n_permutations: int
    naive_min: np.ndarray
    naive_max: np.ndarray
    collapsed: np.ndarray

    @property
    def empty(self) -> bool:
        return self.n_permutations == 0


def ordering_sensitivity(t: OutcomeTable, d, seed: int = 0, cap: int = PERMUTATION_CAP, quantum: float = TIE_QUANTUM) -> OrderingReport:
    """Permute rows within tie classes and record how the naive allocation moves.

    All permutations are enumerated up to ``cap``; beyond that a uniform
    sample of ``cap`` permutations is drawn. The collapsed allocation must be
    the same for every permutation.
    """
    keys = np.round(t.totals / quantum).astype(np.int64)
    base = np.argsort(keys, kind="stable")
    groups = [list(base[keys[base] == k]) for k in np.unique(keys)]
    tied = [g for g in groups if len(g) > 1]
    empty = np.zeros(0)
    if not tied:
        return OrderingReport(0, empty, empty, empty)
    collapsed = natural_allocation_unlimited(bind_distortion(collapse(t, quantum), d))
    n_total = math.prod(math.factorial(len(g)) for g in groups)

    def orders():
        if n_total <= cap:
            for combo in itertools.product(*(itertools.permutations(g) for g in groups)):
                yield [r for part in combo for r in part]
        else:
            rng = np.random.default_rng(seed)
            for _ in range(cap):
                yield [r for g in groups for r in rng.permutation(g)]

    lo = hi = None
    count = 0
    for order in orders():
        perm = t.permuted(order)
        naive = naive_row_order_allocation(perm, d, quantum)
        lo = naive if lo is None else np.minimum(lo, naive)
        hi = naive if hi is None else np.maximum(hi, naive)
        again = natural_allocation_unlimited(bind_distortion(collapse(perm, quantum), d))
        if not np.array_equal(again, collapsed):
            raise AssertionError(f"collapsed allocation changed under row permutation: {again} vs {collapsed}")
        count += 1
    return OrderingReport(count, lo, hi, collapsed)
