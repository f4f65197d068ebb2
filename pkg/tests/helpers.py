"""Random tables, views and distortions shared by the test modules."""

from __future__ import annotations

import itertools
import math

import numpy as np

from natalloc.discrete import OutcomeTable, bind_distortion, collapse
from natalloc.distortion import Identity, PiecewiseLinear, ProportionalHazard, Wang


def random_probs(rng, n):
    w = rng.uniform(0.05, 1.0, n)
    return w / w.sum()


def random_table(rng, max_lines=4, max_rows=12, integer=True) -> OutcomeTable:
    n_lines = int(rng.integers(1, max_lines + 1))
    n_rows = int(rng.integers(1, max_rows + 1))
    if integer:
        losses = rng.integers(0, 11, size=(n_rows, n_lines)).astype(float)
    else:
        losses = np.round(rng.exponential(5.0, size=(n_rows, n_lines)), 3)
    names = tuple(f"L{i}" for i in range(n_lines))
    return OutcomeTable(names, random_probs(rng, n_rows), losses)


def independent_table(rng, max_lines=3, max_support=4) -> OutcomeTable:
    """Product table of independent discrete marginals."""
    n_lines = int(rng.integers(1, max_lines + 1))
    supports, probs = [], []
    for _ in range(n_lines):
        k = int(rng.integers(1, max_support + 1))
        supports.append(np.sort(rng.choice(np.arange(0, 15), size=k, replace=False)).astype(float))
        probs.append(random_probs(rng, k))
    rows, ps = [], []
    for combo in itertools.product(*(range(len(s)) for s in supports)):
        rows.append([supports[i][j] for i, j in enumerate(combo)])
        ps.append(math.prod(probs[i][j] for i, j in enumerate(combo)))
    ps = np.array(ps)
    return OutcomeTable(tuple(f"L{i}" for i in range(n_lines)), ps / ps.sum(), np.array(rows))


def random_piecewise(rng, max_knots=5) -> PiecewiseLinear:
    k = int(rng.integers(1, max_knots + 1))
    inner = np.sort(rng.uniform(0.02, 0.98, k))
    s = np.concatenate(([0.0], inner, [1.0]))
    slopes = np.sort(rng.uniform(0.05, 4.0, k + 1))[::-1]
    v = np.concatenate(([0.0], np.cumsum(slopes * np.diff(s))))
    v = v / v[-1]
    knots = [(float(a), float(b)) for a, b in zip(s, v)]
    knots[-1] = (1.0, 1.0)
    return PiecewiseLinear(tuple(knots))


def random_distortion(rng):
    kind = int(rng.integers(0, 4))
    if kind == 0:
        return ProportionalHazard(float(rng.uniform(0.2, 1.0)))
    if kind == 1:
        return Wang(float(rng.uniform(0.0, 2.0)))
    if kind == 2:
        return random_piecewise(rng)
    return Identity()


def three_distortions(rng):
    return [ProportionalHazard(float(rng.uniform(0.2, 0.95))), Wang(float(rng.uniform(0.1, 1.5))), random_piecewise(rng)]


def bound_view(t: OutcomeTable, d):
    return bind_distortion(collapse(t), d)


def asset_levels(t: OutcomeTable, rng, n=5):
    top = float(t.totals.max())
    pts = list(rng.uniform(0, top * 1.1 + 1, n - 1)) + [math.inf]
    return pts
