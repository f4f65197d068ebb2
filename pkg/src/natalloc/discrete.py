"""Exact backend: finite joint outcome tables and the collapsed level view.

Every risk-adjusted computation runs on a ``LevelView``: one row per distinct
total loss, carrying the objective mass, the survival function and the
conditional mean loss of each line given the total. Ties in the total must be
merged before applying a distortion; otherwise the allocation depends on the
arbitrary order of tied rows.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import cached_property
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .distortion import Identity
from .errors import DomainError, ParseError

if TYPE_CHECKING:
    from .distortion import Distortion

TIE_QUANTUM = 1e-9


def tail_sums(x: np.ndarray) -> np.ndarray:
    """``out[k] = sum(x[k:])`` for k = 0..n, accumulated in extended precision."""
    ext = np.asarray(x, dtype=np.longdouble)
    rev = np.cumsum(ext[::-1], axis=0)[::-1]
    zero = np.zeros((1,) + ext.shape[1:], dtype=np.longdouble)
    return np.concatenate((rev, zero)).astype(float)


@dataclass(frozen=True, eq=False)
class OutcomeTable:
    """Finite joint distribution: one row per outcome, one loss column per line."""

    lines: tuple
    probs: np.ndarray
    losses: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float).reshape(-1)
        losses = np.asarray(self.losses, dtype=float)
        if losses.ndim == 1:
            losses = losses.reshape(-1, 1)
        object.__setattr__(self, "lines", tuple(str(n) for n in self.lines))
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "losses", losses)
        if len(probs) == 0:
            raise DomainError("outcome table has no rows")
        if losses.shape != (len(probs), len(self.lines)):
            raise DomainError(f"losses shape {losses.shape} does not match {len(probs)} rows x {len(self.lines)} lines")
        if np.any(probs <= 0):
            raise DomainError("outcome probabilities must be positive")
        total = math.fsum(probs)
        if abs(total - 1.0) > 1e-12:
            raise DomainError(f"outcome probabilities sum to {total!r}, not 1")
        if np.any(losses < 0) or not np.all(np.isfinite(losses)):
            raise DomainError("losses must be finite and non-negative")

    @classmethod
    def from_rows(cls, lines: Sequence[str], rows: Sequence[tuple]) -> OutcomeTable:
        """``rows`` is a sequence of ``(prob, (loss_1, ..., loss_m))``."""
        probs = [float(p) for p, _ in rows]
        losses = [list(map(float, ls)) for _, ls in rows]
        return cls(tuple(lines), np.array(probs), np.array(losses, dtype=float).reshape(len(rows), len(lines)))

    @property
    def totals(self) -> np.ndarray:
        return self.losses.sum(axis=1)

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    def marginal(self, i: int) -> OutcomeTable:
        return OutcomeTable((self.lines[i],), self.probs, self.losses[:, [i]])

    def permuted(self, order: Sequence[int]) -> OutcomeTable:
        order = np.asarray(order)
        return OutcomeTable(self.lines, self.probs[order], self.losses[order])


def _parse_number(text: str, where: str) -> float:
    text = text.strip()
    try:
        return float(Fraction(text))
    except (ValueError, ZeroDivisionError):
        raise ParseError(f"{where}: cannot parse number {text!r}") from None


def read_table_csv(source) -> OutcomeTable:
    """Read ``prob,<line1>,<line2>,...`` CSV; probabilities may be fractions ``a/b``.

    ``source`` is a path or the CSV text itself.
    """
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and Path(source).is_file()):
        text = Path(source).read_text()
    else:
        text = str(source)
    reader = csv.reader(io.StringIO(text))
    numbered = [(reader.line_num, r) for r in reader if any(c.strip() for c in r)]
    rows = [r for _, r in numbered]
    if not rows:
        raise ParseError("line 1: empty outcome table")
    header = [c.strip() for c in rows[0]]
    if len(header) < 2 or header[0].lower() != "prob":
        raise ParseError("line 1, column 1: header must be 'prob,<line1>,...'")
    lines = header[1:]
    if len(rows) == 1:
        raise ParseError("line 2: outcome table has no rows")
    probs, losses = [], []
    for lineno, row in numbered[1:]:
        if len(row) != len(header):
            raise ParseError(f"line {lineno}: expected {len(header)} columns, found {len(row)}")
        vals = [_parse_number(c, f"line {lineno}, column {j + 1}") for j, c in enumerate(row)]
        probs.append(vals[0])
        losses.append(vals[1:])
    try:
        return OutcomeTable(tuple(lines), np.array(probs), np.array(losses))
    except DomainError as e:
        raise ParseError(str(e)) from None


@dataclass(frozen=True, eq=False)
class LevelView:
    """Distinct ascending total-loss levels with per-line conditional means.

    ``kappa[j, i]`` is E[X_i | X = levels[j]]. ``S[j]`` is P(X > levels[j]).
    ``gS`` and ``q`` are filled by :func:`bind_distortion`.
    """

    lines: tuple
    levels: np.ndarray
    p: np.ndarray
    kappa: np.ndarray
    S: np.ndarray = None
    distortion: Distortion | None = None
    gS: np.ndarray | None = None
    q: np.ndarray | None = None
    bucket: float | None = field(default=None, compare=False)

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=float)
        p = np.asarray(self.p, dtype=float)
        kappa = np.asarray(self.kappa, dtype=float).reshape(len(levels), len(self.lines))
        object.__setattr__(self, "lines", tuple(self.lines))
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "kappa", kappa)
        if len(levels) == 0:
            raise DomainError("level view has no levels")
        if np.any(np.diff(levels) <= 0):
            raise DomainError("levels must be strictly increasing")
        if self.S is None:
            S = np.clip(tail_sums(p)[1:], 0.0, 1.0)
            object.__setattr__(self, "S", S)

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    @property
    def bound(self) -> bool:
        return self.distortion is not None

    @property
    def mean(self) -> float:
        return math.fsum(self.levels * self.p)

    @property
    def line_means(self) -> np.ndarray:
        return self.kappa.T @ self.p

    def line_index(self, i) -> int:
        if isinstance(i, str):
            try:
                return self.lines.index(i)
            except ValueError:
                raise DomainError(f"unknown line {i!r}; have {self.lines}") from None
        if not -self.n_lines <= int(i) < self.n_lines:
            raise DomainError(f"line index {i} out of range")
        return int(i) % self.n_lines

    def require_bound(self):
        if not self.bound:
            raise DomainError("view has no distortion bound; call bind_distortion first")

    # Layers: k = 0 is [0, x_0), k >= 1 is [x_{k-1}, x_k), the last runs to infinity.
    @cached_property
    def layer_start(self) -> np.ndarray:
        return np.concatenate(([0.0], self.levels))

    @cached_property
    def layer_end(self) -> np.ndarray:
        return np.concatenate((self.levels, [np.inf]))

    @cached_property
    def layer_S(self) -> np.ndarray:
        return np.concatenate(([1.0], self.S))

    @cached_property
    def layer_gS(self) -> np.ndarray:
        self.require_bound()
        return np.concatenate(([1.0], self.gS))

    def layer_widths(self, a: float) -> np.ndarray:
        """Width of each layer lying below asset level ``a``."""
        if a < 0:
            raise DomainError("asset level must be non-negative")
        return np.maximum(np.minimum(self.layer_end, a) - np.minimum(self.layer_start, a), 0.0)

    def layer_index(self, x) -> np.ndarray:
        return np.searchsorted(self.levels, x, side="right")

    @cached_property
    def inv_levels(self) -> np.ndarray:
        # payment ratio X_i / X is taken as 0 at X = 0
        out = np.zeros_like(self.levels)
        pos = self.levels > 0
        out[pos] = 1.0 / self.levels[pos]
        return out


def step_integral(density: np.ndarray, widths: np.ndarray) -> float | np.ndarray:
    """Sum of ``density * width`` over layers, treating ``0 * inf`` as 0."""
    fin = np.isfinite(widths)
    out = np.tensordot(widths[fin], density[fin], axes=(0, 0))
    inf_part = density[~fin]
    if inf_part.size and np.any(inf_part != 0):
        sign = np.sign(inf_part.sum(axis=0))
        with np.errstate(invalid="ignore"):
            out = out + np.where(sign != 0, np.inf * sign, 0.0)
    return float(out) if np.ndim(out) == 0 else out


def collapse(t: OutcomeTable, quantum: float = TIE_QUANTUM) -> LevelView:
    """Merge rows with equal totals; kappa is the probability-weighted mean within each level."""
    totals = t.totals
    keys = np.round(totals / quantum).astype(np.int64)
    # canonical order makes the result independent of the input row order
    sort_keys = [t.probs] + [t.losses[:, i] for i in range(t.n_lines - 1, -1, -1)] + [keys]
    order = np.lexsort(sort_keys)
    keys_s = keys[order]
    probs_s = t.probs[order].astype(np.longdouble)
    losses_s = t.losses[order].astype(np.longdouble)
    starts = np.flatnonzero(np.concatenate(([True], keys_s[1:] != keys_s[:-1])))
    p = np.add.reduceat(probs_s, starts)
    weighted = np.add.reduceat(losses_s * probs_s[:, None], starts, axis=0)
    kappa = (weighted / p[:, None]).astype(float)
    levels = totals[order][starts]
    return LevelView(t.lines, levels, p.astype(float), kappa)


def marginal_view(t: OutcomeTable, i: int) -> LevelView:
    return collapse(t.marginal(i))


def bind_distortion(v: LevelView, d: Distortion) -> LevelView:
    """Attach ``g(S)`` and the risk-adjusted level masses ``q_j = g(S_{j-1}) - g(S_j)``."""
    gS = np.asarray(d.g(v.S), dtype=float)
    g_prev = np.concatenate(([1.0], gS[:-1]))
    q = g_prev - gS
    if isinstance(d, Identity):
        # differences of S only reproduce p up to rounding
        gS = v.S.copy()
        q = v.p.copy()
    return replace(v, distortion=d, gS=gS, q=q)


def survival(v: LevelView, x: float) -> float:
    """Right-continuous P(X > x)."""
    if x < 0:
        return 1.0
    return float(v.layer_S[v.layer_index(x)])


def expected_limited(v: LevelView, a: float) -> float:
    """E[X ^ a]."""
    if a < 0:
        raise DomainError("asset level must be non-negative")
    return math.fsum(np.minimum(v.levels, a) * v.p)


def rho_total(v: LevelView, a: float = math.inf) -> float:
    """Price of X ^ a: the step integral of g(S) from 0 to a."""
    v.require_bound()
    return step_integral(v.layer_gS, v.layer_widths(a))


def equal_priority_payments(losses, a: float):
    """Pro-rata payments ``X_i * min(X, a) / X``; works row-wise on 2-d input."""
    x = np.asarray(losses, dtype=float)
    if np.any(x < 0):
        raise DomainError("losses must be non-negative")
    if a < 0:
        raise DomainError("asset level must be non-negative")
    total = x.sum(axis=-1, keepdims=True)
    safe = np.where(total > 0, total, 1.0)
    factor = np.where(total > a, a / safe, 1.0)
    return x * factor


def natural_allocation_unlimited(v: LevelView) -> np.ndarray:
    """E_Q[X_i] for unlimited cover: sum of kappa_i weighted by q."""
    v.require_bound()
    return np.array([math.fsum(v.kappa[:, i] * v.q) for i in range(v.n_lines)])


def naive_row_order_allocation(t: OutcomeTable, d: Distortion, quantum: float = TIE_QUANTUM) -> np.ndarray:
    """Allocation from per-row distorted masses without merging tied totals.

    Rows are stably sorted by total, so tied rows keep their given order. The
    result depends on that order whenever ties exist; it is kept only to
    demonstrate the ambiguity.
    """
    keys = np.round(t.totals / quantum).astype(np.int64)
    order = np.argsort(keys, kind="stable")
    probs = t.probs[order]
    S = np.clip(tail_sums(probs)[1:], 0.0, 1.0)
    gS = np.asarray(d.g(S), dtype=float)
    z_mass = np.concatenate(([1.0], gS[:-1])) - gS
    losses = t.losses[order]
    return np.array([math.fsum(losses[:, i] * z_mass) for i in range(t.n_lines)])
