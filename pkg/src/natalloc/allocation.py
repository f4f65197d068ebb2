"""Natural allocation of loss, premium, margin and equity by line and layer.

All functions take a distortion-bound :class:`~natalloc.discrete.LevelView`.
Densities are step functions, constant on the layers between consecutive
levels, so every cumulative quantity is an exact finite sum.

Layer ``k`` of a view with levels ``x_0 < ... < x_{n-1}`` is ``[0, x_0)`` for
``k = 0``, ``[x_{k-1}, x_k)`` for ``0 < k < n`` and ``[x_{n-1}, inf)`` on top.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .discrete import (
    LevelView,
    bind_distortion,
    expected_limited,
    rho_total,
    step_integral,
    survival,
    tail_sums,
)
from .errors import DomainError, InvariantViolation, UndefinedReturnError, UndefinedTailError

ZERO_MARGIN_TOL = 1e-15
PREMIUM_PATH_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class AllocationCurves:
    """Per-layer densities of a bound view.

    Arrays with a line axis have shape ``(n_layers, n_lines)``. ``zero_margin``
    flags layers where ``g(S) = S``; their equity is split in proportion to
    ``alpha`` rather than by the equal-return rule.
    """

    lines: tuple
    x: np.ndarray
    end: np.ndarray
    S: np.ndarray
    gS: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    loss: np.ndarray
    premium: np.ndarray
    margin: np.ndarray
    equity: np.ndarray
    total_margin: np.ndarray
    total_equity: np.ndarray
    layer_return: np.ndarray
    zero_margin: np.ndarray

    def widths(self, a: float) -> np.ndarray:
        return np.maximum(np.minimum(self.end, a) - np.minimum(self.x, a), 0.0)

    def cumulative(self, name: str, a: float):
        return step_integral(getattr(self, name), self.widths(a))


def allocation_curves(view: LevelView) -> AllocationCurves:
    view.require_bound()
    S = view.layer_S
    gS = view.layer_gS
    ratio = view.kappa * view.inv_levels[:, None]
    # sums over levels strictly above the start of each layer
    loss = tail_sums(ratio * view.p[:, None])
    premium = tail_sums(ratio * view.q[:, None])
    top = ratio[-1]
    if not np.any(top):
        # the largest loss is 0: no line has exposure, so split evenly
        top = np.full(view.n_lines, 1.0 / view.n_lines)
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha = np.where(S[:, None] > 0, loss / S[:, None], top)
        beta = np.where(gS[:, None] > 0, premium / gS[:, None], top)
    margin = premium - loss
    total_margin = gS - S
    total_equity = 1.0 - gS
    zero = total_margin <= ZERO_MARGIN_TOL
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(zero, 0.0, total_equity / np.where(zero, 1.0, total_margin))
        layer_return = np.where(total_equity > 0, total_margin / total_equity, np.where(total_margin > 0, np.inf, np.nan))
    equity = np.where(zero[:, None], alpha * total_equity[:, None], margin * scale[:, None])
    return AllocationCurves(
        lines=view.lines,
        x=view.layer_start,
        end=view.layer_end,
        S=S,
        gS=gS,
        alpha=alpha,
        beta=beta,
        loss=loss,
        premium=premium,
        margin=margin,
        equity=equity,
        total_margin=total_margin,
        total_equity=total_equity,
        layer_return=layer_return,
        zero_margin=zero,
    )


def _layer_at(view: LevelView, x, need_tail: bool = True):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise DomainError("evaluation point must be non-negative")
    k = view.layer_index(x)
    if need_tail and np.any(view.layer_S[k] <= 0):
        raise UndefinedTailError(f"S(x) = 0 at x = {x}; shares are undefined above the largest loss")
    return k


def _pick(arr, k, i, like):
    out = arr[k, i]
    return float(out) if np.ndim(like) == 0 else out


def alpha(view: LevelView, i, x):
    """E[X_i / X | X > x]."""
    i = view.line_index(i)
    k = _layer_at(view, x)
    ratio = view.kappa[:, i] * view.inv_levels
    tail = tail_sums(ratio * view.p)
    out = tail[k] / view.layer_S[k]
    return float(out) if np.ndim(x) == 0 else out


def beta(view: LevelView, i, x):
    """E_Q[X_i / X | X > x], the risk-adjusted analog of :func:`alpha`."""
    view.require_bound()
    i = view.line_index(i)
    k = _layer_at(view, x)
    ratio = view.kappa[:, i] * view.inv_levels
    tail = tail_sums(ratio * view.q)
    out = tail[k] / view.layer_gS[k]
    return float(out) if np.ndim(x) == 0 else out


def _payment_weights(view: LevelView, a: float) -> np.ndarray:
    return view.kappa * (np.minimum(view.levels, a) * view.inv_levels)[:, None]


def loss_cumulative(view: LevelView, i, a: float) -> float:
    """Expected equal-priority payment to line ``i`` with assets ``a``."""
    i = view.line_index(i)
    if a < 0:
        raise DomainError("asset level must be non-negative")
    return math.fsum(_payment_weights(view, a)[:, i] * view.p)


def premium_cumulative(view: LevelView, i, a: float) -> float:
    """Natural allocation premium of line ``i`` with assets ``a``.

    Computed as the risk-adjusted expectation of the equal-priority payment and
    cross-checked against the integral of the premium density.
    """
    view.require_bound()
    i = view.line_index(i)
    if a < 0:
        raise DomainError("asset level must be non-negative")
    direct = math.fsum(_payment_weights(view, a)[:, i] * view.q)
    curves = allocation_curves(view)
    layered = step_integral(curves.premium[:, i], curves.widths(a))
    if abs(direct - layered) > PREMIUM_PATH_TOL * max(1.0, abs(direct)):
        raise InvariantViolation(f"premium paths disagree for line {view.lines[i]}: {direct} vs {layered}")
    return direct


def margin_density(view: LevelView, i, x):
    """beta_i g(S) - alpha_i S at ``x``; negative values are legitimate."""
    i = view.line_index(i)
    k = _layer_at(view, x)
    return _pick(allocation_curves(view).margin, k, i, x)


def equity_density(view: LevelView, i, x):
    i = view.line_index(i)
    k = _layer_at(view, x, need_tail=False)
    return _pick(allocation_curves(view).equity, k, i, x)


def margin_cumulative(view: LevelView, i, a: float) -> float:
    i = view.line_index(i)
    return premium_cumulative(view, i, a) - loss_cumulative(view, i, a)


def equity_cumulative(view: LevelView, i, a: float) -> float:
    i = view.line_index(i)
    curves = allocation_curves(view)
    return step_integral(curves.equity[:, i], curves.widths(a))


def harmonic_return(view: LevelView, i, a: float) -> float:
    """Average line return as the margin-weighted harmonic mean of layer returns.

    Zero-margin layers, where the layer return is undefined, contribute their
    pro-rata equity directly.
    """
    i = view.line_index(i)
    c = allocation_curves(view)
    w = c.widths(a)
    ok = ~c.zero_margin
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_ret = np.where(ok, c.total_equity / np.where(ok, c.total_margin, 1.0), 0.0)
    weighted_equity = np.where(ok, c.margin[:, i] * inv_ret, c.equity[:, i])
    equity = step_integral(weighted_equity, w)
    margin = step_integral(c.margin[:, i], w)
    return margin / equity


def line_return(view: LevelView, i, a: float) -> float:
    """Average return ``M_i(a) / Q_i(a)`` to line ``i``."""
    i = view.line_index(i)
    equity = equity_cumulative(view, i, a)
    margin = margin_cumulative(view, i, a)
    if equity == 0:
        raise UndefinedReturnError(f"line {view.lines[i]} has no equity at assets {a}")
    ret = margin / equity
    if margin != 0 and math.isfinite(equity):
        h = harmonic_return(view, i, a)
        if abs(h - ret) > 1e-6 * max(1.0, abs(ret)):
            raise InvariantViolation(f"harmonic-mean return {h} differs from {ret}")
    return ret


def intermediated_price(view: LevelView, i, a: float, delta: float) -> float:
    """Premium plus a frictional charge ``delta`` per unit of allocated equity."""
    if delta < 0:
        raise DomainError("frictional rate must be non-negative")
    prem = premium_cumulative(view, i, a)
    if delta == 0:
        return prem
    return prem + delta * equity_cumulative(view, i, a)


@dataclass(frozen=True, eq=False)
class PricingReport:
    """Loss, premium, margin and equity by line at one asset level.

    The TOTAL row is the plain sum of the line rows, so a report written to
    disk and re-summed reproduces it exactly. ``check`` compares it with the
    directly computed portfolio quantities.
    """

    lines: tuple
    assets: float
    loss: tuple
    premium: tuple
    equity: tuple
    delta: float = 0.0
    flags: tuple = ()
    direct_total: dict = field(default_factory=dict)

    @property
    def margin(self) -> tuple:
        return tuple(p - s for p, s in zip(self.premium, self.loss))

    @staticmethod
    def _total(col):
        return sum(col)

    def row(self, name: str) -> dict:
        if name == "TOTAL":
            loss, prem, eq = self._total(self.loss), self._total(self.premium), self._total(self.equity)
            margin = self._total(self.margin)
            charged = self._total(p + self.delta * q for p, q in zip(self.premium, self.equity))
        else:
            j = self.lines.index(name)
            loss, prem, eq = self.loss[j], self.premium[j], self.equity[j]
            margin = prem - loss
            charged = prem + self.delta * eq
        row = _stats_row(name, loss, prem, margin, eq)
        if self.delta:
            row["intermediated_premium"] = charged
        return row

    def rows(self) -> list[dict]:
        return [self.row(n) for n in self.lines] + [self.row("TOTAL")]

    def check(self, rel: float = 1e-9):
        """Raise ``InvariantViolation`` if line sums drift from the direct totals."""
        for key, col in (("loss", self.loss), ("premium", self.premium), ("equity", self.equity)):
            want = self.direct_total.get(key)
            if want is None:
                continue
            got = self._total(col)
            if math.isinf(want) or math.isinf(got):
                if want != got:
                    raise InvariantViolation(f"{key}: lines sum to {got}, total is {want}")
                continue
            if abs(got - want) > rel * max(1.0, abs(want)):
                raise InvariantViolation(f"{key}: lines sum to {got!r}, total is {want!r}")
        if math.isfinite(self.assets):
            funded = self._total(self.premium) + self._total(self.equity)
            if abs(funded - self.assets) > rel * max(1.0, self.assets):
                raise InvariantViolation(f"premium + equity = {funded!r} but assets = {self.assets!r}")
        return self

    def to_csv(self) -> str:
        buf = io.StringIO()
        rows = self.rows()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {"assets": self.assets, "delta": self.delta, "flags": list(self.flags), "rows": self.rows()}
        return json.dumps(doc, indent=2, allow_nan=True)


def _ratio(num, den):
    if den == 0 or math.isinf(den) and math.isinf(num):
        return math.nan
    return num / den


def _stats_row(name, loss, prem, margin, eq):
    return {
        "line": name,
        "loss": loss,
        "premium": prem,
        "margin": margin,
        "equity": eq,
        "loss_ratio": _ratio(loss, prem),
        "return": _ratio(margin, eq),
        "leverage": _ratio(prem, eq),
    }


def price(view: LevelView, a: float = math.inf, delta: float = 0.0) -> PricingReport:
    """Natural allocation report at asset level ``a``."""
    view.require_bound()
    if a < 0:
        raise DomainError("asset level must be non-negative")
    n = view.n_lines
    curves = allocation_curves(view)
    w = curves.widths(a)
    loss = tuple(loss_cumulative(view, i, a) for i in range(n))
    prem = tuple(premium_cumulative(view, i, a) for i in range(n))
    eq = step_integral(curves.equity, w)
    eq = tuple(float(v) for v in np.atleast_1d(eq))
    p_total = rho_total(view, a)
    direct = {
        "loss": expected_limited(view, a),
        "premium": p_total,
        "equity": a - p_total if math.isfinite(a) else math.inf,
    }
    flags = []
    if np.any(curves.zero_margin & (w > 0) & (curves.total_equity > 0)):
        flags.append("zero-margin layers: equity allocated pro rata to alpha")
    if any(m < 0 for m in (p - s for p, s in zip(prem, loss))):
        flags.append("negative line margin")
    report = PricingReport(view.lines, float(a), loss, prem, eq, delta, tuple(flags), direct)
    return report.check()


def standalone_assets(marginal: LevelView, total_survival: float) -> float:
    """Lowest level of ``marginal`` whose survival does not exceed ``total_survival``."""
    target = total_survival * (1 + 1e-12) + 1e-15
    idx = int(np.searchsorted(-marginal.S, -target, side="left"))
    return float(marginal.levels[min(idx, len(marginal.levels) - 1)])


def standalone_price(marginal: LevelView, d, a_i: float) -> PricingReport:
    """Price one line on its own with the same distortion and assets ``a_i``."""
    v = bind_distortion(marginal, d) if marginal.distortion is not d else marginal
    prem = rho_total(v, a_i)
    loss = expected_limited(v, a_i)
    eq = a_i - prem if math.isfinite(a_i) else math.inf
    direct = {"loss": loss, "premium": prem, "equity": eq}
    return PricingReport(v.lines, float(a_i), (loss,), (prem,), (eq,), 0.0, (), direct).check()


def standalone_report(view: LevelView, marginals, a: float) -> PricingReport:
    """Stand-alone pricing of every line, each capitalized to the total's return period."""
    view.require_bound()
    s_total = survival(view, a)
    loss, prem, eq, assets = [], [], [], []
    for m in marginals:
        a_i = standalone_assets(m, s_total) if math.isfinite(a) else math.inf
        r = standalone_price(m, view.distortion, a_i)
        loss.append(r.loss[0])
        prem.append(r.premium[0])
        eq.append(r.equity[0])
        assets.append(a_i)
    names = tuple(m.lines[0] for m in marginals)
    report = PricingReport(names, float(sum(assets)), tuple(loss), tuple(prem), tuple(eq))
    object.__setattr__(report, "flags", tuple(f"{n} assets {ai!r}" for n, ai in zip(names, assets)))
    return report


@dataclass(frozen=True, eq=False)
class LeeDiagram:
    """Quantile curves of loss and premium; ``p_*`` are right endpoints of each step."""

    lines: tuple
    p_loss: np.ndarray
    p_premium: np.ndarray
    x: np.ndarray
    kappa: np.ndarray

    @staticmethod
    def area(p: np.ndarray, values: np.ndarray, a: float = math.inf) -> float:
        """Integral over p of the step curve, capped at ``a``."""
        dp = np.diff(np.concatenate(([0.0], p)))
        return math.fsum(np.minimum(values, a) * dp)

    def margin_area(self, a: float = math.inf, i=None) -> float:
        vals = self.x if i is None else self.kappa[:, i]
        if i is not None and math.isfinite(a):
            vals = vals * np.minimum(self.x, a) / np.where(self.x > 0, self.x, 1.0)
            return self.area(self.p_premium, vals) - self.area(self.p_loss, vals)
        return self.area(self.p_premium, vals, a) - self.area(self.p_loss, vals, a)


def lee_diagram_data(view: LevelView) -> LeeDiagram:
    """Points ``(1 - S(x), x)`` for loss and ``(1 - g(S(x)), x)`` for premium, with per-line kappa."""
    view.require_bound()
    return LeeDiagram(view.lines, 1.0 - view.S, 1.0 - view.gS, view.levels.copy(), view.kappa.copy())


def margin_crossing(view: LevelView, i, upto: float) -> float:
    """Smallest ``x`` above which line ``i`` has non-negative margin density on ``[x, upto)``.

    Returns 0 if the margin density is never negative below ``upto``.
    Scanning from the top avoids spurious sign flips where both margins are
    at rounding level near the bottom of the support.
    """
    i = view.line_index(i)
    c = allocation_curves(view)
    inside = np.flatnonzero((c.x < upto) & (c.end > c.x))
    neg = inside[c.margin[inside, i] < 0]
    if neg.size == 0:
        return 0.0
    return float(c.end[neg[-1]])


def kappa_peak(view: LevelView, i, upto: float) -> tuple[float, float]:
    """Level in ``[0, upto]`` where ``E[X_i | X = x]`` is largest, and that value."""
    i = view.line_index(i)
    sel = np.flatnonzero(view.levels <= upto)
    if sel.size == 0:
        raise DomainError(f"no levels at or below {upto}")
    k = sel[int(np.argmax(view.kappa[sel, i]))]
    return float(view.levels[k]), float(view.kappa[k, i])
