"""Packaged worked examples and their expected statistics.

Each suite loads a fixture shipped with the package, recomputes the quoted
statistics and returns a list of :class:`Check` rows. Published figures are
rounded, so a check may carry ``decimals``: the computed value is rounded to
that many places before it is compared with the expected value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources

import numpy as np

from . import allocation as al
from .discrete import (
    OutcomeTable,
    bind_distortion,
    collapse,
    expected_limited,
    naive_row_order_allocation,
    natural_allocation_unlimited,
    read_table_csv,
    rho_total,
    survival,
)
from .distortion import ProportionalHazard, Wang, calibrate
from .grid import GridPortfolio, load_portfolio_spec, pmf_to_view

SIG_DIGITS = 7


@dataclass(frozen=True)
class Check:
    """One reproduced statistic.

    ``mode`` is ``"abs"`` or ``"rel"`` for a tolerance around ``expected``,
    or ``"range"`` with ``expected = (lo, hi)``. Rows with ``gating=False``
    are printed for context and do not affect the verdict.
    """

    name: str
    value: float
    expected: float | tuple
    tol: float = 0.0
    mode: str = "abs"
    decimals: int | None = None
    gating: bool = True

    @property
    def error(self) -> float:
        if self.mode == "range":
            lo, hi = self.expected
            return max(lo - self.value, self.value - hi, 0.0)
        v = round(self.value, self.decimals) if self.decimals is not None else self.value
        diff = abs(v - self.expected)
        return diff / abs(self.expected) if self.mode == "rel" else diff

    @property
    def passed(self) -> bool:
        if not math.isfinite(self.value):
            return False
        if self.mode == "range":
            return self.error == 0.0
        return self.error <= self.tol * (1 + 1e-12)

    def describe_target(self) -> str:
        if self.mode == "range":
            lo, hi = self.expected
            return f"[{lo:.{SIG_DIGITS}g}, {hi:.{SIG_DIGITS}g}]"
        unit = "%" if self.mode == "rel" else ""
        tol = self.tol * 100 if self.mode == "rel" else self.tol
        return f"{self.expected:.{SIG_DIGITS}g} +/- {tol:g}{unit}"


def fixture_path(name: str):
    return resources.files("natalloc") / "data" / name


def load_eg1() -> OutcomeTable:
    return read_table_csv(fixture_path("eg1.csv").read_text())


def load_eg2(h: float | None = None) -> GridPortfolio:
    return load_portfolio_spec(fixture_path("eg2.json").read_text(), h=h)


def load_priority(h: float | None = None) -> GridPortfolio:
    return load_portfolio_spec(fixture_path("priority.json").read_text(), h=h)


EG1_DISTORTION = ProportionalHazard(0.5)
EG2_DISTORTION = Wang(0.755)
EG2_ASSETS = 12.5
PRIORITY_POOLED_ASSETS = 3272.0
PRIORITY_QUANTILE = 2272.0


def eg1_checks() -> list[Check]:
    t = load_eg1()
    d = EG1_DISTORTION
    v = bind_distortion(collapse(t), d)
    nat = natural_allocation_unlimited(v)
    naive = naive_row_order_allocation(t, d)
    # swap the two rows with total 10 so the (10, 0) outcome sorts first
    tens = [r for r, x in enumerate(t.totals) if x == 10]
    order = list(range(len(t.probs)))
    order[tens[0]], order[tens[1]] = order[tens[1]], order[tens[0]]
    swapped = naive_row_order_allocation(t.permuted(order), d)
    j = int(np.flatnonzero(v.levels == 10)[0])
    tol = 1e-6
    return [
        Check("E[X1]", float(v.line_means[0]), 4.75, tol),
        Check("E[X2]", float(v.line_means[1]), 22.75, tol),
        Check("rho(X)", rho_total(v), 51.38869, tol, decimals=5),
        Check("natural X1", float(nat[0]), 6.2048488, tol, decimals=7),
        Check("natural X2", float(nat[1]), 45.183836, tol, decimals=6),
        Check("naive X1", float(naive[0]), 6.208543, tol, decimals=6),
        Check("naive X2", float(naive[1]), 45.18014, tol, decimals=5),
        Check("swapped X1", float(swapped[0]), 6.200857, tol, decimals=6),
        Check("swapped X2", float(swapped[1]), 45.18783, tol, decimals=5),
        Check("q at x=10", float(v.q[j]), 0.1480898, tol, decimals=7),
        Check("kappa1 at x=10", float(v.kappa[j, 0]), float(Fraction(29, 3)), tol),
        Check("kappa2 at x=10", float(v.kappa[j, 1]), float(Fraction(1, 3)), tol),
    ]


def grid_quantile(view, p: float) -> float:
    """Smallest level with F(x) >= p."""
    F = 1.0 - view.S
    k = int(np.searchsorted(F, p - 1e-12, side="left"))
    return float(view.levels[min(k, len(view.levels) - 1)])


def priority_checks() -> list[Check]:
    port = load_priority()
    ln = port.marginals[1]
    ln_view = pmf_to_view(port.pmfs[1], port.names[1])
    total = port.view()
    a = PRIORITY_POOLED_ASSETS
    certain = al.loss_cumulative(total, 0, a)
    pooled_ln = al.loss_cumulative(total, 1, a)
    stand_ln = expected_limited(ln_view, PRIORITY_QUANTILE)
    return [
        Check("lognormal 0.9-quantile (grid)", grid_quantile(ln_view, 0.9), 2272.0, 1.0),
        Check("lognormal 0.9-quantile (closed form)", float(ln.ppf(0.9)), 2272.0, 1.0, gating=False),
        Check("E[X1 ^ 2272]", stand_ln, 732.3, 1.0),
        Check("pooled recovery, certain line", certain, 967.5, 1.0),
        Check("pooled recovery, lognormal line", pooled_ln, 764.8, 1.0),
        Check("transfer from certain line", port.marginals[0].value - certain, 32.5, 1.0),
        Check("transfer to lognormal line", pooled_ln - stand_ln, 32.5, 1.0),
    ]


def eg2_checks(h: float | None = None, with_calibration: bool = True) -> list[Check]:
    port = load_eg2(h)
    view = port.view()
    d = EG2_DISTORTION
    a = EG2_ASSETS
    v = bind_distortion(view, d)
    rep = al.price(v, a)
    thin, thick, tot = rep.row(v.lines[0]), rep.row(v.lines[1]), rep.row("TOTAL")
    sa = al.standalone_report(v, port.marginal_views(), a)
    sa_thin, sa_thick, sa_tot = sa.row(sa.lines[0]), sa.row(sa.lines[1]), sa.row("TOTAL")
    cv = math.sqrt(float(v.levels**2 @ v.p) - v.mean**2) / v.mean
    peak_x, peak_k = al.kappa_peak(v, 0, a)
    out = [
        Check("total mean", v.mean, 2.0, 0.01, "rel"),
        Check("total CV", cv, 0.637, 0.002),
        Check("S(12.5)", survival(v, a), (1 / 620, 1 / 510), mode="range"),
        Check("premium thin", thin["premium"], 1.057, 0.02, "rel"),
        Check("premium thick", thick["premium"], 1.889, 0.02, "rel"),
        Check("loss ratio thin", thin["loss_ratio"], 0.946, 0.02),
        Check("loss ratio thick", thick["loss_ratio"], 0.524, 0.02),
        Check("loss ratio total", tot["loss_ratio"], 0.676, 0.02),
        Check("total margin", tot["margin"], 0.728, 0.02, "rel"),
        Check("thick margin", thick["margin"], 0.698, 0.02, "rel"),
        Check("return thin", thin["return"], 0.053, 0.01),
        Check("return thick", thick["return"], 0.106, 0.01),
        Check("return total", tot["return"], 0.100, 0.01),
        Check("leverage total", tot["leverage"], 0.308, 0.05, "rel"),
        Check("leverage thin", thin["leverage"], 0.986, 0.05, "rel"),
        Check("leverage thick", thick["leverage"], 0.223, 0.05, "rel"),
        Check("stand-alone loss ratio thin", sa_thin["loss_ratio"], 0.835, 0.02),
        Check("stand-alone loss ratio thick", sa_thick["loss_ratio"], 0.518, 0.02),
        Check("stand-alone loss ratio total", sa_tot["loss_ratio"], 0.640, 0.02),
        Check("stand-alone return thin", sa_thin["return"], 0.287, 0.02),
        Check("stand-alone return thick", sa_thick["return"], 0.096, 0.02),
        Check("stand-alone return total", sa_tot["return"], 0.109, 0.02),
        Check("thin margin density zero crossing", al.margin_crossing(v, 0, a), 1.38, 0.1),
        Check("kappa1 peak location", peak_x, 2.15, 0.1),
        Check("kappa1 peak value", peak_k, 1.14, 0.02),
    ]
    if with_calibration:
        lam = calibrate("wang", view, a, 0.10).lam
        out.append(Check("calibrated Wang lambda", lam, 0.755, 0.01))
    return out


SUITES = {"eg1": eg1_checks, "eg2": eg2_checks, "priority": priority_checks}


def run_suite(name: str) -> list[Check]:
    try:
        fn = SUITES[name]
    except KeyError:
        raise KeyError(f"unknown example {name!r}; choose from {sorted(SUITES)}") from None
    return fn()


def format_checks(checks: list[Check]) -> str:
    rows = []
    for c in checks:
        status = "PASS" if c.passed else "FAIL"
        if not c.gating:
            status = "info"
        rows.append((status, c.name, f"{c.value:.{SIG_DIGITS}g}", c.describe_target(), f"{c.error:.3g}"))
    head = ("", "statistic", "computed", "expected", "error")
    widths = [max(len(r[k]) for r in rows + [head]) for k in range(5)]
    lines = ["  ".join(s.ljust(w) for s, w in zip(head, widths)).rstrip()]
    lines += ["  ".join(s.ljust(w) for s, w in zip(r, widths)).rstrip() for r in rows]
    return "\n".join(lines)


def all_passed(checks: list[Check]) -> bool:
    return all(c.passed for c in checks if c.gating)
