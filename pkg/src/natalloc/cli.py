"""Command-line front end: ``natalloc <command> [options]``.

Exit codes: 0 success, 1 a reproduced or verified check failed, 2 bad input
or usage, 3 calibration failure, 4 internal invariant violated.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import allocation as al
from . import reproduce as rp
from .discrete import LevelView, OutcomeTable, bind_distortion, collapse, marginal_view, read_table_csv
from .distortion import Distortion, calibrate, from_spec
from .errors import CalibrationError, DomainError, GridError, InvariantViolation, NatAllocError, ParseError
from .grid import GridPortfolio, load_portfolio_spec
from .oracle import McConfig, enumerate_allocation, mc_equal_priority

log = logging.getLogger("natalloc")

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_CALIBRATION, EXIT_INVARIANT = 0, 1, 2, 3, 4
SIG = rp.SIG_DIGITS
FIXTURES = {"eg1": "eg1.csv", "eg2": "eg2.json", "priority": "priority.json"}


@dataclass
class RunConfig:
    input: str
    distortion: Distortion | None = None
    assets: list = field(default_factory=lambda: [math.inf])
    delta: float = 0.0
    out: Path | None = None
    format: str = "csv"
    grid_h: float | None = None

    def __post_init__(self):
        if any(a < 0 or math.isnan(a) for a in self.assets):
            raise DomainError("asset levels must be non-negative")
        if self.delta < 0:
            raise DomainError("delta must be non-negative")


@dataclass
class Loaded:
    """Either an outcome table or a grid portfolio, reduced to level views."""

    view: LevelView
    marginals: list
    table: OutcomeTable | None = None
    portfolio: GridPortfolio | None = None


def _read_input(source: str, grid_h: float | None) -> Loaded:
    path = Path(source)
    if not path.exists() and source in FIXTURES:
        path = Path(str(rp.fixture_path(FIXTURES[source])))
    if not path.exists():
        raise ParseError(f"input {source!r} not found")
    text = path.read_text()
    if path.suffix.lower() == ".json" or text.lstrip().startswith("{"):
        port = load_portfolio_spec(text, h=grid_h)
        return Loaded(port.view(), port.marginal_views(), portfolio=port)
    t = read_table_csv(text)
    return Loaded(collapse(t), [marginal_view(t, i) for i in range(t.n_lines)], table=t)


def _parse_distortion(text: str | None) -> Distortion | None:
    if text is None:
        return None
    p = Path(text)
    raw = p.read_text() if not text.lstrip().startswith("{") and p.exists() else text
    try:
        return from_spec(json.loads(raw))
    except json.JSONDecodeError as e:
        raise ParseError(f"distortion spec: line {e.lineno}, column {e.colno}: {e.msg}") from None
    except (KeyError, TypeError) as e:
        raise ParseError(f"distortion spec missing or malformed field: {e}") from None


def _config(args) -> RunConfig:
    return RunConfig(
        input=args.input,
        distortion=_parse_distortion(getattr(args, "distortion", None)),
        assets=list(args.assets) if getattr(args, "assets", None) else [math.inf],
        delta=getattr(args, "delta", 0.0),
        out=Path(args.out) if getattr(args, "out", None) else None,
        format=getattr(args, "format", "csv"),
        grid_h=getattr(args, "grid_h", None),
    )


def _need_distortion(cfg: RunConfig) -> Distortion:
    if cfg.distortion is None:
        raise DomainError("--distortion is required for this command")
    return cfg.distortion


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.{SIG}g}"
    return str(v)


def _print_table(rows: list[dict], stream=None):
    stream = stream or sys.stdout
    cols = list(rows[0])
    cells = [[_fmt(r[c]) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[k]) for row in cells)) for k, c in enumerate(cols)]
    print("  ".join(c.rjust(w) for c, w in zip(cols, widths)), file=stream)
    for row in cells:
        print("  ".join(s.rjust(w) for s, w in zip(row, widths)), file=stream)


def _asset_label(a: float) -> str:
    return "inf" if math.isinf(a) else repr(float(a))


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    log.info("wrote %s", path)


def _write_rows(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def cmd_price(args) -> int:
    cfg = _config(args)
    d = _need_distortion(cfg)
    data = _read_input(cfg.input, cfg.grid_h)
    v = bind_distortion(data.view, d)
    for a in cfg.assets:
        rep = al.price(v, a, cfg.delta)
        print(f"assets = {_fmt(float(a))}")
        _print_table(rep.rows())
        for fl in rep.flags:
            print(f"note: {fl}")
        if cfg.out is not None:
            ext = "json" if cfg.format == "json" else "csv"
            _write(cfg.out / f"price_a{_asset_label(a)}.{ext}", rep.to_json() if ext == "json" else rep.to_csv())
    return EXIT_OK


def _curve_rows(v: LevelView, a: float):
    c = al.allocation_curves(v)
    header = ["x", "end", "S", "gS", "total_margin", "total_equity", "layer_return"]
    for kind in ("alpha", "beta", "loss", "premium", "margin", "equity"):
        header += [f"{kind}_{n}" for n in v.lines]
    keep = c.x < a if math.isfinite(a) else np.ones(len(c.x), bool)
    cols = [c.x, c.end, c.S, c.gS, c.total_margin, c.total_equity, c.layer_return]
    per_line = [c.alpha, c.beta, c.loss, c.premium, c.margin, c.equity]
    rows = []
    for k in np.flatnonzero(keep):
        row = [float(col[k]) for col in cols]
        for arr in per_line:
            row += [float(val) for val in arr[k]]
        rows.append(row)
    return header, rows


def cmd_allocate(args) -> int:
    cfg = _config(args)
    d = _need_distortion(cfg)
    data = _read_input(cfg.input, cfg.grid_h)
    v = bind_distortion(data.view, d)
    a = max(cfg.assets)
    header, rows = _curve_rows(v, a)
    if cfg.out is None:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])
        return EXIT_OK
    if cfg.format == "json":
        doc = {h: [r[k] for r in rows] for k, h in enumerate(header)}
        _write(cfg.out / "curves.json", json.dumps(doc, allow_nan=True))
    else:
        _write_rows(cfg.out / "curves.csv", header, rows)
    print(f"{len(rows)} layers written to {cfg.out}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = _config(args)
    data = _read_input(cfg.input, cfg.grid_h)
    if len(cfg.assets) != 1 or math.isinf(cfg.assets[0]):
        raise DomainError("calibration needs exactly one finite --assets value")
    d = calibrate(args.family, data.view, cfg.assets[0], args.target)
    spec = d.to_spec()
    text = json.dumps(spec, indent=2)
    print(text)
    if cfg.out is not None:
        _write(cfg.out / "distortion.json", text + "\n")
    return EXIT_OK


def cmd_reproduce(args) -> int:
    checks = rp.run_suite(args.name)
    print(rp.format_checks(checks))
    ok = rp.all_passed(checks)
    n_fail = sum(1 for c in checks if c.gating and not c.passed)
    print(f"{args.name}: {'all checks passed' if ok else f'{n_fail} check(s) failed'}")
    return EXIT_OK if ok else EXIT_CHECK


def _density_rows(view: LevelView, name: str):
    scale = 1.0 / view.bucket if view.bucket else 1.0
    return [(name, float(x), float(p) * scale) for x, p in zip(view.levels, view.p)]


def _lee_rows(name: str, S: np.ndarray, gS: np.ndarray, values: np.ndarray):
    rows = [(name, "loss", float(1 - s), float(x)) for s, x in zip(S, values)]
    rows += [(name, "premium", float(1 - g), float(x)) for g, x in zip(gS, values)]
    return rows


def plot_data(v: LevelView, marginals: list, out: Path, x_max: float = math.inf) -> list[Path]:
    """Write one CSV per figure panel; returns the paths written."""
    d = v.distortion
    names = list(v.lines)
    c = al.allocation_curves(v)
    lay = np.flatnonzero((c.x <= x_max) & (c.end > c.x))
    lev = np.flatnonzero(v.levels <= x_max)
    written = []

    def emit(label, header, rows):
        p = out / f"panel_{label}.csv"
        _write_rows(p, header, rows)
        written.append(p)

    dens = []
    for m in marginals:
        dens += _density_rows(m, m.lines[0])
    dens += _density_rows(v, "total")
    dens = [r for r in dens if r[1] <= x_max]
    emit("1_1", ["series", "x", "density"], dens)
    emit("1_2", ["series", "x", "log_density"], [(s, x, math.log(y)) for s, x, y in dens if y > 0])
    emit("2_1", ["x", *(f"kappa_{n}" for n in names)], [(v.levels[k], *v.kappa[k]) for k in lev])
    emit("2_2", ["x", *(f"alpha_{n}" for n in names)], [(c.x[k], *c.alpha[k]) for k in lay])
    emit(
        "2_3",
        ["x", *(f"alpha_{n}" for n in names), *(f"beta_{n}" for n in names)],
        [(c.x[k], *c.alpha[k], *c.beta[k]) for k in lay],
    )
    for j, n in enumerate(names):
        label = {0: "3_1", 1: "4_1"}.get(j, f"overlay_{n}")
        emit(label, ["x", f"alpha_S_{n}", f"beta_gS_{n}"], [(c.x[k], c.loss[k, j], c.premium[k, j]) for k in lay])
    emit(
        "3_2",
        ["x", *(f"margin_{n}" for n in names), "margin_total"],
        [(c.x[k], *c.margin[k], c.total_margin[k]) for k in lay],
    )
    widths = np.where(np.isfinite(c.end), c.end - c.x, 0.0)
    cum = np.cumsum(np.vstack([np.zeros(len(names)), c.margin[:-1] * widths[:-1, None]]), axis=0)
    cum_t = np.concatenate(([0.0], np.cumsum(c.total_margin[:-1] * widths[:-1])))
    emit("4_2", ["x", *(f"cum_margin_{n}" for n in names), "cum_margin_total"], [(c.x[k], *cum[k], cum_t[k]) for k in lay])
    sa = []
    for m in marginals:
        mb = bind_distortion(m, d)
        sel = mb.levels <= x_max
        sa += _lee_rows(m.lines[0], mb.S[sel], mb.gS[sel], mb.levels[sel])
    sel = v.levels <= x_max
    sa += _lee_rows("total", v.S[sel], v.gS[sel], v.levels[sel])
    emit("3_3", ["series", "curve", "p", "x"], sa)
    nat = []
    for j, n in enumerate(names):
        nat += _lee_rows(n, v.S[sel], v.gS[sel], v.kappa[sel, j])
    nat += _lee_rows("total", v.S[sel], v.gS[sel], v.levels[sel])
    emit("4_3", ["series", "curve", "p", "x"], nat)
    return written


def cmd_plot_data(args) -> int:
    cfg = _config(args)
    d = _need_distortion(cfg)
    if cfg.out is None:
        raise DomainError("--out directory is required for plot-data")
    data = _read_input(cfg.input, cfg.grid_h)
    v = bind_distortion(data.view, d)
    paths = plot_data(v, data.marginals, cfg.out, args.x_max)
    print(f"{len(paths)} panel files written to {cfg.out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = _config(args)
    data = _read_input(cfg.input, cfg.grid_h)
    rows = []
    ok = True
    if data.table is not None:
        d = _need_distortion(cfg)
        v = bind_distortion(data.view, d)
        ref = enumerate_allocation(data.table, d, cfg.assets)
        for k, a in enumerate(cfg.assets):
            for i, n in enumerate(v.lines):
                got = al.premium_cumulative(v, i, a)
                err = abs(got - ref[k, i])
                passed = err <= 1e-9 * max(1.0, abs(ref[k, i]))
                ok &= passed
                rows.append({"assets": float(a), "line": n, "analytic": got, "oracle": float(ref[k, i]), "error": err, "pass": passed})
    else:
        marg = data.portfolio.marginals
        mc_cfg = McConfig(n=args.n, seed=args.seed)
        for a in cfg.assets:
            res = mc_equal_priority(marg, a, mc_cfg)
            for i, n in enumerate(data.view.lines):
                got = al.loss_cumulative(data.view, i, a)
                z = abs(got - res.mean[i]) / res.stderr[i] if res.stderr[i] > 0 else (0.0 if got == res.mean[i] else math.inf)
                passed = z <= 4.0
                ok &= passed
                rows.append({"assets": float(a), "line": n, "analytic": got, "monte_carlo": float(res.mean[i]), "stderr": float(res.stderr[i]), "z": z, "pass": passed})
    _print_table(rows)
    print("verify: all checks passed" if ok else "verify: some checks failed")
    return EXIT_OK if ok else EXIT_CHECK


def _assets_arg(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if value < 0 or math.isnan(value):
        raise argparse.ArgumentTypeError("asset levels must be non-negative")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="natalloc", description="Distortion pricing and natural allocation by line.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log files written")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, distortion=True):
        p.add_argument("--input", required=True, help="outcome table CSV, portfolio JSON, or a packaged example name")
        if distortion:
            p.add_argument("--distortion", help="distortion spec as JSON text or a path to a JSON file")
        p.add_argument("--assets", type=_assets_arg, action="append", help="asset level; repeat for several (default inf)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--grid-h", type=float, help="override the grid bucket width of a portfolio spec")
        return p

    p = common(sub.add_parser("price", help="allocation report by line"))
    p.add_argument("--delta", type=float, default=0.0, help="frictional cost of capital per unit of equity")
    p.set_defaults(func=cmd_price)

    p = common(sub.add_parser("allocate", help="per-layer allocation curves"))
    p.set_defaults(func=cmd_allocate)

    p = common(sub.add_parser("calibrate", help="fit a distortion to a target return"), distortion=False)
    p.add_argument("--family", choices=("wang", "ph", "identity"), default="wang")
    p.add_argument("--target", type=float, required=True, help="target total return M/Q")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("reproduce", help="rerun a packaged example and compare with expected values")
    p.add_argument("name", choices=sorted(rp.SUITES))
    p.set_defaults(func=cmd_reproduce)

    p = common(sub.add_parser("plot-data", help="write CSV data for each figure panel"))
    p.add_argument("--x-max", type=float, default=math.inf, help="drop points above this loss level")
    p.set_defaults(func=cmd_plot_data)

    p = common(sub.add_parser("verify", help="compare analytic results with an oracle"))
    p.add_argument("--seed", type=int, default=McConfig.seed)
    p.add_argument("--n", type=int, default=McConfig.n, help="Monte Carlo sample size")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except CalibrationError as e:
        print(f"calibration failed: {e}", file=sys.stderr)
        return EXIT_CALIBRATION
    except InvariantViolation as e:
        print(f"invariant violated: {e}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ParseError, DomainError, GridError, NatAllocError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
