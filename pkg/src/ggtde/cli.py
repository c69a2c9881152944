"""Command-line front end.

Subcommands::

    ggtde fit --input errors.csv --mode beta-only --out fit.json
    ggtde dominance --beta1 1.0 --beta2 2.0 --alpha 1.0 --grid 50
    ggtde estimators --dist ggd:0,1,1 --n 10 --trials 100000 --seed 7
    ggtde train --config configs/chain_laplace.json --out runs/a --seed 1
    ggtde analyze runs/a runs/b --out report/

Exit codes: 0 success, 1 dominance violation, 2 input or config error,
3 numerical failure, 4 training divergence. ``GGTDE_LOG`` selects the log
level (error, info or debug).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from .errors import ConfigError, DivergenceError, DomainError, QuadratureError
from .estimators import MBBE_MIN_TRIALS, PROP1_MIN_TRIALS, mbbe_optimality_experiment, prop1_bias_experiment
from .ggd import GGDParams, fit_mle, pdf, ssd_curve
from .td_lab.experiment import TrainRunLog, load_config, run_experiment

__all__ = ["main", "build_parser", "svg_line_chart"]

log = logging.getLogger("ggtde")

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_DIVERGED = 4

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
RUN_ARTIFACTS = ("run.json", "timeseries.csv")
ANALYZE_METRICS = ("return", "value_rmse", "cov_beta", "cov_variance")
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


# ------------------------------------------------------------------ helpers


def _write_text(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8", newline="\n")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(v) -> str:
    return repr(float(v))


def _claim_file(path: Path, force: bool) -> Path:
    if path.exists() and not force:
        raise ConfigError(f"{path} exists; pass --force to overwrite")
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _claim_dir(path: Path, force: bool) -> Path:
    if path.exists() and not path.is_dir():
        raise ConfigError(f"{path} exists and is not a directory")
    if path.exists() and any(path.iterdir()) and not force:
        raise ConfigError(f"{path} is not empty; pass --force to overwrite")
    path.mkdir(parents=True, exist_ok=True)
    return path


def read_error_column(path) -> np.ndarray:
    """Values of a one-column CSV; a non-numeric first row is taken as the header."""
    p = Path(path)
    try:
        with open(p, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except (OSError, UnicodeDecodeError) as e:
        raise ConfigError(f"cannot read {p}: {e}") from e
    if rows:
        try:
            float(rows[0][0])
        except ValueError:
            rows = rows[1:]
    values = []
    for i, r in enumerate(rows, start=1):
        if len(r) != 1:
            raise ConfigError(f"{p}: expected one column, row {i} has {len(r)}")
        try:
            values.append(float(r[0]))
        except ValueError as e:
            raise ConfigError(f"{p}: row {i} is not a number: {r[0]!r}") from e
    x = np.asarray(values, dtype=float)
    if x.size < 10:
        raise ConfigError(f"{p}: need at least 10 values, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ConfigError(f"{p}: values must be finite")
    return x


def parse_dist(text: str) -> GGDParams:
    """``ggd:mu,alpha,beta`` to GGD parameters."""
    family, _, rest = text.partition(":")
    if family.strip().lower() != "ggd" or not rest:
        raise ConfigError(f"--dist must look like ggd:mu,alpha,beta, got {text!r}")
    try:
        mu, alpha, beta = (float(v) for v in rest.split(","))
    except ValueError as e:
        raise ConfigError(f"--dist must look like ggd:mu,alpha,beta, got {text!r}") from e
    return GGDParams(alpha=alpha, beta=beta, mu=mu)


# ---------------------------------------------------------------------- svg


def svg_line_chart(title: str, series, x_label: str = "step", y_label: str = "", width: int = 640, height: int = 400) -> str:
    """Plain SVG polyline chart.

    ``series`` is a list of ``(label, xs, ys)`` or ``(label, xs, ys, dashed)``;
    non-finite points break a line into separate polylines.
    """
    left, right, top, bottom = 70, 150, 40, 50
    pts = [(float(x), float(y)) for s in series for x, y in zip(s[1], s[2]) if math.isfinite(x) and math.isfinite(y)]
    if pts:
        x0, x1 = min(p[0] for p in pts), max(p[0] for p in pts)
        y0, y1 = min(p[1] for p in pts), max(p[1] for p in pts)
    else:
        x0 = x1 = y0 = y1 = 0.0
    if x1 == x0:
        x0, x1 = x0 - 1.0, x1 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 1.0, y1 + 1.0
    pw, ph = width - left - right, height - top - bottom

    def sx(x):
        return left + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return top + (1.0 - (y - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-family="sans-serif" font-size="15">{_esc(title)}</text>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for v, anchor_x in ((x0, left), (x1, left + pw)):
        out.append(
            f'<text x="{anchor_x:.1f}" y="{top + ph + 18}" text-anchor="middle" font-family="sans-serif" '
            f'font-size="11">{v:.4g}</text>'
        )
    for v in (y0, y1):
        out.append(
            f'<text x="{left - 6}" y="{sy(v) + 4:.1f}" text-anchor="end" font-family="sans-serif" '
            f'font-size="11">{v:.4g}</text>'
        )
    out.append(
        f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="12">{_esc(x_label)}</text>'
    )
    out.append(
        f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {top + ph / 2:.1f})">{_esc(y_label)}</text>'
    )
    for i, s in enumerate(series):
        label, xs, ys = s[0], s[1], s[2]
        dashed = len(s) > 3 and s[3]
        color = _COLORS[i % len(_COLORS)]
        dash = ' stroke-dasharray="5,4"' if dashed else ""
        run: list[str] = []
        segments = []
        for x, y in zip(xs, ys):
            if math.isfinite(x) and math.isfinite(y):
                run.append(f"{sx(float(x)):.2f},{sy(float(y)):.2f}")
            elif run:
                segments.append(run)
                run = []
        if run:
            segments.append(run)
        for seg in segments:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.6"{dash} points="{" ".join(seg)}"/>')
        ly = top + 14 + 16 * i
        out.append(
            f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 30}" y2="{ly}" stroke="{color}" '
            f'stroke-width="2"{dash}/>'
        )
        out.append(
            f'<text x="{left + pw + 34}" y="{ly + 4}" font-family="sans-serif" font-size="11">{_esc(label)}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(text: str) -> str:
    return str(text).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


# ---------------------------------------------------------------- commands


def cmd_fit(args) -> int:
    mode = args.mode.replace("-", "_")
    x = read_error_column(args.input)
    if args.center == "median":
        x = x - np.median(x)
    elif args.center == "mean":
        x = x - x.mean()
    out = _claim_file(Path(args.out), args.force)
    hist_path = _claim_file(out.with_name(out.stem + "_hist.csv"), args.force)
    svg_path = _claim_file(out.with_name(out.stem + "_hist.svg"), args.force)
    fit = fit_mle(x, mode)
    report = {"input": str(args.input), "n": int(x.size), "mode": mode, "center": args.center, **fit.to_dict()}
    _write_text(out, json.dumps(report, indent=2) + "\n")

    lo, hi = np.quantile(x, [args.clip, 1.0 - args.clip])
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, args.bins + 1)
    counts, _ = np.histogram(x, edges)
    width = np.diff(edges)
    centers = 0.5 * (edges[:-1] + edges[1:])
    emp = counts / (x.size * width)
    ggd = pdf(centers, fit.params)
    mu, sd = float(x.mean()), float(x.std())
    gauss = np.exp(-0.5 * ((centers - mu) / sd) ** 2) / (sd * math.sqrt(2.0 * math.pi))
    _write_csv(
        hist_path,
        ("bin_left", "bin_right", "empirical_density", "ggd_density", "gaussian_density"),
        ([_fmt(a), _fmt(b), _fmt(e), _fmt(g), _fmt(n)] for a, b, e, g, n in zip(edges[:-1], edges[1:], emp, ggd, gauss)),
    )
    _write_text(
        svg_path,
        svg_line_chart(
            f"fit: beta={fit.params.beta:.3f} alpha={fit.params.alpha:.3f}",
            [("empirical", centers, emp), ("GGD fit", centers, ggd), ("Gaussian fit", centers, gauss, True)],
            x_label="error",
            y_label="density",
        ),
    )
    print(json.dumps(report))
    if not fit.converged:
        log.warning("fit did not reach the gradient tolerance (grad norm %.3g)", fit.grad_norm)
    return EXIT_OK


def cmd_dominance(args) -> int:
    alpha = args.alpha
    lo = -args.span * alpha if args.xmin is None else args.xmin
    hi = args.span * alpha if args.xmax is None else args.xmax
    if args.grid < 2 or not hi > lo:
        raise ConfigError("need --grid >= 2 and xmax > xmin")
    GGDParams(alpha, args.beta1)
    GGDParams(alpha, args.beta2)
    xs = np.linspace(lo, hi, args.grid)
    vals = ssd_curve(args.beta1, args.beta2, alpha, xs)
    rows = [[_fmt(x), _fmt(v)] for x, v in zip(xs, vals)]
    if args.out:
        _write_csv(_claim_file(Path(args.out), args.force), ("x", "integral"), rows)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(("x", "integral"))
    w.writerows(rows)
    worst = float(vals.min())
    if worst < -args.tol:
        at = float(xs[int(np.argmin(vals))])
        print(
            f"dominance violated: integral reaches {worst:.3g} at x={at:.4g} "
            f"(beta1={args.beta1}, beta2={args.beta2}, tol={args.tol:g})",
            file=sys.stderr,
        )
        return EXIT_VIOLATION
    return EXIT_OK


def cmd_estimators(args) -> int:
    dist = parse_dist(args.dist)
    if args.trials < PROP1_MIN_TRIALS:
        raise DomainError(f"insufficient trials: need >= {PROP1_MIN_TRIALS}, got {args.trials}")
    prop1 = prop1_bias_experiment(dist, args.n, args.trials, args.seed)
    report = {
        "dist": {"family": "ggd", "mu": dist.mu, "alpha": dist.alpha, "beta": dist.beta},
        "n": args.n,
        "trials": args.trials,
        "seed": args.seed,
        "prop1": prop1.to_dict(),
    }
    if args.trials >= MBBE_MIN_TRIALS:
        mbbe = mbbe_optimality_experiment(dist, args.n, args.trials, args.seed + 1)
        report["mbbe"] = mbbe.to_dict()
    else:
        report["mbbe"] = None
        report["mbbe_skipped"] = f"needs trials >= {MBBE_MIN_TRIALS}"
    text = json.dumps(report, indent=2, allow_nan=True) + "\n"
    if args.out:
        _write_text(_claim_file(Path(args.out), args.force), text)
    sys.stdout.write(text)
    return EXIT_OK


def _train_overrides(args) -> list[str]:
    extra = list(args.set or [])
    if args.ra_mode is not None:
        extra.append(f"weighting.ra_mode={json.dumps(args.ra_mode)}")
    if args.lam is not None:
        extra.append(f"weighting.lambda={args.lam!r}")
    if args.alpha_head:
        extra.append("agent.alpha_head=true")
    if args.steps is not None:
        extra.append(f"run.n_steps={args.steps}")
    return extra


def cmd_train(args) -> int:
    cfg = load_config(args.config, _train_overrides(args))
    out = Path(args.out)
    _claim_dir(out, args.force)
    for stale in [*RUN_ARTIFACTS, *(p.name for p in out.glob("td_errors_*.csv"))]:
        (out / stale).unlink(missing_ok=True)
    log.info("training %s for %d steps, seed %d", cfg.agent.loss_kind, cfg.n_steps, args.seed)
    run = run_experiment(cfg, args.seed)
    run.save(out)
    meta = run.metadata
    print(f"final return: {meta['final_return']:.6g}")
    print(f"final value RMSE: {meta['final_value_rmse']:.6g}")
    print(f"final fitted beta: {meta['final_fitted_beta']:.6g}")
    print(f"wrote {out}")
    return EXIT_OK


def _series(runs: list[TrainRunLog], metric: str) -> np.ndarray:
    attr = {"return": "episodic_return", "value_rmse": "value_rmse_vs_oracle"}.get(metric, metric)
    return np.array([getattr(r, attr) for r in runs], dtype=float)


def cmd_analyze(args) -> int:
    runs, problems = [], []
    for d in args.run_dirs:
        try:
            runs.append(TrainRunLog.load(d))
        except ConfigError as e:
            problems.append(str(e))
    if problems:
        raise ConfigError("invalid run directories:\n  " + "\n  ".join(problems))
    steps = runs[0].step
    bad = [str(d) for d, r in zip(args.run_dirs, runs) if r.step != steps]
    if bad:
        raise ConfigError("runs disagree on checkpoint steps: " + ", ".join(bad))
    out = _claim_dir(Path(args.out), args.force)

    stats = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for m in ANALYZE_METRICS:
            s = _series(runs, m)
            stats[m] = (np.nanmedian(s, axis=0), np.nanstd(s, axis=0), np.nanmin(s, axis=0), np.nanmax(s, axis=0))
    header = ["step", "n_runs"]
    for m in ANALYZE_METRICS:
        header += [f"{m}_median", f"{m}_sd", f"{m}_min", f"{m}_max"]
    rows = []
    for i, step in enumerate(steps):
        row = [step, len(runs)]
        for m in ANALYZE_METRICS:
            row += [_fmt(a[i]) for a in stats[m]]
        rows.append(row)
    _write_csv(out / "comparison.csv", header, rows)

    cov_rows = []
    for d, r in zip(args.run_dirs, runs):
        cfg = r.metadata.get("config", {})
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            mean_cb = float(np.nanmean(r.cov_beta)) if r.cov_beta else math.nan
            mean_cv = float(np.nanmean(r.cov_variance)) if r.cov_variance else math.nan
        cov_rows.append(
            [
                str(d),
                cfg.get("loss", {}).get("kind", ""),
                cfg.get("weighting", {}).get("ra_mode", ""),
                r.metadata.get("seed", ""),
                _fmt(r.cov_beta[-1]) if r.cov_beta else "nan",
                _fmt(mean_cb),
                _fmt(r.cov_variance[-1]) if r.cov_variance else "nan",
                _fmt(mean_cv),
                _fmt(r.value_rmse_vs_oracle[-1]) if r.value_rmse_vs_oracle else "nan",
                _fmt(r.metadata.get("final_fitted_beta", math.nan)),
            ]
        )
    _write_csv(
        out / "cov_table.csv",
        (
            "run",
            "loss_kind",
            "ra_mode",
            "seed",
            "final_cov_beta",
            "mean_cov_beta",
            "final_cov_variance",
            "mean_cov_variance",
            "final_value_rmse",
            "final_fitted_beta",
        ),
        cov_rows,
    )
    if args.svg:
        for m in ("return", "value_rmse"):
            med, sd = stats[m][0], stats[m][1]
            _write_text(
                out / f"{m}.svg",
                svg_line_chart(
                    f"{m}: median over {len(runs)} run(s)",
                    [("median", steps, med), ("median + sd", steps, med + sd, True), ("median - sd", steps, med - sd, True)],
                    y_label=m,
                ),
            )
    print(f"analyzed {len(runs)} run(s) over {len(steps)} checkpoints; wrote {out}")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ggtde", description="GGD modeling of TD errors.")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit a GGD to a one-column CSV of errors")
    f.add_argument("--input", required=True)
    f.add_argument("--mode", choices=("beta-only", "alpha-beta", "beta_only", "alpha_beta"), default="beta-only")
    f.add_argument("--out", required=True, help="JSON report; histogram CSV and SVG are written beside it")
    f.add_argument("--center", choices=("none", "median", "mean"), default="none")
    f.add_argument("--bins", type=int, default=50)
    f.add_argument("--clip", type=float, default=0.005, help="tail quantile left out of the histogram range")
    f.add_argument("--force", action="store_true")
    f.set_defaults(func=cmd_fit)

    d = sub.add_parser("dominance", help="second-order dominance integral on a grid")
    d.add_argument("--beta1", type=float, required=True)
    d.add_argument("--beta2", type=float, required=True)
    d.add_argument("--alpha", type=float, default=1.0)
    d.add_argument("--grid", type=int, default=50)
    d.add_argument("--span", type=float, default=10.0, help="grid covers [-span*alpha, span*alpha]")
    d.add_argument("--xmin", type=float)
    d.add_argument("--xmax", type=float)
    d.add_argument("--tol", type=float, default=1e-7)
    d.add_argument("--out")
    d.add_argument("--force", action="store_true")
    d.set_defaults(func=cmd_dominance)

    e = sub.add_parser("estimators", help="Monte-Carlo variance estimator benches")
    e.add_argument("--dist", default="ggd:0,1,1", help="ggd:mu,alpha,beta")
    e.add_argument("--n", type=int, default=10)
    e.add_argument("--trials", type=int, default=100_000)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out")
    e.add_argument("--force", action="store_true")
    e.set_defaults(func=cmd_estimators)

    t = sub.add_parser("train", help="run one training experiment")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override, e.g. agent.lr=0.02")
    t.add_argument("--ra-mode", choices=("risk_averse", "risk_seeking", "none"))
    t.add_argument("--lam", type=float)
    t.add_argument("--alpha-head", action="store_true")
    t.add_argument("--steps", type=int)
    t.add_argument("--force", action="store_true")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("analyze", help="aggregate run directories")
    a.add_argument("run_dirs", nargs="+")
    a.add_argument("--out", required=True)
    a.add_argument("--svg", action="store_true", help="also write return.svg and value_rmse.svg")
    a.add_argument("--force", action="store_true")
    a.set_defaults(func=cmd_analyze)
    return p


def _configure_logging() -> None:
    name = os.environ.get("GGTDE_LOG", "error").strip().lower() or "error"
    if name not in LOG_LEVELS:
        raise ConfigError(f"GGTDE_LOG must be one of {', '.join(LOG_LEVELS)}, got {name!r}")
    logging.basicConfig(level=LOG_LEVELS[name], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _configure_logging()
        return args.func(args)
    except DivergenceError as e:
        print(f"error: training diverged: {e}", file=sys.stderr)
        if e.step is not None:
            print(f"  step={e.step} term={e.term}", file=sys.stderr)
        return EXIT_DIVERGED
    except QuadratureError as e:
        print(f"error: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, DomainError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
