"""``gpal`` command line: ``design``, ``run`` and ``compare``.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

from .active import LearningCurve
from .design import LhdConfig, maximin_lhd, min_pairwise_distance, write_design_csv
from .errors import ConfigError, GpalError
from .harness import config_from_manifest, load_config, run_comparison

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
METRICS = ("mean_mad", "max_mad", "cv_mse")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gpal", description="Active learning benchmark harness for GP response models.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = sub.add_parser("design", help="write a maximin Latin hypercube design as CSV")
    d.add_argument("--n", type=int, required=True, help="number of points")
    d.add_argument("--q", type=int, required=True, help="number of inputs")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--sweeps", type=int, default=2000, help="swap-search budget")
    d.add_argument("--lo", type=float, default=-450.0, help="lower bound of every input")
    d.add_argument("--hi", type=float, default=450.0, help="upper bound of every input")
    d.add_argument("--out", default="design.csv")

    r = sub.add_parser("run", help="run a strategy comparison")
    src = r.add_mutually_exclusive_group()
    src.add_argument("--config", help="JSON run configuration")
    src.add_argument("--manifest", help="replay the run recorded in this manifest")
    r.add_argument("--out", help="output directory (default from config)")
    r.add_argument("--seed", type=int, dest="master_seed")
    r.add_argument("--variant", choices=["kriging", "surrogate"])
    r.add_argument("--strategies", help="comma-separated strategy names")
    r.add_argument("--n-iter", type=int, dest="n_iter")
    r.add_argument("--threshold", type=float)
    r.add_argument("--patience", type=int)
    r.add_argument("--workers", type=int)

    c = sub.add_parser("compare", help="join learning curves into one table per metric")
    c.add_argument("curves", nargs="+", help="learning-curve CSV files")
    c.add_argument("--out", default=".", help="directory for <metric>.csv tables")
    return p


def cmd_design(args) -> int:
    cfg = LhdConfig(args.n, args.q, [(args.lo, args.hi)] * args.q, seed=args.seed, sweeps=args.sweeps)
    X = maximin_lhd(cfg)
    write_design_csv(args.out, X)
    dist = min_pairwise_distance(X, cfg.bounds)
    print(f"wrote {X.shape[0]}x{X.shape[1]} design to {args.out}")
    print(f"min pairwise distance (unit scale): {dist!r}")
    return EXIT_OK


def cmd_run(args) -> int:
    overrides = {
        "master_seed": args.master_seed,
        "variant": args.variant,
        "n_iter": args.n_iter,
        "threshold": args.threshold,
        "patience": args.patience,
        "workers": args.workers,
        "strategies": args.strategies.split(",") if args.strategies else None,
    }
    if args.manifest:
        if any(v is not None for v in overrides.values()):
            raise ConfigError("a manifest replay takes no overrides besides --out")
        cfg = config_from_manifest(args.manifest)
        out = args.out or str(Path(args.manifest).parent)
    else:
        cfg = load_config(args.config, overrides)
        out = args.out or cfg.output_dir
    manifest = run_comparison(cfg, out)
    for name, entry in manifest["strategies"].items():
        status = f"error: {entry['error']}" if entry["error"] else entry["stop_reason"]
        print(f"{name}: {entry['rows']} rows, {status}")
    print(f"manifest: {Path(out) / 'manifest.json'}")
    return EXIT_RUNTIME if manifest["status"] != "ok" else EXIT_OK


def join_curves(paths) -> dict:
    """Tables ``{metric: (header, rows)}`` keyed by ``n_samples``.

    Curves may stop at different lengths, but every grid must be a prefix of
    the longest one; shorter curves leave blank cells.
    """
    if len(paths) < 2:
        raise ConfigError("compare needs at least two curve files")
    curves = []
    for p in paths:
        try:
            curves.append(LearningCurve.read_csv(p))
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot read curve {p}: {exc}") from exc
    grids = [[r.n_samples for r in c.rows] for c in curves]
    longest = max(grids, key=len)
    offending = [str(p) for p, g in zip(paths, grids) if g != longest[: len(g)]]
    if offending:
        raise ConfigError("sample grids do not line up: " + ", ".join(offending))
    names = [c.strategy for c in curves]
    if len(set(names)) != len(names):
        names = [Path(p).stem for p in paths]
    tables = {}
    for metric in METRICS:
        rows = []
        for i, n in enumerate(longest):
            row = [n]
            for c in curves:
                v = getattr(c.rows[i], metric) if i < len(c.rows) else math.nan
                row.append("" if math.isnan(v) else repr(v))
            rows.append(row)
        tables[metric] = (["n_samples", *names], rows)
    return tables


def cmd_compare(args) -> int:
    tables = join_curves(args.curves)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for metric, (header, rows) in tables.items():
        with open(out / f"{metric}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
        print(f"wrote {out / f'{metric}.csv'} ({len(rows)} rows)")
    return EXIT_OK


COMMANDS = {"design": cmd_design, "run": cmd_run, "compare": cmd_compare}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"gpal: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GpalError, ArithmeticError, ValueError) as exc:
        if args.command == "design" and isinstance(exc, ValueError):
            print(f"gpal: invalid design arguments: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"gpal: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"gpal: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
