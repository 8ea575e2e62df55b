"""Command-line entry point: simulate, test, estimate and bench."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .estimation import EstimationConfig, run_estimation_experiment
from .multivariate import MULTIVARIATE_METHODS, run_multivariate_test
from .sampler import HitAndRunConfig
from .univariate import UNIVARIATE_METHODS, run_univariate_test

CONFIG_VERSION = 1
SIMULATE_PRESETS = ("null", "table2-single", "table2-moderate", "table2-spread", "fig1",
                    "fig4-null", "fig4-signal", "fig5")

log = logging.getLogger("protosel")


def load_config(path) -> dict:
    """Versioned JSON key-value document; its keys override command-line flags."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SystemExit(f"config {path}: invalid JSON at line {exc.lineno}: {exc.msg}")
    if not isinstance(doc, dict):
        raise SystemExit(f"config {path}: expected a JSON object")
    version = doc.pop("version", None)
    if version != CONFIG_VERSION:
        raise SystemExit(f"config {path}: unsupported version {version!r} (expected {CONFIG_VERSION})")
    return doc


def _apply_overrides(args, overrides: dict, extra: dict) -> None:
    """Keys matching flags replace them; anything else goes to ``extra``."""
    for key, value in overrides.items():
        attr = key.replace("-", "_")
        if hasattr(args, attr) and attr not in ("command", "func"):
            setattr(args, attr, value)
        else:
            extra[attr] = value


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="protosel", description=__doc__)
    p.add_argument("--config", help="versioned JSON config; keys override flags")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a preset simulation experiment")
    s.add_argument("--preset", required=True, choices=SIMULATE_PRESETS)
    s.add_argument("--scale", type=float, default=1.0, help="multiply the replication count")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="results")
    s.add_argument("--hr-samples", type=int, default=None)
    s.add_argument("--hr-burn-in", type=int, default=None)
    s.add_argument("--full-scale", action="store_true",
                   help="B=800 with chains of 50,000 after 10,000")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("test", help="test one group on a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--groups", required=True)
    t.add_argument("--y", default=None)
    t.add_argument("--model", choices=("univariate", "multivariate"), required=True)
    t.add_argument("--method", required=True)
    t.add_argument("--sigma2", type=float, default=1.0)
    t.add_argument("--lambda", dest="lam", default=None,
                   help="lasso penalty; a comma list gives one per group")
    t.add_argument("--group", type=int, default=0, help="tested group")
    t.add_argument("--samples", type=int, default=10_000)
    t.add_argument("--burn-in", type=int, default=2_000)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_test)

    e = sub.add_parser("estimate", help="prediction experiment")
    e.add_argument("--preset", required=True, choices=("appendixA",))
    e.add_argument("--scale", type=float, default=1.0)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", default="results")
    e.set_defaults(func=cmd_estimate)

    b = sub.add_parser("bench", help="per-statistic timing table")
    b.add_argument("--replications", type=int, default=200)
    b.add_argument("--out", default=None)
    b.set_defaults(func=cmd_bench)
    return p


def _progress(done, total):
    if done == total or done % max(1, total // 20) == 0:
        log.info("%d/%d replications", done, total)


def cmd_simulate(args, extra) -> int:
    cfg = harness.preset(args.preset)
    cfg.seed = args.seed
    cfg.out_dir = args.out
    if args.full_scale:
        cfg = dataclasses.replace(cfg, replications=800, hr_samples=50_000, hr_burn_in=10_000)
    if args.hr_samples is not None:
        cfg.hr_samples = args.hr_samples
    if args.hr_burn_in is not None:
        cfg.hr_burn_in = args.hr_burn_in
    for key, value in extra.items():
        if not hasattr(cfg, key):
            raise SystemExit(f"unknown config key {key!r}")
        setattr(cfg, key, value)
    cfg = cfg.scaled(args.scale)
    rows, summary = harness.run_experiment(cfg, progress=_progress)
    for scenario, methods in summary["results"].items():
        for method, entry in methods.items():
            power = entry.get("power", {})
            print(f"{cfg.name}\t{scenario}\t{method}\t"
                  + "\t".join(f"power@{a}={power.get(str(a), float('nan')):.3f}"
                              for a in harness.ALPHAS)
                  + f"\tks_p={entry.get('ks_pvalue', float('nan')):.3g}\tfailed={entry['failed']}")
    print(f"wrote {Path(args.out) / (cfg.name + '_rows.csv')}")
    return 0


def _lambdas(text, K):
    if text is None:
        return None
    vals = [float(v) for v in str(text).split(",")]
    if len(vals) == 1:
        return vals * K
    if len(vals) != K:
        raise SystemExit(f"--lambda needs 1 or {K} values, got {len(vals)}")
    return vals


def cmd_test(args, extra) -> int:
    design, y = harness.load_dataset(args.data, args.groups, args.y)
    cfg = HitAndRunConfig(n_samples=args.samples, burn_in=args.burn_in, seed=args.seed)
    if args.model == "univariate":
        if args.method not in UNIVARIATE_METHODS:
            raise SystemExit(f"unknown univariate method {args.method!r}; "
                             f"choose from {', '.join(UNIVARIATE_METHODS)}")
        lams = _lambdas(args.lam, design.K)
        res = run_univariate_test(args.method, design.group_matrix(args.group), y, args.sigma2,
                                  lams[args.group] if lams else None, cfg,
                                  extra.get("oracle_support"))
    else:
        if args.method not in MULTIVARIATE_METHODS:
            raise SystemExit(f"unknown multivariate method {args.method!r}; "
                             f"choose from {', '.join(MULTIVARIATE_METHODS)}")
        res = run_multivariate_test(args.method, design, y, args.sigma2,
                                    _lambdas(args.lam, design.K), cfg, args.group,
                                    extra.get("oracle_supports"))
    out = {"method": res.method, "statistic": res.statistic, "p_value": res.p_value,
           "reference": res.reference, "flags": sorted(res.flags), "seed": res.seed}
    print(json.dumps(out, default=_jsonable))
    return 0


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(type(obj).__name__)


def cmd_estimate(args, extra) -> int:
    cfg = EstimationConfig(seed=args.seed)
    for key, value in extra.items():
        if not hasattr(cfg, key):
            raise SystemExit(f"unknown config key {key!r}")
        setattr(cfg, key, tuple(value) if isinstance(value, list) else value)
    cfg.replications = max(2, int(round(cfg.replications * args.scale)))
    rows = run_estimation_experiment(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "appendixA_mse.csv"
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    (out / "appendixA_summary.json").write_text(json.dumps(
        {"schema_version": harness.SCHEMA_VERSION, "config": dataclasses.asdict(cfg),
         "rows": rows}, indent=1))
    for r in rows:
        print(f"{r['sparsity']}\ttheta={r['theta']}\tmu={r['mu']:g}\trho={r['rho']:g}\t"
              f"{r['estimator']}\tmean_ratio={r['mean_ratio']:.3f}")
    print(f"wrote {path}")
    return 0


def cmd_bench(args, extra) -> int:
    cfg = harness.BenchConfig(replications=args.replications)
    for key, value in extra.items():
        if not hasattr(cfg, key):
            raise SystemExit(f"unknown config key {key!r}")
        setattr(cfg, key, tuple(value) if isinstance(value, list) else value)
    rows = harness.bench_statistics(cfg)
    print("alpha\tn\tm\tELR-naive_ms\tELR-SM_ms\tALR_ms")
    for r in rows:
        print(f"{r['alpha']}\t{r['n']}\t{r['selected_per_group']}\t{r['ELR-naive']:.3f}\t"
              f"{r['ELR-SM']:.3f}\t{r['ALR']:.4f}")
    if args.out:
        Path(args.out).write_text(json.dumps({"schema_version": harness.SCHEMA_VERSION,
                                              "rows": rows}, indent=1))
    return 0


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    extra = {}
    if args.config:
        _apply_overrides(args, load_config(args.config), extra)
    try:
        return args.func(args, extra)
    except (ValueError, KeyError, OSError) as exc:
        print(f"protosel: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
