"""Experiment orchestration: presets, replications, result rows and summaries."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .datagen import generate_design, linear_response, prototype_response
from .linear_core import GroupedDesign, HatStack, make_hat
from .likelihood import ProfiledObjective, likelihood_ratio, make_solver
from .multivariate import alr_from_stats, run_multivariate_tests
from .sampler import HitAndRunConfig
from .selection import calibrate_lambda
from .univariate import UNIVARIATE_METHODS, run_ridge_tests, run_univariate_tests

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
ALPHAS = (0.05, 0.1)
ROW_FIELDS = ("experiment", "scenario", "replication", "method", "statistic", "p_value",
              "flags", "wall_ms", "seed")


@dataclass
class Scenario:
    """One data-generating setting; ``beta`` (linear model) or ``theta`` (prototype model)."""

    label: str
    beta: list | None = None
    theta: list | None = None
    mu: float = 0.0

    def support(self) -> np.ndarray:
        return np.flatnonzero(np.asarray(self.beta)) if self.beta is not None else np.zeros(0, int)


@dataclass
class ExperimentConfig:
    name: str
    model: str  # univariate | multivariate | ridge
    n: int
    group_sizes: list
    rho: float = 0.0
    sigma2: float = 1.0
    replications: int = 200
    scenarios: list = field(default_factory=list)
    methods: list = field(default_factory=list)
    target_selected: int = 10
    calibration_trials: int = 100
    ridge_lambda: float = 10.0
    hr_samples: int = 10_000
    hr_burn_in: int = 2_000
    hr_thinning: int = 1
    hr_scheme: str = "exchangeable"
    smoothed: bool = False
    tested_group: int = 0
    seed: int = 0
    design_seed: int | None = None
    out_dir: str | None = None

    @property
    def p(self) -> int:
        return int(sum(self.group_sizes))

    def scaled(self, factor: float) -> "ExperimentConfig":
        """Same experiment with the replication count scaled (at least 2)."""
        return dataclasses.replace(self, replications=max(2, int(round(self.replications * factor))))

    def hr_config(self, seed: int) -> HitAndRunConfig:
        return HitAndRunConfig(self.hr_samples, self.hr_burn_in, seed, self.hr_thinning,
                               self.hr_scheme)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["scenarios"] = [dataclasses.asdict(s) for s in self.scenarios]
        return d


@dataclass
class ResultRow:
    experiment: str
    scenario: str
    replication: int
    method: str
    statistic: float
    p_value: float
    flags: str
    wall_ms: float
    seed: int

    def as_list(self) -> list:
        return [getattr(self, f) for f in ROW_FIELDS]


def _beta(p: int, values: dict) -> list:
    beta = np.zeros(p)
    for j, v in values.items():
        beta[j] = v
    return beta.tolist()


def _univariate_betas(p: int) -> dict:
    spread = {j - 1: 4.0 * (11 - j) / math.sqrt(382.0) for j in range(1, 11)}
    return {
        "null": Scenario("null", _beta(p, {})),
        "single": Scenario("single", _beta(p, {0: 4.0})),
        "moderate": Scenario("moderate", _beta(p, {j: 4.0 / math.sqrt(5.0) for j in range(5)})),
        "spread": Scenario("spread", _beta(p, spread)),
    }


def _nuisance_signal(group_size: int, size: float = 0.5) -> dict:
    """First 10 of group 2, first 2 of group 3 and first 5 of group 4."""
    out = {}
    for k, count in ((1, 10), (2, 2), (3, 5)):
        out.update({k * group_size + j: size for j in range(count)})
    return out


def _multivariate_scenario(label, group_size, beta_star, p):
    values = _nuisance_signal(group_size)
    if beta_star:
        values.update({0: beta_star, 1: beta_star})
    return Scenario(label, _beta(p, values))


def preset(name: str) -> ExperimentConfig:
    """Named experiment configurations at desk scale (B = 200, chains of 10k after 2k)."""
    uni_methods = [m for m in UNIVARIATE_METHODS if m != "LR-or"]
    if name in ("null", "table2-single", "table2-moderate", "table2-spread"):
        betas = _univariate_betas(50)
        label = "null" if name == "null" else name.split("-", 1)[1]
        methods = uni_methods if label == "null" else list(UNIVARIATE_METHODS)
        return ExperimentConfig(name, "univariate", 100, [50], rho=0.0,
                                scenarios=[betas[label]], methods=methods)
    if name == "fig1":
        return ExperimentConfig(name, "ridge", 100, [50], rho=0.3, ridge_lambda=10.0,
                                scenarios=[Scenario("null", theta=[0.0]),
                                           Scenario("theta=1.2", theta=[1.2])],
                                methods=["F", "LR"])
    if name in ("fig4-null", "fig4-signal"):
        beta_star = 0.0 if name == "fig4-null" else 2.0
        return ExperimentConfig(name, "multivariate", 100, [25] * 4, rho=0.3,
                                scenarios=[_multivariate_scenario(name[5:], 25, beta_star, 100)],
                                methods=["ALR-lasso", "ELR-lasso"],
                                # each ELR replicate is a pair of Newton fits: keep every 5th of 10k
                                hr_samples=2_000, hr_thinning=5)
    if name == "fig5":
        return ExperimentConfig(name, "multivariate", 300, [50] * 4, rho=0.0,
                                scenarios=[_multivariate_scenario(f"beta*={b:g}", 50, b, 200)
                                           for b in (0.0, 2.0, 3.0)],
                                methods=["ALR-lasso", "ALR-all", "ALR-or", "F", "F-all",
                                         "t-mean", "t-PC"])
    raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


PRESETS = ("null", "table2-single", "table2-moderate", "table2-spread", "fig1",
           "fig4-null", "fig4-signal", "fig5")


def build_design(cfg: ExperimentConfig) -> GroupedDesign:
    seed = cfg.design_seed if cfg.design_seed is not None else cfg.seed
    return generate_design(cfg.n, cfg.p, cfg.group_sizes, cfg.rho,
                           np.random.default_rng([seed, 0xD5]))


def calibrate(cfg: ExperimentConfig, design: GroupedDesign) -> list[float]:
    """One fixed lasso penalty per group, reused for every replication."""
    lams = []
    for k in range(design.K):
        lam, size, reached = calibrate_lambda(design.group_matrix(k), cfg.target_selected,
                                              cfg.sigma2, cfg.calibration_trials,
                                              np.random.default_rng([cfg.seed, 0xCA, k]))
        log.info("group %d: lambda %.4g selects %.2f columns on average", k, lam, size)
        lams.append(float(lam))
    return lams


def replication_seed(cfg: ExperimentConfig, scenario_index: int, replication: int) -> int:
    """Counter-based stream: the seed depends only on (root, scenario, replication)."""
    ss = np.random.SeedSequence([cfg.seed, scenario_index, replication])
    return int(ss.generate_state(1, np.uint32)[0])


def _ridge_hat(cfg, design):
    return make_hat(design.group_matrix(0), "ridge", cfg.ridge_lambda)


def run_replication(cfg: ExperimentConfig, design: GroupedDesign, lams, s_index: int,
                    replication: int) -> list[ResultRow]:
    """All methods of the roster on one response; failures become flagged rows."""
    scenario = cfg.scenarios[s_index]
    seed = replication_seed(cfg, s_index, replication)
    rng = np.random.default_rng(seed)
    if scenario.theta is not None:
        hats = [_ridge_hat(cfg, design)] if cfg.model == "ridge" else None
        y = prototype_response(hats, scenario.theta, scenario.mu, cfg.sigma2, rng)
    else:
        y = linear_response(design, scenario.beta, cfg.sigma2, rng)
    hr_seed = int(rng.integers(2**31))
    start = time.perf_counter()
    try:
        results = _dispatch(cfg, design, lams, scenario, y, hr_seed)
        error = None
    except Exception as exc:  # recorded, the run continues
        log.warning("%s/%s replication %d failed: %s", cfg.name, scenario.label, replication, exc)
        results, error = {}, f"error:{type(exc).__name__}:{exc}"
    elapsed = (time.perf_counter() - start) * 1000.0 / max(1, len(cfg.methods))
    rows = []
    for m in cfg.methods:
        res = results.get(m)
        if res is None:
            rows.append(ResultRow(cfg.name, scenario.label, replication, m, math.nan, math.nan,
                                  error or "error:missing", elapsed, hr_seed))
        else:
            rows.append(ResultRow(cfg.name, scenario.label, replication, m, float(res.statistic),
                                  float(res.p_value), ";".join(sorted(res.flags)), elapsed,
                                  res.seed if res.seed is not None else hr_seed))
    return rows


def _dispatch(cfg, design, lams, scenario, y, hr_seed):
    if cfg.model == "ridge":
        return run_ridge_tests(design.group_matrix(0), y, cfg.sigma2, cfg.ridge_lambda)
    if cfg.model == "univariate":
        support = scenario.support()
        methods = [m for m in cfg.methods if m != "LR-or" or support.size]
        return run_univariate_tests(methods, design.group_matrix(0), y, cfg.sigma2, lams[0],
                                    cfg.hr_config(hr_seed), support if support.size else None,
                                    cfg.smoothed)
    if cfg.model == "multivariate":
        supports = None
        if scenario.beta is not None:
            nz = np.asarray(scenario.beta) != 0
            supports = [np.flatnonzero(nz[g]) for g in design.groups]
        return run_multivariate_tests(cfg.methods, design, y, cfg.sigma2, lams,
                                      cfg.hr_config(hr_seed), cfg.tested_group, supports,
                                      smoothed=cfg.smoothed)
    raise ValueError(f"unknown model {cfg.model!r}")


def worker_count() -> int:
    cap = os.environ.get("PROTOSEL_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ValueError("PROTOSEL_THREADS must be a positive integer") from None
    return n


def _init_worker():
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(1)
    except ImportError:  # pragma: no cover
        pass


def _job(args):
    cfg, design, lams, s_index, rep = args
    return run_replication(cfg, design, lams, s_index, rep)


def run_experiment(cfg: ExperimentConfig, workers: int | None = None, progress=None):
    """Run the roster over all scenarios and replications.

    Returns ``(rows, summary)``; with ``cfg.out_dir`` set also writes
    ``<name>_rows.csv`` and ``<name>_summary.json``.
    """
    design = build_design(cfg)
    needs_lambda = cfg.model in ("univariate", "multivariate")
    lams = calibrate(cfg, design) if needs_lambda else []
    jobs = [(cfg, design, lams, s, r) for s in range(len(cfg.scenarios))
            for r in range(cfg.replications)]
    workers = worker_count() if workers is None else workers
    rows: list[ResultRow] = []
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers, initializer=_init_worker) as pool:
            for i, batch in enumerate(pool.map(_job, jobs, chunksize=max(1, len(jobs) // (8 * workers)))):
                rows.extend(batch)
                if progress:
                    progress(i + 1, len(jobs))
    else:
        for i, job in enumerate(jobs):
            rows.extend(_job(job))
            if progress:
                progress(i + 1, len(jobs))
    summary = summarize(cfg, rows, lams)
    if cfg.out_dir:
        write_outputs(cfg, rows, summary)
    return rows, summary


def summarize(cfg: ExperimentConfig, rows, lams=()) -> dict:
    """Power at each alpha, KS uniformity and QQ coordinates per (scenario, method)."""
    table = {}
    for s in cfg.scenarios:
        for m in cfg.methods:
            p = np.array([r.p_value for r in rows if r.scenario == s.label and r.method == m])
            ok = p[np.isfinite(p)]
            entry = {"replications": int(p.size), "failed": int(p.size - ok.size)}
            if ok.size:
                entry["power"] = {str(a): float(np.mean(ok <= a)) for a in ALPHAS}
                entry["ks_pvalue"] = float(stats.kstest(ok, "uniform").pvalue)
                srt = np.sort(ok)
                entry["qq"] = {"uniform": ((np.arange(ok.size) + 0.5) / ok.size).tolist(),
                               "p_value": srt.tolist()}
            table.setdefault(s.label, {})[m] = entry
    return {"schema_version": SCHEMA_VERSION, "experiment": cfg.name, "config": cfg.to_dict(),
            "lambdas": list(lams), "alphas": list(ALPHAS), "results": table}


def write_outputs(cfg: ExperimentConfig, rows, summary) -> tuple[Path, Path]:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows_path = out / f"{cfg.name}_rows.csv"
    with rows_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ROW_FIELDS)
        for r in rows:
            w.writerow(r.as_list())
    summary_path = out / f"{cfg.name}_summary.json"
    summary_path.write_text(json.dumps(summary, indent=1))
    return rows_path, summary_path


def power_from_rows(rows, scenario: str, method: str, alpha: float) -> float:
    p = np.array([r.p_value for r in rows if r.scenario == scenario and r.method == method])
    p = p[np.isfinite(p)]
    return float(np.mean(p <= alpha)) if p.size else math.nan


# ---------------------------------------------------------------- benchmarks

@dataclass
class BenchConfig:
    ns: tuple = (100, 200, 500)
    sparsities: tuple = (0.05, 0.3)
    replications: int = 200
    K: int = 4
    rho: float = 0.3
    seed: int = 0


def _elr_once(stack, y, method):
    A, a, _ = stack.prototype_stats(stack.U.T @ y)
    obj = ProfiledObjective(make_solver(stack, method), A, a, float(y @ y), 1.0)
    return likelihood_ratio(obj, stack.K, 0)[0]


def _alr_once(stack, sizes, Htr, y):
    A, a, _ = stack.prototype_stats(stack.U.T @ y)
    return alr_from_stats(A, a, sizes, Htr, 1.0, 0)


def bench_statistics(cfg: BenchConfig = BenchConfig()) -> list[dict]:
    """Mean milliseconds per statistic: ELR with a dense inverse, ELR with
    Sherman-Morrison, and the closed-form ALR."""
    rows = []
    for alpha in cfg.sparsities:
        for n in cfg.ns:
            gsize = n // cfg.K
            design = generate_design(n, gsize * cfg.K, [gsize] * cfg.K, cfg.rho,
                                     np.random.default_rng([cfg.seed, n]))
            m = int(math.floor(0.25 * alpha * n))
            if m < 1:
                raise ValueError(f"no columns selected at n={n}, alpha={alpha}")
            hats = [make_hat(design.group_matrix(k)[:, :m], "lasso_refit") for k in range(cfg.K)]
            stack = HatStack(hats)
            sizes = np.array([h.trace for h in hats])
            Htr = stack.trace_products()
            Y = np.random.default_rng([cfg.seed, n, 1]).standard_normal((cfg.replications, n))
            timings = {}
            for label, fn in (("ELR-naive", lambda y: _elr_once(stack, y, "dense")),
                              ("ELR-SM", lambda y: _elr_once(stack, y, "sherman_morrison")),
                              ("ALR", lambda y: _alr_once(stack, sizes, Htr, y))):
                start = time.perf_counter()
                for y in Y:
                    fn(y)
                timings[label] = (time.perf_counter() - start) * 1000.0 / cfg.replications
            rows.append({"alpha": alpha, "n": n, "selected_per_group": m, **timings})
    return rows


# ------------------------------------------------------------------ datasets

def _read_numeric_csv(path, what: str):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{what} {path}: file is empty") from None
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise ValueError(f"{what} {path}, line {lineno}: expected {len(header)} fields, "
                                 f"found {len(rec)}")
            vals = []
            for j, c in enumerate(rec):
                c = c.strip()
                if c == "" or c.lower() in ("na", "nan"):
                    raise ValueError(f"{what} {path}, line {lineno}: missing value in column "
                                     f"{header[j]!r}")
                try:
                    vals.append(float(c))
                except ValueError:
                    raise ValueError(f"{what} {path}, line {lineno}: non-numeric value {c!r}") from None
            rows.append(vals)
    if not rows:
        raise ValueError(f"{what} {path}: no data rows")
    return [h.strip() for h in header], np.array(rows)


def read_groups(path, p: int) -> list[list[int]]:
    """``column_index,group_id`` rows; ids must be 0..K-1 without gaps."""
    header, data = _read_numeric_csv(path, "groups file")
    if data.shape[1] != 2:
        raise ValueError(f"groups file {path}: expected columns column_index,group_id")
    cols = data[:, 0].astype(int)
    ids = data[:, 1].astype(int)
    if np.any(cols < 0) or np.any(cols >= p):
        bad = int(cols[(cols < 0) | (cols >= p)][0])
        raise ValueError(f"groups file {path}: column index {bad} outside [0, {p})")
    K = int(ids.max()) + 1
    present = set(ids.tolist())
    for k in range(K):
        if k not in present:
            raise ValueError(f"groups file {path}: group id {k} has no columns (ids must be 0..{K - 1})")
    if ids.min() < 0:
        raise ValueError(f"groups file {path}: unknown group id {int(ids.min())}")
    return [sorted(cols[ids == k].tolist()) for k in range(K)]


def load_dataset(path, groups_path, y_path=None) -> tuple[GroupedDesign, np.ndarray]:
    """Read a design CSV (last column ``y`` unless ``y_path`` is given) and a groups file."""
    header, data = _read_numeric_csv(path, "data file")
    if y_path is not None:
        _, yd = _read_numeric_csv(y_path, "response file")
        if yd.shape[1] != 1 or yd.shape[0] != data.shape[0]:
            raise ValueError(f"response file {y_path}: need one column with {data.shape[0]} rows")
        X, y = data, yd[:, 0]
    else:
        if header[-1] != "y":
            raise ValueError(f"data file {path}: last column must be 'y' when no response file is given")
        X, y = data[:, :-1], data[:, -1]
    groups = read_groups(groups_path, X.shape[1])
    return GroupedDesign.from_raw(X, groups), y


def save_dataset(path, groups_path, X, y, groups) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j}" for j in range(X.shape[1])] + ["y"])
        for row, yi in zip(X, y):
            w.writerow([repr(float(v)) for v in row] + [repr(float(yi))])
    with open(groups_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["column_index", "group_id"])
        for k, g in enumerate(groups):
            for j in g:
                w.writerow([int(j), k])
