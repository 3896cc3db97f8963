"""Experiment harness: config parsing, multi-seed runs, rate fits, reports.

A single JSON config tree (with an explicit schema version; unknown keys
are errors) drives three modes:

* ``optimize``   - multi-seed line-search runs on a built-in problem; per
  cell stopping times T_eps are extracted for every rung of an eps ladder
  from one trajectory per seed (the cells of one seed share the trajectory
  prefix, so separate runs per rung would reproduce the same numbers), and
  the mean T_eps are regressed against the transform of eps appropriate to
  the convexity regime.
* ``rrprocess``  - the stopped-process grid; every cell's Monte Carlo mean
  is compared against the theorem bound, with a dynamic-programming cross
  check where exact.
* ``lemma_suite``- randomized, constructed-instance checks of the one-step
  implications used by the analysis.

Outputs are CSV (comma separated, '.' decimal, 17 significant digits, LF,
header row) plus a plain-text report.  Per-cell rng streams are derived
counter-style from the master seed, so results are byte-identical across
reruns and worker counts; merging is a pure keyed reduction.

Exit codes: 0 success, 2 config/schema violation, 3 runtime abort or
failed lemma check.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rrprocess as rrp
from .linesearch import (
    DescentDirection,
    DirectionMode,
    LineSearchConfig,
    StreamFactory,
    Trace,
    armijo_test,
    reliability_test,
    run,
    scaled_newton_provider,
    trace_to_csv,
)
from .oracle import Convexity, Problem, QuadraticProblem, make_builtin
from .potential import (
    PotentialConfig,
    StoppingSpec,
    annotate_trace,
    auto_nu,
    expected_stop_bounds,
    running_min_improves,
    step_size_drift,
    theoretical_constants,
)
from .sampling import AccuracyConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


def _check_keys(section: dict, path: str, required: tuple, optional: tuple = ()):
    if not isinstance(section, dict):
        raise ConfigError(f"{path}: expected an object")
    unknown = set(section) - set(required) - set(optional)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    missing = set(required) - set(section)
    if missing:
        raise ConfigError(f"{path}: missing keys {sorted(missing)}")


@dataclass
class ExperimentConfig:
    mode: str
    master_seed: int
    output_dir: str
    seeds: list[int] = field(default_factory=list)
    problem_kind: str = ""
    problem_n: int = 0
    problem_N: int = 0
    problem_seed: int = 0
    problem_options: dict = field(default_factory=dict)
    linesearch: LineSearchConfig | None = None
    variant: Convexity = Convexity.NONCONVEX
    nu: float | None = None  # None means auto
    metric: str = "grad"
    eps_ladder: list[float] = field(default_factory=list)
    max_iters: int = 10_000
    exact_diagnostics: bool = True
    workers: int = 1
    rr_cells: list[rrp.RRProcessConfig] = field(default_factory=list)
    lemma_instances: int = 1000


def parse_config(tree: dict) -> ExperimentConfig:
    _check_keys(
        tree, "config",
        required=("schema_version", "mode", "master_seed"),
        optional=("output_dir", "seeds", "problem", "linesearch", "potential",
                  "stopping", "exact_diagnostics", "workers", "rrprocess", "lemma_instances"),
    )
    if tree["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"config: unsupported schema_version {tree['schema_version']}")
    mode = tree["mode"]
    if mode not in ("optimize", "rrprocess", "lemma_suite"):
        raise ConfigError(f"config: unknown mode {mode!r}")
    cfg = ExperimentConfig(
        mode=mode,
        master_seed=int(tree["master_seed"]),
        output_dir=str(tree.get("output_dir", "out")),
        exact_diagnostics=bool(tree.get("exact_diagnostics", True)),
        workers=int(tree.get("workers", 1)),
        lemma_instances=int(tree.get("lemma_instances", 1000)),
    )
    if cfg.workers < 1:
        raise ConfigError("config.workers: must be >= 1")

    if mode == "optimize":
        for key in ("problem", "linesearch", "stopping", "seeds", "potential"):
            if key not in tree:
                raise ConfigError(f"config: mode optimize requires {key!r}")
        seeds = tree["seeds"]
        if not isinstance(seeds, list) or not seeds:
            raise ConfigError("config.seeds: nonempty list required")
        cfg.seeds = [int(s) for s in seeds]

        prob = tree["problem"]
        _check_keys(prob, "problem", required=("kind", "n", "N", "seed"), optional=("options",))
        cfg.problem_kind = prob["kind"]
        cfg.problem_n = int(prob["n"])
        cfg.problem_N = int(prob["N"])
        cfg.problem_seed = int(prob["seed"])
        cfg.problem_options = dict(prob.get("options", {}))

        ls = tree["linesearch"]
        _check_keys(
            ls, "linesearch", required=(),
            optional=("gamma", "theta", "alpha_max", "alpha0", "delta0", "delta_max",
                      "direction_mode", "accuracy"),
        )
        acc_tree = ls.get("accuracy", {})
        _check_keys(
            acc_tree, "linesearch.accuracy", required=(),
            optional=("kappa_g", "kappa_f", "kappa_f_bar", "p_g", "p_f", "max_batch", "guess_growth"),
        )
        theta = float(ls.get("theta", 0.5))
        accuracy = AccuracyConfig(
            kappa_g=float(acc_tree.get("kappa_g", 2.0)),
            kappa_f=float(acc_tree.get("kappa_f", theta / (4.0 * float(ls.get("alpha_max", 1.0))))),
            kappa_f_bar=float(acc_tree.get("kappa_f_bar", 0.0)),
            p_g=float(acc_tree.get("p_g", 16.0 / 17.0)),
            p_f=float(acc_tree.get("p_f", 0.9)),
            theta=theta,
            max_batch=int(acc_tree.get("max_batch", 10**6)),
            guess_growth=float(acc_tree.get("guess_growth", 2.0)),
        )
        delta0 = float(ls.get("delta0", 1.0))
        gamma = float(ls.get("gamma", 2.0))
        delta_max = ls.get("delta_max", "auto")
        if delta_max == "auto":
            delta_max = LineSearchConfig.default_delta_max(delta0, gamma)
        elif delta_max is not None:
            delta_max = float(delta_max)
        try:
            cfg.linesearch = LineSearchConfig(
                gamma=gamma,
                theta=theta,
                alpha_max=float(ls.get("alpha_max", 1.0)),
                alpha0=float(ls.get("alpha0", ls.get("alpha_max", 1.0))),
                delta0=delta0,
                accuracy=accuracy,
                direction_mode=DirectionMode(ls.get("direction_mode", "steepest")),
                delta_max=delta_max,
            )
        except ValueError as exc:
            raise ConfigError(f"linesearch: {exc}") from exc

        pot = tree["potential"]
        _check_keys(pot, "potential", required=("variant",), optional=("nu",))
        cfg.variant = Convexity(pot["variant"])
        nu = pot.get("nu", "auto")
        cfg.nu = None if nu == "auto" else float(nu)

        stop = tree["stopping"]
        _check_keys(stop, "stopping", required=("metric", "eps_ladder", "max_iters"), optional=())
        if stop["metric"] not in ("grad", "gap"):
            raise ConfigError("stopping.metric: must be 'grad' or 'gap'")
        cfg.metric = stop["metric"]
        ladder = [float(e) for e in stop["eps_ladder"]]
        if len(ladder) < 1 or any(e <= 0 for e in ladder):
            raise ConfigError("stopping.eps_ladder: positive values required")
        if any(b >= a for a, b in zip(ladder, ladder[1:])):
            raise ConfigError("stopping.eps_ladder: must be strictly decreasing")
        cfg.eps_ladder = ladder
        cfg.max_iters = int(stop["max_iters"])
    elif mode == "rrprocess":
        if "rrprocess" not in tree:
            raise ConfigError("config: mode rrprocess requires an 'rrprocess' section")
        rr = tree["rrprocess"]
        _check_keys(rr, "rrprocess", required=(), optional=("grid", "trials", "max_steps", "cells"))
        trials = int(rr.get("trials", 100_000))
        max_steps = int(rr.get("max_steps", 100_000))
        if rr.get("grid", "default") == "default" and "cells" not in rr:
            cfg.rr_cells = rrp.default_grid(trials=trials, max_steps=max_steps)
        else:
            cells = []
            for i, cell in enumerate(rr.get("cells", [])):
                _check_keys(
                    cell, f"rrprocess.cells[{i}]",
                    required=("p", "lam", "A0", "j_max", "j_bar", "Theta", "h", "Phi0"),
                    optional=("trials", "max_steps"),
                )
                h = cell["h"]
                _check_keys(h, f"rrprocess.cells[{i}].h", required=("kind",), optional=("value", "table"))
                h_spec = rrp.HSpec(
                    kind=h["kind"], value=float(h.get("value", 1.0)),
                    table={int(k): float(v) for k, v in h["table"].items()} if h.get("table") else None,
                )
                cells.append(rrp.RRProcessConfig(
                    p=float(cell["p"]), lam=float(cell["lam"]), A0=float(cell["A0"]),
                    j_max=int(cell["j_max"]), j_bar=int(cell["j_bar"]),
                    Theta=float(cell["Theta"]), h_spec=h_spec, Phi0=float(cell["Phi0"]),
                    trials=int(cell.get("trials", trials)), max_steps=int(cell.get("max_steps", max_steps)),
                ))
            if not cells:
                raise ConfigError("rrprocess.cells: nonempty list required")
            cfg.rr_cells = cells
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            tree = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(tree)


# ---------------------------------------------------------------------------
# optimize mode


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def build_problem(cfg: ExperimentConfig) -> Problem:
    return make_builtin(
        cfg.problem_kind, cfg.problem_n, cfg.problem_N, cfg.problem_seed, **cfg.problem_options
    )


def _crossing_times(trace: Trace, problem: Problem, metric: str, ladder, f_star):
    """First index (state counter) at which each ladder rung is crossed."""
    if metric == "grad":
        series = [r.gradnorm_exact for r in trace.records] + [trace.summary.final_gradnorm_exact]
        hits = {eps: next((k for k, v in enumerate(series) if v < eps), None) for eps in ladder}
    else:
        series = [r.f_exact - f_star for r in trace.records] + [trace.summary.final_f_exact - f_star]
        hits = {eps: next((k for k, v in enumerate(series) if v <= eps), None) for eps in ladder}
    return hits


@dataclass
class SeedResult:
    seed: int
    t_eps: dict
    drift_fraction: float
    runmin_improves: bool
    in_region_fraction: float
    iterations: int
    stop_reason: str
    n_capped_grad: int
    n_capped_fun: int
    trace: Trace


def _run_seed(problem: Problem, cfg: ExperimentConfig, seed: int, a_bar_grid: float) -> SeedResult:
    ls = cfg.linesearch
    stop = StoppingSpec(
        eps_grad=min(cfg.eps_ladder) if cfg.metric == "grad" else None,
        eps_gap=min(cfg.eps_ladder) if cfg.metric == "gap" else None,
        max_iters=cfg.max_iters,
    )
    streams = StreamFactory((cfg.master_seed, seed))
    trace = run(problem, ls, stop, streams)
    if cfg.exact_diagnostics:
        nu = cfg.nu if cfg.nu is not None else auto_nu(
            ls.accuracy.kappa_g, ls.alpha_max, ls.gamma, ls.theta
        )
        pot = PotentialConfig(
            nu=nu, L=problem.metadata.lipschitz_L, f_min=problem.metadata.f_min,
            theta=ls.theta, f_star=problem.metadata.f_star, variant=cfg.variant,
        )
        annotate_trace(trace, problem, ls.accuracy, pot)
    hits = _crossing_times(trace, problem, cfg.metric, cfg.eps_ladder, problem.metadata.f_star)
    in_region = (
        np.mean([problem.in_certified_region(r.x_before) for r in trace.records])
        if trace.records else 1.0
    )
    return SeedResult(
        seed=seed,
        t_eps=hits,
        drift_fraction=step_size_drift(trace, a_bar_grid),
        runmin_improves=running_min_improves(trace),
        in_region_fraction=float(in_region),
        iterations=trace.summary.iterations,
        stop_reason=trace.summary.stop_reason,
        n_capped_grad=trace.summary.n_capped_grad,
        n_capped_fun=trace.summary.n_capped_fun,
        trace=trace,
    )


def _seed_worker(args):
    problem, cfg, seed, a_bar = args
    return _run_seed(problem, cfg, seed, a_bar)


@dataclass(frozen=True)
class RateFit:
    regime: Convexity
    slope: float
    intercept: float
    r_squared: float
    per_eps_means: tuple  # (eps, mean_t, n_used, n_censored) per rung

    def describe(self) -> str:
        lines = [
            f"rate fit ({self.regime.value}): slope={self.slope:.4f} "
            f"intercept={self.intercept:.4f} r2={self.r_squared:.4f}",
        ]
        for eps, mean_t, used, cens in self.per_eps_means:
            lines.append(f"  eps={eps:g}: mean T={mean_t:.3f} over {used} seeds ({cens} censored)")
        return "\n".join(lines)


def fit_rate(summary_rows, regime: Convexity) -> RateFit:
    """OLS on the regime's transform of the (eps, mean T_eps) table.

    nonconvex and convex regress log(mean T) on log(1/eps) (expected slopes
    2 and 1); strongly convex regresses mean T on log(1/eps).  Censored
    cells are excluded from their rung's mean; a fully censored rung
    refuses the fit.
    """
    regime = Convexity(regime)
    by_eps: dict[float, list] = {}
    for row in summary_rows:
        by_eps.setdefault(row["eps"], []).append(row)
    eps_levels = sorted(by_eps, reverse=True)
    if len(eps_levels) < 3:
        raise ValueError("rate fit needs at least 3 eps levels")
    per_eps = []
    for eps in eps_levels:
        rows = by_eps[eps]
        if len(rows) < 10:
            raise ValueError("rate fit needs at least 10 seeds per eps level")
        ok = [r["t_eps"] for r in rows if not r["censored"]]
        n_cens = len(rows) - len(ok)
        if not ok:
            raise ValueError(f"eps level {eps} fully censored; fit refused")
        per_eps.append((eps, float(np.mean(ok)), len(ok), n_cens))
    x = np.log([1.0 / e for e, *_ in per_eps])
    means = np.array([m for _, m, *_ in per_eps])
    y = np.log(np.maximum(means, 1e-300)) if regime != Convexity.STRONGLY_CONVEX else means
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r_sq = 1.0 if ss_tot <= 1e-300 and ss_res <= 1e-12 else 1.0 - ss_res / max(ss_tot, 1e-300)
    return RateFit(
        regime=regime, slope=float(slope), intercept=float(intercept),
        r_squared=float(r_sq), per_eps_means=tuple(per_eps),
    )


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    seed_results: list[SeedResult]
    summary_rows: list[dict]
    fit: RateFit | None
    bounds: list
    constants: object
    aborted: bool


def execute_experiment(cfg: ExperimentConfig, workers: int | None = None) -> ExperimentResult:
    problem = build_problem(cfg)
    constants = theoretical_constants(cfg.linesearch, problem.metadata)
    a_bar = constants.a_bar_grid
    n_workers = workers if workers is not None else cfg.workers

    tasks = [(problem, cfg, seed, a_bar) for seed in cfg.seeds]
    if n_workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_seed_worker, tasks))
    else:
        results = [_seed_worker(t) for t in tasks]
    results.sort(key=lambda r: cfg.seeds.index(r.seed))

    rows = []
    for res in results:
        for eps in cfg.eps_ladder:
            t = res.t_eps.get(eps)
            rows.append({
                "seed": res.seed, "eps": eps,
                "t_eps": t if t is not None else None,
                "censored": t is None,
            })
    fit = None
    if len(cfg.eps_ladder) >= 3 and len(cfg.seeds) >= 10:
        try:
            fit = fit_rate(rows, cfg.variant)
        except ValueError:
            fit = None
    try:
        bounds = expected_stop_bounds(
            cfg.linesearch, problem.metadata, problem, problem.default_start(),
            cfg.eps_ladder, cfg.variant, delta_max=cfg.linesearch.delta_max,
        )
    except ValueError:
        bounds = []
    aborted = any(r.stop_reason == "aborted" for r in results)
    return ExperimentResult(
        config=cfg, seed_results=results, summary_rows=rows,
        fit=fit, bounds=bounds, constants=constants, aborted=aborted,
    )


def write_summary_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["seed", "eps", "T_eps", "censored"])
        for row in rows:
            writer.writerow([
                _fmt(row["seed"]), _fmt(row["eps"]),
                _fmt(row["t_eps"]) if not row["censored"] else "",
                _fmt(row["censored"]),
            ])


def write_optimize_outputs(result: ExperimentResult, out_dir):
    out = Path(out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    write_summary_csv(result.summary_rows, out / "summary.csv")
    for res in result.seed_results:
        trace_to_csv(res.trace, out / "traces" / f"trace_seed{res.seed}.csv")

    lines = [result.constants.describe(), ""]
    if result.bounds:
        lines.append("expected stopping-time bounds (walk p = p_g * p_f):")
        for b in result.bounds:
            lines.append(f"  eps={b.eps:g}: E[T] <= {b.bound:.6g}")
        lines.append("")
    with open(out / "constants.txt", "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")

    rep = []
    if result.fit is not None:
        rep.append(result.fit.describe())
    rep.append("")
    rep.append("per-seed diagnostics:")
    for res in result.seed_results:
        rep.append(
            f"  seed {res.seed}: iters={res.iterations} stop={res.stop_reason} "
            f"alpha>=Abar fraction={res.drift_fraction:.3f} "
            f"running-min improves={res.runmin_improves} "
            f"in-region fraction={res.in_region_fraction:.3f} "
            f"capped grad/fun={res.n_capped_grad}/{res.n_capped_fun}"
        )
    censored = sum(1 for r in result.summary_rows if r["censored"])
    rep.append(f"censored cells: {censored} of {len(result.summary_rows)}")
    with open(out / "report.txt", "w", newline="") as fh:
        fh.write("\n".join(rep) + "\n")


# ---------------------------------------------------------------------------
# rrprocess mode


def _rr_worker(args):
    cell, entropy, index, with_dp = args
    rng = np.random.default_rng(np.random.SeedSequence(entropy, spawn_key=(index,)))
    est = rrp.estimate_expected_stop(cell, rng)
    dp = None
    if with_dp and cell.h_spec.kind == "constant":
        dp = rrp.dp_expected_stop(cell)
    elif with_dp and cell.h_spec.kind == "identity" and cell.p >= 0.85:
        try:
            dp = rrp.dp_expected_stop(cell)
        except ValueError:
            dp = None
    return index, est, dp


def execute_rrprocess(cfg: ExperimentConfig, workers: int | None = None, with_dp: bool = True):
    n_workers = workers if workers is not None else cfg.workers
    tasks = [(cell, cfg.master_seed, i, with_dp) for i, cell in enumerate(cfg.rr_cells)]
    if n_workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            out = list(pool.map(_rr_worker, tasks))
    else:
        out = [_rr_worker(t) for t in tasks]
    out.sort(key=lambda item: item[0])
    return [(cfg.rr_cells[i], est, dp) for i, est, dp in out]


RR_COLUMNS = (
    "p", "lam", "h_kind", "A0", "A_bar", "alpha_max", "Theta", "Phi0", "trials",
    "mean", "ci_lo", "ci_hi", "bound", "satisfied", "censored", "dp_mean",
)


def write_rrprocess_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RR_COLUMNS)
        for cell, est, dp in rows:
            writer.writerow([
                _fmt(cell.p), _fmt(cell.lam), cell.h_spec.kind, _fmt(cell.A0),
                _fmt(cell.a_bar), _fmt(cell.alpha_max), _fmt(cell.Theta), _fmt(cell.Phi0),
                _fmt(cell.trials), _fmt(est.mean), _fmt(est.ci95[0]), _fmt(est.ci95[1]),
                _fmt(est.bound), _fmt(est.satisfied), _fmt(est.censored),
                _fmt(dp) if dp is not None else "",
            ])


# ---------------------------------------------------------------------------
# lemma suite: randomized constructed-instance checks of the one-step
# implications (accuracy => norm lower bound; accuracy + small step =>
# success; accuracy + success => decrease; success => gradient growth
# bound; and the general-direction variants).


def _instance_problem(rng, n, lips):
    eigs = np.sort(np.concatenate([rng.uniform(0.2 * lips, lips, size=n - 1), [lips]]))
    center = rng.normal(size=n)
    return QuadraticProblem(eigs, center, np.zeros((1, n, n)))


def _accurate_gradient(rng, grad_true, radius_factor, boundary=False):
    """g with ||g - grad_true|| = t * kappa_g * alpha * ||g||, solved by
    fixed-point iteration (contractive whenever radius_factor * t < 1)."""
    t = 1.0 - 1e-9 if boundary else rng.uniform(0.0, 0.95)
    direction = rng.normal(size=grad_true.size)
    direction /= np.linalg.norm(direction)
    g = grad_true.copy()
    for _ in range(200):
        g_new = grad_true + t * radius_factor * np.linalg.norm(g) * direction
        if np.allclose(g_new, g, rtol=1e-15, atol=0.0):
            g = g_new
            break
        g = g_new
    err = np.linalg.norm(g - grad_true)
    if err > radius_factor * np.linalg.norm(g) * (1.0 + 1e-12):
        return None
    return g


@dataclass(frozen=True)
class LemmaCheck:
    name: str
    instances: int
    failures: int

    @property
    def passed(self) -> bool:
        return self.failures == 0


@dataclass(frozen=True)
class LemmaSuiteReport:
    checks: tuple

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def describe(self) -> str:
        lines = ["lemma suite:"]
        for c in self.checks:
            status = "pass" if c.passed else f"FAIL ({c.failures} of {c.instances})"
            lines.append(f"  {c.name}: {status}")
        return "\n".join(lines)


def lemma_suite(instances: int = 1000, seed: int = 20_240) -> LemmaSuiteReport:
    rng = np.random.default_rng(seed)
    theta = 0.5
    gamma = 2.0
    alpha_max = 1.0
    kappa_g = 2.0
    kappa_f = theta / (4.0 * alpha_max) * 0.999  # strict, as the decrease lemma requires
    checks = []

    def record(name, failures, n=instances):
        checks.append(LemmaCheck(name=name, instances=n, failures=failures))

    # accurate gradient => lower bound on ||g||
    fails = 0
    for i in range(instances):
        n = int(rng.integers(2, 8))
        problem = _instance_problem(rng, n, lips=float(rng.uniform(1.0, 20.0)))
        x = problem.center + rng.normal(size=n)
        grad = problem.exact_gradient(x)
        alpha = alpha_max * gamma ** (-int(rng.integers(0, 6)))
        g = _accurate_gradient(rng, grad, kappa_g * alpha, boundary=(i % 10 == 0))
        if g is None:
            continue
        if np.linalg.norm(grad) > (kappa_g * alpha_max + 1.0) * np.linalg.norm(g) * (1.0 + 1e-9):
            fails += 1
    record("accurate_gradient_norm_lower_bound", fails)

    # accuracy + small step => success (steepest)
    fails = 0
    for i in range(instances):
        n = int(rng.integers(2, 8))
        lips = float(rng.uniform(1.0, 20.0))
        problem = _instance_problem(rng, n, lips)
        x = problem.center + rng.normal(size=n)
        grad = problem.exact_gradient(x)
        threshold = (1.0 - theta) / (kappa_g + lips / 2.0 + 2.0 * kappa_f)
        boundary = i % 10 == 0
        alpha = threshold if boundary else threshold * float(rng.uniform(0.05, 1.0))
        g = _accurate_gradient(rng, grad, kappa_g * alpha, boundary=False)
        if g is None:
            continue
        radius = kappa_f * alpha**2 * float(g @ g)
        f_x = problem.exact_value(x)
        f_s = problem.exact_value(x - alpha * g)
        # worst signs for the sufficient-decrease test
        f0_est = f_x - radius
        fs_est = f_s + radius
        if not armijo_test(f0_est, fs_est, alpha, theta, g, -g):
            fails += 1
    record("accuracy_implies_success", fails)

    # accurate estimates + success => function decrease.  The direction need
    # not be accurate, only successful, so draw descent-leaning directions
    # until the success region is reachable with accurate estimates.
    fails = 0
    for _ in range(instances):
        n = int(rng.integers(2, 8))
        lips = float(rng.uniform(1.0, 20.0))
        problem = _instance_problem(rng, n, lips)
        x = problem.center + rng.normal(size=n)
        grad = problem.exact_gradient(x)
        alpha = min(alpha_max, 0.8 * (1.0 - theta) / (lips / 2.0 + 2.0 * kappa_f))
        f_x = problem.exact_value(x)
        for _ in range(50):
            mix = grad / max(np.linalg.norm(grad), 1e-12) + 0.4 * rng.normal(size=n)
            g = mix * float(rng.uniform(0.2, 2.0)) * max(np.linalg.norm(grad), 0.1)
            radius = kappa_f * alpha**2 * float(g @ g)
            f_s = problem.exact_value(x - alpha * g)
            f0_est = f_x + radius * float(rng.uniform(-1, 1))
            fs_cap = f0_est - theta * alpha * float(g @ g)
            lo, hi = f_s - radius, min(f_s + radius, fs_cap)
            if lo <= hi:
                break
        else:
            continue
        fs_est = lo + (hi - lo) * float(rng.random())
        if not armijo_test(f0_est, fs_est, alpha, theta, g, -g):
            continue
        if f_s > f_x - theta * alpha / 2.0 * float(g @ g) + 1e-9 * max(1.0, abs(f_x)):
            fails += 1
        delta_sq = float(rng.uniform(0.0, 1.0)) * alpha * float(g @ g)  # reliable step
        if f_s > f_x - theta * alpha / 4.0 * float(g @ g) - theta / 4.0 * delta_sq + 1e-9 * max(1.0, abs(f_x)):
            fails += 1
    record("accuracy_and_success_imply_decrease", fails)

    # success => gradient growth bound
    fails = 0
    for _ in range(instances):
        n = int(rng.integers(2, 8))
        lips = float(rng.uniform(1.0, 20.0))
        problem = _instance_problem(rng, n, lips)
        x = problem.center + rng.normal(size=n)
        g = rng.normal(size=n) * float(rng.uniform(0.2, 3.0))
        alpha = alpha_max * gamma ** (-int(rng.integers(0, 6)))
        grad_x = problem.exact_gradient(x)
        grad_s = problem.exact_gradient(x - alpha * g)
        lhs = float(grad_s @ grad_s)
        rhs = 2.0 * (lips**2 * alpha**2 * float(g @ g) + float(grad_x @ grad_x))
        if lhs > rhs * (1.0 + 1e-9):
            fails += 1
        lhs2 = (gamma * alpha * lhs - alpha * float(grad_x @ grad_x)) / lips**2
        rhs2 = 2.0 * gamma * alpha * (alpha_max**2 * float(g @ g) + float(grad_x @ grad_x) / lips**2)
        if lhs2 > rhs2 * (1.0 + 1e-9):
            fails += 1
    record("success_gradient_growth_bound", fails)

    # accuracy + success => combined decrease (gradient and true-gradient terms)
    fails = 0
    for _ in range(instances):
        n = int(rng.integers(2, 8))
        lips = float(rng.uniform(1.0, 20.0))
        problem = _instance_problem(rng, n, lips)
        x = problem.center + rng.normal(size=n)
        grad = problem.exact_gradient(x)
        alpha = min(alpha_max, 0.8 * (1.0 - theta) / (kappa_g + lips / 2.0 + 2.0 * kappa_f))
        g = _accurate_gradient(rng, grad, kappa_g * alpha)
        if g is None:
            continue
        radius = kappa_f * alpha**2 * float(g @ g)
        f_x = problem.exact_value(x)
        f_s = problem.exact_value(x - alpha * g)
        f0_est = f_x - radius
        fs_est = f_s + radius
        if not armijo_test(f0_est, fs_est, alpha, theta, g, -g):
            continue
        margin = 1e-9 * max(1.0, abs(f_x))
        bound1 = (
            f_x
            - theta * alpha / 4.0 * float(g @ g)
            - theta * alpha / (4.0 * (kappa_g * alpha_max + 1.0) ** 2) * float(grad @ grad)
        )
        if f_s > bound1 + margin:
            fails += 1
        delta_sq = float(rng.uniform(0.0, 1.0)) * alpha * float(g @ g)
        bound2 = (
            f_x
            - theta * alpha / 8.0 * float(g @ g)
            - theta / 8.0 * delta_sq
            - theta * alpha / (4.0 * (kappa_g * alpha_max + 1.0) ** 2) * float(grad @ grad)
        )
        if f_s > bound2 + margin:
            fails += 1
    record("combined_decrease_bound", fails)

    # general directions: accuracy + small step => success; growth bound
    fails_success = 0
    fails_growth = 0
    for i in range(instances):
        n = int(rng.integers(2, 6))
        lips = float(rng.uniform(1.0, 20.0))
        problem = _instance_problem(rng, n, lips)
        x = problem.center + rng.normal(size=n)
        grad = problem.exact_gradient(x)
        diag = rng.uniform(0.5, 4.0, size=n)
        provider = scaled_newton_provider(np.diag(diag))
        lam_min, lam_max = float(diag.min()), float(diag.max())
        beta = lam_min / lam_max
        threshold = beta * (1.0 - theta) / (kappa_g + lips * lam_max / 2.0 + 2.0 * kappa_f / lam_min)
        boundary = i % 10 == 0
        alpha = threshold if boundary else threshold * float(rng.uniform(0.05, 1.0))
        g = _accurate_gradient(rng, grad, kappa_g * alpha)
        if g is None:
            continue
        direction = provider(g)
        d = direction.d
        radius = kappa_f * alpha**2 * float(g @ g)
        f_x = problem.exact_value(x)
        f_s = problem.exact_value(x + alpha * d)
        if not armijo_test(f_x - radius, f_s + radius, alpha, theta, g, d, mode=DirectionMode.GENERAL):
            fails_success += 1
        grad_s = problem.exact_gradient(x + alpha * d)
        rhs = 2.0 * (lips**2 * alpha**2 * lam_max**2 * float(g @ g) + float(grad @ grad))
        if float(grad_s @ grad_s) > rhs * (1.0 + 1e-9):
            fails_growth += 1
    record("general_direction_accuracy_implies_success", fails_success)
    record("general_direction_gradient_growth_bound", fails_growth)

    # boundary ties: the sufficient-decrease and reliability comparisons accept equality
    fails = 0
    for _ in range(instances):
        n = int(rng.integers(2, 8))
        g = rng.normal(size=n)
        alpha = float(2.0 ** -rng.integers(0, 6))
        f0 = float(rng.normal())
        fs_tie = f0 - alpha * theta * float(np.dot(g, g))
        if not armijo_test(f0, fs_tie, alpha, theta, g, -g):
            fails += 1
        if not armijo_test(f0, fs_tie, alpha, theta, g, -g, mode=DirectionMode.GENERAL):
            fails += 1
    g_tie = np.zeros(3)
    g_tie[0] = 1.0
    if not reliability_test(0.25, g_tie, -g_tie, 0.5):
        fails += 1
    if reliability_test(0.25, math.sqrt(0.99) * g_tie, -g_tie, 0.5):
        fails += 1
    record("tie_acceptance_boundaries", fails)

    return LemmaSuiteReport(checks=tuple(checks))


# ---------------------------------------------------------------------------
# entry points


def run_experiment(config_path, out_dir=None, workers=None, seeds=None, exact_diagnostics=None) -> int:
    """Execute a config file end to end.  Returns the process exit code:
    0 success, 2 config violation, 3 runtime abort / failed lemma check."""
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        print(f"config error: {exc}")
        return 2
    if seeds is not None:
        if not seeds:
            print("config error: empty seeds override")
            return 2
        cfg.seeds = list(seeds)
    if exact_diagnostics is not None:
        cfg.exact_diagnostics = exact_diagnostics
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    if cfg.mode == "optimize":
        result = execute_experiment(cfg, workers=workers)
        write_optimize_outputs(result, out)
        if result.aborted:
            bad = [r.seed for r in result.seed_results if r.stop_reason == "aborted"]
            print(f"runtime abort in seeds {bad}; see {out / 'report.txt'}")
            return 3
        return 0
    if cfg.mode == "rrprocess":
        rows = execute_rrprocess(cfg, workers=workers)
        write_rrprocess_csv(rows, out / "rrprocess.csv")
        n_ok = sum(1 for _, est, _ in rows if est.satisfied)
        print(f"rrprocess: {n_ok} of {len(rows)} cells satisfy the bound")
        return 0
    if cfg.mode == "lemma_suite":
        report = lemma_suite(instances=cfg.lemma_instances, seed=cfg.master_seed)
        with open(out / "lemmas.txt", "w", newline="") as fh:
            fh.write(report.describe() + "\n")
        print(report.describe())
        return 0 if report.passed else 3
    return 2


def render_report(out_dir) -> int:
    """Re-render the rate-fit report from an existing summary.csv."""
    out = Path(out_dir)
    path = out / "summary.csv"
    if not path.exists():
        print(f"no summary.csv under {out}")
        return 2
    rows = []
    with open(path) as fh:
        for rec in csv.DictReader(fh):
            censored = rec["censored"] == "1"
            rows.append({
                "seed": int(rec["seed"]), "eps": float(rec["eps"]),
                "t_eps": None if censored else float(rec["T_eps"]),
                "censored": censored,
            })
    print(f"{len(rows)} cells, {sum(1 for r in rows if r['censored'])} censored")
    for regime in (Convexity.NONCONVEX, Convexity.CONVEX, Convexity.STRONGLY_CONVEX):
        try:
            fit = fit_rate(rows, regime)
        except ValueError as exc:
            print(f"{regime.value}: fit refused ({exc})")
            continue
        print(fit.describe())
    return 0
