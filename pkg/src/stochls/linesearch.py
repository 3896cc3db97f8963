"""Backtracking Armijo line search driven by minibatch estimates.

One iteration:

1. estimate the gradient g at the current step size (sampling module),
2. form a direction d (-g, or any certified descent direction),
3. estimate the objective at the incumbent and at the trial point
   x + alpha * d from two independent batches,
4. test sufficient decrease on the estimates; on success move, grow alpha
   by gamma (capped at alpha_max), and update the control delta: grow
   delta^2 when the predicted decrease alpha*||g||^2 reached delta^2
   (a "reliable" step), shrink it otherwise,
5. on failure stay put and shrink both alpha and delta^2 by gamma.

alpha therefore lives on the geometric grid {gamma^-j * alpha_max} and
behaves like a random walk with upward drift whenever the estimates are
accurate with probability above 1/2.  delta tracks the size of decrease
the estimates can certify and caps the variance requested from the
function-estimate batches.

Randomness is organized per iteration into three labeled streams
(gradient batch, incumbent-value batch, trial-value batch) derived
counter-style from the run's seed, so traces are reproducible no matter
how the inner sampling loops grow their batches.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .oracle import Problem
from .sampling import (
    AccuracyConfig,
    FunctionEstimatePair,
    GradientEstimate,
    estimate_function_pair,
    estimate_gradient,
)

UNDERFLOW_FLOOR = 1e-300


class Outcome(str, Enum):
    SUCCESSFUL_RELIABLE = "successful_reliable"
    SUCCESSFUL_UNRELIABLE = "successful_unreliable"
    UNSUCCESSFUL = "unsuccessful"


class DirectionMode(str, Enum):
    STEEPEST = "steepest"
    GENERAL = "general"


class RunAborted(RuntimeError):
    """Non-finite estimate or step-size underflow; carries a diagnostic."""

    def __init__(self, message, diagnostic):
        super().__init__(message)
        self.diagnostic = diagnostic


@dataclass(frozen=True)
class LineSearchConfig:
    gamma: float = 2.0
    theta: float = 0.5
    alpha_max: float = 1.0
    alpha0: float = 1.0
    delta0: float = 1.0
    accuracy: AccuracyConfig = field(default_factory=AccuracyConfig)
    direction_mode: DirectionMode = DirectionMode.STEEPEST
    delta_max: float | None = None  # None disables the cap

    def __post_init__(self):
        if self.gamma <= 1.0:
            raise ValueError("gamma must exceed 1")
        if not (0.0 < self.theta < 1.0):
            raise ValueError("theta must lie in (0, 1)")
        if self.alpha_max <= 0 or self.alpha0 <= 0 or self.delta0 <= 0:
            raise ValueError("alpha_max, alpha0, delta0 must be positive")
        if self.alpha0 > self.alpha_max * (1.0 + 1e-12):
            raise ValueError("alpha0 must not exceed alpha_max")
        j = math.log(self.alpha_max / self.alpha0) / math.log(self.gamma)
        if abs(j - round(j)) > 1e-12 * max(1.0, abs(j)):
            raise ValueError("alpha0 must equal gamma^j0 * alpha_max for an integer j0 <= 0")
        object.__setattr__(self, "direction_mode", DirectionMode(self.direction_mode))
        self.accuracy.check_against(self.alpha_max)

    @staticmethod
    def default_delta_max(delta0: float, gamma: float) -> float:
        return delta0 * gamma**10


@dataclass
class IterateState:
    x: np.ndarray
    alpha: float
    delta: float
    k: int = 0
    prev_g_norm: float = 0.0

    def copy(self) -> "IterateState":
        return IterateState(self.x.copy(), self.alpha, self.delta, self.k, self.prev_g_norm)


@dataclass(frozen=True)
class DescentDirection:
    """A direction with an angle certificate (cosine with g at most -beta)
    and norm equivalence constants kappa1 <= ||d||/||g|| <= kappa2."""

    d: np.ndarray
    beta: float
    kappa1: float
    kappa2: float

    def __post_init__(self):
        if not (0.0 < self.beta <= 1.0):
            raise ValueError("beta must lie in (0, 1]")
        if self.kappa1 <= 0 or self.kappa2 < self.kappa1:
            raise ValueError("need 0 < kappa1 <= kappa2")

    def check_certificate(self, g: np.ndarray):
        g_norm = float(np.linalg.norm(g))
        d_norm = float(np.linalg.norm(self.d))
        tol = 1e-12
        if g_norm == 0.0:
            if d_norm != 0.0:
                raise ValueError("zero gradient must map to the zero direction")
            return
        if d_norm < self.kappa1 * g_norm * (1.0 - tol) or d_norm > self.kappa2 * g_norm * (1.0 + tol):
            raise ValueError("direction norm violates its kappa certificate")
        cos = float(self.d @ g) / (d_norm * g_norm)
        if cos > -self.beta * (1.0 - tol):
            raise ValueError("direction angle violates its beta certificate")


DirectionProvider = Callable[[np.ndarray], DescentDirection]


def steepest_provider(g: np.ndarray) -> DescentDirection:
    return DescentDirection(d=-g, beta=1.0, kappa1=1.0, kappa2=1.0)


def scaled_newton_provider(matrix: np.ndarray) -> DirectionProvider:
    """Directions d = -M g for a fixed SPD matrix M; the certificate constants
    come from M's spectral range: beta = lam_min/lam_max, kappa_i = lam bounds."""
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or not np.allclose(m, m.T, atol=1e-12):
        raise ValueError("matrix must be square symmetric")
    eigs = np.linalg.eigvalsh(m)
    lam_min, lam_max = float(eigs[0]), float(eigs[-1])
    if lam_min <= 0:
        raise ValueError("matrix must be positive definite")

    def provider(g: np.ndarray) -> DescentDirection:
        dd = DescentDirection(d=-(m @ g), beta=lam_min / lam_max, kappa1=lam_min, kappa2=lam_max)
        dd.check_certificate(g)
        return dd

    return provider


def armijo_test(f0, fs, alpha, theta, g, d, mode: DirectionMode = DirectionMode.STEEPEST) -> bool:
    """Sufficient decrease on the estimates; ties accept."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if DirectionMode(mode) == DirectionMode.STEEPEST:
        return fs <= f0 - alpha * theta * float(np.dot(g, g))
    return fs <= f0 + alpha * theta * float(np.dot(g, d))


def reliability_test(alpha, g, d, delta, mode: DirectionMode = DirectionMode.STEEPEST) -> bool:
    """Did the predicted decrease reach the control level?  Ties are reliable."""
    if alpha <= 0 or delta <= 0:
        raise ValueError("alpha and delta must be positive")
    if DirectionMode(mode) == DirectionMode.STEEPEST:
        return alpha * float(np.dot(g, g)) >= delta**2
    return -(alpha * float(np.dot(g, d))) >= delta**2


@dataclass
class StepRecord:
    k: int
    x_before: np.ndarray
    g: GradientEstimate
    d: np.ndarray
    f0: float
    fs: float
    alpha_used: float
    delta_used: float
    outcome: Outcome
    batch_sizes: tuple[int, int, int]
    alpha_after: float
    delta_after: float
    fun_capped: bool = False
    # filled by diagnostics when an exact oracle is consulted
    i_k_true: bool | None = None
    j_k_true: bool | None = None
    f_exact: float | None = None
    gradnorm_exact: float | None = None
    phi: float | None = None

    @property
    def successful(self) -> bool:
        return self.outcome != Outcome.UNSUCCESSFUL

    def trial_point(self) -> np.ndarray:
        return self.x_before + self.alpha_used * self.d


class StreamFactory:
    """Per-iteration labeled rng streams, derived counter-style: stream j of
    iteration k is seeded by SeedSequence(entropy, spawn_key=prefix+(k, j)).
    Deterministic in (entropy, prefix, k) alone, so batching internals and
    execution order cannot perturb the draws."""

    def __init__(self, entropy, prefix: tuple[int, ...] = ()):
        self.entropy = tuple(int(e) for e in entropy) if isinstance(entropy, (tuple, list)) else int(entropy)
        self.prefix = tuple(int(p) for p in prefix)

    def for_step(self, k: int):
        return tuple(
            np.random.default_rng(np.random.SeedSequence(self.entropy, spawn_key=self.prefix + (k, j)))
            for j in range(3)
        )


def _require_finite(name, value, state: IterateState):
    arr = np.asarray(value)
    if not np.all(np.isfinite(arr)):
        raise RunAborted(
            f"non-finite {name} at iteration {state.k}",
            {"k": state.k, "field": name, "alpha": state.alpha, "delta": state.delta},
        )


def step(
    state: IterateState,
    problem: Problem,
    cfg: LineSearchConfig,
    direction_provider: DirectionProvider | None,
    rng: StreamFactory,
) -> tuple[IterateState, StepRecord]:
    """Execute one full iteration and return (new state, record)."""
    if state.alpha < UNDERFLOW_FLOOR or state.delta < UNDERFLOW_FLOOR:
        raise RunAborted(
            f"step-size underflow at iteration {state.k}",
            {"k": state.k, "alpha": state.alpha, "delta": state.delta},
        )
    acc = cfg.accuracy
    rng_g, rng_0, rng_s = rng.for_step(state.k)

    g_est = estimate_gradient(
        problem, state.x, state.alpha, acc, rng_g,
        g_norm_guess=state.prev_g_norm if state.k > 0 else 1.0,
    )
    _require_finite("gradient estimate", g_est.g, state)

    if cfg.direction_mode == DirectionMode.GENERAL:
        if direction_provider is None:
            raise ValueError("general mode requires a direction provider")
        direction = direction_provider(g_est.g)
        direction.check_certificate(g_est.g)
    else:
        direction = steepest_provider(g_est.g)
    d = direction.d

    x_trial = state.x + state.alpha * d
    est = estimate_function_pair(
        problem, state.x, x_trial, state.alpha, g_est, state.delta, acc, rng_0, rng_s
    )
    _require_finite("function estimates", (est.f0, est.fs), state)

    success = armijo_test(est.f0, est.fs, state.alpha, cfg.theta, g_est.g, d, cfg.direction_mode)
    sqrt_gamma = math.sqrt(cfg.gamma)
    if success:
        reliable = reliability_test(state.alpha, g_est.g, d, state.delta, cfg.direction_mode)
        x_new = x_trial
        alpha_new = min(cfg.alpha_max, cfg.gamma * state.alpha)
        if reliable:
            delta_new = state.delta * sqrt_gamma
            if cfg.delta_max is not None:
                delta_new = min(delta_new, cfg.delta_max)
            outcome = Outcome.SUCCESSFUL_RELIABLE
        else:
            delta_new = state.delta / sqrt_gamma
            outcome = Outcome.SUCCESSFUL_UNRELIABLE
    else:
        x_new = state.x
        alpha_new = state.alpha / cfg.gamma
        delta_new = state.delta / sqrt_gamma
        outcome = Outcome.UNSUCCESSFUL

    record = StepRecord(
        k=state.k,
        x_before=state.x.copy(),
        g=g_est,
        d=d,
        f0=est.f0,
        fs=est.fs,
        alpha_used=state.alpha,
        delta_used=state.delta,
        outcome=outcome,
        batch_sizes=(g_est.batch_size, est.batch_size_0, est.batch_size_s),
        alpha_after=alpha_new,
        delta_after=delta_new,
        fun_capped=est.capped,
    )
    new_state = IterateState(
        x=x_new,
        alpha=alpha_new,
        delta=delta_new,
        k=state.k + 1,
        prev_g_norm=g_est.norm,
    )
    return new_state, record


@dataclass
class RunSummary:
    iterations: int
    stop_reason: str
    t_eps_grad: int | None
    t_eps_gap: int | None
    n_success: int
    n_reliable: int
    n_capped_grad: int
    n_capped_fun: int
    final_f_exact: float
    final_gradnorm_exact: float
    abort_diagnostic: dict | None = None

    @property
    def converged(self) -> bool:
        return self.stop_reason in ("eps_grad", "eps_gap")


@dataclass
class Trace:
    records: list[StepRecord]
    summary: RunSummary
    final_state: IterateState


def run(
    problem: Problem,
    cfg: LineSearchConfig,
    stop,
    rng: StreamFactory,
    x0: np.ndarray | None = None,
    direction_provider: DirectionProvider | None = None,
) -> Trace:
    """Iterate ``step`` until a stopping target fires.

    ``stop`` needs attributes eps_grad, eps_gap (either may be None) and
    max_iters.  Stopping is measured with the exact oracle, which plays no
    part in the algorithm's own decisions.  The gradient target uses a
    strict inequality, the gap target a non-strict one; hitting max_iters
    is a normal, flagged outcome.
    """
    if stop.eps_grad is None and stop.eps_gap is None and stop.max_iters is None:
        raise ValueError("stopping spec must set at least one target")
    f_star = problem.metadata.f_star
    if stop.eps_gap is not None and f_star is None:
        raise ValueError("gap-based stopping needs metadata.f_star")

    state = IterateState(
        x=(problem.default_start() if x0 is None else np.asarray(x0, dtype=float)).copy(),
        alpha=cfg.alpha0,
        delta=cfg.delta0,
    )
    records: list[StepRecord] = []
    t_grad = t_gap = None
    stop_reason = "max_iters"
    abort = None

    while True:
        f_x = problem.exact_value(state.x)
        gnorm = float(np.linalg.norm(problem.exact_gradient(state.x)))
        if stop.eps_grad is not None and t_grad is None and gnorm < stop.eps_grad:
            t_grad = state.k
        if stop.eps_gap is not None and t_gap is None and f_x - f_star <= stop.eps_gap:
            t_gap = state.k
        grad_done = stop.eps_grad is None or t_grad is not None
        gap_done = stop.eps_gap is None or t_gap is not None
        if grad_done and gap_done and (stop.eps_grad is not None or stop.eps_gap is not None):
            stop_reason = "eps_grad" if stop.eps_grad is not None else "eps_gap"
            break
        if state.k >= stop.max_iters:
            stop_reason = "max_iters"
            break
        try:
            new_state, record = step(state, problem, cfg, direction_provider, rng)
        except RunAborted as exc:
            abort = exc.diagnostic
            stop_reason = "aborted"
            break
        record.f_exact = f_x
        record.gradnorm_exact = gnorm
        records.append(record)
        state = new_state

    final_f = problem.exact_value(state.x)
    final_gnorm = float(np.linalg.norm(problem.exact_gradient(state.x)))
    summary = RunSummary(
        iterations=len(records),
        stop_reason=stop_reason,
        t_eps_grad=t_grad,
        t_eps_gap=t_gap,
        n_success=sum(1 for r in records if r.successful),
        n_reliable=sum(1 for r in records if r.outcome == Outcome.SUCCESSFUL_RELIABLE),
        n_capped_grad=sum(1 for r in records if r.g.capped),
        n_capped_fun=sum(1 for r in records if r.fun_capped),
        final_f_exact=final_f,
        final_gradnorm_exact=final_gnorm,
        abort_diagnostic=abort,
    )
    return Trace(records=records, summary=summary, final_state=state)


TRACE_COLUMNS = (
    "k", "outcome", "alpha", "delta", "grad_batch", "f0_batch", "fs_batch",
    "g_norm", "f_exact", "gradnorm_exact", "i_k", "j_k", "phi",
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def trace_to_csv(trace: Trace, path):
    """Bit-stable CSV: comma separated, '.' decimal, 17 significant digits,
    LF line endings, mandatory header."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for r in trace.records:
            writer.writerow([
                _fmt(r.k),
                r.outcome.value,
                _fmt(r.alpha_used),
                _fmt(r.delta_used),
                _fmt(r.batch_sizes[0]),
                _fmt(r.batch_sizes[1]),
                _fmt(r.batch_sizes[2]),
                _fmt(r.g.norm),
                _fmt(r.f_exact),
                _fmt(r.gradnorm_exact),
                _fmt(r.i_k_true),
                _fmt(r.j_k_true),
                _fmt(r.phi),
            ])
