"""Exact-oracle diagnostics: potential functions, accuracy events, and the
theoretical constants behind the expected-complexity bounds.

The central object is the potential

    Phi_k = nu (f(x_k) - f_min)
          + (1 - nu) alpha_k ||grad f(x_k)||^2 / L^2
          + (1 - nu) theta delta_k^2,

whose conditional expectation decreases once the accuracy probabilities
clear their thresholds.  The convex and strongly convex analyses track the
transforms Psi = 1/(nu eps) - 1/Phi_stopped and Psi = log(Phi_stopped) +
log(1/(nu eps)) of the process stopped at the eps-crossing time.

Everything here consumes the exact oracle and is strictly observational:
the optimizer never sees these values.  ``theoretical_constants`` collects
the probability thresholds, the potential weight nu, the critical step
level below which accurate iterations must succeed, and assembled
expected-stopping-time bounds for the three convexity regimes, so
experiment reports can print bound-versus-empirical tables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .linesearch import LineSearchConfig, StepRecord, Trace
from .oracle import Convexity, Problem, ProblemMetadata
from .sampling import AccuracyConfig


@dataclass(frozen=True)
class StoppingSpec:
    """Targets for the stopping time: first k with ||grad f(x_k)|| < eps_grad
    (strict) or f(x_k) - f* <= eps_gap.  max_iters bounds the run."""

    eps_grad: float | None = None
    eps_gap: float | None = None
    max_iters: int = 10_000

    def __post_init__(self):
        if self.eps_grad is None and self.eps_gap is None and self.max_iters is None:
            raise ValueError("at least one stopping field must be set")
        for eps in (self.eps_grad, self.eps_gap):
            if eps is not None and eps <= 0:
                raise ValueError("eps targets must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")


@dataclass(frozen=True)
class PotentialConfig:
    nu: float
    L: float
    f_min: float
    theta: float = 0.5
    f_star: float | None = None
    eps: float | None = None
    variant: Convexity = Convexity.NONCONVEX

    def __post_init__(self):
        if not (0.0 < self.nu < 1.0):
            raise ValueError("nu must lie in (0, 1)")
        if self.L <= 0:
            raise ValueError("L must be positive")
        object.__setattr__(self, "variant", Convexity(self.variant))


def auto_nu(kappa_g: float, alpha_max: float, gamma: float, theta: float) -> float:
    """Smallest admissible potential weight: nu/(1-nu) equals the largest of
    32 gamma alpha_max^2 / theta, 16 (gamma - 1), and
    16 gamma (kappa_g alpha_max + 1)^2 / theta.  At gamma=2, theta=1/2 and
    kappa_g >= 2 this reduces to 64 (kappa_g alpha_max + 1)^2."""
    ratio = max(
        32.0 * gamma * alpha_max**2 / theta,
        16.0 * (gamma - 1.0),
        16.0 * gamma * (kappa_g * alpha_max + 1.0) ** 2 / theta,
    )
    return ratio / (1.0 + ratio)


def phi(state, problem: Problem, cfg: PotentialConfig) -> float:
    """The three-term potential at an iterate state (needs .x, .alpha, .delta)."""
    baseline = cfg.f_star if cfg.variant != Convexity.NONCONVEX and cfg.f_star is not None else cfg.f_min
    f_x = problem.exact_value(state.x)
    gnorm_sq = float(np.sum(problem.exact_gradient(state.x) ** 2))
    return (
        cfg.nu * (f_x - baseline)
        + (1.0 - cfg.nu) * state.alpha * gnorm_sq / cfg.L**2
        + (1.0 - cfg.nu) * cfg.theta * state.delta**2
    )


def phi_from_values(f_gap, alpha, gradnorm, delta, cfg: PotentialConfig) -> float:
    return (
        cfg.nu * f_gap
        + (1.0 - cfg.nu) * alpha * gradnorm**2 / cfg.L**2
        + (1.0 - cfg.nu) * cfg.theta * delta**2
    )


def psi_convex(phi_stopped: float, nu: float, eps: float) -> float:
    """1/(nu eps) - 1/Phi for Phi frozen at k ^ T_eps; nonnegative while the
    pre-stop bound Phi >= nu eps holds."""
    if phi_stopped <= 0:
        raise ValueError("stopped potential must be positive")
    return 1.0 / (nu * eps) - 1.0 / phi_stopped


def psi_strongly_convex(phi_stopped: float, nu: float, eps: float) -> float:
    """log(Phi) + log(1/(nu eps)) for Phi frozen at k ^ T_eps."""
    if phi_stopped <= 0:
        raise ValueError("stopped potential must be positive")
    return math.log(phi_stopped) + math.log(1.0 / (nu * eps))


def classify_events(record: StepRecord, problem: Problem, cfg: AccuracyConfig) -> tuple[bool, bool]:
    """Evaluate the gradient-accuracy and value-accuracy events with the
    exact oracle: the gradient estimate must land within
    kappa_g alpha ||g|| of grad f, and both value estimates within
    kappa_f alpha^2 ||g||^2 of their true values."""
    x = record.x_before
    alpha = record.alpha_used
    g = record.g.g
    g_norm = record.g.norm
    grad_true = problem.exact_gradient(x)
    i_k = bool(np.linalg.norm(g - grad_true) <= cfg.kappa_g * alpha * g_norm)
    radius = cfg.kappa_f * alpha**2 * g_norm**2
    x_trial = record.trial_point()
    j_k = bool(
        abs(record.f0 - problem.exact_value(x)) <= radius
        and abs(record.fs - problem.exact_value(x_trial)) <= radius
    )
    return i_k, j_k


def annotate_trace(trace: Trace, problem: Problem, acc: AccuracyConfig, pot: PotentialConfig | None):
    """Fill the exact-diagnostics fields of every record in place."""
    for record in trace.records:
        record.i_k_true, record.j_k_true = classify_events(record, problem, acc)
        if pot is not None:
            gap = record.f_exact - (
                pot.f_star if pot.variant != Convexity.NONCONVEX and pot.f_star is not None else pot.f_min
            )
            record.phi = phi_from_values(
                gap, record.alpha_used, record.gradnorm_exact, record.delta_used, pot
            )
    return trace


# ---------------------------------------------------------------------------
# theoretical constants and assembled complexity bounds


@dataclass(frozen=True)
class ConstantsReport:
    nu: float
    p_g_required: float
    product_required: float  # lower bound on p_g p_f / sqrt(1 - p_f)
    p_f_required: float
    p_f_feasible: bool
    theta_decrease: float  # per-step expected Phi decrease coefficient
    a_bar: float  # critical step level (raw)
    a_bar_grid: float  # snapped down onto the alpha grid
    configured_p_g: float
    configured_p_f: float
    configured_ok: bool

    def describe(self) -> str:
        lines = [
            "theoretical constants",
            f"  nu                       = {self.nu:.12g}",
            f"  required p_g             = {self.p_g_required:.12g}",
            f"  required p_g*p_f/sqrt(1-p_f) = {self.product_required:.12g}",
            f"  required p_f (at configured p_g) = {self.p_f_required:.17g}"
            + ("" if self.p_f_feasible else "  [infeasible in (1/2,1]; proceeding with configured values]"),
            f"  configured (p_g, p_f)    = ({self.configured_p_g:.12g}, {self.configured_p_f:.12g})"
            + ("  [meets thresholds]" if self.configured_ok else "  [below thresholds]"),
            f"  expected-decrease coefficient = {self.theta_decrease:.12g}",
            f"  critical step level Abar = {self.a_bar:.12g} (grid: {self.a_bar_grid:.12g})",
        ]
        return "\n".join(lines)


def required_p_g(gamma: float) -> float:
    return 2.0 * gamma / (0.5 * (1.0 - 1.0 / gamma) + 2.0 * gamma)


def required_product(kappa_g, kappa_f_bar, alpha_max, L) -> float:
    """Simplified-constant threshold on p_g p_f / sqrt(1 - p_f) (gamma = 2,
    theta = 1/2 regime)."""
    base = (kappa_g * alpha_max + 1.0) ** 2
    return max(1024.0 * kappa_f_bar * L**2 * base + 64.0, 1024.0 * base)


def solve_p_f(product_threshold: float, p_g: float) -> tuple[float, bool]:
    """Smallest p_f in (1/2, 1] with p_g p_f / sqrt(1-p_f) >= threshold."""
    c = product_threshold / p_g
    if c <= 0:
        return 0.5, True
    # (1 - y) / sqrt(y) = c with y = 1 - p_f
    sqrt_y = (math.sqrt(c * c + 4.0) - c) / 2.0
    y = sqrt_y**2
    p_f = max(1.0 - y, 0.5 + 1e-16)
    feasible = p_f < 1.0
    return min(p_f, 1.0), feasible


def critical_step_level(theta, kappa_g, kappa_f, L, alpha_max, beta=1.0, kappa1=1.0, kappa2=1.0) -> float:
    """Step level below which accurate iterations are guaranteed successful:
    beta (1-theta) / (kappa_g + L kappa2 / 2 + 2 kappa_f / kappa1), capped at
    alpha_max.  The steepest-descent case is beta = kappa1 = kappa2 = 1."""
    level = beta * (1.0 - theta) / (kappa_g + L * kappa2 / 2.0 + 2.0 * kappa_f / kappa1)
    return min(level, alpha_max)


def snap_to_grid(level: float, alpha_max: float, gamma: float) -> float:
    """Largest grid point gamma^-j * alpha_max not exceeding level."""
    if level >= alpha_max:
        return alpha_max
    j = math.ceil(math.log(alpha_max / level) / math.log(gamma) - 1e-12)
    return alpha_max * gamma ** (-j)


@dataclass(frozen=True)
class ComplexityBound:
    regime: Convexity
    eps: float
    bound: float
    phi0: float
    theta_process: float
    h_at_a_bar: float
    p_walk: float


def theoretical_constants(cfg: LineSearchConfig, metadata: ProblemMetadata) -> ConstantsReport:
    acc = cfg.accuracy
    L = metadata.lipschitz_L
    nu = auto_nu(acc.kappa_g, cfg.alpha_max, cfg.gamma, cfg.theta)
    p_g_req = required_p_g(cfg.gamma)
    prod_req = required_product(acc.kappa_g, acc.kappa_f_bar, cfg.alpha_max, L)
    p_f_req, feasible = solve_p_f(prod_req, max(acc.p_g, p_g_req))
    base = (acc.kappa_g * cfg.alpha_max + 1.0) ** 2
    theta_decrease = 1.0 / (8192.0 * base)
    a_bar = critical_step_level(cfg.theta, acc.kappa_g, acc.kappa_f, L, cfg.alpha_max)
    configured_ok = acc.p_g >= p_g_req and (
        acc.p_f >= 1.0 or acc.p_g * acc.p_f / math.sqrt(1.0 - acc.p_f) >= prod_req
    )
    return ConstantsReport(
        nu=nu,
        p_g_required=p_g_req,
        product_required=prod_req,
        p_f_required=p_f_req,
        p_f_feasible=feasible,
        theta_decrease=theta_decrease,
        a_bar=a_bar,
        a_bar_grid=snap_to_grid(a_bar, cfg.alpha_max, cfg.gamma),
        configured_p_g=acc.p_g,
        configured_p_f=acc.p_f,
        configured_ok=configured_ok,
    )


def expected_stop_bounds(
    cfg: LineSearchConfig,
    metadata: ProblemMetadata,
    problem: Problem,
    x0: np.ndarray,
    eps_values: Iterable[float],
    regime: Convexity,
    delta_max: float | None = None,
) -> list[ComplexityBound]:
    """Assembled E[T_eps] bounds: walk drift p = p_g p_f, stopped-process
    decrease Theta h(A), and the renewal bound p/(2p-1) * Psi_0/(Theta h(Abar)) + 1.

    nonconvex:        Phi-process, h(A) = A eps^2,
                      Theta = 1 / (8192 L^2 (kappa_g alpha_max + 1)^2).
    convex:           Psi = 1/(nu eps) - 1/Phi, h(A) = A,
                      Theta = p (1-nu)(1-1/gamma) / (8 C^2) with
                      C = nu D L + (1-nu) alpha_max L_f / L + (1-nu) sqrt(theta) delta_max.
    strongly convex:  Psi = log Phi + log(1/(nu eps)), h(A) = A,
                      Theta = p (1-nu)(1-1/gamma) / (4 C~) with
                      C~ = nu L^2/(2 mu) + (1-nu) alpha_max + (1-nu).
    """
    acc = cfg.accuracy
    L = metadata.lipschitz_L
    nu = auto_nu(acc.kappa_g, cfg.alpha_max, cfg.gamma, cfg.theta)
    p = acc.p_g * acc.p_f
    if p <= 0.5:
        raise ValueError("bounds need p_g * p_f > 1/2")
    a_bar = snap_to_grid(
        critical_step_level(cfg.theta, acc.kappa_g, acc.kappa_f, L, cfg.alpha_max),
        cfg.alpha_max,
        cfg.gamma,
    )
    gap0 = problem.exact_value(x0) - (
        metadata.f_star if regime != Convexity.NONCONVEX and metadata.f_star is not None else metadata.f_min
    )
    gradnorm0 = float(np.linalg.norm(problem.exact_gradient(x0)))
    pcfg = PotentialConfig(nu=nu, L=L, f_min=metadata.f_min, theta=cfg.theta,
                           f_star=metadata.f_star, variant=regime)
    phi0 = phi_from_values(gap0, cfg.alpha0, gradnorm0, cfg.delta0, pcfg)
    drift = p / (2.0 * p - 1.0)
    out = []
    for eps in eps_values:
        if regime == Convexity.NONCONVEX:
            theta_proc = 1.0 / (8192.0 * L**2 * (acc.kappa_g * cfg.alpha_max + 1.0) ** 2)
            h_bar = a_bar * eps**2
            psi0 = phi0
        elif regime == Convexity.CONVEX:
            if metadata.domain_diameter_D is None or metadata.grad_bound_Lf is None:
                raise ValueError("convex bound needs domain_diameter_D and grad_bound_Lf")
            d_max = delta_max if delta_max is not None else LineSearchConfig.default_delta_max(cfg.delta0, cfg.gamma)
            c_big = (
                nu * metadata.domain_diameter_D * L
                + (1.0 - nu) * cfg.alpha_max * metadata.grad_bound_Lf / L
                + (1.0 - nu) * math.sqrt(cfg.theta) * d_max
            )
            theta_proc = p * (1.0 - nu) * (1.0 - 1.0 / cfg.gamma) / (8.0 * c_big**2)
            h_bar = a_bar
            psi0 = max(psi_convex(max(phi0, nu * eps), nu, eps), 0.0)
        elif regime == Convexity.STRONGLY_CONVEX:
            mu = metadata.strong_convexity_mu
            if mu <= 0:
                raise ValueError("strongly convex bound needs mu > 0")
            c_tilde = nu * L**2 / (2.0 * mu) + (1.0 - nu) * cfg.alpha_max + (1.0 - nu)
            theta_proc = p * (1.0 - nu) * (1.0 - 1.0 / cfg.gamma) / (4.0 * c_tilde)
            h_bar = a_bar
            psi0 = max(psi_strongly_convex(max(phi0, nu * eps), nu, eps), 0.0)
        else:
            raise ValueError(f"unknown regime {regime}")
        bound = drift * psi0 / (theta_proc * h_bar) + 1.0
        out.append(ComplexityBound(
            regime=regime, eps=float(eps), bound=bound, phi0=phi0,
            theta_process=theta_proc, h_at_a_bar=h_bar, p_walk=p,
        ))
    return out


# ---------------------------------------------------------------------------
# trace-level empirical checks


def step_size_drift(trace: Trace, a_bar: float) -> float:
    """Fraction of iterations spent at or above the critical step level."""
    if not trace.records:
        return float("nan")
    return sum(1 for r in trace.records if r.alpha_used >= a_bar) / len(trace.records)


def running_min_improves(trace: Trace, head_fraction: float = 0.1) -> bool:
    """Does min_k ||grad f(x_k)|| keep strictly improving past the first
    head_fraction of the trace?"""
    norms = [r.gradnorm_exact for r in trace.records if r.gradnorm_exact is not None]
    if len(norms) < 10:
        return True
    head = max(1, int(len(norms) * head_fraction))
    return min(norms[head:]) < min(norms[:head])
