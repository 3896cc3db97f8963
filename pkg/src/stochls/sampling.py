"""Adaptive sample-size selection for gradient and function estimates.

Batch sizes are chosen from knowable quantities only (the current step
size, the realized estimate norm, the adaptive control delta, and the
problem's certified variance bounds) so that

* the gradient estimate lands within kappa_g * alpha * ||g|| of the true
  gradient with probability at least p_g, and
* each function estimate lands within kappa_f * alpha^2 * ||g||^2 of the
  true value with probability at least p_f, while its variance is capped
  by theta^2 * delta^4.

Concentration is enforced through the dimension-free Chebyshev/Markov
bound on the second moment of a batch mean (variance V / |S|), which
holds under the variance bounds alone and keeps all constants explicit.
Since ||g|| is only known after drawing the batch, gradient estimation
runs a guess-and-check loop: start from a warm-start guess of the norm,
draw, re-check the size condition against the realized norm, and grow the
batch (reusing earlier draws) until it is satisfied or the cap is hit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .oracle import Problem, SampleBatch


@dataclass(frozen=True)
class AccuracyConfig:
    """Accuracy targets for the estimate machinery.

    kappa_g / kappa_f are the adaptive accuracy radii multipliers for
    gradients and function values, kappa_f_bar weights the (monitored-only)
    gradient-norm branch of the variance cap and may be 0.  p_g and p_f are
    the per-iteration success probabilities, both in (1/2, 1].  Zero kappa
    values are allowed as the exact-oracle limit.
    """

    kappa_g: float = 2.0
    kappa_f: float = 0.125
    kappa_f_bar: float = 0.0
    p_g: float = 16.0 / 17.0
    p_f: float = 0.9
    theta: float = 0.5
    max_batch: int = 10**6
    guess_growth: float = 2.0

    def __post_init__(self):
        if self.kappa_g < 0 or self.kappa_f < 0 or self.kappa_f_bar < 0:
            raise ValueError("accuracy constants must be nonnegative")
        if not (0.5 < self.p_g <= 1.0) or not (0.5 < self.p_f <= 1.0):
            raise ValueError("p_g and p_f must lie in (1/2, 1]")
        if not (0.0 < self.theta < 1.0):
            raise ValueError("theta must lie in (0, 1)")
        if self.max_batch < 1:
            raise ValueError("max_batch must be >= 1")
        if self.guess_growth <= 1.0:
            raise ValueError("guess_growth must exceed 1")

    def check_against(self, alpha_max: float):
        """Function accuracy must satisfy kappa_f <= theta / (4 alpha_max)."""
        limit = self.theta / (4.0 * alpha_max)
        if self.kappa_f > limit * (1.0 + 1e-12):
            raise ValueError(
                f"kappa_f={self.kappa_f} exceeds theta/(4*alpha_max)={limit}"
            )


@dataclass(frozen=True)
class GradientEstimate:
    g: np.ndarray
    batch_size: int
    accuracy_radius: float  # kappa_g * alpha * ||g||
    guess_iterations: int
    capped: bool = False

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.g))


@dataclass(frozen=True)
class FunctionEstimatePair:
    f0: float
    fs: float
    batch_size_0: int
    batch_size_s: int
    accuracy_radius: float  # kappa_f * alpha^2 * ||g||^2
    variance_cap: float  # max(kappa_f_bar^2 alpha^2 ||g||^4, theta^2 delta^4)
    capped: bool = False


def _ceil_clamped(raw: float, max_batch: int) -> int:
    if not math.isfinite(raw):
        return max_batch
    nearest = round(raw)
    if nearest >= 1 and abs(raw - nearest) <= 8.0 * np.finfo(float).eps * abs(raw):
        return int(min(max_batch, nearest))
    return int(min(max_batch, max(1, math.ceil(raw))))


def gradient_sample_size(V_g, kappa_g, p_g, alpha, g_norm, max_batch) -> int:
    """Smallest batch certifying the gradient accuracy event at level p_g.

    Chebyshev: P(||mean - grad|| > kappa_g a ||g||) <= V_g / (|S| kappa_g^2
    a^2 ||g||^2), so |S| >= V_g / ((1-p_g) kappa_g^2 a^2 ||g||^2) suffices.
    A zero target radius (g_norm = 0, or p_g = 1 with noise present) cannot
    be certified and returns the cap.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if V_g == 0:
        return 1
    if g_norm == 0 or kappa_g == 0 or p_g >= 1.0:
        return max_batch
    denom = (1.0 - p_g) * kappa_g**2 * alpha**2 * g_norm**2
    if denom <= 0:  # underflow of the target radius
        return max_batch
    return _ceil_clamped(V_g / denom, max_batch)


def function_sample_size(V_f, cfg: AccuracyConfig, alpha, g_norm, delta, max_batch) -> int:
    """Batch size meeting both the p_f accuracy target at radius
    kappa_f a^2 ||g||^2 and the variance cap theta^2 delta^4.

    The accuracy branch is dropped when its radius degenerates (g_norm = 0).
    """
    if alpha <= 0 or delta <= 0:
        raise ValueError("alpha and delta must be positive")
    if V_f == 0:
        return 1
    cap_denom = cfg.theta**2 * delta**4
    if cap_denom <= 0:
        return max_batch
    need = V_f / cap_denom
    if g_norm > 0 and cfg.kappa_f > 0:
        if cfg.p_f >= 1.0:
            return max_batch
        acc_denom = (1.0 - cfg.p_f) * cfg.kappa_f**2 * alpha**4 * g_norm**4
        need = max(need, V_f / acc_denom) if acc_denom > 0 else float("inf")
    return _ceil_clamped(need, max_batch)


def estimate_gradient(
    problem: Problem,
    x: np.ndarray,
    alpha: float,
    cfg: AccuracyConfig,
    rng: np.random.Generator,
    g_norm_guess: float = 1.0,
) -> GradientEstimate:
    """Guess-and-check minibatch gradient estimate.

    Draws start at the size implied by ``g_norm_guess`` (the previous
    iteration's ||g||, or 1.0 at the first); after each draw the size
    condition is re-checked against the realized norm and the batch grows
    by ``cfg.guess_growth`` (keeping earlier draws, so the estimator is
    refined rather than replaced) until it passes or hits ``max_batch``.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    v_g = problem.metadata.variance_bound_grad
    max_batch = cfg.max_batch
    if g_norm_guess <= 0:
        g_norm_guess = 1.0

    size = gradient_sample_size(v_g, cfg.kappa_g, cfg.p_g, alpha, g_norm_guess, max_batch)
    indices = rng.integers(0, problem.component_count, size=size)
    total = problem.component_gradients(x, indices).sum(axis=0)
    rounds = 1
    capped = False
    no_cap = 2**62
    while True:
        g = total / indices.size
        g_norm = float(np.linalg.norm(g))
        needed = gradient_sample_size(v_g, cfg.kappa_g, cfg.p_g, alpha, g_norm, no_cap)
        if indices.size >= needed:
            break
        if indices.size >= max_batch:
            capped = True
            break
        new_size = min(max_batch, max(needed, math.ceil(indices.size * cfg.guess_growth)))
        fresh = rng.integers(0, problem.component_count, size=new_size - indices.size)
        total = total + problem.component_gradients(x, fresh).sum(axis=0)
        indices = np.concatenate([indices, fresh])
        rounds += 1
    return GradientEstimate(
        g=g,
        batch_size=int(indices.size),
        accuracy_radius=cfg.kappa_g * alpha * g_norm,
        guess_iterations=rounds,
        capped=capped,
    )


def estimate_function_pair(
    problem: Problem,
    x: np.ndarray,
    x_trial: np.ndarray,
    alpha: float,
    g: GradientEstimate,
    delta: float,
    cfg: AccuracyConfig,
    rng_0: np.random.Generator,
    rng_s: np.random.Generator,
) -> FunctionEstimatePair:
    """Independent batch means of f at the incumbent and trial points.

    The two batches are drawn from separate streams and are independent of
    each other and of the gradient batch; this independence is a hard
    contract of the estimate machinery.
    """
    v_f = problem.metadata.variance_bound_fun
    g_norm = g.norm
    size = function_sample_size(v_f, cfg, alpha, g_norm, delta, cfg.max_batch)
    capped = (
        size == cfg.max_batch
        and function_sample_size(v_f, cfg, alpha, g_norm, delta, 4 * cfg.max_batch) > cfg.max_batch
    )
    idx0 = rng_0.integers(0, problem.component_count, size=size)
    idxs = rng_s.integers(0, problem.component_count, size=size)
    f0 = float(np.mean(problem.component_values(x, idx0)))
    fs = float(np.mean(problem.component_values(x_trial, idxs)))
    return FunctionEstimatePair(
        f0=f0,
        fs=fs,
        batch_size_0=size,
        batch_size_s=size,
        accuracy_radius=cfg.kappa_f * alpha**2 * g_norm**2,
        variance_cap=max(
            cfg.kappa_f_bar**2 * alpha**2 * g_norm**4, cfg.theta**2 * delta**4
        ),
        capped=capped,
    )
