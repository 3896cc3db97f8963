"""Monte Carlo simulator for the abstract stopped process behind the
complexity analysis, independent of any optimization problem.

The process couples a biased +/-1 random walk W (up with probability
p > 1/2), a step-size-like sequence A on the geometric grid A0 * e^(lam*j)
capped at alpha_max, and a potential Phi that loses Theta * h(A_k) per
step until it hits zero:

    A_{k+1}   = min(alpha_max, A_k * e^(lam * W_{k+1}))
    Phi_{k+1} = max(0, Phi_k - Theta * h(A_k))
    T         = first k with Phi_k = 0.

h is nondecreasing.  The simulator realizes the equality case of the
process assumptions (the slowest admissible decrease), which makes the
expected-stopping-time bound

    E[T] <= p/(2p-1) * Phi0 / (Theta * h(Abar)) + 1

testable from the tight side.  Internally A is tracked by its integer
grid level so grid membership is exact; when e^lam is within 1e-12 of an
integer (e.g. lam = log 2) the growth factor snaps to that integer, making
every decrement an exact dyadic float.  That in turn lets an exact
dynamic-programming pass over the (remaining potential, grid level)
lattice reproduce E[T] independently of the Monte Carlo machinery.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class HSpec:
    """Nondecreasing reward-rate function: identity, a constant, or a lookup
    table keyed by grid level j (A = A0 * e^(lam*j))."""

    kind: str = "identity"
    value: float = 1.0
    table: dict | None = None

    def __post_init__(self):
        if self.kind not in ("identity", "constant", "table"):
            raise ValueError("h kind must be identity, constant, or table")
        if self.kind == "constant" and self.value <= 0:
            raise ValueError("constant h must be positive")
        if self.kind == "table":
            if not self.table:
                raise ValueError("table h needs entries")
            items = sorted(self.table.items())
            vals = [v for _, v in items]
            if any(v <= 0 for v in vals) or any(b < a for a, b in zip(vals, vals[1:])):
                raise ValueError("table h must be positive and nondecreasing in the level")

    def at_level(self, j, a_values):
        if self.kind == "identity":
            return a_values
        if self.kind == "constant":
            return np.full_like(np.asarray(a_values, dtype=float), self.value)
        lookup = np.vectorize(lambda lev: self.table[int(lev)])
        return lookup(j).astype(float)


@dataclass(frozen=True)
class RRProcessConfig:
    p: float
    lam: float
    A0: float
    j_max: int  # alpha_max = A0 * e^(lam * j_max)
    j_bar: int  # Abar = A0 * e^(lam * j_bar); must not exceed alpha_max
    Theta: float
    h_spec: HSpec
    Phi0: float
    trials: int = 100_000
    max_steps: int = 100_000

    def __post_init__(self):
        if not (0.5 < self.p <= 1.0):
            raise ValueError("p must lie in (1/2, 1]")
        if self.lam <= 0 or self.A0 <= 0 or self.Theta <= 0 or self.Phi0 <= 0:
            raise ValueError("lam, A0, Theta, Phi0 must be positive")
        if self.j_max < 0:
            raise ValueError("j_max must be >= 0")
        if self.j_bar > self.j_max:
            raise ValueError("Abar must not exceed alpha_max (j_bar <= j_max)")
        if self.trials < 1 or self.max_steps < 1:
            raise ValueError("trials and max_steps must be positive")

    @property
    def growth(self) -> float:
        g = math.exp(self.lam)
        snapped = round(g)
        if snapped >= 2 and abs(g - snapped) <= 1e-12 * snapped:
            return float(snapped)
        return g

    def a_value(self, j) -> np.ndarray:
        return self.A0 * self.growth ** np.asarray(j, dtype=float)

    @property
    def alpha_max(self) -> float:
        return float(self.a_value(self.j_max))

    @property
    def a_bar(self) -> float:
        return float(self.a_value(self.j_bar))

    def h_at_a_bar(self) -> float:
        return float(self.h_spec.at_level(np.array([self.j_bar]), np.array([self.a_bar]))[0])

    def theorem_bound(self) -> float:
        return self.p / (2.0 * self.p - 1.0) * self.Phi0 / (self.Theta * self.h_at_a_bar()) + 1.0


@dataclass(frozen=True)
class PathResult:
    t: int
    censored: bool
    phi_final: float
    level_final: int
    level_min: int


def simulate_path(cfg: RRProcessConfig, rng: np.random.Generator) -> PathResult:
    """One path of the equality-case process; censored at max_steps."""
    j = 0
    phi = cfg.Phi0
    j_min = 0
    for t in range(1, cfg.max_steps + 1):
        a = float(cfg.a_value(j))
        h = float(cfg.h_spec.at_level(np.array([j]), np.array([a]))[0])
        phi = max(0.0, phi - cfg.Theta * h)
        up = rng.random() < cfg.p
        j = min(j + 1, cfg.j_max) if up else j - 1
        j_min = min(j_min, j)
        if phi == 0.0:
            return PathResult(t=t, censored=False, phi_final=0.0, level_final=j, level_min=j_min)
    return PathResult(t=cfg.max_steps, censored=True, phi_final=phi, level_final=j, level_min=j_min)


def _simulate_batch(cfg: RRProcessConfig, rng: np.random.Generator, n_paths: int):
    """Vectorized paths; returns (stop times, censored mask)."""
    j = np.zeros(n_paths, dtype=np.int64)
    phi = np.full(n_paths, cfg.Phi0, dtype=float)
    t_stop = np.full(n_paths, cfg.max_steps, dtype=np.int64)
    censored = np.ones(n_paths, dtype=bool)
    alive = np.arange(n_paths)
    for t in range(1, cfg.max_steps + 1):
        if alive.size == 0:
            break
        a = cfg.a_value(j[alive])
        h = cfg.h_spec.at_level(j[alive], a)
        phi[alive] = np.maximum(0.0, phi[alive] - cfg.Theta * h)
        up = rng.random(alive.size) < cfg.p
        j[alive] = np.minimum(j[alive] + np.where(up, 1, -1), cfg.j_max)
        done = phi[alive] == 0.0
        if np.any(done):
            idx = alive[done]
            t_stop[idx] = t
            censored[idx] = False
            alive = alive[~done]
    return t_stop, censored


@dataclass(frozen=True)
class StopEstimate:
    mean: float
    ci95: tuple[float, float]
    bound: float
    satisfied: bool
    trials: int
    censored: int
    unreliable: bool

    @property
    def ci_halfwidth(self) -> float:
        return (self.ci95[1] - self.ci95[0]) / 2.0


def estimate_expected_stop(cfg: RRProcessConfig, rng: np.random.Generator) -> StopEstimate:
    """Sample mean of T over cfg.trials paths with a normal-approximation 95%
    interval, compared against the theorem bound.  Censored paths count at
    max_steps (a lower bound on their true stopping time); more than 1%
    of them flags the estimate unreliable."""
    if cfg.trials < 1000:
        raise ValueError("need at least 1000 trials for the normal CI")
    t_stop, censored = _simulate_batch(cfg, rng, cfg.trials)
    mean = float(t_stop.mean())
    half = 1.959963984540054 * float(t_stop.std(ddof=1)) / math.sqrt(cfg.trials)
    bound = cfg.theorem_bound()
    n_censored = int(censored.sum())
    return StopEstimate(
        mean=mean,
        ci95=(mean - half, mean + half),
        bound=bound,
        satisfied=mean + half <= bound,
        trials=cfg.trials,
        censored=n_censored,
        unreliable=n_censored > 0.01 * cfg.trials,
    )


def dp_expected_stop(cfg: RRProcessConfig, depth_below: int = 6) -> float:
    """Exact E[T] by dynamic programming over (remaining potential, level).

    Requires a snapped integer growth factor and h identity or constant, so
    every decrement is an exact multiple of the lattice resolution.  Levels
    are truncated ``depth_below`` below min(start, j_bar) with the decrement
    pinned there; with an upward drift the visit probability of the floor is
    (q/p)^depth_below per excursion, a bias far below Monte Carlo noise for
    p well above 1/2.
    """
    growth = cfg.growth
    if cfg.h_spec.kind == "constant":
        d = cfg.Theta * cfg.h_spec.value
        return float(math.ceil(cfg.Phi0 / d))
    if cfg.h_spec.kind != "identity":
        raise ValueError("dp oracle supports identity or constant h only")
    if growth != round(growth):
        raise ValueError("dp oracle needs an integer growth factor (e.g. lam = log 2)")
    base = int(round(growth))

    j_floor = min(0, cfg.j_bar) - depth_below
    j_cap = cfg.j_max
    n_levels = j_cap - j_floor + 1
    res = cfg.Theta * cfg.A0 * float(base) ** j_floor
    units = np.array([base ** (j - j_floor) for j in range(j_floor, j_cap + 1)], dtype=np.int64)
    m0 = cfg.Phi0 / res
    m_total = int(math.ceil(m0 - 1e-9))

    up_next = np.minimum(np.arange(n_levels) + 1, n_levels - 1)
    dn_next = np.maximum(np.arange(n_levels) - 1, 0)
    q = 1.0 - cfg.p
    # T[m, j]: expected remaining steps with m lattice units of potential left
    t_mat = np.zeros((m_total + 1, n_levels))
    for m in range(1, m_total + 1):
        prev = np.maximum(m - units, 0)
        t_mat[m] = 1.0 + cfg.p * t_mat[prev, up_next] + q * t_mat[prev, dn_next]
    return float(t_mat[m_total, 0 - j_floor])


def default_grid(trials: int = 100_000, max_steps: int = 100_000) -> list[RRProcessConfig]:
    """The 12-cell acceptance grid: p in {0.6, 0.75, 0.9}, lam = log 2,
    h in {identity, constant}, A0/Abar in {e^(-5 lam), 1}, with
    alpha_max = Abar = 1, Theta = 1, Phi0 = 100."""
    cells = []
    lam = math.log(2.0)
    for p in (0.6, 0.75, 0.9):
        for h_kind in ("identity", "constant"):
            for start_low in (True, False):
                j_off = 5 if start_low else 0
                a0 = 2.0**-j_off
                h_spec = HSpec(kind=h_kind, value=1.0) if h_kind == "constant" else HSpec(kind="identity")
                cells.append(
                    RRProcessConfig(
                        p=p, lam=lam, A0=a0, j_max=j_off, j_bar=j_off,
                        Theta=1.0, h_spec=h_spec, Phi0=100.0,
                        trials=trials, max_steps=max_steps,
                    )
                )
    return cells
