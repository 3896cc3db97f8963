"""Finite-sum stochastic objectives with component-level sampling.

Every problem here has the form

    f(x) = (1/N) * sum_i f_i(x)

where the components f_i are cheap to evaluate individually, so minibatch
means give unbiased value and gradient estimates whose variance shrinks
like 1/|batch|.  Problems carry certified metadata (smoothness constant,
lower bound, variance bounds over a documented region) that downstream
modules use to size batches; the exact full-sum value and gradient are
exposed as a diagnostics backdoor and are never consumed by the optimizer
itself.

Built-in problems:

* ``quadratic_sc``   - strongly convex quadratic.  Components share the
  mean Hessian and differ by exactly mean-zero symmetric perturbations,
  so estimate noise scales with the distance to the optimum and the
  stochastic dynamics stay well conditioned arbitrarily close to it.
* ``logistic``       - logistic regression on synthetic Gaussian data with
  a small label-flip rate (near-separable, so the loss has a long flat
  valley), optionally l2-regularized.  Regularizer-free by default.
* ``nonconvex_sum``  - a saturating sigmoid composed with the radial
  quadratic q(x) = ||x||^2 / 2, plus exactly mean-zero per-component
  noise whose envelope is half the squared base gradient norm.  The
  gradient decays like a power of the distance along the descent path,
  which makes iteration counts grow polynomially in 1/eps.

Sampling is i.i.d. uniform with replacement; batches may therefore exceed
the component count, and a batch equal to the full index set reproduces
the exact mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit


class Convexity(str, Enum):
    NONCONVEX = "nonconvex"
    CONVEX = "convex"
    STRONGLY_CONVEX = "strongly_convex"


@dataclass(frozen=True)
class ProblemMetadata:
    """Certified constants attached to a problem.

    ``variance_bound_grad`` / ``variance_bound_fun`` are upper bounds on the
    per-component gradient / value variance holding everywhere inside the
    problem's certification region (see ``Problem.certification_center`` /
    ``certification_radius``); iterates leaving that region are monitored,
    not rejected.  ``f_min`` is a certified lower bound on f, not
    necessarily the global minimum.
    """

    lipschitz_L: float
    f_min: float
    variance_bound_grad: float
    variance_bound_fun: float
    convexity_class: Convexity
    strong_convexity_mu: float = 0.0
    grad_bound_Lf: float | None = None
    domain_diameter_D: float | None = None
    f_star: float | None = None

    def __post_init__(self):
        if self.lipschitz_L < 0:
            raise ValueError("lipschitz_L must be nonnegative")
        if self.variance_bound_grad < 0 or self.variance_bound_fun < 0:
            raise ValueError("variance bounds must be nonnegative")
        strongly = self.convexity_class == Convexity.STRONGLY_CONVEX
        if strongly != (self.strong_convexity_mu > 0):
            raise ValueError("strong_convexity_mu > 0 iff convexity_class is strongly_convex")
        if self.f_star is not None and self.f_min > self.f_star + 1e-12:
            raise ValueError("f_min must lower-bound f_star")


@dataclass(frozen=True)
class SampleBatch:
    """Multiset of component indices drawn i.i.d. uniform with replacement."""

    indices: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        object.__setattr__(self, "indices", idx)
        if idx.ndim != 1 or idx.size == 0:
            raise ValueError("batch must be a nonempty 1-d index array")
        if np.any(idx < 0):
            raise ValueError("component indices must be nonnegative")

    @property
    def size(self) -> int:
        return int(self.indices.size)


class Problem:
    """Base class: a finite-sum objective with component access.

    Subclasses must set ``dimension``, ``component_count``, ``metadata``
    and implement ``component_values`` / ``component_gradients`` /
    ``exact_value`` / ``exact_gradient``.
    """

    dimension: int
    component_count: int
    metadata: ProblemMetadata
    certification_center: np.ndarray
    certification_radius: float

    def component_values(self, x: np.ndarray, indices: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def component_gradients(self, x: np.ndarray, indices: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def exact_value(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def exact_gradient(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def default_start(self) -> np.ndarray:
        raise NotImplementedError

    def in_certified_region(self, x: np.ndarray) -> bool:
        return bool(np.linalg.norm(x - self.certification_center) <= self.certification_radius)

    def component_variances(self, x: np.ndarray) -> tuple[float, float]:
        """Exact (gradient, value) component variance at x by full enumeration."""
        idx = np.arange(self.component_count)
        grads = self.component_gradients(x, idx)
        vals = self.component_values(x, idx)
        gvar = float(np.mean(np.sum((grads - grads.mean(axis=0)) ** 2, axis=1)))
        fvar = float(np.var(vals))
        return gvar, fvar


def _check_point(problem: Problem, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.dimension,):
        raise ValueError(f"x must have shape ({problem.dimension},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    return x


def _check_batch(problem: Problem, batch: SampleBatch) -> np.ndarray:
    if np.any(batch.indices >= problem.component_count):
        raise ValueError("batch index out of range")
    return batch.indices


def exact_value(problem: Problem, x: np.ndarray) -> float:
    """Full-sum objective value; diagnostics only."""
    return problem.exact_value(_check_point(problem, x))


def exact_gradient(problem: Problem, x: np.ndarray) -> np.ndarray:
    """Full-sum gradient; diagnostics only."""
    return problem.exact_gradient(_check_point(problem, x))


def sample_value(problem: Problem, x: np.ndarray, batch: SampleBatch, rng=None) -> float:
    """Batch mean of component values.  Deterministic given (x, batch);
    the rng argument is reserved for oracles with internally stochastic
    components and is unused for finite sums."""
    x = _check_point(problem, x)
    idx = _check_batch(problem, batch)
    return float(np.mean(problem.component_values(x, idx)))


def sample_gradient(problem: Problem, x: np.ndarray, batch: SampleBatch, rng=None) -> np.ndarray:
    """Batch mean of component gradients; see sample_value."""
    x = _check_point(problem, x)
    idx = _check_batch(problem, batch)
    return problem.component_gradients(x, idx).mean(axis=0)


def draw_batch(problem: Problem, size: int, rng: np.random.Generator) -> SampleBatch:
    if size < 1:
        raise ValueError("batch size must be >= 1")
    return SampleBatch(rng.integers(0, problem.component_count, size=size))


# ---------------------------------------------------------------------------
# strongly convex quadratic


class QuadraticProblem(Problem):
    """f(x) = (1/2) (x-c)' H (x-c) with H = diag(eigenvalues).

    Component i adds the exactly mean-zero perturbation
    (1/2) (x-c)' M_i (x-c); the M_i come in +/- pairs so the mean objective
    is the clean quadratic.  Component noise is therefore multiplicative in
    the distance to the optimum and every scale near x* behaves alike.
    """

    def __init__(self, eigenvalues, center, perturbations):
        eigenvalues = np.asarray(eigenvalues, dtype=float)
        center = np.asarray(center, dtype=float)
        n = center.size
        self.eigs = eigenvalues
        self.center = center
        self.M = np.asarray(perturbations, dtype=float)  # (N, n, n), mean exactly 0
        self.dimension = n
        self.component_count = self.M.shape[0]
        self._x0 = center + self._start_offset(n)

        r_box = max(2.0 * float(np.linalg.norm(self._x0 - center)), 4.0)
        self.certification_center = center
        self.certification_radius = r_box

        # V_g(x) = y' Q y with Q = mean(M_i^2): exact sup over the ball.
        q_mat = np.mean(self.M @ self.M, axis=0)
        v_g = float(np.linalg.eigvalsh(q_mat)[-1]) * r_box**2
        # V_f(x) <= (1/4) mean(||M_i||_2^2) ||y||^4
        op_sq = np.array([np.max(np.abs(np.linalg.eigvalsh(m))) ** 2 for m in self.M])
        v_f = 0.25 * float(op_sq.mean()) * r_box**4

        mu = float(eigenvalues.min())
        self.metadata = ProblemMetadata(
            lipschitz_L=float(eigenvalues.max()),
            f_min=0.0,
            variance_bound_grad=v_g,
            variance_bound_fun=v_f,
            convexity_class=Convexity.STRONGLY_CONVEX,
            strong_convexity_mu=mu,
            grad_bound_Lf=float(eigenvalues.max()) * r_box,
            domain_diameter_D=2.0 * r_box,
            f_star=0.0,
        )

    @staticmethod
    def _start_offset(n):
        return 2.0 * np.ones(n) / math.sqrt(n)

    def default_start(self):
        return self._x0.copy()

    def _base_value(self, y):
        return 0.5 * float(np.dot(self.eigs * y, y))

    def exact_value(self, x):
        return self._base_value(x - self.center)

    def exact_gradient(self, x):
        return self.eigs * (x - self.center)

    def component_values(self, x, indices):
        y = x - self.center
        base = self._base_value(y)
        my = self.M[indices] @ y
        return base + 0.5 * (my @ y)

    def component_gradients(self, x, indices):
        y = x - self.center
        return self.eigs * y + self.M[indices] @ y


def _make_quadratic(n, N, seed, noise_scale=1.0, eig_min=1.0, eig_max=10.0):
    rng = np.random.default_rng(seed)
    eigs = np.linspace(eig_min, eig_max, n) if n > 1 else np.array([eig_max])
    center = rng.normal(size=n) / math.sqrt(n)
    half = N // 2
    raw = rng.normal(size=(half, n, n))
    sym = noise_scale * 0.5 * (raw + np.transpose(raw, (0, 2, 1)))
    ms = [sym, -sym]
    if N % 2:
        ms.append(np.zeros((1, n, n)))
    return QuadraticProblem(eigs, center, np.concatenate(ms, axis=0))


# ---------------------------------------------------------------------------
# logistic regression on synthetic Gaussian data


class LogisticProblem(Problem):
    """Mean logistic loss over signed rows z_i = y_i * a_i, plus an optional
    l2 term: f_i(x) = softplus(-z_i'x) + (reg/2)||x||^2."""

    def __init__(self, signed_rows, reg=0.0):
        z = np.asarray(signed_rows, dtype=float)
        self.Z = z
        self.reg = float(reg)
        self.component_count, self.dimension = z.shape
        self._x0 = np.zeros(self.dimension)

        n_comp = self.component_count
        sigma_max_sq = float(np.linalg.svd(z, compute_uv=False)[0] ** 2)
        lips = sigma_max_sq / (4.0 * n_comp) + self.reg

        res = minimize(
            lambda w: (self.exact_value(w), self.exact_gradient(w)),
            self._x0,
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": 20000, "ftol": 1e-18, "gtol": 1e-12},
        )
        self._x_star = res.x
        f_star = float(res.fun)

        r_box = 1.5 * max(float(np.linalg.norm(self._x0 - self._x_star)), 1.0)
        self.certification_center = self._x_star
        self.certification_radius = r_box

        v_g, v_f = _certify_by_sampling(self, self._x_star, r_box, seed=0, margin=2.0)
        row_norms = np.linalg.norm(z, axis=1)
        l_f = float(row_norms.mean()) + self.reg * (float(np.linalg.norm(self._x_star)) + r_box)

        self.metadata = ProblemMetadata(
            lipschitz_L=lips,
            f_min=0.0,
            variance_bound_grad=v_g,
            variance_bound_fun=v_f,
            convexity_class=Convexity.STRONGLY_CONVEX if self.reg > 0 else Convexity.CONVEX,
            strong_convexity_mu=self.reg,
            grad_bound_Lf=l_f,
            domain_diameter_D=2.0 * r_box,
            f_star=f_star,
        )

    def default_start(self):
        return self._x0.copy()

    @property
    def x_star(self):
        return self._x_star.copy()

    def _margins(self, x, indices=None):
        z = self.Z if indices is None else self.Z[indices]
        return z @ x

    def exact_value(self, x):
        m = self._margins(x)
        return float(np.mean(np.logaddexp(0.0, -m))) + 0.5 * self.reg * float(x @ x)

    def exact_gradient(self, x):
        m = self._margins(x)
        w = expit(-m)
        return -(self.Z.T @ w) / self.component_count + self.reg * x

    def component_values(self, x, indices):
        m = self._margins(x, indices)
        return np.logaddexp(0.0, -m) + 0.5 * self.reg * float(x @ x)

    def component_gradients(self, x, indices):
        m = self._margins(x, indices)
        w = expit(-m)
        return -self.Z[indices] * w[:, None] + self.reg * x


def _make_logistic(n, N, seed, reg=0.0, class_shift=2.0, flip_prob=0.01, feature_scale=1.0):
    rng = np.random.default_rng(seed)
    w_dir = rng.normal(size=n)
    w_dir /= np.linalg.norm(w_dir)
    a = rng.normal(size=(N, n))
    labels = np.sign(a @ w_dir)
    labels[labels == 0] = 1.0
    a = a + class_shift * labels[:, None] * w_dir
    flips = rng.random(N) < flip_prob
    labels[flips] *= -1.0
    return LogisticProblem(feature_scale * labels[:, None] * a, reg=reg)


# ---------------------------------------------------------------------------
# smooth nonconvex finite sum


class SigmoidQuadraticProblem(Problem):
    """Saturating sigmoid composed with the radial quadratic q = ||x||^2/2.

    Base objective: phi(q) = scale * (1 + softplus(q))^(-tail_exponent),
    decreasing from phi(0) to 0, so ||grad f|| decays like a power of the
    distance along any descent ray.  Component i adds a_i * psi(q) where
    psi(q) = q * phi'(q)^2 = ||grad phi(q(x))||^2 / 2 and the a_i are
    exactly mean-zero, so estimate noise vanishes where the landscape
    flattens and adaptive batch sizes stay bounded along the whole run.
    The origin is a stationary point (the global maximum of the base).
    """

    def __init__(self, n, noise_weights, scale=10.0, tail_exponent=0.1, start_radius=3.7):
        self.scale = float(scale)
        self.rho = float(tail_exponent)
        self.a = np.asarray(noise_weights, dtype=float)  # mean exactly 0
        self.dimension = n
        self.component_count = self.a.size
        self._x0 = np.zeros(n)
        self._x0[0] = start_radius

        r_box = 150.0
        self.certification_center = np.zeros(n)
        self.certification_radius = r_box

        # Hessian eigenvalues are phi'(q) and phi'(q) + 2 q phi''(q); both
        # decay for large q, so a dense grid plus margin certifies L.
        q_grid = np.concatenate([np.linspace(0.0, 50.0, 200001), np.geomspace(50.0, 1e9, 20000)])
        d1 = self._phi_d1(q_grid)
        d2 = self._phi_d2(q_grid)
        lips = 1.02 * float(np.max(np.maximum(np.abs(d1), np.abs(d1 + 2.0 * q_grid * d2))))
        l_f = 1.02 * float(np.max(np.abs(d1) * np.sqrt(2.0 * q_grid)))

        # noise structure is exact: V_f = var(a) psi^2, V_g = var(a) psi'^2 2q
        var_a = float(np.mean(self.a**2))
        q_box = 0.5 * r_box**2
        in_box = q_grid <= q_box
        psi = q_grid * d1**2
        psi_d1 = d1**2 + 2.0 * q_grid * d1 * d2
        v_f = var_a * float(np.max(psi[in_box] ** 2))
        v_g = var_a * float(np.max(psi_d1[in_box] ** 2 * 2.0 * q_grid[in_box]))

        self.metadata = ProblemMetadata(
            lipschitz_L=lips,
            f_min=0.0,
            variance_bound_grad=v_g,
            variance_bound_fun=v_f,
            convexity_class=Convexity.NONCONVEX,
            grad_bound_Lf=l_f,
        )

    def default_start(self):
        return self._x0.copy()

    def stationary_point(self):
        """The origin: grad f(0) = phi'(q(0)) * 0 = 0 exactly."""
        return np.zeros(self.dimension)

    # phi and derivatives as functions of q >= 0
    def _w(self, q):
        return 1.0 + np.logaddexp(0.0, q)

    def _phi(self, q):
        return self.scale * self._w(q) ** (-self.rho)

    def _phi_d1(self, q):
        return -self.scale * self.rho * self._w(q) ** (-self.rho - 1.0) * expit(q)

    def _phi_d2(self, q):
        w = self._w(q)
        s = expit(q)
        return self.scale * self.rho * w ** (-self.rho - 2.0) * s * ((self.rho + 1.0) * s - w * (1.0 - s))

    def _psi(self, q):
        return q * self._phi_d1(q) ** 2

    def _psi_d1(self, q):
        d1 = self._phi_d1(q)
        return d1**2 + 2.0 * q * d1 * self._phi_d2(q)

    def exact_value(self, x):
        return float(self._phi(0.5 * float(x @ x)))

    def exact_gradient(self, x):
        return self._phi_d1(0.5 * float(x @ x)) * x

    def component_values(self, x, indices):
        q = 0.5 * float(x @ x)
        return self._phi(q) + self.a[indices] * self._psi(q)

    def component_gradients(self, x, indices):
        q = 0.5 * float(x @ x)
        coef = self._phi_d1(q) + self.a[indices] * self._psi_d1(q)
        return coef[:, None] * x


def _make_nonconvex(n, N, seed, noise_scale=1.0, scale=10.0, tail_exponent=0.1, start_radius=3.7):
    rng = np.random.default_rng(seed)
    half = N // 2
    raw = noise_scale * rng.normal(size=half)
    parts = [raw, -raw]
    if N % 2:
        parts.append(np.zeros(1))
    return SigmoidQuadraticProblem(
        n, np.concatenate(parts), scale=scale, tail_exponent=tail_exponent, start_radius=start_radius
    )


# ---------------------------------------------------------------------------
# measurement fixture with exactly known variances


class GaussianProbeProblem(Problem):
    """Quadratic base with per-component Gaussian offsets normalized so the
    component gradient variance is exactly V_g at every x and the value
    variance at the reference point is exactly V_f.

    f_i(x) = ||x||^2/2 + e_i'x + u_i, with the e_i and u_i centered exactly
    and rescaled to hit the requested variances.  Used to measure empirical
    accuracy-event frequencies against their configured probabilities.
    """

    def __init__(self, n, N, v_grad, v_fun, seed, reference_radius=2.0):
        rng = np.random.default_rng(seed)
        e = rng.normal(size=(N, n))
        e -= e.mean(axis=0)
        cur = np.mean(np.sum(e**2, axis=1))
        if v_grad > 0:
            e *= math.sqrt(v_grad / cur)
        else:
            e[:] = 0.0
        u = rng.normal(size=N)
        u -= u.mean()
        self._x_ref = np.zeros(n)
        self._x_ref[0] = reference_radius
        # value noise at x is e_i'x + u_i: orthogonalize u against e@x_ref so
        # the variances add, then scale u to hit v_fun exactly at x_ref
        proj = e @ self._x_ref
        if float(proj @ proj) > 0:
            u -= (float(u @ proj) / float(proj @ proj)) * proj
        res = v_fun - float(np.mean(proj**2))
        if res > 0 and float(np.mean(u**2)) > 0:
            u *= math.sqrt(res / float(np.mean(u**2)))
        else:
            u[:] = 0.0
        self.E = e
        self.u = u
        self.dimension = n
        self.component_count = N
        self.certification_center = np.zeros(n)
        self.certification_radius = 2.0 * reference_radius
        gvar, fvar = self.component_variances(self._x_ref)
        self.metadata = ProblemMetadata(
            lipschitz_L=1.0,
            f_min=0.0,
            variance_bound_grad=gvar,
            variance_bound_fun=fvar,
            convexity_class=Convexity.STRONGLY_CONVEX,
            strong_convexity_mu=1.0,
        )

    def default_start(self):
        return self._x_ref.copy()

    def exact_value(self, x):
        return 0.5 * float(x @ x)

    def exact_gradient(self, x):
        return x.astype(float, copy=True)

    def component_values(self, x, indices):
        return 0.5 * float(x @ x) + self.E[indices] @ x + self.u[indices]

    def component_gradients(self, x, indices):
        return x + self.E[indices]


# ---------------------------------------------------------------------------


_BUILTIN_KINDS = ("quadratic_sc", "logistic", "nonconvex_sum")


def make_builtin(problem_kind: str, n: int, N: int, seed: int, **options) -> Problem:
    """Construct one of the built-in test problems.

    Extra keyword options tune the generators (documented defaults above);
    notably ``noise_scale=0`` makes quadratic_sc and nonconvex_sum exactly
    deterministic (all components identical).
    """
    if n < 1 or N < 1:
        raise ValueError("n and N must be >= 1")
    if problem_kind == "quadratic_sc":
        return _make_quadratic(n, N, seed, **options)
    if problem_kind == "logistic":
        return _make_logistic(n, N, seed, **options)
    if problem_kind == "nonconvex_sum":
        return _make_nonconvex(n, N, seed, **options)
    raise ValueError(f"unknown problem kind {problem_kind!r}; expected one of {_BUILTIN_KINDS}")


def make_gaussian_probe(n, N, v_grad, v_fun, seed, reference_radius=2.0) -> GaussianProbeProblem:
    return GaussianProbeProblem(n, N, v_grad, v_fun, seed, reference_radius)


def _certify_by_sampling(problem, center, radius, seed, margin=2.0, n_points=128):
    """Upper-bound component variances by enumerating them at sampled points
    of the region and inflating the maximum by ``margin``."""
    rng = np.random.default_rng(seed)
    pts = [np.asarray(center, dtype=float)]
    n = problem.dimension
    for _ in range(n_points):
        d = rng.normal(size=n)
        d *= radius * rng.random() ** (1.0 / n) / np.linalg.norm(d)
        pts.append(center + d)
    for _ in range(32):
        d = rng.normal(size=n)
        pts.append(center + radius * d / np.linalg.norm(d))
    v_g = v_f = 0.0
    for p in pts:
        g, f = problem.component_variances(p)
        v_g = max(v_g, g)
        v_f = max(v_f, f)
    return margin * v_g, margin * v_f
