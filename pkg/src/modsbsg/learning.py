"""Parameter-update machinery for leaders and followers."""
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import IllConditioned, InsufficientSamples, NonFiniteGradient, NotFitted


# --------------------------------------------------------------------------
# exploration noise


class OUNoise:
    """Euler-Maruyama Ornstein-Uhlenbeck process ``dx = theta (mu - x) dt + sigma dW``."""

    def __init__(self, theta=0.15, mu=0.0, sigma=0.2, dt=1.0, seed=None, rng=None):
        if theta < 0 or sigma < 0 or dt <= 0:
            raise ValueError("need theta >= 0, sigma >= 0, dt > 0")
        self.theta = float(theta)
        self.mu = float(mu)
        self.sigma = float(sigma)
        self.dt = float(dt)
        self.rng = rng if rng is not None else np.random.default_rng(seed)
        self.x = self.mu
        self.draws = 0

    def reset(self, x=None):
        self.x = self.mu if x is None else float(x)

    def step(self):
        z = self.rng.standard_normal()
        self.draws += 1
        self.x = self.x + self.theta * (self.mu - self.x) * self.dt + self.sigma * math.sqrt(self.dt) * z
        return self.x

    @property
    def stationary_std(self):
        return self.sigma / math.sqrt(2.0 * self.theta)


def ou_step(noise):
    return noise.step()


@dataclass
class ExplorationSchedule:
    sigma0: float = 0.2
    decay: float = 0.99
    sigma_min: float = 0.01

    def sigma(self, episode):
        if episode < 0:
            raise ValueError("episode must be >= 0")
        return max(self.sigma0 * self.decay ** episode, self.sigma_min)


def decay_exploration(schedule, episode):
    return schedule.sigma(episode)


# --------------------------------------------------------------------------
# polynomial potential surrogate


def poly_exponents(degree):
    """Exponent pairs of the full bivariate basis up to total degree ``degree``.

    Ordering: ``1, x1, x2``, then for each degree d >= 2 the pure powers
    ``x1^d, x2^d`` followed by the mixed terms ``x1^(d-1) x2, ..., x1 x2^(d-1)``.
    For degree 2 this is ``1, x1, x2, x1^2, x2^2, x1 x2``.
    """
    if degree < 1:
        raise ValueError("degree must be >= 1")
    pairs = [(0, 0), (1, 0), (0, 1)]
    for d in range(2, degree + 1):
        pairs += [(d, 0), (0, d)]
        pairs += [(d - k, k) for k in range(1, d)]
    e = np.array(pairs, dtype=np.int64)
    return np.ascontiguousarray(e[:, 0]), np.ascontiguousarray(e[:, 1])


def design_matrix(x1, x2, e1, e2):
    x1 = np.asarray(x1, dtype=float)[:, None]
    x2 = np.asarray(x2, dtype=float)[:, None]
    return x1 ** e1 * x2 ** e2


def ols(x1, x2, Y, e1, e2, cond_max=1e8):
    """Coefficients ``(ncoef, ntargets)`` and condition number of the design.

    Raises ``InsufficientSamples`` below one sample per coefficient and
    ``IllConditioned`` for rank-deficient designs or conditions above ``cond_max``.
    """
    x1 = np.ascontiguousarray(x1, dtype=float)
    x2 = np.ascontiguousarray(x2, dtype=float)
    Y = np.ascontiguousarray(Y, dtype=float)
    k = len(e1)
    if x1.shape[0] < k:
        raise InsufficientSamples(f"{x1.shape[0]} samples < {k} coefficients")
    beta, cond, rank = kernels.ols_fit(x1, x2, Y, e1, e2)
    if rank < k or not cond <= cond_max:
        raise IllConditioned(f"design condition {cond:.3g} exceeds {cond_max:.3g}")
    return beta, float(cond)


@dataclass(frozen=True)
class PolyQuery:
    value: float
    d1: float
    d2: float
    d22: float
    d12: float
    d11: float


class PolyPotentialModel:
    """OLS polynomial surrogate ``phi_hat(x1, x2)`` with analytic derivatives."""

    def __init__(self, degree=2, cond_max=1e8):
        self.degree = int(degree)
        self.cond_max = float(cond_max)
        self.e1, self.e2 = poly_exponents(self.degree)
        self.beta = None
        self.residual_norm = math.nan
        self.condition = math.nan

    @property
    def n_coef(self):
        return len(self.e1)

    @property
    def fitted(self):
        return self.beta is not None

    def set_coefficients(self, beta):
        beta = np.asarray(beta, dtype=float)
        if beta.shape != (self.n_coef,):
            raise ValueError(f"expected {self.n_coef} coefficients")
        self.beta = beta.copy()

    def fit(self, x1, x2, y):
        """Least-squares fit. On failure the previous coefficients are kept."""
        y = np.asarray(y, dtype=float)
        beta, cond = ols(x1, x2, y[:, None], self.e1, self.e2, self.cond_max)
        self.beta = beta[:, 0].copy()
        self.condition = cond
        X = design_matrix(x1, x2, self.e1, self.e2)
        self.residual_norm = float(np.linalg.norm(X @ self.beta - y))
        return self.beta

    def predict(self, x1, x2):
        if self.beta is None:
            raise NotFitted("model is not fitted")
        return design_matrix(np.atleast_1d(x1), np.atleast_1d(x2), self.e1, self.e2) @ self.beta

    def query(self, x1, x2):
        if self.beta is None:
            raise NotFitted("model is not fitted")
        v, d1, d2, d11, d22, d12 = kernels.poly_eval(self.beta, self.e1, self.e2, float(x1), float(x2))
        return PolyQuery(v, d1, d2, d22, d12, d11)


def fit_poly(model, samples):
    """Fit ``model`` on rows ``(x1, x2, y)``."""
    s = np.asarray(samples, dtype=float)
    return model.fit(s[:, 0], s[:, 1], s[:, 2])


def poly_query(model, x1, x2):
    q = model.query(x1, x2)
    return q.value, q.d1, q.d2, q.d22, q.d12


# --------------------------------------------------------------------------
# Stackelberg leader gradient and update rules


@dataclass(frozen=True)
class LeaderGradient:
    omega: float
    degenerate: bool


def curvature_degenerate(f22, eps_hess=1e-6, guard="magnitude"):
    """Whether the follower curvature is unusable for the implicit response.

    ``magnitude`` flags ``|f22| < eps_hess``. ``concave`` also flags
    non-negative curvature, where the follower's stationary point is not a maximum.
    """
    if guard == "concave":
        return not f22 <= -eps_hess
    return abs(f22) < eps_hess


def stackelberg_leader_gradient(phi_leader, phi_follower, a_l, follower_summary, eps_hess=1e-6,
                                guard="magnitude"):
    """Total derivative of the leader potential along the follower response.

    Both surrogates take ``(own leader action, follower coalition summary)``.
    ``omega = dL/da - (d2F/dA da) (d2F/dA2)^-1 dL/dA``; when the curvature is
    degenerate (see ``curvature_degenerate``) the correction is dropped and
    ``degenerate`` is set.
    """
    L = phi_leader.query(a_l, follower_summary)
    F = phi_follower.query(a_l, follower_summary)
    if curvature_degenerate(F.d22, eps_hess, guard):
        return LeaderGradient(L.d1, True)
    return LeaderGradient(L.d1 - F.d12 * (L.d2 / F.d22), False)


def _clamp01(x):
    return 0.0 if x < 0.0 else 1.0 if x > 1.0 else x


def leader_update(action, omega, alpha, noise=None):
    """``clamp(action + alpha * omega + ou)``; ``noise`` is an ``OUNoise`` or None."""
    if not math.isfinite(omega):
        raise NonFiniteGradient(f"leader gradient {omega}")
    step = alpha * omega
    if noise is not None:
        step += noise.step()
    return _clamp01(action + step)


def follower_update(action, model, leader_summary, alpha, noise=None):
    """One follower step on ``phi_F(A_L, a_f)``; exploration only if not fitted."""
    g = 0.0
    if model is not None and model.fitted:
        g = model.query(leader_summary, action).d2
        if not math.isfinite(g):
            raise NonFiniteGradient(f"follower gradient {g}")
    step = alpha * g
    if noise is not None:
        step += noise.step()
    return _clamp01(action + step)


# --------------------------------------------------------------------------
# follower multi-step schedulers


@dataclass
class StaticSchedule:
    theta: int = 75
    t: int = 0
    kind = "static"

    def __post_init__(self):
        if self.theta < 1:
            raise ValueError("static step count must be >= 1")

    def budget(self, t=None):
        return int(self.theta)

    def threshold(self, t=None):
        return -1.0

    @property
    def max_steps(self):
        return int(self.theta)

    def tick(self):
        self.t += 1


@dataclass
class GradualReductionSchedule:
    theta0: float = 100.0
    decay: float = 0.999975
    t: int = 0
    kind = "gradual_reduction"

    def __post_init__(self):
        if self.theta0 <= 0 or not (0 < self.decay <= 1):
            raise ValueError("need theta0 > 0 and 0 < decay <= 1")

    def budget(self, t=None):
        t = self.t if t is None else t
        return max(1, math.ceil(self.theta0 * self.decay ** t))

    def threshold(self, t=None):
        return -1.0

    @property
    def max_steps(self):
        return max(1, math.ceil(self.theta0))

    def tick(self):
        self.t += 1


@dataclass
class GradThresholdSchedule:
    theta0: float = 0.5
    decay: float = 0.99995
    max_steps: int = 100
    t: int = 0
    kind = "grad_threshold"

    def __post_init__(self):
        if self.theta0 <= 0 or not (0 < self.decay <= 1) or self.max_steps < 1:
            raise ValueError("need theta0 > 0, 0 < decay <= 1, max_steps >= 1")

    def budget(self, t=None):
        return int(self.max_steps)

    def threshold(self, t=None):
        t = self.t if t is None else t
        return self.theta0 * self.decay ** t

    def tick(self):
        self.t += 1


SCHEDULERS = {
    "static": StaticSchedule,
    "gradual_reduction": GradualReductionSchedule,
    "grad_threshold": GradThresholdSchedule,
}


def make_scheduler(spec):
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind not in SCHEDULERS:
        raise ValueError(f"unknown scheduler kind {kind!r}")
    return SCHEDULERS[kind](**spec)


def scheduler_spec(sched):
    if isinstance(sched, StaticSchedule):
        return {"kind": "static", "theta": sched.theta}
    if isinstance(sched, GradualReductionSchedule):
        return {"kind": "gradual_reduction", "theta0": sched.theta0, "decay": sched.decay}
    return {"kind": "grad_threshold", "theta0": sched.theta0, "decay": sched.decay,
            "max_steps": sched.max_steps}


def follower_step_budget(spec, t, grad_norm_probe):
    """Run follower update steps under ``spec`` at clock ``t``.

    ``grad_norm_probe()`` performs one update step and returns the gradient
    magnitude at the updated action. Returns the number of steps executed.
    """
    thr = spec.threshold(t)
    if thr < 0:
        n = spec.budget(t)
        for _ in range(n):
            grad_norm_probe()
        return n
    steps = 0
    while True:
        g = grad_norm_probe()
        steps += 1
        if steps >= spec.max_steps or g < thr:
            return steps


def follower_multi_step(model, leader_summary, a0, alpha, spec, t):
    """Kernel-backed equivalent of ``follower_step_budget`` with gradient steps on ``model``.

    Returns ``(new action, steps executed)``.
    """
    thr = spec.threshold(t)
    a, steps, _ = kernels.poly_ascent(model.beta, model.e1, model.e2, float(leader_summary),
                                      float(a0), 2, float(alpha), int(spec.budget(t)),
                                      float(thr), int(spec.max_steps))
    if not math.isfinite(a):
        raise NonFiniteGradient("follower ascent diverged")
    return a, steps
