"""L-BFGS with a strong-Wolfe line search, and Adam.

Both work on flat float64 parameter vectors and an objective
``f(w) -> (value, gradient)``.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

CURVATURE_EPS = 1e-12
# A line counts as quadratic when the two-point quadratic model reproduces
# f(a) to this fraction of the observed change (plus a few ulps of f).
QUADRATIC_MODEL_RTOL = 1e-6
# Changes in f below this fraction of |f(0)| are treated as roundoff; there
# the line search switches to the derivative form of sufficient decrease
# (approximate Wolfe conditions).
F_NOISE_RTOL = 1e3 * np.finfo(np.float64).eps


class NonFiniteStartError(FloatingPointError):
    """Objective value or gradient is not finite at the initial point."""


class LineSearchError(ValueError):
    pass


@dataclass(frozen=True)
class LBFGSConfig:
    memory: int = 50
    max_iter: int = 5000
    gtol: float = 1e-8
    c1: float = 1e-4
    c2: float = 0.9
    max_ls: int = 25
    initial_step: float = 1.0

    def __post_init__(self):
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError(f"need 0 < c1 < c2 < 1, got c1={self.c1}, c2={self.c2}")
        if self.memory < 1:
            raise ValueError("memory must be >= 1")
        if self.max_iter < 0 or self.max_ls < 1:
            raise ValueError("max_iter must be >= 0 and max_ls >= 1")


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_iter: int = 5000

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")


@dataclass
class Termination:
    reason: str  # "gtol" | "max_iter" | "non-finite" | "line-search"
    iteration: int
    message: str = ""


def _finite(f, g):
    return math.isfinite(f) and bool(np.all(np.isfinite(g)))


def two_loop_direction(history, grad):
    """``-H grad`` for the L-BFGS inverse-Hessian estimate built from ``history``.

    ``history`` is a sequence of ``(s, y)`` pairs, oldest first. The initial
    matrix is ``gamma * I`` with ``gamma = s'y / y'y`` of the newest pair.
    """
    q = np.array(grad, dtype=np.float64, copy=True)
    if not history:
        return -q
    alphas = []
    rhos = []
    for s, y in reversed(history):
        rho = 1.0 / float(y @ s)
        a = rho * float(s @ q)
        q -= a * y
        alphas.append(a)
        rhos.append(rho)
    s, y = history[-1]
    q *= float(s @ y) / float(y @ y)
    for (s, y), a, rho in zip(history, reversed(alphas), reversed(rhos)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return -q


def _cubic_min(a, fa, da, b, fb, db):
    """Minimiser of the cubic through two points with slopes, or None."""
    d1 = da + db - 3 * (fa - fb) / (a - b)
    disc = d1 * d1 - da * db
    if disc < 0:
        return None
    d2 = math.copysign(math.sqrt(disc), b - a)
    denom = db - da + 2 * d2
    if denom == 0:
        return None
    t = b - (b - a) * (db + d2 - d1) / denom
    return t if math.isfinite(t) else None


@dataclass
class LineSearchResult:
    step: float
    value: float
    grad: np.ndarray
    evaluations: int
    wolfe: bool
    nonfinite: bool = False


def wolfe_line_search(f, x, direction, config=None, f0=None, g0=None, step=None):
    """Strong-Wolfe step along ``direction`` (bracketing + cubic zoom).

    Returns a :class:`LineSearchResult`. When no strong-Wolfe point is
    found within ``config.max_ls`` evaluations, the best point satisfying
    sufficient decrease is returned with ``wolfe=False``; if there is none,
    ``step`` is 0. Non-finite trial values are treated as too-long steps.
    When a trial value is within roundoff of ``f(0)`` the sufficient
    decrease test uses slopes instead, ``phi'(a) <= (2 c1 - 1) phi'(0)``,
    which is exact on quadratics. If the accepted point shows the line to be numerically quadratic, one
    extra evaluation at the secant minimiser replaces it when that point
    also satisfies strong Wolfe with a lower value.
    """
    cfg = config or LBFGSConfig()
    d = np.asarray(direction, dtype=np.float64)
    if f0 is None or g0 is None:
        f0, g0 = f(x)
    dphi0 = float(g0 @ d)
    if not dphi0 < 0:
        raise LineSearchError(f"direction is not a descent direction (d'g = {dphi0:g})")
    c1, c2 = cfg.c1, cfg.c2
    noise = F_NOISE_RTOL * abs(f0)
    evals = 0
    best = None  # (value, step, grad) with sufficient decrease
    saw_nonfinite = False

    def flat(val):
        return abs(val - f0) <= noise

    def decrease(a, val, da):
        if val <= f0 + c1 * a * dphi0:
            return True
        return flat(val) and da <= (2 * c1 - 1) * dphi0

    def phi(a):
        nonlocal evals, best, saw_nonfinite
        evals += 1
        val, g = f(x + a * d)
        val = float(val)
        if not _finite(val, g):
            saw_nonfinite = True
            return math.inf, None, math.nan
        da = float(g @ d)
        if decrease(a, val, da) and (best is None or val < best[0]):
            best = (val, a, g)
        return val, g, da

    def done(a, val, g, da):
        # On a numerically quadratic line one secant step hits the exact 1-D
        # minimiser, which gives finite termination on quadratic objectives.
        if da != dphi0 and evals < cfg.max_ls:
            pred = f0 + 0.5 * a * (dphi0 + da)
            tol = QUADRATIC_MODEL_RTOL * abs(val - f0) + 64 * np.finfo(float).eps * (abs(f0) + abs(val))
            a_star = a * dphi0 / (dphi0 - da)
            if (abs(val - pred) <= tol or flat(val)) and a_star > 0 and abs(a_star - a) > 4 * np.finfo(float).eps * a:
                v2, g2, d2 = phi(a_star)
                lower = v2 <= val or (flat(v2) and abs(d2) <= abs(da))
                if g2 is not None and lower and decrease(a_star, v2, d2) and abs(d2) <= -c2 * dphi0:
                    return LineSearchResult(a_star, v2, g2, evals, True)
        return LineSearchResult(a, val, g, evals, True)

    def fallback():
        if best is None:
            return LineSearchResult(0.0, f0, g0, evals, False, saw_nonfinite)
        return LineSearchResult(best[1], best[0], best[2], evals, False, saw_nonfinite)

    def zoom(lo, flo, dlo, hi, fhi, dhi):
        while evals < cfg.max_ls:
            a = None
            if math.isfinite(fhi) and math.isfinite(dhi):
                a = _cubic_min(lo, flo, dlo, hi, fhi, dhi)
            width = abs(hi - lo)
            if a is None or not (min(lo, hi) + 0.1 * width <= a <= max(lo, hi) - 0.1 * width):
                a = 0.5 * (lo + hi)
            val, g, da = phi(a)
            if not decrease(a, val, da) or (val >= flo and not flat(val)):
                hi, fhi, dhi = a, val, da
            else:
                if abs(da) <= -c2 * dphi0:
                    return done(a, val, g, da)
                if da * (hi - lo) >= 0:
                    hi, fhi, dhi = lo, flo, dlo
                lo, flo, dlo = a, val, da
            if abs(hi - lo) < 1e-16 * max(1.0, abs(lo)):
                break
        return fallback()

    a_prev, f_prev, d_prev = 0.0, f0, dphi0
    a = cfg.initial_step if step is None else step
    first = True
    while evals < cfg.max_ls:
        val, g, da = phi(a)
        if not decrease(a, val, da) or (not first and val >= f_prev and not flat(val)):
            return zoom(a_prev, f_prev, d_prev, a, val, da)
        if abs(da) <= -c2 * dphi0:
            return done(a, val, g, da)
        if da >= 0:
            return zoom(a, val, da, a_prev, f_prev, d_prev)
        a_prev, f_prev, d_prev = a, val, da
        a *= 2.0
        first = False
    return fallback()


@dataclass
class LBFGSResult:
    x: np.ndarray
    value: float
    grad: np.ndarray
    termination: Termination
    iterations: int
    evaluations: int


def lbfgs_minimize(objective, x0, config=None, callback=None):
    """Minimise ``objective`` from ``x0`` with L-BFGS.

    ``callback(iteration, value, x)`` runs after every accepted step
    (iteration numbering starts at 1; iteration 0 is the initial point).
    Stops on ``max-norm(grad) <= gtol``, ``max_iter``, a non-finite value
    or gradient, or a failed line search after a memory reset.

    Raises :class:`NonFiniteStartError` if the initial point is non-finite.
    """
    cfg = config or LBFGSConfig()
    x = np.array(x0, dtype=np.float64, copy=True)
    fx, g = objective(x)
    fx = float(fx)
    evals = 1
    if not _finite(fx, g):
        raise NonFiniteStartError("objective is not finite at the initial point")
    g = np.asarray(g, dtype=np.float64)
    history = deque(maxlen=cfg.memory)
    it = 0
    if np.max(np.abs(g), initial=0.0) <= cfg.gtol:
        return LBFGSResult(x, fx, g, Termination("gtol", 0), 0, evals)
    while it < cfg.max_iter:
        it += 1
        d = two_loop_direction(history, g)
        if not float(d @ g) < 0:
            history.clear()
            d = -g
        ls = wolfe_line_search(objective, x, d, cfg, fx, g)
        evals += ls.evaluations
        if ls.step == 0.0 and history:
            history.clear()
            d = -g
            ls = wolfe_line_search(objective, x, d, cfg, fx, g)
            evals += ls.evaluations
        if ls.step == 0.0:
            reason = "non-finite" if ls.nonfinite else "line-search"
            return LBFGSResult(x, fx, g, Termination(reason, it, "no acceptable step"), it - 1, evals)
        s = ls.step * d
        x_new = x + s
        y = ls.grad - g
        sy = float(s @ y)
        if sy > CURVATURE_EPS:
            history.append((s, y))
        x, fx, g = x_new, ls.value, np.asarray(ls.grad, dtype=np.float64)
        if callback is not None:
            callback(it, fx, x)
        if np.max(np.abs(g)) <= cfg.gtol:
            return LBFGSResult(x, fx, g, Termination("gtol", it), it, evals)
    return LBFGSResult(x, fx, g, Termination("max_iter", it), it, evals)


@dataclass
class AdamState:
    params: np.ndarray
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def start(cls, x0):
        x = np.array(x0, dtype=np.float64, copy=True)
        return cls(x, np.zeros_like(x), np.zeros_like(x), 0)


def adam_step(state: AdamState, grad, config=None) -> AdamState:
    """One bias-corrected Adam update; returns a new state."""
    cfg = config or AdamConfig()
    g = np.asarray(grad, dtype=np.float64)
    t = state.t + 1
    m = cfg.beta1 * state.m + (1 - cfg.beta1) * g
    v = cfg.beta2 * state.v + (1 - cfg.beta2) * g * g
    m_hat = m / (1 - cfg.beta1**t)
    v_hat = v / (1 - cfg.beta2**t)
    params = state.params - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return AdamState(params, m, v, t)


def adam_minimize(objective, x0, config=None, callback=None, gtol=None):
    """Run Adam for ``config.max_iter`` steps (or until max-norm grad <= gtol)."""
    cfg = config or AdamConfig()
    state = AdamState.start(x0)
    fx, g = objective(state.params)
    fx = float(fx)
    evals = 1
    if not _finite(fx, g):
        raise NonFiniteStartError("objective is not finite at the initial point")
    best = (fx, state.params.copy(), np.asarray(g))
    for it in range(1, cfg.max_iter + 1):
        state = adam_step(state, g, cfg)
        fx, g = objective(state.params)
        fx = float(fx)
        evals += 1
        if not _finite(fx, g):
            return LBFGSResult(best[1], best[0], best[2], Termination("non-finite", it), it - 1, evals)
        best = (fx, state.params.copy(), np.asarray(g))
        if callback is not None:
            callback(it, fx, state.params)
        if gtol is not None and np.max(np.abs(g)) <= gtol:
            return LBFGSResult(state.params, fx, np.asarray(g), Termination("gtol", it), it, evals)
    return LBFGSResult(state.params, fx, np.asarray(g), Termination("max_iter", cfg.max_iter), cfg.max_iter, evals)
