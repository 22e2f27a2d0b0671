"""Dynamic learning-rate controlled optimistic MWU, one learner per (stage, state).

All arrays carry the action axis last, so every function works for a single
cell (shape ``(d,)``) or a stack of cells (shape ``(..., d)``).

Accumulators are kept divided by the utility weight ``w_t`` because ``w_t``
grows like ``t**H``.  With ``U_tilde = U / w_t`` and ``u_tilde = u / w_t`` the
optimistic signal is simply ``eta * (U_tilde + u_tilde_prev)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .weights import WeightSchedule, default_alpha_tilde, theoretical_eta

BASELINES = ("expected_value", "v_value")
LAMBDA_RULES = ("argmax", "two_case")
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class HyperParams:
    base_eta: float
    alpha_tilde: float
    beta: float = 70.0
    lambda_floor: float = 1e-12
    lambda_cap: float = 1.0
    baseline_mode: str = "expected_value"
    lambda_rule: str = "argmax"
    grid_size: int = 256
    refine_tol: float = 1e-10

    def __post_init__(self):
        if not self.base_eta > 0:
            raise ValueError("base_eta must be positive")
        if self.beta < 70:
            raise ValueError("beta must be at least 70")
        if not 0 < self.lambda_floor < self.lambda_cap <= 1:
            raise ValueError("need 0 < lambda_floor < lambda_cap <= 1")
        if self.baseline_mode not in BASELINES:
            raise ValueError(f"baseline_mode must be one of {BASELINES}")
        if self.lambda_rule not in LAMBDA_RULES:
            raise ValueError(f"lambda_rule must be one of {LAMBDA_RULES}")
        if self.grid_size < 3:
            raise ValueError("grid_size must be at least 3")

    @classmethod
    def defaults(cls, horizon: int, num_players: int, max_actions: int,
                 eta: float | str = "theoretical", beta: float = 70.0, **kw) -> "HyperParams":
        if eta == "theoretical":
            eta = theoretical_eta(horizon, num_players)
        return cls(base_eta=float(eta), alpha_tilde=default_alpha_tilde(max_actions, beta),
                   beta=beta, **kw)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


# -- scalar building blocks ------------------------------------------------

def logsumexp(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1)
    return m + np.log(np.exp(z - m[..., None]).sum(axis=-1))


def softmax_policy(R: np.ndarray, lam) -> np.ndarray:
    """``exp(lam * R) / sum exp(lam * R)`` along the last axis, max-shifted."""
    z = np.asarray(lam, dtype=np.float64)[..., None] * np.asarray(R, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def lambda_objective(lam, R: np.ndarray, alpha_tilde: float) -> np.ndarray:
    """``(alpha_tilde - 1) log lam + logsumexp(lam * R)``.

    ``lam`` may carry extra trailing axes relative to ``R[..., 0]``; e.g.
    ``lam`` of shape ``(B, G)`` against ``R`` of shape ``(B, 1, d)``.
    """
    lam = np.asarray(lam, dtype=np.float64)
    return (alpha_tilde - 1.0) * np.log(lam) + logsumexp(lam[..., None] * R)


def lambda_objective_slope(lam, R: np.ndarray, alpha_tilde: float) -> np.ndarray:
    lam = np.asarray(lam, dtype=np.float64)
    x = softmax_policy(R, lam)
    return (alpha_tilde - 1.0) / lam + (x * R).sum(axis=-1)


def lambda_objective_curvature(lam, R: np.ndarray, alpha_tilde: float) -> np.ndarray:
    lam = np.asarray(lam, dtype=np.float64)
    x = softmax_policy(R, lam)
    mean = (x * R).sum(axis=-1)
    return -(alpha_tilde - 1.0) / lam**2 + (x * R * R).sum(axis=-1) - mean * mean


def solve_lambda(R, params: HyperParams) -> np.ndarray:
    """Maximize ``lambda_objective`` over ``(lambda_floor, cap]`` for each signal.

    A geometric grid picks the best bracket ``[g[k-1], g[k+1]]``.  When the
    derivative changes sign across it, a bisection-safeguarded Newton
    iteration on the derivative pins the stationary point to rounding
    accuracy; otherwise golden-section search on the objective is used.
    Signals whose objective is increasing on the whole interval
    (``min R >= -(alpha_tilde - 1) / cap``) return the cap directly.
    """
    R = np.asarray(R, dtype=np.float64)
    if not np.all(np.isfinite(R)):
        raise ValueError("signal contains non-finite entries")
    single = R.ndim == 1
    Rb = R.reshape(-1, R.shape[-1])
    cap = params.lambda_cap
    if params.lambda_rule == "two_case":
        cap = min(cap, params.base_eta)
    lam = _solve_batch(Rb, params.alpha_tilde, params.lambda_floor, cap,
                       params.grid_size, params.refine_tol)
    if params.lambda_rule == "two_case":
        d = Rb.shape[-1]
        large = Rb.max(axis=-1) >= -params.beta * math.log(d)
        lam = np.where(large, params.base_eta, lam)
    lam = lam.reshape(R.shape[:-1])
    return lam[()] if single else lam


@lru_cache(maxsize=16)
def _grid(floor: float, cap: float, size: int) -> np.ndarray:
    grid = np.geomspace(floor, cap, size)
    grid[0], grid[-1] = floor, cap
    grid.setflags(write=False)
    return grid


def _solve_batch(R, alpha_tilde, floor, cap, grid_size, tol):
    n = R.shape[0]
    lam = np.full(n, cap)
    if alpha_tilde > 1.0:
        todo = R.min(axis=-1) < -(alpha_tilde - 1.0) / cap
        if todo.any():
            todo[todo] = ~_increasing_to_cap(R[todo], alpha_tilde, cap)
    else:
        todo = np.ones(n, dtype=bool)
    if not todo.any():
        return lam
    Rt = R[todo]
    grid = _grid(floor, cap, grid_size)
    fg = lambda_objective(np.broadcast_to(grid, (Rt.shape[0], grid_size)), Rt[:, None, :],
                          alpha_tilde)
    k = fg.argmax(axis=1)
    best = grid[k]
    lo = grid[np.maximum(k - 1, 0)]
    hi = grid[np.minimum(k + 1, grid_size - 1)]

    slope_lo = lambda_objective_slope(lo, Rt, alpha_tilde)
    slope_hi = lambda_objective_slope(hi, Rt, alpha_tilde)
    straddle = (slope_lo > 0) & (slope_hi < 0)
    refined = best.copy()
    if straddle.any():
        refined[straddle] = _newton_bisect(Rt[straddle], lo[straddle], hi[straddle],
                                           best[straddle], alpha_tilde, tol)
    if (~straddle).any():
        m = ~straddle
        refined[m] = _golden(Rt[m], lo[m], hi[m], alpha_tilde, tol)

    # grid neighbours stay candidates in case the bracket holds no interior max
    cands = np.stack([refined, best, lo, hi], axis=1)
    fc = lambda_objective(cands, Rt[:, None, :], alpha_tilde)
    fmax = fc.max(axis=1)
    pick = cands[np.arange(len(cands)), fc.argmax(axis=1)]
    # the refined point wins ties at rounding level
    near = fc[:, 0] >= fmax - 1e-13 * np.maximum(1.0, np.abs(fmax))
    lam[todo] = np.where(near, refined, pick)
    return lam


def _increasing_to_cap(R, alpha_tilde, cap, max_links=12):
    """True where the objective is provably nondecreasing on ``(0, cap]``.

    ``m(lam) = E_softmax(lam R)[R]`` is nondecreasing, so on ``[l_k, l_{k+1}]``
    with ``l_{k+1} = (alpha_tilde - 1) / -m(l_k)`` the derivative
    ``(alpha_tilde - 1) / lam + m(lam)`` stays nonnegative.  Chaining such
    links up to ``cap`` certifies that the cap is the maximizer.
    """
    c = alpha_tilde - 1.0
    link = np.zeros(len(R))
    m = R.mean(axis=-1)
    ok = np.zeros(len(R), dtype=bool)
    for _ in range(max_links):
        ok |= m >= -c / cap
        if ok.all():
            break
        nxt = c / -np.minimum(m, -1e-300)
        stalled = nxt <= link * (1.0 + 1e-12)
        if np.all(ok | stalled):
            break
        link = np.where(ok | stalled, link, nxt)
        m = np.where(ok | stalled, m, (softmax_policy(R, link) * R).sum(axis=-1))
    return ok


def _newton_bisect(R, a, b, x, alpha_tilde, tol, max_iter=100):
    """Root of the derivative inside ``[a, b]`` where it goes from + to -."""
    a, b, x = a.copy(), b.copy(), x.copy()
    active = np.ones(len(x), dtype=bool)
    for _ in range(max_iter):
        g = lambda_objective_slope(x, R, alpha_tilde)
        up = g > 0
        a = np.where(up, x, a)
        b = np.where(up, b, x)
        gp = lambda_objective_curvature(x, R, alpha_tilde)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = x - g / gp
        ok = (gp < 0) & (newton > a) & (newton < b)
        nxt = np.where(ok, newton, 0.5 * (a + b))
        nxt = np.where(g == 0, x, nxt)
        done = (np.abs(nxt - x) <= tol * 1e-2) | (b - a <= tol)
        x = np.where(active, nxt, x)
        active &= ~done
        if not active.any():
            break
    return x


def _golden(R, a, b, alpha_tilde, tol):
    a, b = a.copy(), b.copy()
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc = lambda_objective(c, R, alpha_tilde)
    fd = lambda_objective(d, R, alpha_tilde)
    width = float((b - a).max())
    steps = 0 if width <= tol else math.ceil(math.log(tol / width) / math.log(_GOLDEN))
    for _ in range(steps):
        left = fc >= fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        new = np.where(left, b - _GOLDEN * (b - a), a + _GOLDEN * (b - a))
        fnew = lambda_objective(new, R, alpha_tilde)
        c, d, fc, fd = (np.where(left, new, d), np.where(left, c, new),
                        np.where(left, fnew, fd), np.where(left, fc, fnew))
    return np.where(fc >= fd, c, d)


def lifted_objective(y, R, alpha_tilde: float) -> float:
    """``<R, y> + alpha_tilde log(sum y) - (1 / sum y) sum y log y``."""
    y = np.asarray(y, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    if np.any(y <= 0):
        raise ValueError("lifted point must have positive entries")
    mass = y.sum(axis=-1)
    if np.any(mass > 1.0 + 1e-12):
        raise ValueError("lifted point mass must not exceed 1")
    return (R * y).sum(axis=-1) + alpha_tilde * np.log(mass) - (y * np.log(y)).sum(axis=-1) / mass


def factored_objective(lam, x, R, alpha_tilde: float):
    """The same objective written in ``(lam, x)`` coordinates."""
    x = np.asarray(x, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = np.where(x > 0, x * np.log(x), 0.0).sum(axis=-1)
    return lam * (np.asarray(R) * x).sum(axis=-1) + (alpha_tilde - 1.0) * np.log(lam) - ent


# -- learner state ---------------------------------------------------------

@dataclass
class LearnerState:
    """DLRC-OMWU state for a stack of cells with ``d`` actions each.

    ``t`` is the round whose policy is (or will be) held in ``x``.
    """

    U: np.ndarray          # U^(t) / w_t
    u_prev: np.ndarray     # u^(t-1) / w_{t-1}
    R: np.ndarray
    lam: np.ndarray
    x: np.ndarray
    t: int = 1

    @classmethod
    def initial(cls, shape: tuple[int, ...], d: int) -> "LearnerState":
        zeros = np.zeros(shape + (d,))
        return cls(U=zeros.copy(), u_prev=zeros.copy(), R=zeros.copy(),
                   lam=np.ones(shape), x=np.full(shape + (d,), 1.0 / d), t=1)

    @property
    def y(self) -> np.ndarray:
        return self.lam[..., None] * self.x

    def copy(self) -> "LearnerState":
        return replace(self, U=self.U.copy(), u_prev=self.u_prev.copy(), R=self.R.copy(),
                       lam=self.lam.copy(), x=self.x.copy())


def optimistic_signal(state: LearnerState, params: HyperParams) -> np.ndarray:
    return params.base_eta * (state.U + state.u_prev)


def policy_step(state: LearnerState, params: HyperParams) -> LearnerState:
    """Compute ``R``, ``lam`` and ``x`` for round ``state.t`` in place."""
    state.R = optimistic_signal(state, params)
    state.lam = np.asarray(solve_lambda(state.R, params), dtype=np.float64)
    state.x = softmax_policy(state.R, state.lam)
    return state


def commit_feedback(state: LearnerState, nu: np.ndarray, schedule: WeightSchedule,
                    baseline_mode: str = "expected_value", v_value=None) -> np.ndarray:
    """Fold round-``t`` utilities into the accumulators; returns ``u^(t) / w_t``."""
    nu = np.asarray(nu, dtype=np.float64)
    if nu.shape != state.x.shape:
        raise ValueError(f"utility shape {nu.shape} != policy shape {state.x.shape}")
    if baseline_mode == "expected_value":
        base = (nu * state.x).sum(axis=-1)
    elif baseline_mode == "v_value":
        if v_value is None:
            raise ValueError("v_value baseline needs the current V values")
        base = np.asarray(v_value, dtype=np.float64)
    else:
        raise ValueError(f"unknown baseline mode {baseline_mode!r}")
    u = nu - base[..., None]
    state.U = schedule.w_ratio(state.t) * (state.U + u)
    state.u_prev = u
    state.t += 1
    return u


# -- lifted-space argmax check ---------------------------------------------

@dataclass
class LiftedCounterexample:
    candidate: np.ndarray
    candidate_value: float
    iterate_value: float

    def __str__(self):
        return (f"candidate {self.candidate.tolist()} scores {self.candidate_value!r} "
                f"> iterate {self.iterate_value!r}")


def verify_lifted_argmax(R, lam: float, x, params: HyperParams, samples: int = 500,
                         rng: np.random.Generator | None = None,
                         tol: float = 1e-8) -> LiftedCounterexample | None:
    """Check that ``y = lam * x`` maximizes the lifted objective for signal ``R``.

    Competitors are ``samples`` random points of ``(0, cap] * simplex`` and
    ``lam_g * softmax(lam_g R)`` for every point of the solver grid.
    """
    R = np.asarray(R, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    d = R.shape[-1]
    rng = np.random.default_rng(0) if rng is None else rng
    at = params.alpha_tilde
    y_star = lam * x
    f_star = float(lifted_objective(np.maximum(y_star, np.finfo(float).tiny), R, at))

    cap = params.lambda_cap
    mass = cap * (1.0 - rng.random(samples))          # (0, cap]
    dirs = rng.dirichlet(np.ones(d), size=samples)
    cand = mass[:, None] * np.maximum(dirs, 1e-300)
    grid = np.geomspace(params.lambda_floor, cap, params.grid_size)
    cand = np.concatenate([cand, grid[:, None] * softmax_policy(R, grid)])
    vals = lifted_objective(np.maximum(cand, np.finfo(float).tiny), R, at)
    k = int(vals.argmax())
    if vals[k] > f_star + tol:
        return LiftedCounterexample(cand[k], float(vals[k]), f_star)
    return None
