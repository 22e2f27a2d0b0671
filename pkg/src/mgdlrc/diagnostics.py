"""Numerical checks of the regret and stability inequalities on recorded runs.

Every check returns a :class:`CheckResult` carrying its worst slack so that
regressions show up as a trend and not only as a flipped flag.  Slack is
``rhs - lhs`` (or the analogous margin), so negative means violated.

Raw utility signals are ``u^(t) = w_t * u_tilde^(t)``.  ``w_t`` grows like
``t**H``; the RVU ledger is therefore built only for runs short enough that
raw weights stay representable (``T <= 500`` for ``H <= 3`` is far inside).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .game import generate_random_game
from .policy import (HyperParams, factored_objective, lifted_objective, policy_step,
                     solve_lambda, verify_lifted_argmax)
from .weights import WeightSchedule, gap_envelope

RVU_TOL = 1e-6
DEVIATION_TOL = 1e-9


class HistoryError(ValueError):
    pass


@dataclass
class CheckResult:
    check_name: str
    cells_checked: int
    worst_slack: float
    passed: bool
    informational: bool = False
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        self.passed = bool(self.passed)
        self.worst_slack = float(self.worst_slack)

    def to_dict(self) -> dict:
        out = {"check_name": self.check_name, "cells_checked": self.cells_checked,
               "worst_slack": _json_float(self.worst_slack), "pass": self.passed}
        if self.informational:
            out["informational"] = True
        if self.details:
            out["details"] = self.details
        return out


def _json_float(v):
    v = float(v)
    return v if math.isfinite(v) else None


def _require_history(result):
    if result.history is None or len(result.history) == 0:
        raise HistoryError("this check needs a run recorded with history enabled")
    return result.history


# -- RVU ledger ------------------------------------------------------------

@dataclass
class RvuLedger:
    """Per-cell terms, each an array of shape ``(H, S)`` per player (raw scale)."""

    lifted_regret: list[np.ndarray]
    term_a: list[np.ndarray]          # 2 ||u^(T)||_inf
    term_a_max: list[np.ndarray]      # 2 max_t ||u^(t)||_inf
    term_b: float
    term_c: list[np.ndarray]
    term_d: list[np.ndarray]

    def rhs(self, player: int, conservative: bool = False) -> np.ndarray:
        a = self.term_a_max[player] if conservative else self.term_a[player]
        return a + self.term_b + self.term_c[player] - self.term_d[player]

    def slack(self, player: int, conservative: bool = False) -> np.ndarray:
        return self.rhs(player, conservative) - self.lifted_regret[player]


def raw_signals(history, player: int, schedule: WeightSchedule) -> np.ndarray:
    """``u^(t)`` for ``t = 1..T``, shape ``(T, H, S, A_i)``."""
    ut = history.stacked("u", player)
    w = np.array([schedule.w(t) for t in range(1, len(ut) + 1)])
    return ut * w[:, None, None, None]


def lifted_regret(u: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``max_{y in {0} u vertices} sum_t <u^(t), y - y^(t)>`` per cell."""
    played = (u * y).sum(axis=-1).sum(axis=0)          # sum_t <u^(t), y^(t)>
    best_vertex = u.sum(axis=0).max(axis=-1)
    return np.maximum(0.0, best_vertex) - played


def next_policies(learners, params: HyperParams) -> list[np.ndarray]:
    """Policies the learners would play in the round after the last one."""
    out = []
    for l in learners:
        nxt = l.copy()
        policy_step(nxt, params)
        out.append(nxt.x)
    return out


def rvu_ledger(result) -> RvuLedger:
    history = _require_history(result)
    game, params = result.game, result.params
    T = len(history)
    sched = WeightSchedule(game.horizon, params.base_eta)
    eta = params.base_eta
    w = np.array([sched.w(t) for t in range(1, T + 1)])
    x_next = next_policies(result.learners, params)
    term_b = sched.w(T + 1) * (params.alpha_tilde * math.log(T)
                               + 2.0 * math.log(game.max_actions)) / eta
    led = RvuLedger([], [], [], term_b, [], [])
    for i in range(game.num_players):
        u = raw_signals(history, i, sched)
        ut = history.stacked("u", i)
        x = history.stacked("x", i)
        lam = history.stacked("lam", i)
        led.lifted_regret.append(lifted_regret(u, lam[..., None] * x))
        norms = np.abs(u).max(axis=-1)
        led.term_a.append(2.0 * norms[-1])
        led.term_a_max.append(2.0 * norms.max(axis=0))
        # eta_t ||u^(t) - kappa^(t) u^(t-1)||^2 = eta w_t ||u~^(t) - u~^(t-1)||^2
        prev = np.concatenate([np.zeros_like(ut[:1]), ut[:-1]])
        dev = np.abs(ut - prev).max(axis=-1) ** 2
        led.term_c.append(eta * np.tensordot(w, dev, axes=1))
        xs = np.concatenate([x, x_next[i][None]])
        step = np.abs(xs[1:] - xs[:-1]).sum(axis=-1) ** 2
        led.term_d.append(np.tensordot(w, step, axes=1) / (20.0 * eta))
    return led


def rvu_check(result, tol: float = RVU_TOL) -> list[CheckResult]:
    """RVU inequality per cell under both readings of the first term."""
    led = rvu_ledger(result)
    out = []
    for name, conservative in (("rvu_final_round", False), ("rvu_max_round", True)):
        slack = np.concatenate([led.slack(i, conservative).ravel()
                                for i in range(len(led.lifted_regret))])
        worst = float(slack.min())
        out.append(CheckResult(name, int(slack.size), worst, worst >= -tol))
    return out


# -- signal deviation ------------------------------------------------------

def gap_signal_deviation(u_t, u_prev, nu_t, nu_prev, x_t, x_prev, horizon: int) -> np.ndarray:
    """Slack of ``||u~_t - u~_{t-1}||^2 <= 6||dnu||^2 + 4 H^2 ||dx||_1^2`` (w_t^2 divided out).

    Arguments are normalized signals; any leading cell axes broadcast.
    """
    lhs = np.abs(np.asarray(u_t) - np.asarray(u_prev)).max(axis=-1) ** 2
    dnu = np.abs(np.asarray(nu_t) - np.asarray(nu_prev)).max(axis=-1) ** 2
    dx = np.abs(np.asarray(x_t) - np.asarray(x_prev)).sum(axis=-1) ** 2
    return 6.0 * dnu + 4.0 * horizon**2 * dx - lhs


def signal_deviation_check(result, tol: float = DEVIATION_TOL) -> CheckResult:
    history = _require_history(result)
    H = result.game.horizon
    worst, cells = np.inf, 0
    for i in range(result.game.num_players):
        ut = history.stacked("u", i)
        nu = history.stacked("nu", i)
        x = history.stacked("x", i)
        # conventions at t = 1: nu^(0) = 0, x^(0) = x^(1), u^(0) = 0
        shift = lambda a, first: np.concatenate([first[None], a[:-1]])
        slack = gap_signal_deviation(ut, shift(ut, np.zeros_like(ut[0])),
                                     nu, shift(nu, np.zeros_like(nu[0])),
                                     x, shift(x, x[0]), H)
        worst = min(worst, float(slack.min()))
        cells += slack.size
    return CheckResult("signal_deviation", cells, worst, worst >= -tol)


# -- nonnegative lifted regret ---------------------------------------------

def nonnegative_regret_check(result, tol_sign: float = 1e-9,
                             tol_dom: float = 1e-6) -> CheckResult:
    """Lifted regret is nonnegative, dominates the rescaled weighted regret,
    and equals ``max(0, Reg(T))``."""
    history = _require_history(result)
    game = result.game
    T = len(history)
    sched = WeightSchedule(game.horizon, result.params.base_eta)
    alpha_1 = float(sched.alpha_profile(T)[0])
    worst_sign = worst_dom = worst_eq = np.inf
    cells = 0
    for i in range(game.num_players):
        u = raw_signals(history, i, sched)
        x = history.stacked("x", i)
        lam = history.stacked("lam", i)
        tilde = lifted_regret(u, lam[..., None] * x)
        scaled = result.regret.G[i].max(axis=-1) / alpha_1      # reg^T / alpha_T^1
        worst_sign = min(worst_sign, float(tilde.min()))
        worst_dom = min(worst_dom, float((tilde - scaled).min()))
        worst_eq = min(worst_eq, float(-np.abs(tilde - np.maximum(0.0, scaled)).max()))
        cells += tilde.size
    worst = min(worst_sign + tol_sign, worst_dom + tol_dom, worst_eq + tol_dom)
    return CheckResult("nonnegative_regret", cells, min(worst_sign, worst_dom, worst_eq),
                       worst >= 0.0,
                       details={"sign": worst_sign, "dominates": worst_dom, "equality": worst_eq})


# -- stability probe -------------------------------------------------------

@dataclass
class SensitivitySummary:
    samples: int
    min_ratio: float
    max_ratio: float
    fraction_in_band: float
    band: tuple = (0.7, 1.4)

    def to_dict(self) -> dict:
        return {"samples": self.samples, "min_ratio": self.min_ratio,
                "max_ratio": self.max_ratio, "fraction_in_band": self.fraction_in_band,
                "band": list(self.band)}


def sensitivity_probe(R, params: HyperParams, num_perturbations: int, horizon: int,
                      rng: np.random.Generator | None = None,
                      radius: float | None = None) -> SensitivitySummary:
    """Ratio of solved ``lambda`` under ``||R - R'||_inf <= radius`` perturbations.

    ``radius`` defaults to ``2 H eta``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    R = np.asarray(R, dtype=np.float64).reshape(-1, np.shape(R)[-1])
    if radius is None:
        radius = 2.0 * horizon * params.base_eta
    base = np.asarray(solve_lambda(R, params)).reshape(-1)
    ratios = []
    for _ in range(num_perturbations):
        pert = R + rng.uniform(-radius, radius, size=R.shape)
        lam = np.asarray(solve_lambda(pert, params)).reshape(-1)
        ratios.append(base / lam)
    ratios = np.concatenate(ratios) if ratios else np.ones(1)
    lo, hi = 0.7, 1.4
    return SensitivitySummary(int(ratios.size), float(ratios.min()), float(ratios.max()),
                              float(np.mean((ratios >= lo) & (ratios <= hi))))


def sensitivity_check(result, num_perturbations: int = 100, max_signals: int = 64,
                      seed: int = 0) -> CheckResult:
    history = _require_history(result)
    rng = np.random.default_rng(seed)
    signals = np.concatenate([history.stacked("R", i).reshape(-1, a)
                              for i, a in enumerate(result.game.action_counts)
                              if a == result.game.max_actions])
    pick = rng.choice(len(signals), size=min(max_signals, len(signals)), replace=False)
    summary = sensitivity_probe(signals[np.sort(pick)], result.params, num_perturbations,
                                result.game.horizon, rng)
    slack = min(summary.min_ratio - 0.7, 1.4 - summary.max_ratio)
    return CheckResult("lambda_sensitivity", summary.samples, slack, slack >= 0.0,
                       informational=True, details=summary.to_dict())


# -- suites shared with the verify command ----------------------------------

def weight_suite(horizons=(1, 2, 3, 5), t_max: int = 10_000,
                 exact_upto: int = 50, rel: float = 1e-12) -> CheckResult:
    """Averaging-weight properties for every ``t <= t_max``.

    The profile is rebuilt from its defining product at each ``t``; the
    closed form for ``w_t`` is compared against exact rationals.
    """
    worst = np.inf
    cells = 0
    for H in horizons:
        k = np.arange(1, t_max + 1)
        alpha = (H + 1) / (H + k)
        one_minus = 1.0 - alpha
        for t in range(1, t_max + 1):
            # prod_{k=j+1}^{t} (1 - alpha_k) for j = 1..t
            tail = np.cumprod(one_minus[1:t][::-1])[::-1]
            prof = alpha[:t] * np.append(tail, 1.0)
            j = k[:t]
            # bounds are compared relatively with rounding room of ``rel``
            slacks = (
                1e-12 - abs(prof.sum() - 1.0),
                float(np.min(np.diff(prof), initial=0.0)) / prof[-1] + rel,
                1.0 - t * prof[0] + rel,
                1.0 - (prof / j).sum() * t / (1.0 + 1.0 / H) + rel,
                1.0 - (prof * alpha[:t] ** 2).sum() * t / (3.0 * H) + rel,
            )
            worst = min(worst, min(slacks))
            cells += 1
        sched = WeightSchedule(H)
        prod = Fraction(1)
        for t in range(2, exact_upto + 1):
            prod *= 1 - Fraction(H + 1, H + t)
            # alpha_t^t / alpha_t^1 with alpha_1 = 1
            ratio = Fraction(H + 1, H + t) / prod
            if ratio.denominator != 1 or int(ratio) != sched.w_exact(t):
                worst = min(worst, -1.0)
    return CheckResult("weight_schedule", cells, float(worst), bool(worst >= 0.0))


def lifted_identity_suite(samples: int = 1000, seed: int = 0,
                          tol: float = 1e-10) -> CheckResult:
    """Lifted objective at ``lam * x`` against the factored form."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        d = int(rng.integers(2, 9))
        at = float(rng.uniform(1.5, 60.0))
        lam = float(np.exp(rng.uniform(np.log(1e-6), 0.0)))
        R = rng.uniform(-20, 20, size=d)
        x = rng.dirichlet(np.full(d, 0.5))
        x = np.maximum(x, 1e-300)
        x /= x.sum()
        diff = abs(float(lifted_objective(lam * x, R, at))
                   - float(factored_objective(lam, x, R, at)))
        worst = max(worst, diff)
    return CheckResult("lifted_identity", samples, tol - worst, worst <= tol)


def lifted_argmax_check(result, rounds: int = 100, samples: int = 500,
                        seed: int = 0) -> CheckResult:
    """Recorded iterates beat random lifted candidates on sampled rounds."""
    history = _require_history(result)
    rng = np.random.default_rng(seed)
    T = len(history)
    picks = np.sort(rng.choice(T, size=min(rounds, T), replace=False))
    worst = np.inf
    failures = 0
    cells = 0
    for t in picks:
        i = int(rng.integers(result.game.num_players))
        R = history.R[t][i]
        h, s = int(rng.integers(R.shape[0])), int(rng.integers(R.shape[1]))
        lam = float(history.lam[t][i][h, s])
        x = history.x[t][i][h, s]
        cex = verify_lifted_argmax(R[h, s], lam, x, result.params, samples, rng)
        f_star = float(lifted_objective(np.maximum(lam * x, np.finfo(float).tiny),
                                        R[h, s], result.params.alpha_tilde))
        if cex is not None:
            failures += 1
            worst = min(worst, f_star - cex.candidate_value)
        else:
            worst = min(worst, 0.0)
        cells += 1
    return CheckResult("lifted_argmax", cells, float(worst), failures == 0)


def qv_identity_suite(num_games: int = 20, rounds: int = 200, seed: int = 0,
                      tol: float = 1e-9) -> CheckResult:
    """Q-form and V-form passes agree on random small games."""
    from .trainer import RunConfig, Trainer

    rng = np.random.default_rng(seed)
    worst = 0.0
    for g in range(num_games):
        n, s, a, H = (int(v) for v in rng.integers(1, 5, size=4))
        n = min(n, 3)
        n = max(n, 2) if g % 2 == 0 else n
        game = generate_random_game(seed * 1000 + g, n, s, a, H,
                                    stay_prob=float(rng.uniform(0.3, 1.0)) if s > 1 else 1.0)
        params = HyperParams.defaults(H, n, a)
        tr = Trainer(RunConfig(rounds=rounds, params=params, game=game, q_form=True,
                               metric_stride=rounds))
        res = tr.run()
        worst = max(worst, float(res.q_identity_error))
    return CheckResult("qv_identity", num_games, tol - worst, worst <= tol)


def envelope_check(result) -> CheckResult:
    g, p = result.game, result.params
    worst = np.inf
    for row in result.rows:
        bound = gap_envelope(row["round"], g.horizon, g.num_players, p.alpha_tilde,
                             g.max_actions)
        worst = min(worst, bound - row["gap_raw"])
    return CheckResult("gap_envelope", len(result.rows), float(worst), worst >= 0.0)


def recursion_check(result, tol: float = 1e-9) -> CheckResult:
    """Worst excess of the per-stage gap recursion tracked during training."""
    excess = result.recursion_excess
    return CheckResult("gap_recursion", len(result.rows), -float(excess), excess <= tol)


def verify(result, quick: bool = False, seed: int = 0) -> list[CheckResult]:
    """Run every check that applies to ``result``; history must be recorded."""
    _require_history(result)
    checks = [
        weight_suite(t_max=500 if quick else 10_000),
        lifted_identity_suite(200 if quick else 1000, seed=seed),
        lifted_argmax_check(result, rounds=20 if quick else 100, seed=seed),
        qv_identity_suite(num_games=3 if quick else 20, rounds=30 if quick else 200, seed=seed),
        nonnegative_regret_check(result),
        *rvu_check(result),
        signal_deviation_check(result),
        recursion_check(result),
        envelope_check(result),
        sensitivity_check(result, num_perturbations=10 if quick else 100, seed=seed),
    ]
    return checks


def report(checks: list[CheckResult]) -> dict:
    hard = [c for c in checks if not c.informational]
    return {"pass": all(c.passed for c in hard), "checks": [c.to_dict() for c in checks]}
