"""Equilibrium-gap evaluation of the averaged correlated output policy.

The output policy resamples a past round index at every stage (with weights
``alpha_b^j`` where ``b`` is the previously drawn index) and plays that
round's joint policy.  Its value coincides with the averaged V-table, and a
unilateral deviator's value obeys the same averaging recursion with a max
over the deviator's own action, so both are maintained incrementally.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .game import MarkovGame, contract_others
from .values import continuation
from .weights import WeightSchedule


@dataclass
class BestResponseState:
    M: list[np.ndarray]     # per player (H, S, A_i)
    V_dag: np.ndarray       # (N, H + 1, S)

    @classmethod
    def initial(cls, game: MarkovGame) -> "BestResponseState":
        return cls(
            M=[np.zeros((game.horizon, game.num_states, a)) for a in game.action_counts],
            V_dag=np.zeros((game.num_players, game.horizon + 1, game.num_states)),
        )

    def copy(self) -> "BestResponseState":
        return BestResponseState([m.copy() for m in self.M], self.V_dag.copy())


def br_round_update(game: MarkovGame, policies: Sequence[np.ndarray],
                    state: BestResponseState, alpha: float) -> BestResponseState:
    """Fold round-``t`` policies into the deviation values (in place)."""
    for h in range(game.horizon - 1, -1, -1):
        q = continuation(game, h, state.V_dag[:, h + 1])
        pols = [p[h] for p in policies]
        for i in range(game.num_players):
            dev = contract_others(game.joint_view(q[i]), pols, i)
            state.M[i][h] = (1.0 - alpha) * state.M[i][h] + alpha * dev
            state.V_dag[i, h] = state.M[i][h].max(axis=-1)
    return state


def cce_gap(br: BestResponseState, V: np.ndarray, initial_state: int) -> tuple[float, float]:
    """``(raw, clamped)`` gap ``max_i V_dag[i, 1, s1] - V[i, 1, s1]``."""
    raw = float((br.V_dag[:, 0, initial_state] - V[:, 0, initial_state]).max())
    return raw, max(raw, 0.0)


def gap_stage_profile(br: BestResponseState, V: np.ndarray) -> np.ndarray:
    """Per-stage worst gap over players and states, length ``H`` (stage ``H+1`` is 0)."""
    return (br.V_dag[:, :-1] - V[:, :-1]).max(axis=(0, 2))


@dataclass
class RegretState:
    G: list[np.ndarray]     # per player (H, S, A_i), alpha-averaged regret vectors

    @classmethod
    def initial(cls, game: MarkovGame) -> "RegretState":
        return cls([np.zeros((game.horizon, game.num_states, a)) for a in game.action_counts])

    def regrets(self) -> np.ndarray:
        """Weighted external regret per ``(i, h, s)``, shape ``(N, H, S)``."""
        return np.stack([g.max(axis=-1) for g in self.G])

    def copy(self) -> "RegretState":
        return RegretState([g.copy() for g in self.G])


def regret_round_update(nus: Sequence[np.ndarray], policies: Sequence[np.ndarray],
                        state: RegretState, alpha: float) -> RegretState:
    for i, (nu, x) in enumerate(zip(nus, policies)):
        inc = nu - (nu * x).sum(axis=-1, keepdims=True)
        state.G[i] = (1.0 - alpha) * state.G[i] + alpha * inc
    return state


class GapRecursionCheck:
    """Tracks ``delta_h^t - sum_j alpha_t^j delta_{h+1}^j - max reg_h^t``.

    Only the worst (largest) excess is kept; the recursion holds when it is
    non-positive.
    """

    def __init__(self, horizon: int):
        self.avg_next = np.zeros(horizon)   # sum_j alpha_t^j delta^j_{h+1}
        self.worst_excess = -np.inf

    def update(self, delta: np.ndarray, regrets: np.ndarray, alpha: float) -> float:
        nxt = np.append(delta[1:], 0.0)
        self.avg_next = (1.0 - alpha) * self.avg_next + alpha * nxt
        excess = float((delta - self.avg_next - regrets.max(axis=(0, 2))).max())
        self.worst_excess = max(self.worst_excess, excess)
        return excess


def rollout_sample(game: MarkovGame, history: Sequence[np.ndarray], schedule: WeightSchedule,
                   rng: np.random.Generator, episodes: int = 1) -> np.ndarray:
    """Play ``episodes`` episodes of the averaged policy; returns ``(episodes, N)`` returns.

    ``history[i]`` has shape ``(T, H, S, A_i)`` holding player ``i``'s policy
    for every recorded round.
    """
    if not history or any(h is None or len(h) == 0 for h in history):
        raise ValueError("rollout needs a recorded policy history")
    if episodes < 1:
        raise ValueError("episodes must be positive")
    T = history[0].shape[0]
    cum_w = schedule.cumulative_w(T)
    bound = np.full(episodes, T)
    state = np.full(episodes, game.initial_state)
    returns = np.zeros((episodes, game.num_players))
    for h in range(game.horizon):
        # index j in [1, bound] with probability w_j / sum_{k <= bound} w_k
        u = 1.0 - rng.random(episodes)
        j = np.searchsorted(cum_w, u * cum_w[bound], side="left")
        j = np.clip(j, 1, bound)
        flat = np.zeros(episodes, dtype=np.int64)
        for i, hist in enumerate(history):
            probs = hist[j - 1, h, state]
            a = _sample_rows(probs, rng)
            flat = flat * game.action_counts[i] + a
        returns += game.rewards[:, h, state, flat].T
        state = _sample_rows(game.transitions[h, state, flat], rng)
        bound = j
    return returns


def _sample_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(probs.shape[0])
    cdf = np.cumsum(probs, axis=1)
    return np.minimum((cdf <= u[:, None] * cdf[:, -1:]).sum(axis=1), probs.shape[1] - 1)


@dataclass
class RolloutSummary:
    episodes: int
    mean: np.ndarray
    stderr: np.ndarray
    value: np.ndarray

    @property
    def z_scores(self) -> np.ndarray:
        diff = np.abs(self.mean - self.value)
        # differences at rounding level count as exact agreement
        exact = diff <= 1e-12 * np.maximum(1.0, np.abs(self.value))
        with np.errstate(divide="ignore", invalid="ignore"):
            z = diff / self.stderr
        return np.where(exact, 0.0, np.where(self.stderr > 0, z, np.inf))

    def to_dict(self) -> dict:
        return {
            "episodes": self.episodes,
            "mean_return": self.mean.tolist(),
            "stderr": self.stderr.tolist(),
            "value": self.value.tolist(),
            "z_score": self.z_scores.tolist(),
            "within_3_stderr": bool(np.all(self.z_scores <= 3.0)),
        }


def rollout_summary(game: MarkovGame, history: Sequence[np.ndarray], schedule: WeightSchedule,
                    value: np.ndarray, episodes: int, seed: int = 0) -> RolloutSummary:
    rng = np.random.Generator(np.random.PCG64(seed))
    ret = rollout_sample(game, history, schedule, rng, episodes)
    mean = ret.mean(axis=0)
    stderr = ret.std(axis=0, ddof=1) / np.sqrt(episodes) if episodes > 1 else np.zeros_like(mean)
    return RolloutSummary(episodes, mean, stderr, np.asarray(value, dtype=np.float64))
