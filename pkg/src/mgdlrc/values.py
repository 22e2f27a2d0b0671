"""Backward value passes with exact expectation oracles.

Policies are passed as a list with one array per player of shape
``(H, S, A_i)``.  Value tables have shape ``(N, H + 1, S)`` with the final
stage slice identically zero.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .game import MarkovGame, contract_others


def joint_policy(policies: Sequence[np.ndarray], stage: int) -> np.ndarray:
    """Product distribution over flat joint actions, shape ``(S, J)``."""
    out = policies[0][stage]
    for p in policies[1:]:
        pk = p[stage]
        out = (out[:, :, None] * pk[:, None, :]).reshape(out.shape[0], -1)
    return out


def continuation(game: MarkovGame, stage: int, v_next: np.ndarray) -> np.ndarray:
    """``r_h + P_h v_next`` for every player, shape ``(N, S, J)``."""
    return game.rewards[:, stage] + np.einsum("sjk,nk->nsj", game.transitions[stage], v_next)


def stage_utilities(game: MarkovGame, stage: int, v_next: np.ndarray,
                    policies: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Per-player utility vectors at one stage, each of shape ``(S, A_i)``."""
    q = continuation(game, stage, v_next)
    pols = [p[stage] for p in policies]
    return [contract_others(game.joint_view(q[i]), pols, i) for i in range(game.num_players)]


def v_backward_pass(game: MarkovGame, policies: Sequence[np.ndarray], v_prev: np.ndarray,
                    alpha: float, return_utilities: bool = False):
    """One round of the averaged V-update, stages processed last to first.

    With ``return_utilities`` the per-player utility vectors
    ``[(r + P V_curr[h+1]) pi_{-i}](s, .)`` computed on the way are returned
    as a list of ``(H, S, A_i)`` arrays.
    """
    n, hp1, s = v_prev.shape
    horizon = game.horizon
    if hp1 != horizon + 1 or n != game.num_players or s != game.num_states:
        raise ValueError(f"value table shape {v_prev.shape} does not fit the game")
    v = np.zeros_like(v_prev)
    nus = [np.empty((horizon, s, a)) for a in game.action_counts]
    for h in range(horizon - 1, -1, -1):
        per_player = stage_utilities(game, h, v[:, h + 1], policies)
        for i, nu in enumerate(per_player):
            nus[i][h] = nu
            played = (nu * policies[i][h]).sum(axis=-1)
            v[i, h] = (1.0 - alpha) * v_prev[i, h] + alpha * played
    if return_utilities:
        return v, nus
    return v


def round_utilities(game: MarkovGame, v_curr: np.ndarray,
                    policies: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Utility vectors for every ``(i, h, s)`` given this round's values."""
    nus = [np.empty((game.horizon, game.num_states, a)) for a in game.action_counts]
    for h in range(game.horizon):
        for i, nu in enumerate(stage_utilities(game, h, v_curr[:, h + 1], policies)):
            nus[i][h] = nu
    return nus


def q_backward_pass(game: MarkovGame, policies: Sequence[np.ndarray], q_prev: np.ndarray,
                    alpha: float) -> np.ndarray:
    """Averaged joint-action Q-update; tables of shape ``(N, H, S, J)``."""
    horizon = game.horizon
    q = np.zeros_like(q_prev)
    for h in range(horizon - 1, -1, -1):
        if h == horizon - 1:
            cont = np.zeros((game.num_players, game.num_states))
        else:
            cont = (q[:, h + 1] * joint_policy(policies, h + 1)[None]).sum(axis=-1)
        target = game.rewards[:, h] + np.einsum("sjk,nk->nsj", game.transitions[h], cont)
        q[:, h] = (1.0 - alpha) * q_prev[:, h] + alpha * target
    return q


def policy_evaluation(game: MarkovGame, policies: Sequence[np.ndarray]) -> np.ndarray:
    """Exact values of a Markov product policy, shape ``(N, H + 1, S)``."""
    v0 = np.zeros((game.num_players, game.horizon + 1, game.num_states))
    return v_backward_pass(game, policies, v0, 1.0)
