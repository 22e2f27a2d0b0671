"""Tabular N-player episodic Markov games.

Joint actions are stored flat. The flat index of ``(a_1, ..., a_N)`` is the
mixed-radix (C-order) encoding with player 1 as the most significant digit,
so ``table.reshape(..., *action_counts)`` exposes one axis per player.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

PROB_TOL = 1e-12


class GameError(ValueError):
    """Rejected game input (bad dimensions, shapes or probabilities)."""


@dataclass(frozen=True)
class MarkovGame:
    """Immutable tabular Markov game.

    ``rewards`` has shape ``(N, H, S, J)`` and ``transitions`` has shape
    ``(H, S, J, S)`` where ``J = prod(action_counts)``.  Stages are 0-based
    internally; stage ``h`` here is stage ``h + 1`` in the usual notation.
    """

    action_counts: tuple[int, ...]
    rewards: np.ndarray
    transitions: np.ndarray
    initial_state: int = 0

    def __post_init__(self):
        counts = tuple(int(a) for a in self.action_counts)
        object.__setattr__(self, "action_counts", counts)
        rewards = np.array(self.rewards, dtype=np.float64)
        transitions = np.array(self.transitions, dtype=np.float64)
        rewards.setflags(write=False)
        transitions.setflags(write=False)
        object.__setattr__(self, "rewards", rewards)
        object.__setattr__(self, "transitions", transitions)
        object.__setattr__(self, "initial_state", int(self.initial_state))
        if not counts or min(counts) < 1:
            raise GameError(f"action counts must be positive, got {counts}")
        if rewards.ndim != 4 or transitions.ndim != 4:
            raise GameError("rewards and transitions must be 4-dimensional")
        n, h, s, j = rewards.shape
        if n != len(counts) or j != self.num_joint_actions:
            raise GameError(
                f"rewards shape {rewards.shape} does not match "
                f"{len(counts)} players with actions {counts}"
            )
        if transitions.shape != (h, s, j, s):
            raise GameError(
                f"transitions shape {transitions.shape}, expected {(h, s, j, s)}"
            )
        if h < 1 or s < 1:
            raise GameError("horizon and number of states must be positive")
        if not 0 <= self.initial_state < s:
            raise GameError(f"initial state {self.initial_state} out of range")

    @property
    def num_players(self) -> int:
        return len(self.action_counts)

    @property
    def horizon(self) -> int:
        return self.rewards.shape[1]

    @property
    def num_states(self) -> int:
        return self.rewards.shape[2]

    @property
    def num_joint_actions(self) -> int:
        return int(np.prod(self.action_counts))

    @property
    def max_actions(self) -> int:
        return max(self.action_counts)

    def encode(self, actions: Sequence[int]) -> int:
        return encode_joint(actions, self.action_counts)

    def decode(self, flat: int) -> tuple[int, ...]:
        return decode_joint(flat, self.action_counts)

    def joint_view(self, table: np.ndarray) -> np.ndarray:
        """Reshape the trailing flat joint axis of ``table`` to per-player axes."""
        return table.reshape(table.shape[:-1] + self.action_counts)

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "num_players": self.num_players,
            "horizon": self.horizon,
            "num_states": self.num_states,
            "action_counts": list(self.action_counts),
            "initial_state": self.initial_state,
            "rewards": self.rewards.tolist(),
            "transitions": self.transitions.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MarkovGame":
        try:
            game = cls(
                action_counts=tuple(doc["action_counts"]),
                rewards=np.asarray(doc["rewards"], dtype=np.float64),
                transitions=np.asarray(doc["transitions"], dtype=np.float64),
                initial_state=doc["initial_state"],
            )
        except KeyError as exc:
            raise GameError(f"missing field {exc}") from None
        declared = (doc.get("num_players"), doc.get("horizon"), doc.get("num_states"))
        actual = (game.num_players, game.horizon, game.num_states)
        if declared != actual:
            raise GameError(f"declared dimensions {declared} != table dimensions {actual}")
        return game

    def save(self, path) -> None:
        # json writes floats with repr(), the shortest round-trip form
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "MarkovGame":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def __eq__(self, other):
        if not isinstance(other, MarkovGame):
            return NotImplemented
        return (
            self.action_counts == other.action_counts
            and self.initial_state == other.initial_state
            and np.array_equal(self.rewards, other.rewards)
            and np.array_equal(self.transitions, other.transitions)
        )

    __hash__ = None


def encode_joint(actions: Sequence[int], action_counts: Sequence[int]) -> int:
    if len(actions) != len(action_counts):
        raise GameError("joint action length does not match number of players")
    flat = 0
    for a, n in zip(actions, action_counts):
        if not 0 <= a < n:
            raise GameError(f"action {a} out of range for {n} actions")
        flat = flat * n + int(a)
    return flat


def decode_joint(flat: int, action_counts: Sequence[int]) -> tuple[int, ...]:
    total = int(np.prod(action_counts))
    if not 0 <= flat < total:
        raise GameError(f"flat joint index {flat} out of range [0, {total})")
    out = []
    for n in reversed(action_counts):
        flat, a = divmod(flat, n)
        out.append(a)
    return tuple(reversed(out))


@dataclass(frozen=True)
class Violation:
    constraint: str
    index: tuple
    value: float

    def __str__(self):
        return f"{self.constraint} at {self.index}: {self.value!r}"


def validate_game(game: MarkovGame) -> Violation | None:
    """Return ``None`` if the game is well formed, else the first violation.

    Violations are ordered: rewards first (row-major over ``(i, h, s, a)``),
    then transition entries, then transition row sums.
    """
    r = game.rewards
    bad = ~((r >= 0.0) & (r <= 1.0))
    if bad.any():
        idx = tuple(int(k) for k in np.argwhere(bad)[0])
        return Violation("reward outside [0, 1]", idx, float(r[idx]))
    p = game.transitions
    bad = ~(p >= 0.0)
    if bad.any():
        idx = tuple(int(k) for k in np.argwhere(bad)[0])
        return Violation("negative transition probability", idx, float(p[idx]))
    sums = p.sum(axis=-1)
    bad = ~(np.abs(sums - 1.0) <= PROB_TOL)
    if bad.any():
        idx = tuple(int(k) for k in np.argwhere(bad)[0])
        return Violation("transition row does not sum to 1", idx, float(sums[idx]))
    return None


def generate_random_game(
    seed: int,
    num_players: int = 2,
    num_states: int = 2,
    num_actions: int = 2,
    horizon: int = 2,
    stay_prob: float = 0.8,
) -> MarkovGame:
    """Random game with i.i.d. U[0, 1] rewards and sticky state-only transitions.

    Every reward entry ``(i, h, s, a)`` is drawn independently.  Transitions
    ignore the joint action: stay with ``stay_prob`` and spread the rest
    uniformly over the other states (for two states this is "move to the
    other state").  Uses numpy's PCG64 so the output is reproducible.
    """
    dims = dict(num_players=num_players, num_states=num_states,
                num_actions=num_actions, horizon=horizon)
    for name, value in dims.items():
        if int(value) != value or value < 1:
            raise GameError(f"{name} must be a positive integer, got {value!r}")
    if not 0.0 <= stay_prob <= 1.0:
        raise GameError(f"stay_prob must lie in [0, 1], got {stay_prob!r}")
    if num_states == 1 and stay_prob != 1.0:
        raise GameError("a single-state game must have stay_prob = 1")

    rng = np.random.Generator(np.random.PCG64(seed))
    counts = (num_actions,) * num_players
    joint = num_actions**num_players
    rewards = rng.random((num_players, horizon, num_states, joint))

    if num_states == 1:
        kernel = np.ones((1, 1))
    else:
        leave = (1.0 - stay_prob) / (num_states - 1)
        kernel = np.full((num_states, num_states), leave)
        np.fill_diagonal(kernel, stay_prob)
    transitions = np.broadcast_to(
        kernel[None, :, None, :], (horizon, num_states, joint, num_states)
    ).copy()
    return MarkovGame(counts, rewards, transitions, initial_state=0)


def contract_others(q: np.ndarray, policies: Sequence[np.ndarray], player: int) -> np.ndarray:
    """Expect ``q`` over every player except ``player``.

    ``q`` has shape ``(S, A_1, ..., A_N)`` and ``policies[k]`` has shape
    ``(S, A_k)``.  Returns shape ``(S, A_player)``.  Players are summed out
    from last to first, so the reduction order is fixed.
    """
    n = len(policies)
    out = q
    for k in reversed(range(n)):
        if k == player:
            continue
        shape = [out.shape[0]] + [1] * (out.ndim - 1)
        shape[k + 1] = policies[k].shape[1]
        out = (out * policies[k].reshape(shape)).sum(axis=k + 1)
    return out


def marginal_utility(
    game: MarkovGame,
    player: int,
    stage: int,
    state: int,
    v_next: np.ndarray,
    others_policies: Sequence[np.ndarray],
) -> np.ndarray:
    """Utility vector of ``player`` at ``(stage, state)`` against the others.

    ``v_next`` holds the player's values at the next stage (zeros after the
    last stage).  ``others_policies`` is a length-N sequence of action
    distributions at this state; the entry for ``player`` itself is ignored
    and may be ``None``.
    """
    v_next = np.asarray(v_next, dtype=np.float64)
    if v_next.shape != (game.num_states,):
        raise GameError(f"v_next must have shape ({game.num_states},)")
    if len(others_policies) != game.num_players:
        raise GameError("need one policy slot per player")
    pols = []
    for k, n in enumerate(game.action_counts):
        if k == player:
            pols.append(np.full((1, n), np.nan))
            continue
        p = np.asarray(others_policies[k], dtype=np.float64)
        if p.shape != (n,):
            raise GameError(f"policy of player {k} must have {n} entries")
        pols.append(p[None, :])
    q = game.rewards[player, stage, state] + game.transitions[stage, state] @ v_next
    return contract_others(game.joint_view(q[None, :]), pols, player)[0]
