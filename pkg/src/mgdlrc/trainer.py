"""Self-play round loop.

Each round runs three phases over every player:

A. policy update for all ``(h, s)`` cells from the accumulated signals;
B. backward averaged value pass under the new joint policy;
C. feedback commits, evaluator updates and metric emission.
"""

from __future__ import annotations

import hashlib
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .evaluation import (BestResponseState, GapRecursionCheck, RegretState, br_round_update,
                         cce_gap, gap_stage_profile, regret_round_update)
from .game import MarkovGame, generate_random_game, validate_game
from .policy import HyperParams, LearnerState, commit_feedback, policy_step
from .values import q_backward_pass, v_backward_pass
from .weights import WeightSchedule

CSV_VERSION = "mgdlrc-metrics/1"
CHECKPOINT_VERSION = "mgdlrc-checkpoint/1"


class ValidationError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class RunConfig:
    rounds: int
    params: HyperParams
    game: MarkovGame | None = None
    generator: dict | None = None
    record_history: bool = False
    metric_stride: int = 1
    seed: int = 0
    q_form: bool = False

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be at least 1")
        if self.metric_stride < 1:
            raise ValueError("metric_stride must be at least 1")
        if (self.game is None) == (self.generator is None):
            raise ValueError("give exactly one of game or generator parameters")

    def build_game(self) -> MarkovGame:
        if self.game is not None:
            return self.game
        return generate_random_game(seed=self.seed, **self.generator)

    def to_dict(self) -> dict:
        return {
            "rounds": self.rounds,
            "params": self.params.to_dict(),
            "generator": self.generator,
            "record_history": self.record_history,
            "metric_stride": self.metric_stride,
            "seed": self.seed,
            "q_form": self.q_form,
        }


def csv_columns(horizon: int) -> list[str]:
    return (["round", "gap_raw", "gap_clamped"]
            + [f"delta_h{h + 1}" for h in range(horizon)]
            + ["max_reg", "lambda_min", "lambda_mean", "lambda_max", "path_len_mean"])


@dataclass
class History:
    """Per-round records, each a list over rounds of per-player arrays."""

    x: list = field(default_factory=list)
    lam: list = field(default_factory=list)
    R: list = field(default_factory=list)
    u: list = field(default_factory=list)      # u^(t) / w_t
    nu: list = field(default_factory=list)

    def append(self, learners, nus, us):
        self.x.append([l.x.copy() for l in learners])
        self.lam.append([l.lam.copy() for l in learners])
        self.R.append([l.R.copy() for l in learners])
        self.u.append([u.copy() for u in us])
        self.nu.append([n.copy() for n in nus])

    def __len__(self):
        return len(self.x)

    def stacked(self, name: str, player: int) -> np.ndarray:
        """``(T, H, S[, A_i])`` array for one player."""
        return np.stack([rec[player] for rec in getattr(self, name)])

    def policies(self) -> list[np.ndarray]:
        n = len(self.x[0]) if self.x else 0
        return [self.stacked("x", i) for i in range(n)]


@dataclass
class RunResult:
    game: MarkovGame
    params: HyperParams
    rows: list[dict]
    wall_clock: list[float]
    V: np.ndarray
    br: BestResponseState
    regret: RegretState
    learners: list[LearnerState]
    history: History | None
    recursion_excess: float
    q_identity_error: float | None = None
    lambda_at_floor: int = 0

    @property
    def columns(self) -> list[str]:
        return csv_columns(self.game.horizon)

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.rows])

    def to_csv(self) -> str:
        cols = self.columns
        buf = io.StringIO()
        buf.write(f"# {CSV_VERSION}\n")
        buf.write(",".join(cols) + "\n")
        for row in self.rows:
            buf.write(",".join(_fmt(row[c]) for c in cols) + "\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


class Trainer:
    def __init__(self, config: RunConfig):
        game = config.build_game()
        violation = validate_game(game)
        if violation is not None:
            raise ValidationError(f"invalid game: {violation}")
        self.config = config
        self.game = game
        self.params = config.params
        self.schedule = WeightSchedule(game.horizon, config.params.base_eta)
        n, H, S = game.num_players, game.horizon, game.num_states
        self.t = 1
        self.learners = [LearnerState.initial((H, S), a) for a in game.action_counts]
        self.V = np.zeros((n, H + 1, S))
        self.Q = np.zeros((n, H, S, game.num_joint_actions)) if config.q_form else None
        self.q_identity_error = 0.0 if config.q_form else None
        self.br = BestResponseState.initial(game)
        self.regret = RegretState.initial(game)
        self.recursion = GapRecursionCheck(H)
        self.prev_x = None
        self.rows: list[dict] = []
        self.wall_clock: list[float] = []
        self.lambda_at_floor = 0
        self.history = History() if config.record_history else None
        self._swap_ab = False   # test hook: run the value pass before the policy update

    # -- one round ---------------------------------------------------------

    def step(self) -> None:
        t = self.t
        start = time.perf_counter()
        game, params = self.game, self.params
        alpha = self.schedule.alpha(t)

        if self._swap_ab:
            stale = [l.x for l in self.learners]
            V_new, nus = v_backward_pass(game, stale, self.V, alpha, return_utilities=True)

        for learner in self.learners:
            policy_step(learner, params)
            learner.t = t
        policies = [l.x for l in self.learners]
        self.lambda_at_floor += sum(int((l.lam <= params.lambda_floor).sum()) for l in self.learners)

        if not self._swap_ab:
            V_new, nus = v_backward_pass(game, policies, self.V, alpha, return_utilities=True)
        if self.Q is not None:
            self.Q = q_backward_pass(game, policies, self.Q, alpha)
            self._check_q_identity(V_new)

        us = []
        for i, learner in enumerate(self.learners):
            us.append(commit_feedback(learner, nus[i], self.schedule, params.baseline_mode,
                                      v_value=V_new[i, :-1]))
            bad = ~np.isfinite(learner.U)
            if bad.any():
                h, s, a = (int(k) for k in np.argwhere(bad)[0])
                raise FloatingPointError(
                    f"accumulator overflow at round {t}, player {i}, stage {h + 1}, "
                    f"state {s}, action {a}")
        self.V = V_new
        regret_round_update(nus, policies, self.regret, alpha)
        br_round_update(game, policies, self.br, alpha)
        delta = gap_stage_profile(self.br, self.V)
        regrets = self.regret.regrets()
        self.recursion.update(delta, regrets, alpha)
        if self.history is not None:
            self.history.append(self.learners, nus, us)

        if self.prev_x is None:
            path = 0.0
        else:
            path = float(np.mean(np.concatenate([
                np.abs(x - px).sum(axis=-1).ravel() for x, px in zip(policies, self.prev_x)])))
        self.prev_x = [x.copy() for x in policies]

        if t % self.config.metric_stride == 0 or t == self.config.rounds:
            lams = np.concatenate([l.lam.ravel() for l in self.learners])
            raw, clamped = cce_gap(self.br, self.V, game.initial_state)
            row = {"round": t, "gap_raw": raw, "gap_clamped": clamped}
            for h in range(game.horizon):
                row[f"delta_h{h + 1}"] = float(delta[h])
            row.update(max_reg=float(regrets.max()), lambda_min=float(lams.min()),
                       lambda_mean=float(lams.mean()), lambda_max=float(lams.max()),
                       path_len_mean=path)
            self.rows.append(row)
            self.wall_clock.append(time.perf_counter() - start)
        self.t = t + 1

    def _check_q_identity(self, V_new: np.ndarray) -> None:
        g = self.game
        for h in range(g.horizon):
            target = g.rewards[:, h] + np.einsum("sjk,nk->nsj", g.transitions[h], V_new[:, h + 1])
            err = float(np.abs(self.Q[:, h] - target).max())
            self.q_identity_error = max(self.q_identity_error, err)

    def run(self, until: int | None = None) -> RunResult:
        until = self.config.rounds if until is None else min(until, self.config.rounds)
        while self.t <= until:
            self.step()
        return self.result()

    def result(self) -> RunResult:
        return RunResult(
            game=self.game, params=self.params, rows=list(self.rows),
            wall_clock=list(self.wall_clock), V=self.V.copy(), br=self.br.copy(),
            regret=self.regret.copy(), learners=[l.copy() for l in self.learners],
            history=self.history, recursion_excess=self.recursion.worst_excess,
            q_identity_error=self.q_identity_error, lambda_at_floor=self.lambda_at_floor,
        )

    # -- checkpointing -----------------------------------------------------

    def checkpoint(self) -> str:
        state = {
            "t": self.t,
            "config": self.config.to_dict(),
            "game": self.game.to_dict(),
            "learners": [_learner_doc(l) for l in self.learners],
            "V": self.V.tolist(),
            "Q": None if self.Q is None else self.Q.tolist(),
            "q_identity_error": self.q_identity_error,
            "br": {"M": [m.tolist() for m in self.br.M], "V_dag": self.br.V_dag.tolist()},
            "regret": [g.tolist() for g in self.regret.G],
            "recursion": {"avg_next": self.recursion.avg_next.tolist(),
                          "worst_excess": _finite_or_none(self.recursion.worst_excess)},
            "prev_x": None if self.prev_x is None else [x.tolist() for x in self.prev_x],
            "rows": self.rows,
            "wall_clock": self.wall_clock,
            "lambda_at_floor": self.lambda_at_floor,
            "history": None if self.history is None else {
                k: [[a.tolist() for a in rec] for rec in getattr(self.history, k)]
                for k in ("x", "lam", "R", "u", "nu")},
        }
        payload = json.dumps(state, sort_keys=True, allow_nan=False)
        digest = hashlib.sha256(payload.encode()).hexdigest()
        return json.dumps({"version": CHECKPOINT_VERSION, "sha256": digest, "state": state},
                          sort_keys=True, allow_nan=False)

    def save_checkpoint(self, path) -> None:
        Path(path).write_text(self.checkpoint())

    @classmethod
    def restore(cls, text: str, rounds: int | None = None) -> "Trainer":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"checkpoint is not valid JSON: {exc}") from None
        if not isinstance(doc, dict) or doc.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {doc.get('version')!r}"
                                  if isinstance(doc, dict) else "malformed checkpoint")
        state = doc.get("state")
        payload = json.dumps(state, sort_keys=True, allow_nan=False)
        if hashlib.sha256(payload.encode()).hexdigest() != doc.get("sha256"):
            raise CheckpointError("checkpoint checksum mismatch")

        cfg = state["config"]
        game = MarkovGame.from_dict(state["game"])
        config = RunConfig(
            rounds=cfg["rounds"] if rounds is None else rounds,
            params=HyperParams(**cfg["params"]), game=game, generator=None,
            record_history=cfg["record_history"], metric_stride=cfg["metric_stride"],
            seed=cfg["seed"], q_form=cfg["q_form"])
        tr = cls(config)
        tr.config.generator = cfg["generator"]
        tr.t = state["t"]
        tr.learners = [_learner_from(d) for d in state["learners"]]
        tr.V = np.array(state["V"], dtype=np.float64)
        tr.Q = None if state["Q"] is None else np.array(state["Q"], dtype=np.float64)
        tr.q_identity_error = state["q_identity_error"]
        tr.br = BestResponseState([np.array(m, dtype=np.float64) for m in state["br"]["M"]],
                                  np.array(state["br"]["V_dag"], dtype=np.float64))
        tr.regret = RegretState([np.array(g, dtype=np.float64) for g in state["regret"]])
        tr.recursion.avg_next = np.array(state["recursion"]["avg_next"], dtype=np.float64)
        we = state["recursion"]["worst_excess"]
        tr.recursion.worst_excess = -np.inf if we is None else we
        tr.prev_x = (None if state["prev_x"] is None
                     else [np.array(x, dtype=np.float64) for x in state["prev_x"]])
        tr.rows = state["rows"]
        tr.wall_clock = state["wall_clock"]
        tr.lambda_at_floor = state["lambda_at_floor"]
        if state["history"] is not None:
            tr.history = History(**{
                k: [[np.array(a, dtype=np.float64) for a in rec] for rec in v]
                for k, v in state["history"].items()})
        return tr

    @classmethod
    def load_checkpoint(cls, path, rounds: int | None = None) -> "Trainer":
        return cls.restore(Path(path).read_text(), rounds=rounds)


def _finite_or_none(v: float):
    return None if not np.isfinite(v) else float(v)


def _learner_doc(l: LearnerState) -> dict:
    return {"U": l.U.tolist(), "u_prev": l.u_prev.tolist(), "R": l.R.tolist(),
            "lam": l.lam.tolist(), "x": l.x.tolist(), "t": l.t}


def _learner_from(d: dict) -> LearnerState:
    return LearnerState(U=np.array(d["U"], dtype=np.float64),
                        u_prev=np.array(d["u_prev"], dtype=np.float64),
                        R=np.array(d["R"], dtype=np.float64),
                        lam=np.array(d["lam"], dtype=np.float64),
                        x=np.array(d["x"], dtype=np.float64), t=d["t"])


def run_self_play(config: RunConfig) -> RunResult:
    return Trainer(config).run()
