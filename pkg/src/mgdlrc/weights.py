"""Step sizes and averaging weights for horizon-``H`` value iteration.

``alpha(t) = (H + 1) / (H + t)``.  The averaging profile at round ``t`` is
``alpha_t^j = alpha_j * prod_{k=j+1}^{t} (1 - alpha_k)``, and the utility
weight is ``w_j = alpha_t^j / alpha_t^1``, which does not depend on ``t`` and
equals ``C(H + j - 1, H)``.
"""

from __future__ import annotations

import math

import numpy as np


def _check_round(t: int) -> int:
    if int(t) != t or t < 1:
        raise ValueError(f"round index must be a positive integer, got {t!r}")
    return int(t)


class WeightSchedule:
    def __init__(self, horizon: int, base_eta: float = 1.0):
        if int(horizon) != horizon or horizon < 1:
            raise ValueError(f"horizon must be a positive integer, got {horizon!r}")
        if not base_eta > 0:
            raise ValueError(f"base_eta must be positive, got {base_eta!r}")
        self.horizon = int(horizon)
        self.base_eta = float(base_eta)

    def alpha(self, t: int) -> float:
        t = _check_round(t)
        return (self.horizon + 1) / (self.horizon + t)

    def alpha_profile(self, t: int) -> np.ndarray:
        """``(alpha_t^1, ..., alpha_t^t)`` by the defining product recursion."""
        t = _check_round(t)
        h = self.horizon
        out = np.empty(t)
        out[t - 1] = (h + 1) / (h + t)
        carry = 1.0
        for j in range(t - 1, 0, -1):
            # carry = prod_{k=j+1}^{t} (1 - alpha_k)
            carry *= 1.0 - (h + 1) / (h + j + 1)
            out[j - 1] = (h + 1) / (h + j) * carry
        return out

    def w_exact(self, t: int) -> int:
        t = _check_round(t)
        return math.comb(self.horizon + t - 1, self.horizon)

    def w(self, t: int) -> float:
        return float(self.w_exact(t))

    def log_w(self, t: int) -> float:
        t = _check_round(t)
        h = self.horizon
        return math.lgamma(h + t) - math.lgamma(h + 1) - math.lgamma(t)

    def kappa(self, t: int) -> float:
        """``w_t / w_{t-1}``; 1 at ``t = 1`` where it multiplies a zero vector."""
        t = _check_round(t)
        if t == 1:
            return 1.0
        return (self.horizon + t - 1) / (t - 1)

    def w_ratio(self, t: int) -> float:
        """``w_t / w_{t+1} = t / (H + t)``, used to rescale normalized sums."""
        t = _check_round(t)
        return t / (self.horizon + t)

    def eta_t(self, t: int) -> float:
        return self.base_eta / self.w(t)

    def cumulative_w(self, t: int) -> np.ndarray:
        """``[sum_{k<=j} w_k for j = 0..t]`` via ``C(H + j, H + 1)``."""
        h = self.horizon
        return np.array([math.comb(h + j, h + 1) for j in range(t + 1)], dtype=np.float64)


def theoretical_eta(horizon: int, num_players: int) -> float:
    """``1 / (24 H sqrt(H) N)``, the base rate used by the convergence bound."""
    if horizon < 1 or num_players < 1:
        raise ValueError("horizon and num_players must be positive")
    return 1.0 / (24.0 * horizon * math.sqrt(horizon) * num_players)


def default_alpha_tilde(max_actions: int, beta: float = 70.0) -> float:
    """``beta log^2 A + 2 log A + 2`` with natural logarithms."""
    la = math.log(max_actions)
    return beta * la * la + 2.0 * la + 2.0


def gap_envelope(t: int, horizon: int, num_players: int, alpha_tilde: float,
                 max_actions: int) -> float:
    """Convergence-bound envelope on the CCE gap, capped at the trivial value ``H``."""
    bound = (
        864.0 * horizon**3.5 * num_players
        * (alpha_tilde * math.log(t) + 2.0 * math.log(max_actions) + 2.0) / t
    )
    return min(float(horizon), bound)
