"""Fresh-only randomized policy: sample-and-send with a fixed probability.

Under this policy a scheduled user either samples a fresh packet and
transmits it, or stays silent; cached copies are never resent.  The age seen
by the monitor is then a renewal process with per-slot delivery probability
delta = alpha * sample_prob * success_prob, whose stationary law is a
truncated geometric distribution with an atom at the cap.  Everything here is
closed form; the explicit one-dimensional chain is kept alongside as a
cross-check, and the parameter search walks the probability grid exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .markov import ChainModel
from .model import InfeasibleError, SystemConfig, probability_grid
from .simulate import Policy


def delivery_rate(alpha: float, sample_prob: float, success_prob: float) -> float:
    """Per-slot probability that a fresh sample gets through."""
    return alpha * sample_prob * success_prob


def stationary_closed_form(delta: float, cap: int) -> np.ndarray:
    """Stationary age distribution over 1..cap for delivery rate ``delta``."""
    if not 0.0 <= delta <= 1.0:
        raise ValueError(f"delivery rate must lie in [0, 1], got {delta}")
    if cap < 2:
        raise ValueError("cap must be at least 2")
    keep = 1.0 - delta
    pi = np.empty(cap)
    pi[: cap - 1] = delta * keep ** np.arange(cap - 1)
    pi[cap - 1] = keep ** (cap - 1)
    return pi


def avg_aoi_closed_form(delta: float, cap: int) -> float:
    """Mean stationary age; continuous at delta = 0 where it equals the cap."""
    if not 0.0 <= delta <= 1.0:
        raise ValueError(f"delivery rate must lie in [0, 1], got {delta}")
    if cap < 2:
        raise ValueError("cap must be at least 2")
    if delta == 0.0:
        return float(cap)
    keep = 1.0 - delta
    head = ((cap - 1) * keep ** cap - cap * keep ** (cap - 1) + 1.0) / delta
    return head + cap * keep ** (cap - 1)


def matrix_chain(delta: float, cap: int) -> ChainModel:
    """The explicit age chain: deliver to age 1, else age by one up to the cap."""
    if not 0.0 <= delta <= 1.0:
        raise ValueError(f"delivery rate must lie in [0, 1], got {delta}")
    if cap < 2:
        raise ValueError("cap must be at least 2")
    p = np.zeros((cap, cap))
    p[:, 0] = delta
    for i in range(cap - 1):
        p[i, i + 1] = 1.0 - delta
    p[cap - 1, cap - 1] += 1.0 - delta
    return ChainModel(states=tuple(range(1, cap + 1)), matrix=p,
                      context={"delivery_rate": delta})


def user_cost(alpha: float, sample_prob: float, sample_cost: float,
              transmit_cost: float) -> float:
    """Long-run cost rate: every action pays for a sample plus a transmission."""
    return (sample_cost + transmit_cost) * alpha * sample_prob


@dataclass(frozen=True)
class ForpParams:
    """Per-user scheduling and sampling probabilities."""

    alpha: tuple[float, ...]
    sample_prob: tuple[float, ...]

    def __post_init__(self):
        if len(self.alpha) != len(self.sample_prob):
            raise ValueError("alpha and sample_prob must have equal length")
        for a in self.alpha + self.sample_prob:
            if not 0.0 <= a <= 1.0:
                raise ValueError(f"probabilities must lie in [0, 1], got {a}")
        if abs(sum(self.alpha) - 1.0) > 1e-9:
            raise ValueError("scheduling probabilities must sum to 1")


def total_cost(params: ForpParams, cfg: SystemConfig) -> float:
    return sum(
        user_cost(a, phi, cfg.sample_cost, cfg.transmit_cost)
        for a, phi in zip(params.alpha, params.sample_prob))


def optimize(cfg: SystemConfig, step: float = 0.01) -> ForpParams:
    """Smallest-cost sampling probabilities meeting every user's age limit.

    Scans the probability grid per user under uniform scheduling
    (alpha = 1/K).  The cost rate grows monotonically with the sampling
    probability, so the winner must be the smallest feasible grid value; the
    scan asserts that equivalence as a self-check.  Raises InfeasibleError,
    naming the first offending user, when even sample_prob = 1 cannot meet
    the limit.
    """
    k = cfg.num_users
    alpha = 1.0 / k
    grid = probability_grid(step)
    chosen: list[float] = []
    for user in range(k):
        p = cfg.success_prob[user]
        limit = cfg.aoi_limit[user]
        best_phi: float | None = None
        best_cost = float("inf")
        first_feasible: float | None = None
        for phi in grid:
            aoi = avg_aoi_closed_form(delivery_rate(alpha, phi, p), cfg.aoi_cap)
            if aoi > limit:
                continue
            if first_feasible is None:
                first_feasible = phi
            cost = user_cost(alpha, phi, cfg.sample_cost, cfg.transmit_cost)
            if cost < best_cost:
                best_cost = cost
                best_phi = phi
        if best_phi is None:
            aoi_at_one = avg_aoi_closed_form(
                delivery_rate(alpha, 1.0, p), cfg.aoi_cap)
            raise InfeasibleError(
                f"user {user}: even sample_prob 1.0 yields average age "
                f"{aoi_at_one:.4f} > limit {limit:g}", user=user)
        if best_phi != first_feasible:
            raise RuntimeError(
                "cost should be monotone in sample_prob; scan disagrees with "
                f"the smallest feasible value ({best_phi} vs {first_feasible})")
        chosen.append(best_phi)
    return ForpParams(alpha=(alpha,) * k, sample_prob=tuple(chosen))


class ForpPolicy(Policy):
    """Simulates the fresh-only policy: schedule by alpha, sample by sample_prob."""

    name = "forp"

    def __init__(self, params: ForpParams):
        self.params = params
        self._cum_alpha: list[float] = []
        self._buf: list[float] = []
        self._pos = 0
        self._rng: np.random.Generator | None = None

    def reset(self, cfg: SystemConfig, rng: np.random.Generator) -> None:
        if len(self.params.alpha) != cfg.num_users:
            raise ValueError("params sized for a different number of users")
        acc = 0.0
        self._cum_alpha = []
        for a in self.params.alpha:
            acc += a
            self._cum_alpha.append(acc)
        self._rng = rng
        self._buf = []
        self._pos = 0

    def _uniform(self) -> float:
        if self._pos >= len(self._buf):
            self._buf = self._rng.random(8192).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u

    def decide(self, t, aoi, waiting, occupied, vqueue):
        u_sched = self._uniform()
        u_act = self._uniform()
        user = 0
        last = len(self._cum_alpha) - 1
        while user < last and self._cum_alpha[user] <= u_sched:
            user += 1
        if u_act < self.params.sample_prob[user]:
            return user, None
        return None, None
