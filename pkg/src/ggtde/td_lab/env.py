"""Noisy chain MDPs with exact dynamic-programming oracles.

States ``0..n-1`` sit on a line. Action 0 moves left, action 1 moves right
(both clipped at the ends) and any further action stays put. With
probability ``transition_noise`` the next state is drawn uniformly instead.
The mean reward for acting in state ``s`` is ``state_rewards[s]``; zero-mean
noise from the configured family is added on top.

Episodes are truncated after ``horizon`` steps and restart from a uniformly
drawn state. Truncation is not termination, so learners keep bootstrapping
and the discounted infinite-horizon values are the oracle.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ..errors import ConfigError, DomainError
from ..ggd import GGDParams, draw, excess_kurtosis
from ..special_math import EULER_GAMMA

__all__ = [
    "ChainEnv",
    "ChainMDPSpec",
    "RewardNoise",
    "StepResult",
    "make_chain_env",
    "mean_rewards",
    "policy_value",
    "transition_matrix",
    "value_iteration",
]

NOISE_FAMILIES = ("gaussian", "laplace", "ggd", "gumbel")
_NOISE_KEYS = {"gaussian": ("sigma",), "laplace": ("scale",), "ggd": ("alpha", "beta"), "gumbel": ("scale",)}


@dataclass(frozen=True)
class RewardNoise:
    """Zero-mean reward perturbation.

    ``gaussian(sigma)``, ``laplace(scale)``, ``ggd(alpha, beta)`` and
    ``gumbel(scale)``; the Gumbel draw is centred by subtracting its mean
    ``euler_gamma * scale``.
    """

    family: str = "gaussian"
    sigma: float = 0.0
    scale: float = 1.0
    alpha: float = 1.0
    beta: float = 2.0

    def __post_init__(self):
        if self.family not in NOISE_FAMILIES:
            raise ConfigError(f"reward_noise.family must be one of {NOISE_FAMILIES}, got {self.family!r}")
        for key in _NOISE_KEYS[self.family]:
            v = getattr(self, key)
            if not np.isfinite(v) or v < 0 or (v == 0 and self.family != "gaussian"):
                raise ConfigError(f"reward_noise.{key} out of range: {v}")
        if self.family == "ggd":
            try:
                GGDParams(self.alpha, self.beta)
            except DomainError as e:
                raise ConfigError(str(e)) from e

    @classmethod
    def from_dict(cls, d: dict) -> "RewardNoise":
        d = dict(d)
        family = d.pop("family", "gaussian")
        allowed = _NOISE_KEYS.get(family, ())
        unknown = set(d) - set(allowed)
        if family in _NOISE_KEYS and unknown:
            raise ConfigError(f"unknown reward_noise fields for {family}: {sorted(unknown)}")
        return cls(family=family, **{k: float(v) for k, v in d.items()})

    def to_dict(self) -> dict:
        return {"family": self.family, **{k: getattr(self, k) for k in _NOISE_KEYS[self.family]}}

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.family == "gaussian":
            return rng.normal(0.0, self.sigma, size) if self.sigma > 0 else np.zeros(size)
        if self.family == "laplace":
            return rng.laplace(0.0, self.scale, size)
        if self.family == "ggd":
            return draw(rng, GGDParams(self.alpha, self.beta), size)
        return rng.gumbel(0.0, self.scale, size) - EULER_GAMMA * self.scale

    def excess_kurtosis(self) -> float:
        if self.family == "gaussian":
            return 0.0
        if self.family == "laplace":
            return 3.0
        if self.family == "ggd":
            return excess_kurtosis(self.beta)
        return 2.4


@dataclass(frozen=True)
class ChainMDPSpec:
    n_states: int = 5
    n_actions: int = 2
    discount: float = 0.9
    reward_noise: RewardNoise = RewardNoise()
    transition_noise: float = 0.0
    seed: int = 0
    horizon: int = 50
    state_rewards: tuple | None = None

    def __post_init__(self):
        if self.n_states < 2:
            raise ConfigError("n_states must be >= 2")
        if self.n_actions < 1:
            raise ConfigError("n_actions must be >= 1")
        if not 0.0 <= self.discount < 1.0:
            raise ConfigError("discount must lie in [0, 1)")
        if not 0.0 <= self.transition_noise <= 1.0:
            raise ConfigError("transition_noise must lie in [0, 1]")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.state_rewards is not None:
            r = tuple(float(v) for v in self.state_rewards)
            if len(r) != self.n_states or not all(np.isfinite(r)):
                raise ConfigError("state_rewards must hold one finite value per state")
            object.__setattr__(self, "state_rewards", r)

    @property
    def rewards(self) -> np.ndarray:
        """Mean reward per state; defaults to 1 at the right end and 0 elsewhere."""
        if self.state_rewards is not None:
            return np.array(self.state_rewards)
        r = np.zeros(self.n_states)
        r[-1] = 1.0
        return r

    @classmethod
    def from_dict(cls, d: dict) -> "ChainMDPSpec":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown env fields: {sorted(unknown)}")
        if "reward_noise" in d:
            d["reward_noise"] = RewardNoise.from_dict(d["reward_noise"])
        if d.get("state_rewards") is not None:
            d["state_rewards"] = tuple(d["state_rewards"])
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(str(e)) from e

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "discount": self.discount,
            "reward_noise": self.reward_noise.to_dict(),
            "transition_noise": self.transition_noise,
            "seed": self.seed,
            "horizon": self.horizon,
            "state_rewards": None if self.state_rewards is None else list(self.state_rewards),
        }


def _moves(n_states: int, n_actions: int) -> np.ndarray:
    s = np.arange(n_states)
    out = np.tile(s[:, None], (1, n_actions))
    out[:, 0] = np.maximum(s - 1, 0)
    if n_actions > 1:
        out[:, 1] = np.minimum(s + 1, n_states - 1)
    return out


def transition_matrix(spec: ChainMDPSpec) -> np.ndarray:
    """``P[s, a, s']`` including the uniform transition noise."""
    n, m = spec.n_states, spec.n_actions
    p = np.full((n, m, n), spec.transition_noise / n)
    moves = _moves(n, m)
    for a in range(m):
        p[np.arange(n), a, moves[:, a]] += 1.0 - spec.transition_noise
    return p


def mean_rewards(spec: ChainMDPSpec) -> np.ndarray:
    """``R[s, a]``; the mean reward depends on the state only."""
    return np.repeat(spec.rewards[:, None], spec.n_actions, axis=1)


def value_iteration(spec: ChainMDPSpec, tol: float = 1e-12, max_iter: int = 100_000) -> tuple[np.ndarray, np.ndarray]:
    """Optimal ``(V*, Q*)`` by value iteration to sup-norm change ``tol``."""
    p, r = transition_matrix(spec), mean_rewards(spec)
    v = np.zeros(spec.n_states)
    for _ in range(max_iter):
        q = r + spec.discount * p @ v
        v_new = q.max(axis=1)
        if np.max(np.abs(v_new - v)) <= tol:
            v = v_new
            break
        v = v_new
    return v, r + spec.discount * p @ v


def policy_value(spec: ChainMDPSpec, policy: np.ndarray) -> np.ndarray:
    """``V^pi`` from the linear Bellman system; ``policy[s, a]`` are action probabilities."""
    pi = np.asarray(policy, dtype=float)
    if pi.shape != (spec.n_states, spec.n_actions):
        raise DomainError("policy must have shape (n_states, n_actions)")
    p, r = transition_matrix(spec), mean_rewards(spec)
    p_pi = np.einsum("sa,sat->st", pi, p)
    r_pi = np.sum(pi * r, axis=1)
    return np.linalg.solve(np.eye(spec.n_states) - spec.discount * p_pi, r_pi)


class StepResult(NamedTuple):
    next_states: np.ndarray
    rewards: np.ndarray
    truncated: np.ndarray


class ChainEnv:
    """``n_envs`` independent copies of a chain MDP stepped in lockstep.

    ``state`` holds the current observation. When a copy is truncated,
    ``step`` still reports the true successor in ``next_states`` and
    ``state`` then holds the fresh start state.
    """

    def __init__(self, spec: ChainMDPSpec, n_envs: int = 1, rng: np.random.Generator | None = None):
        if n_envs < 1:
            raise ConfigError("n_envs must be >= 1")
        self.spec = spec
        self.n_envs = n_envs
        self.rng = rng if rng is not None else np.random.default_rng(spec.seed)
        self._moves = _moves(spec.n_states, spec.n_actions)
        self._rewards = spec.rewards
        self.state = np.zeros(n_envs, dtype=int)
        self.t = np.zeros(n_envs, dtype=int)

    def reset(self) -> np.ndarray:
        self.state = self.rng.integers(0, self.spec.n_states, self.n_envs)
        self.t = np.zeros(self.n_envs, dtype=int)
        return self.state.copy()

    def step(self, actions) -> StepResult:
        a = np.broadcast_to(np.asarray(actions, dtype=int), (self.n_envs,))
        if np.any((a < 0) | (a >= self.spec.n_actions)):
            raise DomainError("action out of range")
        s = self.state
        nxt = self._moves[s, a]
        if self.spec.transition_noise > 0:
            jump = self.rng.random(self.n_envs) < self.spec.transition_noise
            nxt = np.where(jump, self.rng.integers(0, self.spec.n_states, self.n_envs), nxt)
        rewards = self._rewards[s] + self.spec.reward_noise.sample(self.rng, self.n_envs)
        self.t = self.t + 1
        truncated = self.t >= self.spec.horizon
        self.state = nxt.copy()
        if truncated.any():
            k = int(truncated.sum())
            self.state[truncated] = self.rng.integers(0, self.spec.n_states, k)
            self.t[truncated] = 0
        return StepResult(nxt, rewards, truncated)


def make_chain_env(spec: ChainMDPSpec, n_envs: int = 1, rng: np.random.Generator | None = None) -> ChainEnv:
    """Seeded chain environment, reset and ready to step."""
    if not isinstance(spec, ChainMDPSpec):
        raise ConfigError("make_chain_env expects a ChainMDPSpec")
    env = ChainEnv(spec, n_envs, rng)
    env.reset()
    return env
