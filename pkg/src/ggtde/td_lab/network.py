"""Ensemble of one-hidden-layer tanh critics with positive output heads.

Each critic maps features through ``h = tanh(W1 x + b1)`` to value outputs
``Wv h + bv`` and, depending on ``head_kind``, to head outputs
``clip(softplus(Wh h + bh) + eps, box)``. The heads share the critic torso.
Parameters of all critics are stacked along a leading axis so a forward
pass over the whole ensemble is a handful of batched matmuls.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ..errors import ConfigError, DomainError
from ..ggd import ALPHA_BOX, BETA_BOX

__all__ = ["HEAD_KINDS", "CriticEnsemble", "ForwardCache", "softplus", "sigmoid"]

HEAD_KINDS = {
    "none": (),
    "variance_head": ("sigma",),
    "beta_head": ("beta",),
    "alpha_beta_heads": ("alpha", "beta"),
}
HEAD_BOX = {"sigma": ALPHA_BOX, "alpha": ALPHA_BOX, "beta": BETA_BOX}
# pre-activation biases giving sigma = alpha = 1 and beta = 2 at init
HEAD_INIT = {"sigma": 1.0, "alpha": 1.0, "beta": 2.0}


def softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _inv_softplus(y: float) -> float:
    return float(y + np.log(-np.expm1(-y)))


class ForwardCache(NamedTuple):
    x: np.ndarray  # (B, D)
    h: np.ndarray  # (K, B, H)
    pre: dict  # head name -> (K, B, O) pre-activation
    unclipped: dict  # head name -> bool mask of entries inside the box


class ForwardOutput(NamedTuple):
    values: np.ndarray  # (K, B, O)
    heads: dict  # head name -> (K, B, O)
    cache: ForwardCache


@dataclass
class CriticEnsemble:
    n_critics: int
    feature_dim: int
    hidden_dim: int = 16
    n_outputs: int = 1
    head_kind: str = "none"
    softplus_epsilon: float = 1e-4
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_critics < 2:
            raise ConfigError("n_critics must be >= 2")
        if self.feature_dim < 1 or self.hidden_dim < 1 or self.n_outputs < 1:
            raise ConfigError("feature_dim, hidden_dim and n_outputs must be >= 1")
        if self.head_kind not in HEAD_KINDS:
            raise ConfigError(f"head_kind must be one of {tuple(HEAD_KINDS)}, got {self.head_kind!r}")
        if not self.softplus_epsilon > 0:
            raise ConfigError("softplus_epsilon must be > 0")
        if not self.params:
            self.params = self.zero_params()

    @property
    def head_names(self) -> tuple:
        return HEAD_KINDS[self.head_kind]

    def zero_params(self) -> dict:
        k, d, h, o = self.n_critics, self.feature_dim, self.hidden_dim, self.n_outputs
        p = {"W1": np.zeros((k, h, d)), "b1": np.zeros((k, h)), "Wv": np.zeros((k, o, h)), "bv": np.zeros((k, o))}
        for name in self.head_names:
            p[f"W_{name}"] = np.zeros((k, o, h))
            p[f"b_{name}"] = np.zeros((k, o))
        return p

    @classmethod
    def initialize(cls, rng: np.random.Generator, n_critics: int, feature_dim: int, **kw) -> "CriticEnsemble":
        """Independent Gaussian torso weights per critic; heads start at their neutral value."""
        ens = cls(n_critics, feature_dim, **kw)
        k, d, h, o = n_critics, feature_dim, ens.hidden_dim, ens.n_outputs
        ens.params["W1"] = rng.normal(0.0, 1.0, (k, h, d))
        ens.params["b1"] = rng.normal(0.0, 0.1, (k, h))
        ens.params["Wv"] = rng.normal(0.0, 1.0 / np.sqrt(h), (k, o, h))
        for name in ens.head_names:
            ens.params[f"b_{name}"][:] = _inv_softplus(HEAD_INIT[name] - ens.softplus_epsilon)
        return ens

    def copy(self) -> "CriticEnsemble":
        return CriticEnsemble(
            self.n_critics,
            self.feature_dim,
            self.hidden_dim,
            self.n_outputs,
            self.head_kind,
            self.softplus_epsilon,
            {k: v.copy() for k, v in self.params.items()},
        )

    def digest(self) -> str:
        """SHA-256 over all parameter blocks in key order."""
        m = hashlib.sha256()
        for k in sorted(self.params):
            m.update(k.encode())
            m.update(np.ascontiguousarray(self.params[k]).tobytes())
        return m.hexdigest()

    def forward(self, features) -> ForwardOutput:
        x = np.asarray(features, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.feature_dim:
            raise DomainError(f"features must have length {self.feature_dim}, got shape {np.shape(features)}")
        p = self.params
        h = np.tanh(np.matmul(x, p["W1"].transpose(0, 2, 1)) + p["b1"][:, None, :])
        values = np.matmul(h, p["Wv"].transpose(0, 2, 1)) + p["bv"][:, None, :]
        heads, pre, inside = {}, {}, {}
        for name in self.head_names:
            z = np.matmul(h, p[f"W_{name}"].transpose(0, 2, 1)) + p[f"b_{name}"][:, None, :]
            raw = softplus(z) + self.softplus_epsilon
            lo, hi = HEAD_BOX[name]
            heads[name] = np.clip(raw, lo, hi)
            pre[name] = z
            inside[name] = (raw >= lo) & (raw <= hi)
        return ForwardOutput(values, heads, ForwardCache(x, h, pre, inside))

    def backward(self, cache: ForwardCache, d_values: np.ndarray, d_heads: dict) -> dict:
        """Parameter gradients given upstream gradients on values and head outputs."""
        p = self.params
        grads = {"Wv": np.matmul(d_values.transpose(0, 2, 1), cache.h), "bv": d_values.sum(axis=1)}
        d_h = np.matmul(d_values, p["Wv"])
        for name in self.head_names:
            g = d_heads.get(name)
            if g is None:
                g = np.zeros_like(d_values)
            dz = g * sigmoid(cache.pre[name]) * cache.unclipped[name]
            grads[f"W_{name}"] = np.matmul(dz.transpose(0, 2, 1), cache.h)
            grads[f"b_{name}"] = dz.sum(axis=1)
            d_h = d_h + np.matmul(dz, p[f"W_{name}"])
        d_a = d_h * (1.0 - cache.h**2)
        grads["W1"] = np.matmul(d_a.transpose(0, 2, 1), cache.x)
        grads["b1"] = d_a.sum(axis=1)
        return grads

    def apply(self, grads: dict, lr: float) -> None:
        if lr == 0.0:
            return
        for k, g in grads.items():
            self.params[k] -= lr * g
