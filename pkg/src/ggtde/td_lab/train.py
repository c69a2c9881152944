"""TD targets, ensemble losses with analytic gradients, and one SGD step.

Every critic is scored against its own target, and the reported loss is
the mean over critics. Batch weights (risk-averse and BIV/BIEV) are
computed once per batch from the current outputs and then held constant,
so the gradient treats them as data.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from ..errors import ConfigError, DivergenceError, DomainError
from ..weighting import (
    WeightingConfig,
    biev_weights_from_errors,
    biv_weights_from_variance,
    composite_terms,
    gaussian_terms,
    normalize,
    ra_weight_values,
)
from .network import CriticEnsemble

__all__ = [
    "LOSS_KINDS",
    "FrozenWeights",
    "LossEval",
    "StepDiagnostics",
    "TrainBatch",
    "ensemble_loss",
    "head_kind_for",
    "td_error",
    "td_target",
    "train_step",
]

log = logging.getLogger(__name__)

LOSS_KINDS = ("mse", "gaussian_nll_biv", "ggd_nll_biev", "ggd_nll_only")
_ALLOWED_HEADS = {
    "mse": ("none", "variance_head", "beta_head", "alpha_beta_heads"),
    "gaussian_nll_biv": ("variance_head",),
    "ggd_nll_biev": ("beta_head", "alpha_beta_heads"),
    "ggd_nll_only": ("beta_head", "alpha_beta_heads"),
}


def head_kind_for(loss_kind: str, alpha_head: bool = False) -> str:
    """Default head layout for a loss."""
    if loss_kind not in LOSS_KINDS:
        raise ConfigError(f"loss kind must be one of {LOSS_KINDS}, got {loss_kind!r}")
    if loss_kind == "mse":
        return "none"
    if loss_kind == "gaussian_nll_biv":
        return "variance_head"
    return "alpha_beta_heads" if alpha_head else "beta_head"


def td_target(reward, next_value, discount):
    """``r + gamma * next_value``."""
    return np.add(reward, np.multiply(discount, next_value))


def td_error(target, predicted):
    """``target - predicted``."""
    return np.subtract(target, predicted)


@dataclass(frozen=True)
class TrainBatch:
    """Features, taken output index and per-critic TD targets ``(K, B)``."""

    features: np.ndarray
    actions: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.features, dtype=float)
        a = np.asarray(self.actions, dtype=int)
        t = np.asarray(self.targets, dtype=float)
        if f.ndim != 2 or f.shape[0] == 0:
            raise DomainError("batch must be nonempty with 2-D features")
        if a.shape != (f.shape[0],) or t.ndim != 2 or t.shape[1] != f.shape[0]:
            raise DomainError("actions must be (B,) and targets (K, B)")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "actions", a)
        object.__setattr__(self, "targets", t)

    def __len__(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class FrozenWeights:
    """Normalized weights held fixed while differentiating one batch."""

    ra: np.ndarray | None  # (K, B)
    reg: np.ndarray | None  # (B,)
    xi: float


class LossEval(NamedTuple):
    loss: float
    terms: dict
    grads: dict
    weights: FrozenWeights
    deltas: np.ndarray  # (K, B)
    heads: dict  # head name -> (K, B) at the taken outputs
    grad_norm: float  # global L2 norm over all parameter blocks


def _gather(x: np.ndarray, idx: np.ndarray) -> np.ndarray:
    if x.shape[2] == 1:
        return x[..., 0]
    return x[:, np.arange(idx.size), idx]


def _scatter(values: np.ndarray, idx: np.ndarray, n_out: int) -> np.ndarray:
    if n_out == 1:
        return values[..., None]
    out = np.zeros(values.shape + (n_out,))
    out[:, np.arange(idx.size), idx] = values
    return out


def _check_finite(terms: dict, step: int | None) -> None:
    for name, v in terms.items():
        if not np.isfinite(v):
            raise DivergenceError(name, step=step)


def _frozen_weights(loss_kind, q, deltas, heads, cfg: WeightingConfig) -> FrozenWeights:
    if loss_kind == "mse":
        return FrozenWeights(None, None, float("nan"))
    if loss_kind == "gaussian_nll_biv":
        w, xi = biv_weights_from_variance(np.var(q, axis=0, ddof=1), cfg)
        return FrozenWeights(None, normalize(w), xi)
    raw_ra = ra_weight_values(heads["beta"], cfg.ra_mode)
    ra = raw_ra / raw_ra.sum(axis=1, keepdims=True)
    if loss_kind == "ggd_nll_only":
        return FrozenWeights(ra, None, float("nan"))
    if cfg.scheme == "biev":
        w, xi = biev_weights_from_errors(deltas.T, cfg)
    else:
        w, xi = biv_weights_from_variance(np.var(q, axis=0, ddof=1), cfg)
    return FrozenWeights(ra, normalize(w), xi)


def ensemble_loss(
    ensemble: CriticEnsemble,
    batch: TrainBatch,
    cfg: WeightingConfig,
    loss_kind: str,
    nll_form: str = "modified",
    weights: FrozenWeights | None = None,
    step: int | None = None,
) -> LossEval:
    """Mean-over-critics loss and its parameter gradients.

    Pass ``weights`` to reuse the weights of an earlier evaluation, which is
    how finite-difference checks keep them constant.
    """
    if loss_kind not in LOSS_KINDS:
        raise ConfigError(f"loss kind must be one of {LOSS_KINDS}, got {loss_kind!r}")
    if ensemble.head_kind not in _ALLOWED_HEADS[loss_kind]:
        raise ConfigError(f"loss {loss_kind} cannot use head_kind {ensemble.head_kind}")
    k, n_out = ensemble.n_critics, ensemble.n_outputs
    if batch.targets.shape[0] != k:
        raise DomainError("targets must have one row per critic")
    if np.any((batch.actions < 0) | (batch.actions >= n_out)):
        raise DomainError("action index out of range")
    # non-finite values surface as DivergenceError instead of numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        return _ensemble_loss(ensemble, batch, cfg, loss_kind, nll_form, weights, step)


def _ensemble_loss(ensemble, batch, cfg, loss_kind, nll_form, weights, step) -> LossEval:
    k, n_out = ensemble.n_critics, ensemble.n_outputs
    out = ensemble.forward(batch.features)
    q = _gather(out.values, batch.actions)
    heads = {name: _gather(v, batch.actions) for name, v in out.heads.items()}
    deltas = td_error(batch.targets, q)
    if not np.all(np.isfinite(deltas)):
        raise DivergenceError("td_error", step=step)
    if weights is None:
        weights = _frozen_weights(loss_kind, q, deltas, heads, cfg)
    b = len(batch)

    d_heads = {}
    if loss_kind == "mse":
        per = np.mean(deltas**2, axis=1)
        terms = {"mse": float(per.mean())}
        total = terms["mse"]
        d_delta = 2.0 * deltas / (b * k)
    elif loss_kind == "gaussian_nll_biv":
        # flattened over critics, so "mean" averages over critics and batch at once
        g = gaussian_terms(deltas.ravel(), heads["sigma"].ravel(), np.tile(weights.reg, k) / k, cfg.lam, "mean")
        terms = {"nll": g.nll, "regularization": g.regularization}
        total = g.total
        d_delta = g.d_delta.reshape(k, b)
        d_heads["sigma"] = g.d_sigma.reshape(k, b)
    else:
        lam = cfg.lam if loss_kind == "ggd_nll_biev" else 0.0
        reg = weights.reg if weights.reg is not None else np.zeros(b)
        alphas = heads["alpha"] if "alpha" in heads else np.ones_like(deltas)
        t = composite_terms(
            deltas.ravel(),
            alphas.ravel(),
            heads["beta"].ravel(),
            weights.ra.ravel() / k,
            np.tile(reg, k) / k,
            lam,
            cfg.reg_loss,
            nll_form,
        )
        terms = {"attenuation": t.attenuation, "regularization": t.regularization}
        total = t.total
        d_delta = t.d_delta.reshape(k, b)
        d_heads["beta"] = t.d_beta.reshape(k, b)
        if "alpha" in heads:
            d_heads["alpha"] = t.d_alpha.reshape(k, b)
    terms["total"] = total
    _check_finite(terms, step)

    d_values = _scatter(-d_delta, batch.actions, n_out)
    d_out = {name: _scatter(g, batch.actions, n_out) for name, g in d_heads.items()}
    grads = ensemble.backward(out.cache, d_values, d_out)
    sq_norm = 0.0
    for g in grads.values():
        flat = g.ravel()
        sq_norm += float(flat @ flat)
    if not np.isfinite(sq_norm):
        bad = next(name for name, g in grads.items() if not np.all(np.isfinite(g)))
        raise DivergenceError(f"gradient of {bad}", step=step)
    return LossEval(total, terms, grads, weights, deltas, heads, math.sqrt(sq_norm))


class StepDiagnostics(NamedTuple):
    loss: float
    terms: dict
    grad_norm: float
    xi: float
    deltas: np.ndarray
    heads: dict


def train_step(
    ensemble: CriticEnsemble,
    batch: TrainBatch,
    cfg: WeightingConfig,
    loss_kind: str,
    lr: float,
    nll_form: str = "modified",
    step: int | None = None,
    max_grad_norm: float | None = None,
) -> StepDiagnostics:
    """One SGD step on every parameter block; nothing is updated if the loss diverges.

    ``max_grad_norm`` rescales the full gradient when its global norm is larger.
    """
    if lr < 0:
        raise DomainError("lr must be >= 0")
    ev = ensemble_loss(ensemble, batch, cfg, loss_kind, nll_form, step=step)
    norm = ev.grad_norm
    scale = 1.0
    if max_grad_norm is not None and norm > max_grad_norm:
        scale = max_grad_norm / norm
    ensemble.apply(ev.grads, lr * scale)
    return StepDiagnostics(ev.loss, ev.terms, norm, ev.weights.xi, ev.deltas, ev.heads)


def with_discount(cfg: WeightingConfig, discount: float) -> WeightingConfig:
    """Weighting config whose BIV discount matches the environment."""
    return replace(cfg, discount_gamma=discount)
