"""Per-sample loss weights and the composite TD losses.

Weight schemes
--------------
* BIV   ``1 / (gamma**2 * Var[Q_mu] + xi)`` from the spread of the target values.
* BIEV  ``1 / (Var[delta] + xi)`` from the spread of the TD errors across the
  critic ensemble, with the MBBE shrinkage applied to the ensemble variance.
* RA    ``beta_t`` (risk averse), ``1 / beta_t`` (risk seeking) or uniform.

``xi`` is either fixed or solved per batch so the effective sample size
``(sum w)**2 / sum w**2`` reaches a minimum.

All weights are normalized within the batch. The loss helpers
:func:`composite_terms` and :func:`gaussian_terms` take normalized weights as
constants, which is how training treats them during differentiation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from typing import Literal, NamedTuple

import numpy as np

from .errors import ConfigError, DomainError
from .estimators import mbbe_factor, shrunk_kurtosis, shrunk_kurtosis_from_moments
from .ggd import NLLForm, ggd_nll_value_and_grad

__all__ = [
    "LossBreakdown",
    "TDErrorBatch",
    "WeightingConfig",
    "XiFixed",
    "XiSolve",
    "biev_weights",
    "biev_weights_from_errors",
    "biv_weights",
    "biv_weights_from_variance",
    "composite_loss",
    "composite_terms",
    "corrected_error_variance",
    "effective_sample_size",
    "gaussian_baseline_loss",
    "gaussian_terms",
    "normalize",
    "ra_weight_values",
    "ra_weights",
    "regularization_weights",
    "solve_xi",
]

XI_FLOOR = 1e-8
DEFAULT_LAMBDA = 0.1
DEFAULT_MIN_EFFECTIVE_BATCH = 16

Scheme = Literal["biv", "biev"]
RAMode = Literal["risk_averse", "risk_seeking", "none"]
RegLoss = Literal["squared", "absolute"]
Correction = Literal["mbbe", "raw"]


@dataclass(frozen=True)
class XiFixed:
    value: float

    def __post_init__(self):
        if not self.value > 0.0:
            raise ConfigError(f"fixed xi must be > 0, got {self.value}")


@dataclass(frozen=True)
class XiSolve:
    min_effective_batch: int = DEFAULT_MIN_EFFECTIVE_BATCH

    def __post_init__(self):
        if self.min_effective_batch < 1:
            raise ConfigError("min_effective_batch must be >= 1")


def _choice(name: str, value, allowed: tuple) -> None:
    if value not in allowed:
        raise ConfigError(f"{name} must be one of {allowed}, got {value!r}")


@dataclass(frozen=True)
class WeightingConfig:
    """Weighting and regularization settings.

    ``lam`` is serialized as ``lambda``. ``variance_correction`` selects
    whether BIEV inverts the MBBE-corrected or the raw ensemble variance.
    """

    lam: float = DEFAULT_LAMBDA
    xi_mode: XiFixed | XiSolve = field(default_factory=XiSolve)
    discount_gamma: float = 0.99
    scheme: Scheme = "biev"
    ra_mode: RAMode = "risk_averse"
    reg_loss: RegLoss = "squared"
    variance_correction: Correction = "mbbe"

    def __post_init__(self):
        if not self.lam >= 0.0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if not 0.0 <= self.discount_gamma <= 1.0:
            raise ConfigError(f"discount_gamma must lie in [0, 1], got {self.discount_gamma}")
        _choice("scheme", self.scheme, ("biv", "biev"))
        _choice("ra_mode", self.ra_mode, ("risk_averse", "risk_seeking", "none"))
        _choice("reg_loss", self.reg_loss, ("squared", "absolute"))
        _choice("variance_correction", self.variance_correction, ("mbbe", "raw"))

    @classmethod
    def from_dict(cls, d: dict) -> "WeightingConfig":
        known = {f.name for f in fields(cls)} - {"lam"} | {"lambda"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown weighting fields: {sorted(unknown)}")
        kw = {k: v for k, v in d.items() if k not in ("lambda", "xi_mode")}
        if "lambda" in d:
            kw["lam"] = float(d["lambda"])
        if "xi_mode" in d:
            kw["xi_mode"] = _parse_xi(d["xi_mode"])
        return cls(**kw)

    @classmethod
    def from_json(cls, text: str) -> "WeightingConfig":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        if isinstance(self.xi_mode, XiFixed):
            xi = {"fixed": self.xi_mode.value}
        else:
            xi = {"solve": self.xi_mode.min_effective_batch}
        return {
            "lambda": self.lam,
            "xi_mode": xi,
            "discount_gamma": self.discount_gamma,
            "scheme": self.scheme,
            "ra_mode": self.ra_mode,
            "reg_loss": self.reg_loss,
            "variance_correction": self.variance_correction,
        }


def _parse_xi(spec) -> XiFixed | XiSolve:
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ConfigError('xi_mode must be {"fixed": value} or {"solve": min_effective_batch}')
    (kind, value), = spec.items()
    if kind == "fixed":
        return XiFixed(float(value))
    if kind == "solve":
        if int(value) != value:
            raise ConfigError("min_effective_batch must be an integer")
        return XiSolve(int(value))
    raise ConfigError(f"unknown xi_mode {kind!r}")


def _vec(x, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1:
        raise DomainError(f"{name} must be one-dimensional")
    return arr


@dataclass(frozen=True)
class TDErrorBatch:
    """TD errors of one batch with ensemble statistics and head outputs.

    ``ensemble_errors`` (batch x critics) is optional and only used to
    estimate the kurtosis for the MBBE correction; ``ensemble_size``
    defaults to its second dimension.
    """

    deltas: np.ndarray
    ensemble_value_variance: np.ndarray
    ensemble_error_variance: np.ndarray
    betas: np.ndarray
    alphas: np.ndarray
    ensemble_errors: np.ndarray | None = None
    ensemble_size: int | None = None

    def __post_init__(self):
        names = ("deltas", "ensemble_value_variance", "ensemble_error_variance", "betas", "alphas")
        for name in names:
            object.__setattr__(self, name, _vec(getattr(self, name), name))
        n = self.deltas.size
        if n < 1:
            raise DomainError("batch must hold at least one sample")
        if any(getattr(self, name).size != n for name in names):
            raise DomainError("batch sequences must have equal length")
        if np.any(self.ensemble_value_variance < 0) or np.any(self.ensemble_error_variance < 0):
            raise DomainError("variances must be >= 0")
        if np.any(self.betas <= 0) or np.any(self.alphas <= 0):
            raise DomainError("betas and alphas must be > 0")
        if self.ensemble_errors is not None:
            errs = np.asarray(self.ensemble_errors, dtype=float)
            if errs.ndim != 2 or errs.shape[0] != n:
                raise DomainError("ensemble_errors must have shape (batch, critics)")
            object.__setattr__(self, "ensemble_errors", errs)
            if self.ensemble_size is None:
                object.__setattr__(self, "ensemble_size", errs.shape[1])

    @classmethod
    def simple(cls, deltas, betas=None, alphas=None, value_var=None, error_var=None, **kw) -> "TDErrorBatch":
        """Batch with unit heads and zero variances unless given."""
        d = _vec(deltas, "deltas")
        ones, zeros = np.ones_like(d), np.zeros_like(d)
        return cls(
            deltas=d,
            ensemble_value_variance=zeros if value_var is None else value_var,
            ensemble_error_variance=zeros if error_var is None else error_var,
            betas=ones if betas is None else betas,
            alphas=ones if alphas is None else alphas,
            **kw,
        )

    def __len__(self) -> int:
        return self.deltas.size


def normalize(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    return w / w.sum()


def effective_sample_size(w) -> float:
    w = np.asarray(w, dtype=float)
    return float(w.sum() ** 2 / np.dot(w, w))


def _ess_and_slope(v: np.ndarray, xi: float) -> tuple[float, float]:
    w = 1.0 / (v + xi)
    s1, s2, s3 = w.sum(), np.dot(w, w), np.dot(w, w * w)
    return s1 * s1 / s2, 2.0 * s1 * (s1 * s3 - s2 * s2) / (s2 * s2)


def solve_xi(raw_variances, min_effective_batch: int) -> float:
    """Smallest ``xi`` whose inverse-variance weights reach the target ESS.

    ESS grows monotonically with ``xi``. The bracket starts at
    ``[0, 10 max(v) + 1]`` and is doubled while the target is out of reach;
    the root is then found by Newton steps on ESS in ``log xi``, falling back to
    bisection whenever a step leaves the bracket. The returned value always
    meets the target. A target equal to the batch size is only approached
    asymptotically, so it is relaxed to ``n (1 - 1e-9)``. Returns ``1e-8``
    when the floor already suffices.
    """
    v = _vec(raw_variances, "raw_variances")
    n = v.size
    if np.any(v < 0) or not np.all(np.isfinite(v)):
        raise DomainError("variances must be finite and >= 0")
    if not 1 <= min_effective_batch <= n:
        raise DomainError(f"min_effective_batch {min_effective_batch} is unreachable with batch size {n}")
    if _ess_and_slope(v, XI_FLOOR)[0] >= min_effective_batch:
        return XI_FLOOR
    target = min(float(min_effective_batch), n * (1.0 - 1e-9))
    hi = 10.0 * float(v.max()) + 1.0
    for _ in range(400):
        if _ess_and_slope(v, hi)[0] >= target:
            break
        hi *= 2.0
    else:
        raise DomainError("could not bracket xi for the requested effective batch size")
    lo = XI_FLOOR
    xi = min(max(float(v.mean()), XI_FLOOR), hi)
    for _ in range(200):
        e, slope = _ess_and_slope(v, xi)
        if e >= target:
            if e - target <= 1e-12 * target:
                return xi
            hi = xi
        else:
            lo = xi
        # Newton in log(xi), where ESS is sigmoid-shaped and steps stay sane
        nxt = xi * math.exp(min(50.0, max(-50.0, (target - e) / (slope * xi)))) if slope > 0 else lo
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
        if abs(nxt - xi) <= 1e-12 * xi or hi - lo <= 1e-12 * hi:
            break
        xi = nxt
    # the last Newton iterate may sit a rounding error below the target
    for bump in (0.0, 1e-12, 1e-10, 1e-8):
        cand = xi * (1.0 + bump)
        if cand <= hi and _ess_and_slope(v, cand)[0] >= target:
            return cand
    return hi


def _resolve_xi(variances: np.ndarray, cfg: WeightingConfig) -> float:
    if isinstance(cfg.xi_mode, XiFixed):
        return cfg.xi_mode.value
    return solve_xi(variances, cfg.xi_mode.min_effective_batch)


def biv_weights(batch: TDErrorBatch, cfg: WeightingConfig) -> tuple[np.ndarray, float]:
    """Unnormalized BIV weights and the resolved ``xi``."""
    return biv_weights_from_variance(batch.ensemble_value_variance, cfg)


def biv_weights_from_variance(value_variance: np.ndarray, cfg: WeightingConfig) -> tuple[np.ndarray, float]:
    """:func:`biv_weights` from the ensemble value variance alone."""
    v = cfg.discount_gamma**2 * np.asarray(value_variance, dtype=float)
    xi = _resolve_xi(v, cfg)
    return 1.0 / (v + xi), xi


def corrected_error_variance(batch: TDErrorBatch, cfg: WeightingConfig) -> np.ndarray:
    """Ensemble error variance after the MBBE shrinkage (identity in raw mode)."""
    raw = batch.ensemble_error_variance
    n = batch.ensemble_size
    if cfg.variance_correction == "raw" or n is None or n < 2:
        return raw
    if batch.ensemble_errors is not None:
        kappa = shrunk_kurtosis(batch.ensemble_errors, axis=1)
    else:
        kappa = np.zeros_like(raw)
    return raw * mbbe_factor(n, kappa, clamp=True)


def biev_weights(batch: TDErrorBatch, cfg: WeightingConfig) -> tuple[np.ndarray, float]:
    """Unnormalized BIEV weights and the resolved ``xi``."""
    v = corrected_error_variance(batch, cfg)
    xi = _resolve_xi(v, cfg)
    return 1.0 / (v + xi), xi


def biev_weights_from_errors(errors, cfg: WeightingConfig) -> tuple[np.ndarray, float]:
    """:func:`biev_weights` straight from a ``(batch, critics)`` error matrix.

    Skips building a :class:`TDErrorBatch` and shares the central moments
    between the variance and the kurtosis.
    """
    e = np.asarray(errors, dtype=float)
    if e.ndim != 2 or e.shape[1] < 2:
        raise DomainError("errors must have shape (batch, critics) with at least 2 critics")
    k = e.shape[1]
    c = e - e.mean(axis=1, keepdims=True)
    c2 = c * c
    ss = c2.sum(axis=1)
    v = ss / (k - 1)
    if cfg.variance_correction != "raw":
        kappa = shrunk_kurtosis_from_moments(ss / k, (c2 * c2).sum(axis=1) / k, k)
        v = v * mbbe_factor(k, kappa, clamp=True)
    xi = _resolve_xi(v, cfg)
    return 1.0 / (v + xi), xi


def regularization_weights(batch: TDErrorBatch, cfg: WeightingConfig) -> tuple[np.ndarray, float]:
    return biv_weights(batch, cfg) if cfg.scheme == "biv" else biev_weights(batch, cfg)


def ra_weight_values(betas, mode: RAMode) -> np.ndarray:
    """Unnormalized risk-averse (``beta``) or risk-seeking (``1/beta``) weights."""
    b = np.asarray(betas, dtype=float)
    if mode == "risk_averse":
        return b.copy()
    if mode == "risk_seeking":
        return 1.0 / b
    if mode == "none":
        return np.ones_like(b)
    raise DomainError(f"unknown ra_mode {mode!r}")


def ra_weights(batch: TDErrorBatch, mode: RAMode) -> np.ndarray:
    return ra_weight_values(batch.betas, mode)


class TermsWithGrad(NamedTuple):
    attenuation: float
    regularization: float
    total: float
    d_delta: np.ndarray
    d_beta: np.ndarray
    d_alpha: np.ndarray


def _reg_rho(deltas: np.ndarray, reg_loss: RegLoss) -> tuple[np.ndarray, np.ndarray]:
    if reg_loss == "squared":
        return deltas**2, 2.0 * deltas
    return np.abs(deltas), np.sign(deltas)


def composite_terms(
    deltas, alphas, betas, ra_norm, reg_norm, lam: float, reg_loss: RegLoss, nll_form: NLLForm
) -> TermsWithGrad:
    """GGD attenuation plus regularization for fixed normalized weights, with gradients."""
    deltas = np.asarray(deltas, dtype=float)
    att_each, g = ggd_nll_value_and_grad(deltas, alphas, betas, nll_form)
    rho, drho = _reg_rho(deltas, reg_loss)
    att = float(np.dot(ra_norm, att_each))
    reg = float(np.dot(reg_norm, rho))
    return TermsWithGrad(
        attenuation=att,
        regularization=reg,
        total=att + lam * reg,
        d_delta=ra_norm * g.d_delta + lam * reg_norm * drho,
        d_beta=ra_norm * g.d_beta,
        d_alpha=ra_norm * g.d_alpha,
    )


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    attenuation_term: float
    regularization_term: float
    ra_weights: np.ndarray
    reg_weights: np.ndarray
    xi: float


def composite_loss(batch: TDErrorBatch, cfg: WeightingConfig, nll_form: NLLForm = "modified") -> LossBreakdown:
    """Risk-weighted GGD NLL plus ``lambda`` times the inverse-variance regularizer.

    ``attenuation = sum_t ra_t / sum(ra) * NLL(delta_t; alpha_t, beta_t)`` and
    ``regularization = sum_t w_t / sum(w) * rho(delta_t)`` with ``rho`` the
    squared or absolute error and ``w`` the BIEV (or BIV) weights.
    """
    ra = normalize(ra_weights(batch, cfg.ra_mode))
    w, xi = regularization_weights(batch, cfg)
    reg = normalize(w)
    t = composite_terms(batch.deltas, batch.alphas, batch.betas, ra, reg, cfg.lam, cfg.reg_loss, nll_form)
    return LossBreakdown(t.total, t.attenuation, t.regularization, ra, reg, xi)


class GaussianTerms(NamedTuple):
    nll: float
    regularization: float
    total: float
    d_delta: np.ndarray
    d_sigma: np.ndarray


def gaussian_terms(deltas, sigmas, reg_norm, lam: float, reduction: Literal["sum", "mean"] = "sum") -> GaussianTerms:
    """Heteroscedastic Gaussian NLL ``(d/s)**2 + ln s**2`` plus BIV-weighted squared error."""
    deltas = np.asarray(deltas, dtype=float)
    sigmas = np.asarray(sigmas, dtype=float)
    if np.any(sigmas <= 0):
        raise DomainError("sigma heads must be > 0")
    scale = 1.0 if reduction == "sum" else 1.0 / deltas.size
    z = deltas / sigmas
    nll = scale * float(np.sum(z * z + 2.0 * np.log(sigmas)))
    reg = float(np.dot(reg_norm, deltas**2))
    d_delta = scale * 2.0 * z / sigmas + lam * reg_norm * 2.0 * deltas
    d_sigma = scale * (-2.0 * z * z + 2.0) / sigmas
    return GaussianTerms(nll, reg, nll + lam * reg, d_delta, d_sigma)


def gaussian_baseline_loss(
    batch: TDErrorBatch,
    cfg: WeightingConfig,
    sigma_heads,
    reduction: Literal["sum", "mean"] = "sum",
) -> float:
    """Gaussian variance-network NLL plus ``lambda`` times the BIV regularizer.

    ``reduction="mean"`` averages the NLL part over the batch (the trainer
    uses it so learning rates are comparable with the weighted-mean GGD loss).
    """
    sig = _vec(sigma_heads, "sigma_heads")
    if sig.size != len(batch):
        raise DomainError("sigma_heads must match the batch length")
    w, _ = biv_weights(batch, cfg)
    return gaussian_terms(batch.deltas, sig, normalize(w), cfg.lam, reduction).total
