"""Variance estimators under non-Gaussian tails.

Sample variance and kurtosis, the MSE-best biased estimator (MBBE)
``(kappa/n + (n+1)/(n-1))**-1 * s**2``, its relative efficiency over ``s**2``,
and Monte-Carlo harnesses that check both the MBBE optimality and the
kurtosis-driven distortion of normality-based standard errors.

The Monte-Carlo harnesses stream trials in chunks and merge summary
statistics, so memory does not grow with the trial count.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError
from .ggd import GGDParams, draw, excess_kurtosis, variance

__all__ = [
    "EstimatorReport",
    "MBBEExperiment",
    "Prop1Experiment",
    "RunningStats",
    "coefficient_of_variation",
    "estimator_report",
    "mbbe_factor",
    "mbbe_optimality_experiment",
    "mbbe_variance",
    "prop1_bias_experiment",
    "relative_efficiency",
    "sample_excess_kurtosis",
    "sample_variance",
    "shrunk_kurtosis",
    "shrunk_kurtosis_from_moments",
]

KURTOSIS_SHRINK_OFFSET = 10
MIN_SHRINK_DENOMINATOR = 0.1
PROP1_MIN_TRIALS = 1_000
MBBE_MIN_TRIALS = 10_000
_CHUNK_VALUES = 2_000_000


def _as_1d(xs) -> np.ndarray:
    return np.asarray(xs, dtype=float).ravel()


def sample_variance(xs: Sequence[float]) -> float:
    """Bessel-corrected sample variance."""
    x = _as_1d(xs)
    if x.size < 2:
        raise DomainError("sample_variance needs at least 2 values")
    return float(np.var(x, ddof=1))


def sample_excess_kurtosis(xs: Sequence[float]) -> float:
    """Plug-in excess kurtosis ``m4 / m2**2 - 3`` from central sample moments."""
    x = _as_1d(xs)
    if x.size < 4:
        raise DomainError("sample_excess_kurtosis needs at least 4 values")
    c = x - x.mean()
    m2 = np.mean(c * c)
    if m2 <= 0.0:
        raise DomainError("sample_excess_kurtosis is undefined for zero-variance data")
    return float(np.mean(c**4) / (m2 * m2) - 3.0)


def shrunk_kurtosis(values: np.ndarray, axis: int = -1) -> np.ndarray:
    """Sample excess kurtosis shrunk toward 0 by ``n / (n + 10)``.

    Vectorized along ``axis``; rows with zero variance or fewer than four
    values get 0.
    """
    v = np.asarray(values, dtype=float)
    n = v.shape[axis]
    if n < 4:
        return np.zeros(np.delete(v.shape, axis % v.ndim))
    c = v - v.mean(axis=axis, keepdims=True)
    c2 = c * c
    return shrunk_kurtosis_from_moments(np.mean(c2, axis=axis), np.mean(c2 * c2, axis=axis), n)


def shrunk_kurtosis_from_moments(m2, m4, n: int) -> np.ndarray:
    """:func:`shrunk_kurtosis` from precomputed central moments of ``n`` values."""
    if n < 4:
        return np.zeros(np.shape(m2))
    ok = m2 > 0.0
    kappa = np.where(ok, m4 / np.where(ok, m2 * m2, 1.0) - 3.0, 0.0)
    return kappa * n / (n + KURTOSIS_SHRINK_OFFSET)


def mbbe_factor(n: int, kappa, clamp: bool = False):
    """Multiplier ``(kappa/n + (n+1)/(n-1))**-1`` applied to ``s**2``.

    With ``clamp`` the denominator is floored at 0.1 instead of raising.
    """
    if n < 2:
        raise DomainError("MBBE needs n >= 2")
    denom = np.asarray(kappa, dtype=float) / n + (n + 1.0) / (n - 1.0)
    if clamp:
        denom = np.maximum(denom, MIN_SHRINK_DENOMINATOR)
    elif np.any(denom <= 0.0):
        raise DomainError("MBBE shrink denominator kappa/n + (n+1)/(n-1) must be > 0")
    out = 1.0 / denom
    return float(out) if np.ndim(out) == 0 else out


def mbbe_variance(xs: Sequence[float], kappa: float | None = None) -> float:
    """MSE-best biased variance estimate.

    Parameters
    ----------
    xs : sequence of float
        At least two observations.
    kappa : float or None
        Population excess kurtosis. ``None`` (or NaN) estimates it from the
        data with :func:`shrunk_kurtosis`; the denominator is then floored at
        0.1 rather than rejected.
    """
    x = _as_1d(xs)
    s2 = sample_variance(x)
    if s2 == 0.0:
        return 0.0
    if kappa is None or math.isnan(kappa):
        k = float(shrunk_kurtosis(x)) if x.size >= 4 else 0.0
        return s2 * mbbe_factor(x.size, k, clamp=True)
    return s2 * mbbe_factor(x.size, kappa)


def relative_efficiency(n: int, kappa: float) -> float:
    """``1 + kappa/n + 2/(n-1)``: variance of ``s**2`` over the MSE of the MBBE."""
    if n < 2:
        raise DomainError("relative_efficiency needs n >= 2")
    return 1.0 + kappa / n + 2.0 / (n - 1.0)


def coefficient_of_variation(xs: Sequence[float]) -> float:
    """``|sd / mean|`` with the Bessel-corrected standard deviation."""
    x = _as_1d(xs)
    if x.size < 2:
        raise DomainError("coefficient_of_variation needs at least 2 values")
    m = x.mean()
    if m == 0.0:
        raise DomainError("coefficient_of_variation is undefined for zero mean")
    return float(abs(np.std(x, ddof=1) / m))


@dataclass(frozen=True)
class EstimatorReport:
    n: int
    sample_mean: float
    sample_variance: float
    mbbe_variance: float
    kurtosis_estimate: float
    relative_efficiency: float
    coefficient_of_variation: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), allow_nan=True)


def estimator_report(xs: Sequence[float], kappa: float | None = None) -> EstimatorReport:
    """Summarize ``xs``; the kurtosis is estimated when ``kappa`` is None.

    A zero mean leaves the coefficient of variation as NaN.
    """
    x = _as_1d(xs)
    s2 = sample_variance(x)
    if kappa is None:
        k = sample_excess_kurtosis(x) if x.size >= 4 and s2 > 0 else 0.0
    else:
        k = float(kappa)
    mean = float(x.mean())
    cov = float(abs(math.sqrt(s2) / mean)) if mean != 0.0 else math.nan
    return EstimatorReport(
        n=int(x.size),
        sample_mean=mean,
        sample_variance=s2,
        mbbe_variance=mbbe_variance(x, kappa),
        kurtosis_estimate=k,
        relative_efficiency=relative_efficiency(x.size, k),
        coefficient_of_variation=cov,
    )


class RunningStats:
    """Streaming count/mean/M2 with Chan's parallel merge.

    ``update`` takes a batch of values; ``merge`` combines two accumulators,
    so chunks may be produced by independent workers.
    """

    def __init__(self):
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0

    def update(self, values) -> "RunningStats":
        v = _as_1d(values)
        if v.size:
            other = RunningStats()
            other.count = v.size
            other.mean = float(v.mean())
            other.m2 = float(np.sum((v - other.mean) ** 2))
            self.merge(other)
        return self

    def merge(self, other: "RunningStats") -> "RunningStats":
        if other.count == 0:
            return self
        total = self.count + other.count
        delta = other.mean - self.mean
        self.mean += delta * other.count / total
        self.m2 += other.m2 + delta * delta * self.count * other.count / total
        self.count = total
        return self

    @property
    def variance(self) -> float:
        return self.m2 / (self.count - 1) if self.count > 1 else math.nan

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


def _chunks(trials: int, n: int):
    per = max(1, _CHUNK_VALUES // n)
    done = 0
    while done < trials:
        k = min(per, trials - done)
        yield k
        done += k


@dataclass(frozen=True)
class Prop1Experiment:
    """Outcome of the normality-based standard-error check.

    ``mean_bias`` is E[sigma_mle^2] - sigma^2; ``excess_bias`` removes the
    kurtosis-free finite-sample term -sigma^2/n. ``se_ratio`` is the
    empirical SD of sigma_mle^2 across trials over the average
    normality-based SE ``sqrt(2 sigma_mle^4 / n)``.
    """

    kappa: float
    true_variance: float
    mean_bias: float
    excess_bias: float
    empirical_sd: float
    normal_se: float
    se_ratio: float
    sign_matches_kappa: bool

    def to_dict(self) -> dict:
        return asdict(self)


def prop1_bias_experiment(
    dist: GGDParams, n_per_trial: int, trials: int, seed: int, null_band: float = 0.05
) -> Prop1Experiment:
    """Monte-Carlo check that normality understates the SE of the variance when kappa > 0.

    ``sign_matches_kappa`` compares sign(se_ratio - 1) with sign(kappa); for
    Gaussian data (kappa = 0) it holds when the ratio lies within
    ``1 +/- null_band``.
    """
    if n_per_trial < 4:
        raise DomainError("prop1_bias_experiment needs n_per_trial >= 4")
    if trials < PROP1_MIN_TRIALS:
        raise DomainError(f"prop1_bias_experiment needs trials >= {PROP1_MIN_TRIALS}, got {trials}")
    rng = np.random.default_rng(seed)
    sigma2 = variance(dist)
    kappa = excess_kurtosis(dist.beta)
    est = RunningStats()
    se = RunningStats()
    for k in _chunks(trials, n_per_trial):
        x = draw(rng, dist, (k, n_per_trial))
        v = np.var(x, axis=1)
        est.update(v)
        se.update(np.sqrt(2.0 / n_per_trial) * v)
    mean_bias = est.mean - sigma2
    ratio = est.std / se.mean
    if abs(kappa) < 1e-9:
        matches = abs(ratio - 1.0) <= null_band
    else:
        matches = math.copysign(1.0, ratio - 1.0) == math.copysign(1.0, kappa)
    return Prop1Experiment(
        kappa=kappa,
        true_variance=sigma2,
        mean_bias=mean_bias,
        excess_bias=mean_bias + sigma2 / n_per_trial,
        empirical_sd=est.std,
        normal_se=se.mean,
        se_ratio=ratio,
        sign_matches_kappa=bool(matches),
    )


@dataclass(frozen=True)
class MBBEExperiment:
    kappa: float
    mse_sample_var: float
    mse_mbbe: float
    empirical_re: float
    formula_re: float

    def to_dict(self) -> dict:
        return asdict(self)


def mbbe_optimality_experiment(
    dist: GGDParams, n_per_trial: int, trials: int, seed: int, omega: float | None = None
) -> MBBEExperiment:
    """Monte-Carlo MSE of ``s**2`` and of the MBBE with the true kurtosis.

    ``omega`` replaces the optimal weight in ``omega * (n-1) * s**2``;
    ``omega = 1/(n-1)`` reproduces ``s**2`` exactly.
    """
    if n_per_trial < 2:
        raise DomainError("mbbe_optimality_experiment needs n_per_trial >= 2")
    if trials < MBBE_MIN_TRIALS:
        raise DomainError(f"mbbe_optimality_experiment needs trials >= {MBBE_MIN_TRIALS}, got {trials}")
    rng = np.random.default_rng(seed)
    sigma2 = variance(dist)
    kappa = excess_kurtosis(dist.beta)
    n = n_per_trial
    factor = mbbe_factor(n, kappa) if omega is None else omega * (n - 1)
    se_plain = RunningStats()
    se_mbbe = RunningStats()
    for k in _chunks(trials, n):
        s2 = np.var(draw(rng, dist, (k, n)), axis=1, ddof=1)
        se_plain.update((s2 - sigma2) ** 2)
        se_mbbe.update((factor * s2 - sigma2) ** 2)
    return MBBEExperiment(
        kappa=kappa,
        mse_sample_var=se_plain.mean,
        mse_mbbe=se_mbbe.mean,
        empirical_re=se_plain.mean / se_mbbe.mean,
        formula_re=relative_efficiency(n, kappa),
    )
