"""
Estimators and goodness-of-fit tests used to compare simulated laws with
their closed-form counterparts.
"""

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Union

import numpy as np
import scipy.stats

from .montecarlo import ExitKind, JumpChainSample


class EmptySampleError(ValueError):
    """Estimator called without data."""
    pass


class DimensionMismatchError(ValueError):
    """Observed and expected arrays disagree in shape."""
    pass


@dataclass(frozen=True)
class HittingEstimate:
    """Empirical hitting kernel with binomial standard errors."""

    n_records: int
    same_ray_mass: float
    same_ray_se: float
    rebirth_mass: float
    ray_masses: np.ndarray
    ray_se: np.ndarray
    censored_mass: float
    se_defined: bool

    def to_dict(self) -> dict:
        return {
            "n_records": self.n_records,
            "same_ray_mass": self.same_ray_mass,
            "same_ray_se": self.same_ray_se,
            "rebirth_mass": self.rebirth_mass,
            "ray_masses": self.ray_masses.tolist(),
            "ray_se": self.ray_se.tolist(),
            "censored_mass": self.censored_mass,
            "se_defined": self.se_defined,
        }


@dataclass(frozen=True)
class ChiSquareResult:
    statistic: float
    p_value: float
    dof: int


def _binomial_se(p: Union[float, np.ndarray], n: int) -> Union[float, np.ndarray]:
    return np.sqrt(p * (1.0 - p) / n)


def estimate_hitting(
    samples: Union[JumpChainSample, Iterable[JumpChainSample]],
    n_rays: int,
) -> HittingEstimate:
    """
    Empirical exit law. same_ray_mass is the fraction of records that reached
    the target without a ray re-selection; ray_masses[j] is the fraction that
    reached it on ray j after at least one re-selection.
    """
    if isinstance(samples, JumpChainSample):
        sample = samples
    else:
        sample = JumpChainSample.concatenate(list(samples))
    n = len(sample)
    if n == 0:
        raise EmptySampleError("Cannot estimate a hitting kernel from zero records")

    same = float(np.count_nonzero(sample.kind == ExitKind.SAME_RAY.code)) / n
    rebirth_rays = sample.exit_ray[sample.kind == ExitKind.REBIRTH.code]
    ray_masses = np.bincount(rebirth_rays, minlength=n_rays)[:n_rays] / n
    censored = float(np.count_nonzero(sample.kind == ExitKind.OUTER_BOUNDARY.code)) / n
    se_defined = n >= 2
    return HittingEstimate(
        n_records=n,
        same_ray_mass=same,
        same_ray_se=float(_binomial_se(same, n)),
        rebirth_mass=float(ray_masses.sum()),
        ray_masses=ray_masses,
        ray_se=np.asarray(_binomial_se(ray_masses, n)),
        censored_mass=censored,
        se_defined=se_defined,
    )


def ks_distance(samples: np.ndarray, reference_cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    """Sup distance between the empirical CDF of `samples` and a reference CDF."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise EmptySampleError("KS distance of an empty sample")
    return float(scipy.stats.kstest(samples, reference_cdf).statistic)


def ks_two_sample(x: np.ndarray, y: np.ndarray) -> float:
    """Sup distance between two empirical CDFs."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size == 0 or y.size == 0:
        raise EmptySampleError("KS distance of an empty sample")
    return float(scipy.stats.ks_2samp(x, y).statistic)


def ks_critical_value(n: int, confidence: float = 0.99) -> float:
    """Asymptotic one-sample KS critical value c(alpha) / sqrt(n)."""
    alpha = 1.0 - confidence
    return math.sqrt(-0.5 * math.log(alpha / 2.0)) / math.sqrt(n)


def chi_square(counts: np.ndarray, expected: np.ndarray) -> ChiSquareResult:
    """
    Pearson chi-square with k - 1 degrees of freedom. `expected` may be given
    as probabilities or counts; it is rescaled to the observed total.
    """
    counts = np.asarray(counts, dtype=float)
    expected = np.asarray(expected, dtype=float)
    if counts.shape != expected.shape or counts.ndim != 1:
        raise DimensionMismatchError(
            f"counts {counts.shape} and expected {expected.shape} must be matching vectors"
        )
    if counts.size < 2:
        raise DimensionMismatchError("chi-square needs at least two categories")
    if np.any(expected <= 0.0):
        raise ValueError(f"Expected counts must be positive: {expected}")
    total = counts.sum()
    if total <= 0.0:
        raise EmptySampleError("chi-square of an empty sample")
    scaled = expected * (total / expected.sum())
    result = scipy.stats.chisquare(counts, scaled)
    return ChiSquareResult(
        statistic=float(result.statistic),
        p_value=float(result.pvalue),
        dof=counts.size - 1,
    )


def mean_with_se(values: np.ndarray) -> tuple:
    """Sample mean and its standard error."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise EmptySampleError("Mean of an empty sample")
    if values.size == 1:
        return float(values[0]), 0.0
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size))
