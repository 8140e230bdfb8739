"""Analytic in-control / out-of-control distribution models.

Three families are supported: the standard normal, and a pair of
mirror-image two-sided exponential mixtures (one right-skewed, one
left-skewed), each standardized to mean 0 and variance 1.  A location
shift turns the in-control law into an out-of-control one.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Kind",
    "DistributionModel",
    "ShiftSpec",
    "standardization_constants",
    "unstandardized_density_at",
    "density_at",
    "cdf_at",
    "quantile_at",
    "sample_stream",
]

_SQRT_2PI = math.sqrt(2.0 * math.pi)

# Unstandardized skew mixture: weight 1/2 on an exponential branch with
# scale 3 and weight 1/2 on a negated exponential branch with scale 1.
# Analytic moments: mean +/-1, variance 9 (cross-checked by numeric
# integration in the test suite).
_MIX_MEAN = 1.0
_MIX_SD = 3.0


class Kind(enum.Enum):
    STANDARD_NORMAL = "standard_normal"
    RIGHT_SKEW_MIX = "right_skew_mix"
    LEFT_SKEW_MIX = "left_skew_mix"


def standardization_constants(kind: Kind) -> tuple[float, float]:
    """(mean, sd) of the unstandardized mixture for the given kind.

    The sampler returns (X - mean) / sd.  Rejects STANDARD_NORMAL, which
    needs no standardization.
    """
    if kind is Kind.RIGHT_SKEW_MIX:
        return _MIX_MEAN, _MIX_SD
    if kind is Kind.LEFT_SKEW_MIX:
        return -_MIX_MEAN, _MIX_SD
    raise ValueError("standard normal is already standardized")


def unstandardized_density_at(kind: Kind, x: float) -> float:
    """Density of the raw (unstandardized) mixture at ``x``."""
    if kind is Kind.RIGHT_SKEW_MIX:
        if x >= 0.0:
            return math.exp(-x / 3.0) / 6.0
        return math.exp(x) / 2.0
    if kind is Kind.LEFT_SKEW_MIX:
        return unstandardized_density_at(Kind.RIGHT_SKEW_MIX, -x)
    raise ValueError("unstandardized form exists only for the skew mixtures")


def _std_right_density(z: np.ndarray) -> np.ndarray:
    # density of (X - 1) / 3 with X the right-skew mixture
    z = np.asarray(z, dtype=float)
    return np.where(
        z >= -1.0 / 3.0,
        0.5 * np.exp(-z - 1.0 / 3.0),
        1.5 * np.exp(3.0 * z + 1.0),
    )


def _std_right_cdf(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return np.where(
        z >= -1.0 / 3.0,
        1.0 - 0.5 * np.exp(-z - 1.0 / 3.0),
        0.5 * np.exp(3.0 * z + 1.0),
    )


def _std_right_quantile(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    lo = (np.log(2.0 * np.clip(u, 1e-300, None)) - 1.0) / 3.0
    hi = -np.log(2.0 * np.clip(1.0 - u, 1e-300, None)) - 1.0 / 3.0
    return np.where(u <= 0.5, lo, hi)


@dataclass(frozen=True)
class DistributionModel:
    """An in-control law (standardized to mean 0, variance 1) plus an
    optional location shift applied on top of it."""

    kind: Kind
    shift: float = 0.0

    def density_at(self, x) -> np.ndarray | float:
        z = np.asarray(x, dtype=float) - self.shift
        if self.kind is Kind.STANDARD_NORMAL:
            out = np.exp(-0.5 * z * z) / _SQRT_2PI
        elif self.kind is Kind.RIGHT_SKEW_MIX:
            out = _std_right_density(z)
        else:
            out = _std_right_density(-z)
        return out if out.ndim else float(out)

    def cdf_at(self, x) -> np.ndarray | float:
        z = np.asarray(x, dtype=float) - self.shift
        if self.kind is Kind.STANDARD_NORMAL:
            from scipy.special import ndtr

            out = ndtr(z)
        elif self.kind is Kind.RIGHT_SKEW_MIX:
            out = _std_right_cdf(z)
        else:
            out = 1.0 - _std_right_cdf(-z)
        return out if out.ndim else float(out)

    def quantile_at(self, u) -> np.ndarray | float:
        u = np.asarray(u, dtype=float)
        if np.any((u <= 0.0) | (u >= 1.0)):
            raise ValueError("quantile level must lie strictly inside (0, 1)")
        if self.kind is Kind.STANDARD_NORMAL:
            from scipy.special import ndtri

            out = ndtri(u)
        elif self.kind is Kind.RIGHT_SKEW_MIX:
            out = _std_right_quantile(u)
        else:
            out = -_std_right_quantile(1.0 - u)
        out = out + self.shift
        return out if out.ndim else float(out)

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """n i.i.d. standardized draws (plus the model shift).

        The skew mixtures are sampled by inverting the piecewise CDF on a
        single uniform, so the branch pick and the exponential magnitude
        come from one exact inverse-CDF step with no rejection loop.
        """
        if self.kind is Kind.STANDARD_NORMAL:
            x = rng.standard_normal(n)
        else:
            u = rng.random(n)
            x = _std_right_quantile(u)
            if self.kind is Kind.LEFT_SKEW_MIX:
                x = -x
        if self.shift != 0.0:
            x = x + self.shift
        return x


@dataclass(frozen=True)
class ShiftSpec:
    """Location shift of size ``delta`` taking effect after observation
    ``change_point`` (0 means the whole stream is shifted)."""

    delta: float = 0.0
    change_point: int = 0

    def __post_init__(self) -> None:
        if self.delta < 0.0:
            raise ValueError("delta must be nonnegative")
        if self.change_point < 0:
            raise ValueError("change_point must be nonnegative")


def density_at(model: DistributionModel, x) -> np.ndarray | float:
    return model.density_at(x)


def cdf_at(model: DistributionModel, x) -> np.ndarray | float:
    return model.cdf_at(x)


def quantile_at(model: DistributionModel, u) -> np.ndarray | float:
    return model.quantile_at(u)


def sample_stream(
    model: DistributionModel,
    spec: ShiftSpec,
    length: int,
    seed: int | np.random.Generator,
) -> np.ndarray:
    """Sample a monitored stream: the first ``spec.change_point`` values
    come from the in-control law, the rest are shifted by ``spec.delta``.

    Deterministic given the seed (or consumes the passed generator).
    """
    if length < 1:
        raise ValueError("length must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x = model.draw(rng, length)
    if spec.delta != 0.0 and spec.change_point < length:
        x[spec.change_point:] += spec.delta
    return x
