"""Autoregressive pre-whitening: fit AR(r) by Yule-Walker, pick the order
by AIC, and monitor the residuals instead of the raw series."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ArModel",
    "autocovariances",
    "yule_walker_fit",
    "select_order_aic",
    "residuals",
    "simulate_ar",
]


@dataclass(frozen=True)
class ArModel:
    """Mean, AR coefficients and innovation variance of a fitted model."""

    mu: float
    coeffs: tuple[float, ...]
    noise_var: float

    def __post_init__(self) -> None:
        if self.noise_var <= 0.0 or not math.isfinite(self.noise_var):
            raise ValueError("noise_var must be positive and finite")
        object.__setattr__(self, "coeffs", tuple(float(a) for a in self.coeffs))

    @property
    def order(self) -> int:
        return len(self.coeffs)

    def is_stationary(self) -> bool:
        """Spectral radius of the companion matrix below 1."""
        if self.order == 0:
            return True
        comp = np.zeros((self.order, self.order))
        comp[0, :] = self.coeffs
        if self.order > 1:
            comp[1:, :-1] = np.eye(self.order - 1)
        return bool(np.max(np.abs(np.linalg.eigvals(comp))) < 1.0)


def autocovariances(series: np.ndarray, max_lag: int) -> np.ndarray:
    """Sample autocovariances gamma_0..gamma_max_lag with the divide-by-n
    convention, which keeps the Yule-Walker system positive definite."""
    x = np.asarray(series, dtype=float)
    n = x.size
    if max_lag >= n:
        raise ValueError("max_lag must be below the series length")
    d = x - x.mean()
    return np.array([float(d[: n - lag] @ d[lag:]) / n for lag in range(max_lag + 1)])


def _levinson(acov: np.ndarray, order: int) -> tuple[np.ndarray, float]:
    """Levinson-Durbin solve of the Toeplitz Yule-Walker system; returns
    (coefficients, innovation variance)."""
    sigma2 = acov[0]
    if sigma2 <= 0.0:
        raise ValueError("singular autocovariance matrix (zero-variance series)")
    a = np.zeros(0)
    for m in range(1, order + 1):
        num = acov[m] - (a @ acov[m - 1 : 0 : -1] if m > 1 else 0.0)
        if sigma2 <= 0.0:
            raise ValueError("singular autocovariance matrix")
        refl = num / sigma2
        new = np.empty(m)
        new[m - 1] = refl
        if m > 1:
            new[: m - 1] = a - refl * a[::-1]
        a = new
        sigma2 = sigma2 * (1.0 - refl * refl)
    if sigma2 <= 0.0:
        raise ValueError("singular autocovariance matrix")
    return a, float(sigma2)


def yule_walker_fit(series: np.ndarray, order: int) -> ArModel:
    """Fit AR(order) by Yule-Walker on biased sample autocovariances."""
    x = np.asarray(series, dtype=float)
    if order < 0:
        raise ValueError("order must be nonnegative")
    if x.size <= 10 * max(order, 1):
        raise ValueError("series too short for the requested order")
    acov = autocovariances(x, order)
    if acov[0] <= 0.0:
        raise ValueError("singular autocovariance matrix (zero-variance series)")
    if order == 0:
        return ArModel(mu=float(x.mean()), coeffs=(), noise_var=float(acov[0]))
    coeffs, sigma2 = _levinson(acov, order)
    return ArModel(mu=float(x.mean()), coeffs=tuple(coeffs), noise_var=sigma2)


def select_order_aic(series: np.ndarray, max_order: int) -> int:
    """argmin over 0..max_order of n*log(innovation variance) + 2r, ties
    broken toward the smaller order."""
    x = np.asarray(series, dtype=float)
    if max_order < 0:
        raise ValueError("max_order must be nonnegative")
    n = x.size
    acov = autocovariances(x, max_order)
    if acov[0] <= 0.0:
        raise ValueError("singular autocovariance matrix (zero-variance series)")
    best_order = 0
    best_aic = n * math.log(acov[0])
    sigma2 = acov[0]
    a = np.zeros(0)
    for m in range(1, max_order + 1):
        num = acov[m] - (a @ acov[m - 1 : 0 : -1] if m > 1 else 0.0)
        refl = num / sigma2
        new = np.empty(m)
        new[m - 1] = refl
        if m > 1:
            new[: m - 1] = a - refl * a[::-1]
        a = new
        sigma2 = sigma2 * (1.0 - refl * refl)
        if sigma2 <= 0.0:
            break
        aic = n * math.log(sigma2) + 2.0 * m
        if aic < best_aic:
            best_aic = aic
            best_order = m
    return best_order


def residuals(series: np.ndarray, model: ArModel) -> np.ndarray:
    """One-step-ahead residuals; the first ``order`` positions have no
    complete history and are dropped, so the output has length n - order."""
    x = np.asarray(series, dtype=float)
    r = model.order
    if x.size <= r:
        raise ValueError("series must be longer than the model order")
    d = x - model.mu
    if r == 0:
        return d.copy()
    eps = d[r:].copy()
    for lag, a in enumerate(model.coeffs, start=1):
        eps -= a * d[r - lag : -lag]
    return eps


def simulate_ar(
    model: ArModel, length: int, seed: int | np.random.Generator, burn_in: int = 500
) -> np.ndarray:
    """Synthetic series from the model with Gaussian innovations; used as a
    stand-in for serially correlated process data."""
    if not model.is_stationary():
        raise ValueError("model must be stationary to simulate from")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    r = model.order
    total = length + burn_in
    eps = math.sqrt(model.noise_var) * rng.standard_normal(total)
    x = np.zeros(total)
    for i in range(total):
        acc = eps[i]
        for lag, a in enumerate(model.coeffs, start=1):
            if i - lag >= 0:
                acc += a * x[i - lag]
        x[i] = acc
    return model.mu + x[burn_in:]
