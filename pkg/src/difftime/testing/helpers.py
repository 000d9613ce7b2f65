"""Helper functions for testing purposes."""

from __future__ import annotations

import numpy as np
from scipy import integrate, stats

from difftime.mixture import GaussianMixture
from difftime.options import OPTIONS, T_MIN
from difftime.sde import DiffusionSpec

__all__ = [
    "gaussian_I_zero",
    "gaussian_K",
    "gaussian_R",
    "ks_critical",
    "ks_passes",
    "separated_mixture",
    "time_integral",
    "toy_target",
]


def toy_target(pi: float = 0.3) -> GaussianMixture:
    """The one-dimensional toy target, ``pi N(1, 0.1^2) + (1 - pi) N(3, 0.5^2)``."""
    return GaussianMixture.toy(pi)


def separated_mixture(dim: int = 1) -> GaussianMixture:
    """Three well-separated components of different weights."""
    means = np.zeros((3, dim))
    means[:, 0] = [-6.0, 0.0, 6.0]
    return GaussianMixture([0.2, 0.5, 0.3], means, [0.5, 1.0, 0.3])


def ks_critical(n: int, m: int, alpha: float = 0.01) -> float:
    """Asymptotic critical value of the two-sample Kolmogorov-Smirnov statistic."""
    return np.sqrt(-np.log(alpha / 2) / 2) * np.sqrt((n + m) / (n * m))


def ks_passes(a: np.ndarray, b, alpha: float = 0.01) -> bool:
    """
    Whether a one-dimensional sample is compatible with another sample or with a CDF, at level `alpha`.

    `b` is either a second sample or a callable CDF.
    """
    a = np.ravel(a)
    if callable(b):
        return bool(stats.kstest(a, b).pvalue > alpha)
    return bool(stats.ks_2samp(a, np.ravel(b)).pvalue > alpha)


def time_integral(integrand, T: float, t_from: float | None = None) -> float:
    """Adaptive quadrature of a scalar function of time over ``[t_from, T]``, ``t_from`` defaulting to ``t_min``."""
    t_from = OPTIONS[T_MIN] if t_from is None else t_from
    if T <= t_from:
        return 0.0
    # integrands blow up like 1/t at small t, integrate in log-time
    value, _ = integrate.quad(lambda u: np.exp(u) * integrand(np.exp(u)), np.log(t_from), np.log(T), limit=200, epsabs=1e-10)
    return float(value)


def _gaussian_terms(spec: DiffusionSpec, var: float, t: float) -> tuple[float, float, float, float]:
    m, s = spec.transition(t)
    alpha, g = spec.drift_diffusion(t)
    return alpha, g**2, s, m**2 * var + s


def gaussian_K(spec: DiffusionSpec, var: float, T: float, dim: int = 1, t_from: float | None = None) -> float:
    """
    Exact K for data ``N(mean, var I)``.

    Both scores are linear, and the squared difference averages to ``dim (1/s - 1/(m^2 var + s))``.
    """

    def _f(t):
        _, g2, s, total = _gaussian_terms(spec, var, t)
        return 0.5 * g2 * dim * (1 / s - 1 / total)

    return time_integral(_f, T, t_from)


def gaussian_R(spec: DiffusionSpec, var: float, T: float, dim: int = 1, t_from: float | None = None) -> float:
    """Exact R for data ``N(mean, var I)``: the integrand averages to ``dim (g^2 / s + 2 alpha) / 2``."""

    def _f(t):
        alpha, g2, s, _ = _gaussian_terms(spec, var, t)
        return 0.5 * dim * (g2 / s + 2 * alpha)

    return time_integral(_f, T, t_from)


def gaussian_I_zero(spec: DiffusionSpec, var: float, T: float, dim: int = 1, t_from: float | None = None) -> float:
    """Exact score-matching loss of the zero score for data ``N(mean, var I)``: ``K`` plus the marginal score energy."""

    def _f(t):
        _, g2, s, _ = _gaussian_terms(spec, var, t)
        return 0.5 * g2 * dim / s

    return time_integral(_f, T, t_from)
