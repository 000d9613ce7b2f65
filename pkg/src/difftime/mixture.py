"""
# noqa: SS01
Gaussian Mixture Targets
========================

Isotropic Gaussian mixtures play three roles: the data distribution, its exact time marginals under an affine
diffusion, and the auxiliary model that replaces the noise distribution. Since the transition kernels are
isotropic Gaussians, a diffused mixture is again a mixture and every density and score is known in closed form.
"""

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np
from scipy import special

from difftime.base import Parametrizable, as_states
from difftime.nbutils import _mixture_eval

if TYPE_CHECKING:
    from difftime.sde import DiffusionSpec


class GaussianMixture(Parametrizable):
    """
    Weighted mixture of isotropic Gaussians.

    Parameters
    ----------
    weights : array-like, (k,)
        Component weights, nonnegative and summing to 1.
    means : array-like, (k, dim)
        Component means. A flat sequence of length k is read as k one-dimensional means.
    vars : array-like, (k,)
        Isotropic component variances, positive.

    Examples
    --------
    >>> from difftime.mixture import GaussianMixture, log_density
    >>> gm = GaussianMixture([0.3, 0.7], [1.0, 3.0], [0.01, 0.25])
    >>> round(float(log_density(gm, 1.0)), 4)
    0.1798
    """

    def __init__(self, weights, means, vars):  # noqa: A002
        weights = np.atleast_1d(np.asarray(weights, dtype=np.float64))
        means = np.asarray(means, dtype=np.float64)
        variances = np.atleast_1d(np.asarray(vars, dtype=np.float64))
        k = weights.size
        if means.ndim <= 1:
            means = means.reshape(k, -1)
        if weights.ndim != 1 or means.shape[0] != k or variances.shape != (k,):
            raise ValueError(
                f"Inconsistent mixture shapes: weights {weights.shape}, means {means.shape}, vars {variances.shape}."
            )
        if np.any(weights < 0) or abs(weights.sum() - 1) > 1e-12:
            raise ValueError(f"Mixture weights must be nonnegative and sum to 1, got {weights}.")
        if not np.all(variances > 0) or not np.all(np.isfinite(means)):
            raise ValueError("Mixture variances must be positive and means finite.")
        super().__init__(weights=weights, means=means, vars=variances)

    @classmethod
    def single(cls, mean, var: float) -> GaussianMixture:
        """A single Gaussian N(mean, var I)."""
        return cls([1.0], np.atleast_1d(np.asarray(mean, dtype=np.float64))[np.newaxis, :], [var])

    @classmethod
    def toy(cls, pi: float = 0.3) -> GaussianMixture:
        """The one-dimensional toy target ``pi N(1, 0.1^2) + (1 - pi) N(3, 0.5^2)``."""
        return cls([pi, 1 - pi], [1.0, 3.0], [0.1**2, 0.5**2])

    @property
    def n_components(self) -> int:
        """Number of components."""
        return self.weights.size

    @property
    def dim(self) -> int:
        """Dimension of the state."""
        return self.means.shape[1]

    @property
    def log_weights(self) -> np.ndarray:
        """Logarithm of the weights, -inf for empty components."""
        out = np.full(self.n_components, -np.inf)
        np.log(self.weights, out=out, where=self.weights > 0)
        return out

    def to_config(self) -> dict:
        """Plain lists, as written in a run manifest."""
        return {"weights": self.weights.tolist(), "means": self.means.tolist(), "vars": self.vars.tolist()}


def _eval(gm: GaussianMixture, x) -> tuple:
    """Run the numba kernel on a batch and tell whether the input was a single point."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim <= 1 and x.size == gm.dim
    X = np.ascontiguousarray(as_states(x, gm.dim))
    out = _mixture_eval(X, gm.log_weights, gm.means[np.newaxis], gm.vars[np.newaxis])
    return out, single


def diffuse(gm: GaussianMixture, spec: DiffusionSpec, t: float) -> GaussianMixture:
    """
    Time marginal of the diffusion started from `gm`.

    Parameters
    ----------
    gm : GaussianMixture
        The distribution at time 0.
    spec : DiffusionSpec
        The forward process.
    t : float
        Time, nonnegative.

    Returns
    -------
    GaussianMixture
        Same weights, means scaled by the kernel's mean scale, variances ``mean_scale**2 * var_k + var(t)``.
    """
    m, s = spec.transition(t)
    return GaussianMixture(gm.weights, gm.means * m, gm.vars * m**2 + s)


def diffused_params(gm: GaussianMixture, spec: DiffusionSpec, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Component means (n, k, dim) and variances (n, k) of the time marginals at the n times `t`."""
    m, s = spec.transition(np.asarray(t, dtype=np.float64))
    m = np.atleast_1d(m)
    s = np.atleast_1d(s)
    means = m[:, np.newaxis, np.newaxis] * gm.means[np.newaxis]
    variances = m[:, np.newaxis] ** 2 * gm.vars[np.newaxis] + s[:, np.newaxis]
    return means, variances


def score_at_times(gm: GaussianMixture, spec: DiffusionSpec, x: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Exact score of the time marginals, each point `x[i]` at its own time `t[i]`."""
    X = np.ascontiguousarray(as_states(x, gm.dim))
    means, variances = diffused_params(gm, spec, t)
    return _mixture_eval(X, gm.log_weights, np.ascontiguousarray(means), np.ascontiguousarray(variances))[1]


def log_density(gm: GaussianMixture, x) -> float | np.ndarray:
    """
    Log-density of the mixture, computed with log-sum-exp stabilization.

    Parameters
    ----------
    gm : GaussianMixture
        The mixture.
    x : array-like, (dim,) or (n, dim)
        A point or a batch of points.

    Returns
    -------
    float or array
        Log-density in nats. Underflow saturates to a large negative finite value.
    """
    (logp, _, _), single = _eval(gm, x)
    return float(logp[0]) if single else logp


def score(gm: GaussianMixture, x) -> np.ndarray:
    """
    Gradient of the log-density, ``sum_k r_k(x) (mu_k - x) / v_k``.

    Returns an array of the same shape as `x`.
    """
    (_, sc, _), single = _eval(gm, x)
    return sc[0] if single else sc


def responsibilities(gm: GaussianMixture, x) -> np.ndarray:
    """Posterior component probabilities at `x`, shape (k,) or (n, k)."""
    (_, _, resp), single = _eval(gm, x)
    return resp[0] if single else resp


def conditional_score(spec: DiffusionSpec, t: float | np.ndarray, x, x0) -> np.ndarray:
    """
    Score of the transition kernel, ``-(x - mean_scale x0) / var``.

    Parameters
    ----------
    spec : DiffusionSpec
        The forward process.
    t : float or array (n,)
        Time of `x`, positive. An array gives one time per point.
    x, x0 : array-like
        Current and initial states, same shape.

    Returns
    -------
    array
        Same shape as `x`.
    """
    m, s = spec.transition(t)
    if np.any(np.asarray(s) <= 0):
        raise ValueError("The transition kernel is singular at t=0, the conditional score is undefined.")
    x = np.asarray(x, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    if np.ndim(s) == 1:
        m = np.asarray(m)[:, np.newaxis]
        s = np.asarray(s)[:, np.newaxis]
    return -(x - m * x0) / s


def sample(gm: GaussianMixture, n: int, rng: np.random.Generator) -> np.ndarray:
    """
    Draw `n` i.i.d. points, shape (n, dim).

    The component is chosen by weight, then a Gaussian draw is made around its mean.
    """
    if n < 1:
        raise ValueError(f"Need at least one sample, got {n}.")
    comp = rng.choice(gm.n_components, size=n, p=gm.weights)
    noise = rng.standard_normal((n, gm.dim))
    return gm.means[comp] + np.sqrt(gm.vars[comp])[:, np.newaxis] * noise


def draw_data(target: GaussianMixture | np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """
    Draw `n` points from a data distribution.

    The target is either an analytic mixture or a finite (m, dim) sample set, which is resampled with replacement.
    """
    if isinstance(target, GaussianMixture):
        return sample(target, n, rng)
    if isinstance(target, np.ndarray):
        data = as_states(target)
        return data[rng.integers(0, data.shape[0], size=n)]
    raise TypeError(f"Data must be a GaussianMixture or an array of samples, got {type(target).__name__}.")


def target_dim(target: GaussianMixture | np.ndarray) -> int:
    """Dimension of a data distribution given as a mixture or a sample set."""
    if isinstance(target, GaussianMixture):
        return target.dim
    return as_states(target).shape[1]


def moments(gm: GaussianMixture) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of each coordinate."""
    mean = gm.weights @ gm.means
    second = gm.weights @ (gm.means**2 + gm.vars[:, np.newaxis])
    return mean, second - mean**2


def cdf(gm: GaussianMixture, x) -> np.ndarray:
    """Cumulative distribution function of a one-dimensional mixture."""
    if gm.dim != 1:
        raise ValueError("The cumulative distribution is only defined for one-dimensional mixtures.")
    x = np.asarray(x, dtype=np.float64)
    z = (x[..., np.newaxis] - gm.means[:, 0]) / np.sqrt(gm.vars)
    return special.ndtr(z) @ gm.weights
