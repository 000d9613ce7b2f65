"""
# noqa: SS01
Affine Diffusion Processes
==========================

The forward processes are affine SDEs ``dx = alpha(t) x dt + g(t) dw`` whose transition kernels are isotropic
Gaussians, ``p(x_t | x_0) = N(mean_scale(t) x_0, var(t) I)``. All coefficients are evaluated in closed form and
accept either a scalar time or an array of times.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from difftime.base import Parametrizable
from difftime.mixture import GaussianMixture
from difftime.typing import Family


class TransitionKernel(NamedTuple):
    """Scale of the initial state and isotropic variance of the transition kernel at some time."""

    mean_scale: float | np.ndarray
    var: float | np.ndarray


def _check_time(t: float | np.ndarray) -> float | np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if np.any(~np.isfinite(t)) or np.any(t < 0):
        raise ValueError(f"Diffusion time must be finite and nonnegative, got {t}.")
    return t if t.ndim else float(t)


class DiffusionSpec(Parametrizable):
    r"""
    Base class for the affine diffusion families.

    Subclasses define the closed-form ``_alpha``, ``_g2`` and ``_kernel``. Use :py:meth:`from_config` to build the
    right subclass from a family name, as found in a run manifest.

    Parameters
    ----------
    dim : int
        Dimension of the state.
    \*\*params
        Family parameters.
    """

    family: Family

    def __init__(self, *, dim: int = 1, **params):
        if int(dim) < 1:
            raise ValueError(f"The state dimension must be positive, got {dim}.")
        super().__init__(dim=int(dim), **{k: float(v) for k, v in params.items()})

    @classmethod
    def from_config(cls, family: str | Family, params: dict | None = None, dim: int = 1) -> DiffusionSpec:
        """
        Create the diffusion of the given family.

        Parameters
        ----------
        family : {'VP', 'VE', 'VE_TOY'}
            The family name.
        params : dict, optional
            Family parameters. Missing entries take the family defaults.
        dim : int
            Dimension of the state.

        Returns
        -------
        DiffusionSpec
        """
        family = Family(family)
        for sub in (VPDiffusion, VEDiffusion, VEToyDiffusion):
            if sub.family is family:
                return sub(dim=dim, **(params or {}))
        raise NotImplementedError(f"No diffusion implemented for family {family}.")

    def to_config(self) -> dict:
        """The `family`, `params` and `dim` keys describing this process."""
        params = {k: v for k, v in self.items() if k != "dim"}
        return {"family": self.family.value, "params": params, "dim": self.dim}

    def _alpha(self, t):
        raise NotImplementedError

    def _g2(self, t):
        raise NotImplementedError

    def _kernel(self, t) -> TransitionKernel:
        raise NotImplementedError

    def _decay(self, T):
        raise NotImplementedError

    def drift_diffusion(self, t: float | np.ndarray) -> tuple:
        """Drift rate alpha(t) and diffusion coefficient g(t)."""
        t = _check_time(t)
        return self._alpha(t), np.sqrt(self._g2(t))

    def transition(self, t: float | np.ndarray) -> TransitionKernel:
        """Transition kernel from time 0 to time `t`."""
        return self._kernel(_check_time(t))


class VPDiffusion(DiffusionSpec):
    r"""
    Variance preserving process.

    The rate is linear, :math:`\beta(t) = \beta_0 + (\beta_1 - \beta_0) t`, with :math:`\alpha = -\beta/2` and
    :math:`g = \sqrt{\beta}`. The kernel keeps :math:`m^2 + s = 1`.

    Parameters
    ----------
    beta0, beta1 : float
        Rates at t=0 and t=1, with ``0 < beta0 < beta1``.
    dim : int
        Dimension of the state.
    """

    family = Family.VP

    def __init__(self, *, beta0: float = 0.1, beta1: float = 20.0, dim: int = 1):
        if not 0 < beta0 < beta1:
            raise ValueError(f"VP rates must satisfy 0 < beta0 < beta1, got beta0={beta0}, beta1={beta1}.")
        super().__init__(dim=dim, beta0=beta0, beta1=beta1)

    def beta(self, t):
        """Instantaneous rate."""
        return self.beta0 + (self.beta1 - self.beta0) * t

    def beta_integral(self, t):
        """Integral of the rate over [0, t]."""
        return self.beta0 * t + 0.5 * (self.beta1 - self.beta0) * t**2

    def _alpha(self, t):
        return -0.5 * self.beta(t)

    def _g2(self, t):
        return self.beta(t)

    def _kernel(self, t):
        B = self.beta_integral(t)
        return TransitionKernel(np.exp(-0.5 * B), -np.expm1(-B))

    def _decay(self, T):
        return self.beta_integral(T)


class VEDiffusion(DiffusionSpec):
    r"""
    Variance exploding process.

    The noise scale grows geometrically, :math:`\sigma^2(t) = \sigma_{min}^2 (\sigma_{max}/\sigma_{min})^{2t}`,
    with :math:`\alpha = 0` and :math:`g^2 = d\sigma^2/dt`.

    Parameters
    ----------
    sigma_min, sigma_max : float
        Noise scales at t=0 and t=1, with ``0 < sigma_min < sigma_max``.
    dim : int
        Dimension of the state.
    """

    family = Family.VE

    def __init__(self, *, sigma_min: float = 0.01, sigma_max: float = 50.0, dim: int = 1):
        if not 0 < sigma_min < sigma_max:
            raise ValueError(f"VE scales must satisfy 0 < sigma_min < sigma_max, got {sigma_min}, {sigma_max}.")
        super().__init__(dim=dim, sigma_min=sigma_min, sigma_max=sigma_max)

    @property
    def _log_ratio(self):
        return 2 * np.log(self.sigma_max / self.sigma_min)

    def sigma2(self, t):
        """Noise variance sigma^2(t)."""
        return self.sigma_min**2 * np.exp(t * self._log_ratio)

    def _alpha(self, t):
        return np.zeros_like(t)

    def _g2(self, t):
        return self.sigma2(t) * self._log_ratio

    def _kernel(self, t):
        return TransitionKernel(np.ones_like(t), self.sigma_min**2 * np.expm1(t * self._log_ratio))

    def _decay(self, T):
        return self._kernel(T).var


class VEToyDiffusion(DiffusionSpec):
    r"""
    Variance exploding toy process, :math:`dx = \sigma^t dw`.

    The kernel variance is :math:`(\sigma^{2t} - 1) / (2 \ln \sigma)`.

    Parameters
    ----------
    sigma_base : float
        Base of the exponential diffusion coefficient, larger than 1.
    dim : int
        Dimension of the state.
    """

    family = Family.VE_TOY

    def __init__(self, *, sigma_base: float = 10.0, dim: int = 1):
        if not sigma_base > 1:
            raise ValueError(f"The toy process needs sigma_base > 1, got {sigma_base}.")
        super().__init__(dim=dim, sigma_base=sigma_base)

    def _alpha(self, t):
        return np.zeros_like(t)

    def _g2(self, t):
        return self.sigma_base ** (2 * t)

    def _kernel(self, t):
        log_s = np.log(self.sigma_base)
        return TransitionKernel(np.ones_like(t), np.expm1(2 * t * log_s) / (2 * log_s))

    def _decay(self, T):
        return self._kernel(T).var


def drift_diffusion(spec: DiffusionSpec, t: float | np.ndarray) -> tuple:
    """
    Drift rate and diffusion coefficient.

    Parameters
    ----------
    spec : DiffusionSpec
        The process.
    t : float or array
        Time(s), nonnegative.

    Returns
    -------
    alpha, g
        The drift is ``alpha(t) * x``, the noise is ``g(t) dw``.

    Examples
    --------
    >>> from difftime.sde import VEToyDiffusion, drift_diffusion
    >>> drift_diffusion(VEToyDiffusion(sigma_base=10), 0.0)
    (0.0, 1.0)
    """
    alpha, g = spec.drift_diffusion(t)
    if np.ndim(alpha) == 0:
        return float(alpha), float(g)
    return alpha, g


def transition(spec: DiffusionSpec, t: float | np.ndarray) -> TransitionKernel:
    """
    Closed-form transition kernel from time 0 to `t`.

    Examples
    --------
    >>> from difftime.sde import VEToyDiffusion, transition
    >>> round(transition(VEToyDiffusion(sigma_base=10), 0.5).var, 4)
    1.9543
    """
    kern = spec.transition(t)
    if np.ndim(kern.var) == 0:
        return TransitionKernel(float(kern.mean_scale), float(kern.var))
    return kern


def pnoise(spec: DiffusionSpec, T: float) -> GaussianMixture:
    """
    Simple noise distribution from which reverse diffusion is started.

    VP processes use N(0, I) whatever `T`. VE processes use a centered Gaussian with the kernel variance at `T`.

    Parameters
    ----------
    spec : DiffusionSpec
        The process.
    T : float
        Diffusion time, positive.

    Returns
    -------
    GaussianMixture
        A single-component mixture.
    """
    if not T > 0:
        raise ValueError(f"The noise distribution needs a positive diffusion time, got {T}.")
    var = 1.0 if spec.family is Family.VP else transition(spec, T).var
    return GaussianMixture.single(np.zeros(spec.dim), var)


def decay_variable(spec: DiffusionSpec, T: float | np.ndarray) -> float | np.ndarray:
    """
    Quantity that controls how fast KL(p(x, T) || p_noise) vanishes.

    The KL decays like ``exp(-decay_variable)`` for VP processes (the integrated rate) and like
    ``1 / decay_variable`` for VE processes (the kernel variance, ``sigma^2(T) - sigma^2(0)``).
    """
    return spec._decay(_check_time(T))
