"""
# noqa: SS01
Typing Utilities
===================================
"""

from __future__ import annotations

from enum import Enum
from typing import NamedTuple, Protocol

import numpy as np


class Family(str, Enum):
    """
    Families of affine diffusion processes.

    The string value is what gets stored in run manifests and in the attributes of outputs.
    """

    VP = "VP"
    """Variance preserving: linear rate schedule, stationary N(0, I) limit.

       Parameters : ``beta0``, ``beta1``.
    """
    VE = "VE"
    """Variance exploding: geometric noise scale between ``sigma_min`` and ``sigma_max``.

       Parameters : ``sigma_min``, ``sigma_max``.
    """
    VE_TOY = "VE_TOY"
    """Variance exploding toy process, ``dx = sigma_base**t dw``.

       Parameters : ``sigma_base``.
    """


class LambdaMode(str, Enum):
    """Weighting of the denoising score-matching loss."""

    G_SQUARED = "g_squared"
    """Likelihood weighting, lambda(t) = g(t)**2."""
    UNIT = "unit"
    """Uniform weighting, lambda(t) = 1."""


class Estimate(NamedTuple):
    """A Monte Carlo estimate and its standard error."""

    value: float
    se: float

    def within(self, target: float, nse: float = 3.0) -> bool:
        """Whether `target` lies within `nse` standard errors of the estimate."""
        return bool(abs(self.value - target) <= nse * self.se)


class ScoreFunction(Protocol):
    """
    Anything that evaluates a score s(x, t) on a batch.

    ``x`` has shape (n, dim); ``t`` is a scalar or has shape (n,). The output has shape (n, dim).
    Implementations must be safe to call concurrently.
    """

    def __call__(self, x: np.ndarray, t: float | np.ndarray) -> np.ndarray:  # numpydoc ignore=GL08
        ...


class SampleMode(str, Enum):
    """Distribution the reverse process starts from when sampling."""

    BASELINE = "baseline"
    """The noise distribution."""
    BRIDGED = "bridged"
    """The auxiliary model fitted at the diffusion time."""


class BpdMode(str, Enum):
    """Distribution scoring the probability-flow endpoints in likelihood runs."""

    BASELINE = "baseline"
    """The noise distribution."""
    BRIDGED_CONCURRENT = "bridged-concurrent"
    """The auxiliary model fitted on forward-process samples."""
    BRIDGED_SEQUENTIAL = "bridged-sequential"
    """The auxiliary model refitted on the probability-flow images of data samples."""
