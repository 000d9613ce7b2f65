"""
# noqa: SS01
Forward and Reverse Simulation
==============================

Exact forward sampling through the transition kernel, Euler-Maruyama integration of the reverse-time SDE and
fixed-step RK4 integration of the probability-flow ODE. Sample paths are processed in fixed blocks
(:py:data:`difftime.streams.BLOCK_SIZE`), each with its own counter-based random substream, so the output does not
depend on how many workers run the blocks.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from difftime.base import as_states, check_finite, map_jobs
from difftime.mixture import GaussianMixture, draw_data, sample, target_dim
from difftime.options import OPTIONS, T_MIN
from difftime.sde import DiffusionSpec
from difftime.streams import Streams, as_streams, blocks
from difftime.typing import ScoreFunction


class PathBatch(NamedTuple):
    """
    Final states of a batch of simulated paths.

    Attributes
    ----------
    states : array, (n, dim)
        States at the end of the integration.
    nfe : int
        Number of score evaluations per path.
    times : array
        The integration grid.
    """

    states: np.ndarray
    nfe: int
    times: np.ndarray


def forward_sample(
    spec: DiffusionSpec, gm: GaussianMixture | np.ndarray, T: float, n: int, rng: Streams | int | None = None
) -> PathBatch:
    """
    Draw exact samples of the forward process at time `T`.

    Parameters
    ----------
    spec : DiffusionSpec
        The forward process.
    gm : GaussianMixture or array
        The data distribution, analytic or as a sample set.
    T : float
        Time, nonnegative. At 0, the data draws are returned.
    n : int
        Number of samples.
    rng : Streams or int, optional
        Randomness.

    Returns
    -------
    PathBatch
        ``x_T = mean_scale x0 + sqrt(var) eps``, with ``nfe = 0``.
    """
    m, s = spec.transition(T)
    streams = as_streams(rng).spawn("forward")
    dim = target_dim(gm)

    def _block(item):
        b, sl = item
        gen = streams.generator(b)
        size = sl.stop - sl.start
        x0 = draw_data(gm, size, gen)
        return m * x0 + np.sqrt(s) * gen.standard_normal((size, dim))

    states = np.concatenate(map_jobs(_block, list(enumerate(blocks(n)))))
    return PathBatch(states, 0, np.array([float(T)]))


def probability_flow(spec: DiffusionSpec, score: ScoreFunction, x: np.ndarray, t: float) -> np.ndarray:
    """Velocity of the probability-flow ODE, ``alpha(t) x - g(t)^2 s(x, t) / 2``."""
    alpha, g = spec.drift_diffusion(t)
    return alpha * x - 0.5 * g**2 * score(x, t)


def reverse_sample(
    spec: DiffusionSpec,
    score: ScoreFunction,
    init: GaussianMixture,
    T: float,
    steps: int,
    n: int,
    rng: Streams | int | None = None,
) -> PathBatch:
    """
    Integrate the reverse-time SDE with Euler-Maruyama.

    Parameters
    ----------
    spec : DiffusionSpec
        The forward process.
    score : ScoreFunction
        Score estimate (trained network or oracle).
    init : GaussianMixture
        Distribution of the states at time `T`.
    T : float
        Diffusion time, larger than the ``t_min`` option.
    steps : int
        Number of steps. The grid is uniform from `T` down to ``t_min``, so the score is never evaluated below it.
    n : int
        Number of paths.
    rng : Streams or int, optional
        Randomness. Initial states use counter ``(block, 0)``, the noise of step k uses ``(block, k + 1)``.

    Returns
    -------
    PathBatch
        States at ``t_min``, with ``nfe = steps``.

    Raises
    ------
    NonFiniteError
        If a state stops being finite, with the step index.
    """
    t_min = OPTIONS[T_MIN]
    if steps < 1 or not T > t_min:
        raise ValueError(f"Reverse sampling needs steps >= 1 and T > t_min, got steps={steps}, T={T}.")
    times = np.linspace(T, t_min, steps + 1)
    streams = as_streams(rng).spawn("reverse")

    def _block(item):
        b, sl = item
        x = sample(init, sl.stop - sl.start, streams.generator(b, 0))
        for k in range(steps):
            t = times[k]
            h = times[k] - times[k + 1]
            alpha, g = spec.drift_diffusion(t)
            drift = alpha * x - g**2 * score(x, t)
            x = x - drift * h + g * np.sqrt(h) * streams.normal(x.shape, b, k + 1)
            check_finite(x, "reverse-diffusion state", step=k, time=t)
        return x

    states = np.concatenate(map_jobs(_block, list(enumerate(blocks(n)))))
    return PathBatch(states, steps, times)


def rk4_step(field, x: np.ndarray, t: float, h: float) -> np.ndarray:
    """One classical Runge-Kutta step of ``dx/dt = field(x, t)``."""
    k1 = field(x, t)
    k2 = field(x + 0.5 * h * k1, t + 0.5 * h)
    k3 = field(x + 0.5 * h * k2, t + 0.5 * h)
    k4 = field(x + h * k3, t + h)
    return x + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)


def ode_solve(
    spec: DiffusionSpec, score: ScoreFunction, x_start: np.ndarray, t_from: float, t_to: float, steps: int
) -> tuple[np.ndarray, int]:
    """
    Integrate the probability-flow ODE with fixed-step RK4.

    Parameters
    ----------
    spec : DiffusionSpec
        The forward process.
    score : ScoreFunction
        Score estimate.
    x_start : array, (n, dim)
        States at `t_from`.
    t_from, t_to : float
        Integration bounds, in either order.
    steps : int
        Number of steps.

    Returns
    -------
    states : array, (n, dim)
        States at `t_to`.
    nfe : int
        ``4 * steps`` score evaluations.
    """
    if steps < 1:
        raise ValueError(f"Need at least one step, got {steps}.")
    x_start = as_states(x_start)
    times = np.linspace(t_from, t_to, steps + 1)

    def _field(x, t):
        return probability_flow(spec, score, x, t)

    def _block(sl):
        x = x_start[sl]
        for k in range(steps):
            x = rk4_step(_field, x, times[k], times[k + 1] - times[k])
            check_finite(x, "probability-flow state", step=k, time=times[k + 1])
        return x

    return np.concatenate(map_jobs(_block, blocks(x_start.shape[0]))), 4 * steps
