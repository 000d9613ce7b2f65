"""
# noqa: SS01
Probability-Flow Likelihood
===========================

Exact log-likelihood through the instantaneous change of variables along the probability-flow ODE:
``log p(x0) = log q(x_T) + int div v(x_t, t) dt``, where ``v`` is the probability-flow velocity and ``q`` the
distribution the reverse process starts from. The divergence is computed coordinate by coordinate with central
finite differences, so the cost grows with the dimension and is limited to small states.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np
import xarray as xr

from difftime.base import as_states, map_jobs
from difftime.bridge import AuxFitResult, select_bic
from difftime.formatting import update_difftime_history
from difftime.mixture import GaussianMixture, log_density
from difftime.options import OPTIONS, T_MIN
from difftime.sde import DiffusionSpec
from difftime.simulation import probability_flow
from difftime.streams import Streams, blocks
from difftime.typing import ScoreFunction

# Largest state dimension handled with exact divergences.
MAX_DIM = 8
# Relative step of the divergence finite differences.
FD_STEP = 1e-4


def divergence(spec: DiffusionSpec, score: ScoreFunction, x: np.ndarray, t: float) -> np.ndarray:
    """
    Divergence of the probability-flow velocity at each point, by central finite differences.

    The step is ``1e-4 (1 + max|x|)`` for each point.
    """
    n, d = x.shape
    h = FD_STEP * (1 + np.max(np.abs(x), axis=1))
    out = np.zeros(n)
    for a in range(d):
        shift = np.zeros_like(x)
        shift[:, a] = h
        plus = probability_flow(spec, score, x + shift, t)[:, a]
        minus = probability_flow(spec, score, x - shift, t)[:, a]
        out += (plus - minus) / (2 * h)
    return out


def _integrate(
    spec: DiffusionSpec, score: ScoreFunction, x: np.ndarray, times: np.ndarray, with_divergence: bool
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """RK4 on the states and, optionally, the divergence integral. Points going non-finite are frozen and flagged."""
    n = x.shape[0]
    acc = np.zeros(n)
    failed = np.zeros(n, dtype=bool)

    def _field(z, t):
        v = probability_flow(spec, score, z, t)
        return v, (divergence(spec, score, z, t) if with_divergence else np.zeros(z.shape[0]))

    with np.errstate(all="ignore"):
        for k in range(times.size - 1):
            t, h = times[k], times[k + 1] - times[k]
            ok = ~failed
            if not ok.any():
                break
            z = x[ok]
            k1, d1 = _field(z, t)
            k2, d2 = _field(z + 0.5 * h * k1, t + 0.5 * h)
            k3, d3 = _field(z + 0.5 * h * k2, t + 0.5 * h)
            k4, d4 = _field(z + h * k3, t + h)
            x[ok] = z + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
            acc[ok] += (h / 6) * (d1 + 2 * d2 + 2 * d3 + d4)
            bad = ok & ~(np.isfinite(x).all(axis=1) & np.isfinite(acc))
            failed |= bad
            x[bad] = 0.0
    acc[failed] = np.nan
    x[failed] = np.nan
    return x, acc, failed


@update_difftime_history
def logdensity_ode(
    spec: DiffusionSpec, score: ScoreFunction, init_density: GaussianMixture, x0_batch, T: float, steps: int
) -> xr.Dataset:
    """
    Log-likelihood of points under the model defined by a score and an initial distribution.

    Parameters
    ----------
    spec : DiffusionSpec
        The forward process.
    score : ScoreFunction
        Score estimate.
    init_density : GaussianMixture
        Distribution of the reverse process at `T`: the noise distribution or an auxiliary model.
    x0_batch : array, (n, dim)
        The points.
    T : float
        Diffusion time.
    steps : int
        RK4 steps from ``t_min`` to `T`.

    Returns
    -------
    xr.Dataset
        Along ``point``: ``logp``, ``bpd``, ``divergence_integral``, ``endpoint_logq`` and ``failed``.
        ``logp = endpoint_logq + divergence_integral``. Attributes ``nfe`` (score calls per point), ``t_min``,
        ``steps``, ``T`` and ``dim``. The density is that of the marginal at ``t_min``.
        Points whose trajectory stops being finite are flagged and get NaN values; the others are unaffected.
    """
    dim = init_density.dim
    x = as_states(x0_batch, dim)
    if steps < 1:
        raise ValueError(f"Need at least one step, got {steps}.")
    if dim > MAX_DIM:
        raise ValueError(f"Exact divergences are limited to dimension {MAX_DIM}, got {dim}.")
    t_min = OPTIONS[T_MIN]
    if not T > t_min:
        raise ValueError(f"The diffusion time must exceed t_min={t_min}, got {T}.")
    times = np.linspace(t_min, T, steps + 1)

    def _block(sl):
        return _integrate(spec, score, x[sl].copy(), times, True)

    parts = map_jobs(_block, blocks(x.shape[0]))
    xT = np.concatenate([p[0] for p in parts])
    div = np.concatenate([p[1] for p in parts])
    failed = np.concatenate([p[2] for p in parts])
    endpoint = np.full(x.shape[0], np.nan)
    if (~failed).any():
        endpoint[~failed] = log_density(init_density, xT[~failed])
    logp = endpoint + div
    ds = xr.Dataset(
        {
            "logp": ("point", logp),
            "divergence_integral": ("point", div),
            "endpoint_logq": ("point", endpoint),
            "failed": ("point", failed),
        },
        coords={"point": np.arange(x.shape[0])},
        attrs={"nfe": 4 * steps * (1 + 2 * dim), "t_min": t_min, "steps": steps, "T": float(T), "dim": dim},
    )
    ds["bpd"] = bpd(ds)
    ds.logp.attrs["units"] = "nats"
    ds.bpd.attrs["units"] = "bits/dim"
    return ds


def bpd(result: xr.Dataset | np.ndarray | float, dim: int | None = None):
    """
    Convert log-likelihoods to bits per dimension, ``-logp / (dim ln 2)``.

    Parameters
    ----------
    result : xr.Dataset or array-like
        A likelihood result (its ``logp`` and ``dim`` attribute are used) or log-likelihoods in nats.
    dim : int, optional
        State dimension, required when `result` is not a dataset.

    Examples
    --------
    >>> import numpy as np
    >>> from difftime.likelihood import bpd
    >>> float(bpd(-np.log(2), dim=1))
    1.0
    """
    if isinstance(result, xr.Dataset):
        return -result.logp / (result.attrs["dim"] * np.log(2))
    if dim is None or dim < 1:
        raise ValueError("The state dimension is needed to convert log-likelihoods.")
    return -np.asarray(result, dtype=np.float64) / (dim * np.log(2))


def push_forward(
    spec: DiffusionSpec, score: ScoreFunction, data_samples, T: float, steps: int
) -> tuple[np.ndarray, np.ndarray]:
    """
    Transport samples from ``t_min`` to `T` along the probability-flow ODE.

    Returns
    -------
    states : array, (n, dim)
        The endpoints, NaN for failed points.
    failed : array of bool, (n,)
        Points whose trajectory stopped being finite.
    """
    x = as_states(data_samples)
    times = np.linspace(OPTIONS[T_MIN], T, steps + 1)
    parts = map_jobs(lambda sl: _integrate(spec, score, x[sl].copy(), times, False), blocks(x.shape[0]))
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[2] for p in parts])


def sequential_refit(
    spec: DiffusionSpec,
    score: ScoreFunction,
    data_samples,
    T: float,
    steps: int,
    k_range: Sequence[int] = tuple(range(1, 9)),
    iters: int = 500,
    rng: Streams | int | None = None,
) -> AuxFitResult:
    """
    Fit the auxiliary mixture on the ODE images of data samples.

    The model then matches the distribution the likelihood computation actually lands on, which depends on the
    trained score. Points whose trajectory fails are left out; their count is stored as ``excluded``.
    """
    if steps < 1:
        raise ValueError(f"Need at least one step, got {steps}.")
    ends, failed = push_forward(spec, score, data_samples, T, steps)
    fit = select_bic(ends[~failed], k_range, iters, rng)
    fit["excluded"] = int(failed.sum())
    return fit
