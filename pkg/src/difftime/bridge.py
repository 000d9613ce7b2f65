"""
# noqa: SS01
Auxiliary Bridge
================

An auxiliary mixture fitted by maximum likelihood to samples of the diffused data at time T replaces the noise
distribution as the starting point of the reverse process. Mixtures of increasing size are fitted with EM and the
size is chosen by the Bayesian information criterion.
"""

from __future__ import annotations

import logging
import warnings
from collections.abc import Sequence
from typing import NamedTuple

import numpy as np
from scipy.cluster.vq import kmeans2

from difftime.base import Parametrizable, as_states, map_jobs
from difftime.elbo import estimate_kl
from difftime.mixture import GaussianMixture, _eval, diffuse
from difftime.sde import DiffusionSpec, pnoise
from difftime.simulation import PathBatch, forward_sample, reverse_sample
from difftime.streams import Streams, as_streams
from difftime.typing import Estimate, ScoreFunction

logger = logging.getLogger("difftime")

# Smallest component variance allowed by the M-step.
VAR_FLOOR = 1e-6
# Components whose total responsibility falls below this are considered empty.
_EMPTY_MASS = 1e-8
# Largest decrease of the mean log-likelihood attributed to rounding.
_DECREASE_TOL = 1e-9


class AuxFitResult(Parametrizable):
    """
    A fitted auxiliary mixture and its fit metadata.

    Parameters
    ----------
    model : GaussianMixture
        The fitted mixture.
    bic : float
        Bayesian information criterion of the fit.
    loglik_trace : array
        Mean log-likelihood per sample after each EM iteration, starting from the initialization.
        When an empty component was reseeded, the trace restarts at the last reseed.
    fit_samples : int
        Number of samples the mixture was fitted on.
    iterations : int
        EM iterations of the retained run.
    restarts : int
        Number of EM runs, the best of which is retained.
    seed : int
        Master seed of the fit.
    reseeds : int
        Number of empty-component reseeds in the retained run.
    excluded : int
        Samples left out of the fit set because they were not finite.
    """

    def __init__(
        self,
        model: GaussianMixture,
        bic: float,
        loglik_trace,
        fit_samples: int,
        iterations: int = 0,
        restarts: int = 1,
        seed: int = 0,
        reseeds: int = 0,
        excluded: int = 0,
    ):
        super().__init__(
            model=model,
            bic=float(bic),
            loglik_trace=np.asarray(loglik_trace, dtype=np.float64),
            fit_samples=int(fit_samples),
            iterations=int(iterations),
            restarts=int(restarts),
            seed=int(seed),
            reseeds=int(reseeds),
            excluded=int(excluded),
        )

    @property
    def n_components(self) -> int:
        """Number of components of the fitted mixture."""
        return self.model.n_components

    @property
    def loglik(self) -> float:
        """Total log-likelihood of the fit set under the fitted mixture."""
        return float(self.loglik_trace[-1] * self.fit_samples)

    def metadata(self) -> dict:
        """The fit-metadata block written next to the mixture parameters."""
        return {
            "k": self.n_components,
            "bic": self.bic,
            "iterations": self.iterations,
            "restarts": self.restarts,
            "seed": self.seed,
            "fit_samples": self.fit_samples,
            "reseeds": self.reseeds,
            "excluded": self.excluded,
        }


class AuxBudget(NamedTuple):
    """Sizes of an auxiliary fit and of the divergence estimates made with it."""

    n_fit: int = 8192
    k_range: tuple[int, ...] = tuple(range(1, 9))
    iters: int = 500
    restarts: int = 3
    n_mc: int = 4096


def n_parameters(k: int, dim: int) -> int:
    """Free parameters of an isotropic mixture: weights, means and one variance per component."""
    return k * (2 * dim + 1) - 1


def bic(loglik: float, k: int, dim: int, n: int) -> float:
    """Bayesian information criterion, ``-2 loglik + n_parameters ln(n)``."""
    return -2 * loglik + n_parameters(k, dim) * np.log(n)


def draw_fit_set(
    spec: DiffusionSpec, data: GaussianMixture | np.ndarray, T: float, n: int, rng: Streams | int | None = None
) -> np.ndarray:
    """
    Draw exact samples of the diffused data at time `T`, to fit an auxiliary model on.

    Parameters
    ----------
    spec : DiffusionSpec
        The forward process.
    data : GaussianMixture or array
        The data distribution, analytic or as a finite sample set.
    T : float
        Diffusion time, positive.
    n : int
        Number of samples.
    rng : Streams or int, optional
        Randomness.

    Returns
    -------
    array, (n, dim)
    """
    if not T > 0:
        raise ValueError(f"The fit set needs a positive diffusion time, got {T}.")
    return forward_sample(spec, data, T, n, as_streams(rng).spawn("fit-set")).states


def _initial_mixture(x: np.ndarray, k: int, gen: np.random.Generator) -> GaussianMixture:
    """k-means++ seeding followed by a few Lloyd iterations."""
    n, d = x.shape
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        centroids, labels = kmeans2(x, k, minit="++", seed=gen)
    counts = np.bincount(labels, minlength=k)
    sq = np.sum((x - centroids[labels]) ** 2, axis=1)
    spread = np.bincount(labels, weights=sq, minlength=k)
    fallback = max(np.var(x, axis=0).mean(), VAR_FLOOR)
    variances = np.where(counts > 1, spread / (d * np.maximum(counts, 1)), fallback)
    weights = (counts + 1) / (n + k)
    return GaussianMixture(weights / weights.sum(), centroids, np.maximum(variances, VAR_FLOOR))


def _m_step(x: np.ndarray, resp: np.ndarray, logp: np.ndarray, previous: GaussianMixture) -> tuple[GaussianMixture, int]:
    """Maximization step for isotropic components. Empty components are moved to the worst-explained sample."""
    n, d = x.shape
    nk = resp.sum(axis=0)
    empty = nk < _EMPTY_MASS
    safe = np.where(empty, 1.0, nk)
    means = (resp.T @ x) / safe[:, np.newaxis]
    sq = np.sum((x[:, np.newaxis, :] - means[np.newaxis]) ** 2, axis=2)
    variances = np.maximum(np.sum(resp * sq, axis=0) / (d * safe), VAR_FLOOR)
    weights = nk / n
    if empty.any():
        worst = np.argsort(logp)[: empty.sum()]
        typical = variances[~empty].mean() if (~empty).any() else previous.vars.mean()
        for c, i in zip(np.flatnonzero(empty), worst):
            logger.info("Empty mixture component %d reseeded at sample %d.", c, i)
            means[c] = x[i]
            variances[c] = typical
            weights[c] = 1 / n
    return GaussianMixture(weights / weights.sum(), means, variances), int(empty.sum())


def _run_em(x: np.ndarray, gm: GaussianMixture, iters: int, tol: float) -> tuple[GaussianMixture, list, int, int]:
    (logp, _, resp), _ = _eval(gm, x)
    trace = [logp.mean()]
    reseeds = 0
    it = 0
    converged = iters == 0
    for it in range(1, iters + 1):
        new, nreseed = _m_step(x, resp, logp, gm)
        (logp, _, resp), _ = _eval(new, x)
        if nreseed:
            reseeds += nreseed
            gm, trace = new, [logp.mean()]
            continue
        if logp.mean() < trace[-1] - _DECREASE_TOL:
            # the variance floor can break monotonicity
            warnings.warn(
                f"EM log-likelihood with {gm.n_components} components decreased by {trace[-1] - logp.mean():.3g} "
                f"at iteration {it}, keeping the previous model."
            )
            it -= 1
            converged = True
            break
        gm = new
        trace.append(logp.mean())
        if trace[-1] - trace[-2] < tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"EM with {gm.n_components} components stopped at the iteration cap ({iters}).")
    return gm, trace, it, reseeds


def fit_em(
    samples: np.ndarray,
    k: int,
    iters: int = 500,
    rng: Streams | int | None = None,
    restarts: int = 3,
    tol: float = 1e-8,
) -> AuxFitResult:
    """
    Fit a k-component isotropic Gaussian mixture by expectation-maximization.

    Parameters
    ----------
    samples : array, (n, dim)
        The fit set, at least ``10 k`` samples.
    k : int
        Number of components.
    iters : int
        Maximal number of EM iterations per run.
    rng : Streams or int, optional
        Randomness of the k-means++ initialization. Each restart uses its own substream.
    restarts : int
        Number of independently initialized runs; the one with the largest likelihood is kept.
    tol : float
        The run stops when the mean log-likelihood gains less than this in an iteration.

    Returns
    -------
    AuxFitResult
    """
    x = as_states(samples)
    n, d = x.shape
    if k < 1 or restarts < 1:
        raise ValueError(f"Need k >= 1 and at least one run, got k={k}, restarts={restarts}.")
    if n < 10 * k:
        raise ValueError(f"Fitting {k} components needs at least {10 * k} samples, got {n}.")
    streams = as_streams(rng)
    best = None
    for r in range(restarts):
        init = _initial_mixture(x, k, streams.spawn("em", k).generator(r))
        gm, trace, it, reseeds = _run_em(x, init, iters, tol)
        if best is None or trace[-1] > best[1][-1]:
            best = (gm, trace, it, reseeds)
    gm, trace, it, reseeds = best
    return AuxFitResult(
        model=gm,
        bic=bic(trace[-1] * n, k, d, n),
        loglik_trace=trace,
        fit_samples=n,
        iterations=it,
        restarts=restarts,
        seed=streams.seed,
        reseeds=reseeds,
    )


def select_bic(
    samples: np.ndarray,
    k_range: Sequence[int] = tuple(range(1, 9)),
    iters: int = 500,
    rng: Streams | int | None = None,
    restarts: int = 3,
    workers: int | None = None,
) -> AuxFitResult:
    """
    Fit mixtures of every size in `k_range` and return the one with the smallest BIC.

    Sizes needing more samples than available are skipped. Equal criteria are resolved in favour of the smaller
    mixture. The fits are independent and run concurrently with more than one worker.
    """
    x = as_states(samples)
    ks = sorted({int(k) for k in k_range if 10 * k <= x.shape[0]})
    if not ks:
        raise ValueError(f"No mixture size in {list(k_range)} can be fitted on {x.shape[0]} samples.")
    fits = map_jobs(lambda k: fit_em(x, k, iters, rng, restarts), ks, workers)
    best = min(fits, key=lambda f: (f.bic, f.n_components))
    logger.debug("BIC by size: %s, selected k=%d.", {f.n_components: round(f.bic, 2) for f in fits}, best.n_components)
    return best


def bridged_reverse_sample(
    spec: DiffusionSpec,
    score: ScoreFunction,
    aux: GaussianMixture,
    T: float,
    steps: int,
    n: int,
    rng: Streams | int | None = None,
) -> PathBatch:
    """Reverse diffusion started from the auxiliary model instead of the noise distribution."""
    return reverse_sample(spec, score, aux, T, steps, n, rng)


class BridgeCheck(NamedTuple):
    """Divergences of the diffused data to the fitted auxiliary model and to the noise distribution."""

    kl_aux: Estimate
    kl_noise: Estimate
    holds: bool


def prop4_check(
    spec: DiffusionSpec, gm: GaussianMixture, T: float, budget: AuxBudget = AuxBudget(), rng: Streams | int | None = None
) -> BridgeCheck:
    """
    Check that the fitted auxiliary model is no farther from the diffused data than the noise distribution.

    The noise distribution is a one-component mixture, so it belongs to the searched family as soon as
    ``1`` is in ``budget.k_range``; the maximum-likelihood fit can then only be worse by sampling error.
    Both divergences are estimated on the same draws.

    Returns
    -------
    BridgeCheck
        ``holds`` is true when ``kl_aux <= kl_noise`` plus two combined standard errors.
    """
    if 1 not in budget.k_range:
        raise ValueError("The searched mixture sizes must include a single component.")
    streams = as_streams(rng)
    fit = select_bic(
        draw_fit_set(spec, gm, T, budget.n_fit, streams), budget.k_range, budget.iters, streams, budget.restarts
    )
    p_T = diffuse(gm, spec, T)
    kl_streams = streams.spawn("prop4")
    kl_aux = estimate_kl(p_T, fit.model, budget.n_mc, kl_streams)
    kl_noise = estimate_kl(p_T, pnoise(spec, T), budget.n_mc, kl_streams)
    holds = kl_aux.value <= kl_noise.value + 2 * np.hypot(kl_aux.se, kl_noise.se)
    return BridgeCheck(kl_aux, kl_noise, bool(holds))
