"""
# noqa: SS01
ELBO Decomposition
==================

Monte Carlo estimators of the terms of the evidence lower bound of a diffusion model truncated at time T:

- ``I``: score-matching loss of a score function, ``1/2 int g^2 E|s - grad log p(.|x0)|^2``;
- ``K``: the same with the exact score, the unavoidable part of ``I``;
- ``G = I - K``: the gap caused by an imperfect score;
- ``R``: ``1/2 int E[g^2 |grad log p(.|x0)|^2 - 2 f . grad log p(.|x0)]``, independent of the score;
- ``KL``: divergence between the marginal at T and the distribution the reverse process starts from.

Time integrals use the midpoint rule in log-time over ``[t_min, T]``; at each node, the expectation is a Monte Carlo average over
``(x0, eps)``. The same ``x0`` draws and the same noise per node index are used for every term and every T, so
differences (``G``) and comparisons across T benefit from common random numbers. Standard errors are computed from
the per-sample path integrals, which accounts for ``x0`` being shared by all nodes.
"""

from __future__ import annotations

import logging
import warnings
from typing import NamedTuple

import numpy as np
import statsmodels.api as sm
import xarray as xr

from difftime.formatting import update_difftime_history
from difftime.mixture import GaussianMixture, diffuse, log_density, sample
from difftime.mixture import score as marginal_score
from difftime.options import EXTRA_OUTPUT, KL_FLAG_SIGMA, OPTIONS, T_MIN
from difftime.sde import DiffusionSpec, decay_variable, pnoise
from difftime.streams import Streams, as_streams
from difftime.typing import Estimate, Family, ScoreFunction

logger = logging.getLogger("difftime")

#: Columns of an ELBO sweep table.
ELBO_COLUMNS = [
    "T",
    "I",
    "I_se",
    "K",
    "K_se",
    "G",
    "G_se",
    "R",
    "R_se",
    "kl",
    "kl_se",
    "elbo",
    "elbo_se",
    "prop1_residual",
    "prop1_se",
    "n_mc",
    "n_time",
]


class Budget(NamedTuple):
    """Monte Carlo samples per node and number of quadrature nodes."""

    n_mc: int = 4096
    n_time: int = 64


def _mean_se(z: np.ndarray) -> Estimate:
    if z.size < 2:
        return Estimate(float(np.mean(z)), 0.0)
    return Estimate(float(np.mean(z)), float(np.std(z, ddof=1) / np.sqrt(z.size)))


def midpoint_nodes(t_from: float, t_to: float, n_time: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Nodes and weights of the midpoint rule over ``[t_from, t_to]``, applied in ``u = log t``.

    The integrands of K, R and I grow like ``1/t`` near ``t_min``; in log-time they are bounded. The weight of node ``t``
    is ``t * du``. Empty if the interval is empty.
    """
    if n_time < 1:
        raise ValueError(f"Need at least one quadrature node, got {n_time}.")
    if t_from <= 0:
        raise ValueError(f"The quadrature starts at a positive time, got {t_from}.")
    if t_to <= t_from:
        return np.empty(0), np.empty(0)
    edges = np.linspace(np.log(t_from), np.log(t_to), n_time + 1)
    nodes = np.exp(0.5 * (edges[:-1] + edges[1:]))
    return nodes, nodes * np.diff(edges)


def _require_analytic(gm) -> None:
    if not isinstance(gm, GaussianMixture):
        raise TypeError(f"The ELBO terms need an analytic GaussianMixture target, got {type(gm).__name__}.")


def _node_integrands(
    spec: DiffusionSpec, gm: GaussianMixture, score_fn: ScoreFunction | None, t: float, x0: np.ndarray, eps: np.ndarray
) -> dict[str, np.ndarray]:
    """Per-sample integrands of K, R and (with a score function) I at time `t`."""
    m, s = spec.transition(t)
    alpha, g = spec.drift_diffusion(t)
    xt = m * x0 + np.sqrt(s) * eps
    cond = -eps / np.sqrt(s)
    g2 = g**2
    out = {
        "K": 0.5 * g2 * np.sum((marginal_score(diffuse(gm, spec, t), xt) - cond) ** 2, axis=1),
        "R": 0.5 * np.sum(g2 * cond**2 - 2 * alpha * xt * cond, axis=1),
    }
    if score_fn is not None:
        out["I"] = 0.5 * g2 * np.sum((score_fn(xt, t) - cond) ** 2, axis=1)
    return out


class _SharedDraws:
    """Initial states and per-node noise, keyed by node index only."""

    def __init__(self, gm: GaussianMixture, n_mc: int, rng: Streams | int | None):
        if n_mc < 1:
            raise ValueError(f"Need at least one Monte Carlo sample, got {n_mc}.")
        self.streams = as_streams(rng)
        self.x0 = sample(gm, n_mc, self.streams.spawn("x0").generator())
        self._eps = self.streams.spawn("eps")

    def eps(self, j: int, interval: int = 0) -> np.ndarray:
        return self._eps.normal(self.x0.shape, interval, j)


def _path_integrals(
    spec: DiffusionSpec,
    gm: GaussianMixture,
    score_fn: ScoreFunction | None,
    T: float,
    n_time: int,
    draws: _SharedDraws,
    node_means: dict | None = None,
) -> dict[str, np.ndarray]:
    """Quadrature of the node integrands, sample by sample."""
    nodes, weights = midpoint_nodes(OPTIONS[T_MIN], T, n_time)
    terms = ["K", "R"] + (["I"] if score_fn is not None else [])
    totals = {k: np.zeros(draws.x0.shape[0]) for k in terms}
    for j, (t, w) in enumerate(zip(nodes, weights)):
        vals = _node_integrands(spec, gm, score_fn, t, draws.x0, draws.eps(j))
        for k in terms:
            totals[k] += w * vals[k]
            if node_means is not None:
                node_means.setdefault(k, []).append(vals[k].mean())
    return totals


def estimate_K(
    spec: DiffusionSpec, gm: GaussianMixture, T: float, n_mc: int = 4096, n_time: int = 64, rng: Streams | int | None = None
) -> Estimate:
    """
    Estimate K(T), the score-matching loss of the exact score.

    Parameters
    ----------
    spec : DiffusionSpec
        The forward process.
    gm : GaussianMixture
        The data distribution.
    T : float
        Diffusion time.
    n_mc : int
        Monte Carlo samples per node.
    n_time : int
        Quadrature nodes.
    rng : Streams or int, optional
        Randomness, shared with the other estimators when the same value is passed.

    Returns
    -------
    Estimate
        Value and standard error, in nats.
    """
    _require_analytic(gm)
    return _mean_se(_path_integrals(spec, gm, None, T, n_time, _SharedDraws(gm, n_mc, rng))["K"])


def estimate_I(
    spec: DiffusionSpec,
    gm: GaussianMixture,
    score: ScoreFunction,
    T: float,
    n_mc: int = 4096,
    n_time: int = 64,
    rng: Streams | int | None = None,
) -> Estimate:
    """Estimate I(s, T), the score-matching loss of `score`. Arguments are as for :py:func:`estimate_K`."""
    _require_analytic(gm)
    return _mean_se(_path_integrals(spec, gm, score, T, n_time, _SharedDraws(gm, n_mc, rng))["I"])


def estimate_gap(
    spec: DiffusionSpec,
    gm: GaussianMixture,
    score: ScoreFunction,
    T: float,
    n_mc: int = 4096,
    n_time: int = 64,
    rng: Streams | int | None = None,
) -> Estimate:
    """
    Estimate the gap G = I - K.

    Both terms are computed on the same samples; the standard error is that of the paired differences.
    With the same `rng`, the value equals ``estimate_I(...).value - estimate_K(...).value``.
    """
    _require_analytic(gm)
    tot = _path_integrals(spec, gm, score, T, n_time, _SharedDraws(gm, n_mc, rng))
    return _mean_se(tot["I"] - tot["K"])


def estimate_R(
    spec: DiffusionSpec, gm: GaussianMixture, T: float, n_mc: int = 4096, n_time: int = 64, rng: Streams | int | None = None
) -> Estimate:
    """Estimate R(T), which depends neither on the score nor on the noise distribution."""
    _require_analytic(gm)
    return _mean_se(_path_integrals(spec, gm, None, T, n_time, _SharedDraws(gm, n_mc, rng))["R"])


def _allocate(weights: np.ndarray, n_pairs: int) -> np.ndarray:
    """Pairs per component, proportional to the weights, at least two for every nonempty component."""
    raw = weights * n_pairs
    alloc = np.floor(raw).astype(int)
    rest = n_pairs - alloc.sum()
    if rest > 0:
        alloc[np.argsort(alloc - raw, kind="stable")[:rest]] += 1
    return np.where(weights > 0, np.maximum(alloc, 2), 0)


def estimate_kl(
    p_mix: GaussianMixture, q_mix: GaussianMixture, n_mc: int = 4096, rng: Streams | int | None = None
) -> Estimate:
    """
    Estimate KL(p || q) between two mixtures with their exact log-densities.

    Samples of `p` are stratified by component (proportional allocation) and drawn in antithetic pairs
    around each component mean. Each component's contribution is weighted exactly, so the estimator stays
    precise when `p` and `q` are close.

    Parameters
    ----------
    p_mix, q_mix : GaussianMixture
        The two distributions, same dimension.
    n_mc : int
        Number of samples of `p`.
    rng : Streams or int, optional
        Randomness. Component c uses counter ``c``, so mixtures with the same component count share draws.

    Returns
    -------
    Estimate
        Value and standard error, in nats. A value below ``-kl_flag_sigma`` standard errors is flagged with a warning.
    """
    if p_mix.dim != q_mix.dim:
        raise ValueError(f"Cannot compare mixtures of dimensions {p_mix.dim} and {q_mix.dim}.")
    streams = as_streams(rng).spawn("kl")
    alloc = _allocate(p_mix.weights, max(n_mc // 2, 1))
    value = 0.0
    var = 0.0
    for c, n_pairs in enumerate(alloc):
        if n_pairs == 0:
            continue
        z = np.sqrt(p_mix.vars[c]) * streams.normal((n_pairs, p_mix.dim), c)
        pair = []
        for x in (p_mix.means[c] + z, p_mix.means[c] - z):
            pair.append(log_density(p_mix, x) - log_density(q_mix, x))
        f = 0.5 * (pair[0] + pair[1])
        value += p_mix.weights[c] * f.mean()
        var += p_mix.weights[c] ** 2 * f.var(ddof=1) / n_pairs
    est = Estimate(float(value), float(np.sqrt(var)))
    if est.value < -OPTIONS[KL_FLAG_SIGMA] * est.se:
        warnings.warn(f"Negative KL estimate {est.value:.3g} (se {est.se:.2g}), beyond sampling error.")
    return est


def prop1_residual(
    spec: DiffusionSpec, gm: GaussianMixture, T: float, n_mc: int = 4096, n_time: int = 64, rng: Streams | int | None = None
) -> Estimate:
    """
    Residual of the identity ``E log p(x_T, T) - K(T) + R(T) = E log p_data``.

    Every term is evaluated on the same initial samples and the residual is averaged sample by sample.
    The identity holds for the marginal at ``t_min``, which is indistinguishable from the data at the default floor.
    """
    _require_analytic(gm)
    draws = _SharedDraws(gm, n_mc, rng)
    tot = _path_integrals(spec, gm, None, T, n_time, draws)
    return _mean_se(_endpoint_gain(spec, gm, T, draws) - tot["K"] + tot["R"])


def _endpoint_gain(spec: DiffusionSpec, gm: GaussianMixture, T: float, draws: _SharedDraws) -> np.ndarray:
    """``log p(x_T, T) - log p_data(x0)`` for each shared initial sample."""
    m, s = spec.transition(T)
    xT = m * draws.x0 + np.sqrt(s) * draws.streams.spawn("xT").normal(draws.x0.shape)
    return log_density(diffuse(gm, spec, T), xT) - log_density(gm, draws.x0)


@update_difftime_history
def elbo_report(
    spec: DiffusionSpec,
    gm: GaussianMixture,
    score: ScoreFunction,
    q_init: GaussianMixture,
    T: float,
    budget: Budget = Budget(),
    rng: Streams | int | None = None,
) -> xr.Dataset:
    """
    Assemble all terms of the ELBO at a diffusion time.

    Parameters
    ----------
    spec : DiffusionSpec
        The forward process.
    gm : GaussianMixture
        The data distribution.
    score : ScoreFunction
        Score estimate used by the reverse process.
    q_init : GaussianMixture
        Distribution the reverse process starts from: the noise distribution or a fitted auxiliary model.
    T : float
        Diffusion time.
    budget : Budget
        Monte Carlo samples and quadrature nodes.
    rng : Streams or int, optional
        Randomness.

    Returns
    -------
    xr.Dataset
        Scalar variables ``I, K, G, R, kl, entropy_data, elbo, prop1_residual``, each with a ``*_se`` companion
        (``prop1_se`` for the residual), and the ``T`` coordinate. ``G = I - K`` and
        ``elbo = entropy_data - G - kl`` hold exactly. With the ``extra_output`` option, the node averages of the
        integrands are added along ``node``.
    """
    _require_analytic(gm)
    draws = _SharedDraws(gm, budget.n_mc, rng)
    node_means = {} if OPTIONS[EXTRA_OUTPUT] else None
    tot = _path_integrals(spec, gm, score, T, budget.n_time, draws, node_means)
    logp_data = log_density(gm, draws.x0)
    gap = tot["I"] - tot["K"]
    kl = estimate_kl(diffuse(gm, spec, T), q_init, budget.n_mc, draws.streams)

    terms = {
        "I": _mean_se(tot["I"]),
        "K": _mean_se(tot["K"]),
        "G": _mean_se(gap),
        "R": _mean_se(tot["R"]),
        "kl": kl,
        "entropy_data": _mean_se(logp_data),
    }
    G = terms["I"].value - terms["K"].value
    terms["G"] = Estimate(G, terms["G"].se)
    bound = _mean_se(logp_data - gap)
    terms["elbo"] = Estimate(terms["entropy_data"].value - G - kl.value, float(np.hypot(bound.se, kl.se)))
    resid = _mean_se(_endpoint_gain(spec, gm, T, draws) - tot["K"] + tot["R"])

    data_vars = {}
    for name, est in terms.items():
        data_vars[name] = ((), est.value)
        data_vars[f"{name}_se"] = ((), est.se)
    data_vars["prop1_residual"] = ((), resid.value)
    data_vars["prop1_se"] = ((), resid.se)
    ds = xr.Dataset(
        data_vars,
        coords={"T": float(T)},
        attrs={"mc_samples": budget.n_mc, "time_nodes": budget.n_time, "t_min": OPTIONS[T_MIN], "family": spec.family.value},
    )
    if node_means is not None:
        nodes, _ = midpoint_nodes(OPTIONS[T_MIN], T, budget.n_time)
        ds = ds.assign_coords(node_time=("node", nodes))
        for name, vals in node_means.items():
            ds[f"{name}_integrand"] = ("node", np.array(vals))
    return ds


def report_table(reports: list[xr.Dataset]):
    """Stack ELBO reports along ``T`` into a table with the sweep columns."""
    ds = xr.concat(reports, dim="T")
    df = ds[[c for c in ELBO_COLUMNS if c not in ("T", "n_mc", "n_time")]].to_dataframe().reset_index()
    df["n_mc"] = ds.attrs["mc_samples"]
    df["n_time"] = ds.attrs["time_nodes"]
    return df[ELBO_COLUMNS]


@update_difftime_history
def cumulative_terms(
    spec: DiffusionSpec,
    gm: GaussianMixture,
    score: ScoreFunction | None,
    T_grid,
    n_mc: int = 4096,
    n_time: int = 64,
    rng: Streams | int | None = None,
) -> xr.Dataset:
    """
    Estimate K, R (and I, G with a score) at every time of a grid, cumulatively.

    Each interval between consecutive grid times gets its own `n_time` midpoint nodes, and the per-sample
    integrals are accumulated, so K and I are nondecreasing along the grid for every sample.

    Returns
    -------
    xr.Dataset
        Variables ``K, R`` (and ``I, G``) with their ``*_se`` along ``T``.
    """
    _require_analytic(gm)
    T_grid = np.sort(np.asarray(T_grid, dtype=np.float64))
    draws = _SharedDraws(gm, n_mc, rng)
    terms = ["K", "R"] + (["I", "G"] if score is not None else [])
    totals = {k: np.zeros(n_mc) for k in ("K", "R", "I")}
    rows = {k: [] for k in terms}
    start = OPTIONS[T_MIN]
    for i, T in enumerate(T_grid):
        nodes, weights = midpoint_nodes(start, T, n_time)
        for j, (t, w) in enumerate(zip(nodes, weights)):
            vals = _node_integrands(spec, gm, score, t, draws.x0, draws.eps(j, interval=i))
            for k, v in vals.items():
                totals[k] += w * v
        start = max(start, T)
        for k in terms:
            rows[k].append(_mean_se(totals["I"] - totals["K"] if k == "G" else totals[k]))
    data_vars = {}
    for k in terms:
        data_vars[k] = ("T", [e.value for e in rows[k]])
        data_vars[f"{k}_se"] = ("T", [e.se for e in rows[k]])
    return xr.Dataset(data_vars, coords={"T": T_grid}, attrs={"mc_samples": n_mc, "time_nodes": n_time})


@update_difftime_history
def kl_bound_check(
    spec: DiffusionSpec, gm: GaussianMixture, T_grid, n_mc: int = 4096, rng: Streams | int | None = None, tolerance: float = 0.1
) -> xr.Dataset:
    """
    Check the decay rate of KL(p(x, T) || p_noise) along a grid of diffusion times.

    VP processes: ``log KL`` is regressed on minus the integrated rate; the rate is achieved when the slope is at least
    ``1 - tolerance``. VE processes: KL is regressed on the inverse kernel variance (through the origin); the rate is
    achieved when ``KL * var(T)`` does not increase after its maximum over the grid, within two standard errors.

    Parameters
    ----------
    spec : DiffusionSpec
        The forward process.
    gm : GaussianMixture
        The data distribution.
    T_grid : sequence of float
        At least four diffusion times.
    n_mc : int
        Samples per KL estimate. All times share the same draws.
    rng : Streams or int, optional
        Randomness.
    tolerance : float
        Allowed shortfall of the fitted VP slope.

    Returns
    -------
    xr.Dataset
        ``kl``, ``kl_se``, ``decay`` and ``clipped`` along ``T``; attributes ``family``, ``fitted_constant``,
        ``fitted_rate``, ``fitted_rate_ok`` and ``inconclusive``. Nodes whose KL is within
        ``kl_flag_sigma`` standard errors of zero are clipped out of the fit.
    """
    _require_analytic(gm)
    T_grid = np.sort(np.asarray(T_grid, dtype=np.float64))
    if T_grid.size < 4:
        raise ValueError(f"The rate check needs at least four diffusion times, got {T_grid.size}.")
    streams = as_streams(rng)
    ests = [estimate_kl(diffuse(gm, spec, T), pnoise(spec, T), n_mc, streams) for T in T_grid]
    kl = np.array([e.value for e in ests])
    se = np.array([e.se for e in ests])
    decay = np.asarray(decay_variable(spec, T_grid), dtype=np.float64)
    clipped = kl <= OPTIONS[KL_FLAG_SIGMA] * se
    inconclusive = bool(clipped.all())

    constant = rate = np.nan
    rate_ok = False
    if inconclusive:
        logger.info("KL indistinguishable from 0 over the whole grid, the rate check is inconclusive.")
    elif spec.family is Family.VP:
        if (~clipped).sum() >= 2:
            fit = sm.OLS(np.log(kl[~clipped]), sm.add_constant(-decay[~clipped])).fit()
            constant, rate = float(np.exp(fit.params[0])), float(fit.params[1])
            rate_ok = rate >= 1 - tolerance
    else:
        fit = sm.OLS(kl[~clipped], 1 / decay[~clipped]).fit()
        constant = float(fit.params[0])
        product = kl * decay
        product_se = se * decay
        tail = slice(int(np.argmax(product)), None)
        steps = np.diff(product[tail])
        slack = 2 * np.hypot(product_se[tail][1:], product_se[tail][:-1])
        rate = float(product.max())
        rate_ok = bool(np.isfinite(product).all() and np.all(steps <= slack))
    if clipped.any() and not inconclusive:
        warnings.warn(f"{clipped.sum()} KL estimate(s) indistinguishable from 0 were left out of the rate fit.")

    return xr.Dataset(
        {
            "kl": ("T", kl),
            "kl_se": ("T", se),
            "decay": ("T", decay),
            "clipped": ("T", clipped),
        },
        coords={"T": T_grid},
        attrs={
            "family": spec.family.value,
            "fitted_constant": constant,
            "fitted_rate": rate,
            "fitted_rate_ok": int(rate_ok),
            "inconclusive": int(inconclusive),
            "mc_samples": n_mc,
        },
    )
