"""
# noqa: SS01
Experiments
===========

The reproducible experiments behind the command-line interface. Each ``cmd_*`` function takes a
:py:class:`~difftime.manifest.RunManifest`, writes its artifacts below the manifest's output directory and returns an
exit status: 0 on success, 2 when some items of a sweep failed or were skipped. Fatal errors are raised.

Work items of a sweep (one per diffusion time) run concurrently up to the ``workers`` option; their results are
merged in grid order and every random draw is keyed by the seed and the item, so outputs do not depend on the
number of workers.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence

import numpy as np
import pandas as pd

from difftime.artifacts import (
    load_aux,
    load_checkpoint,
    read_samples,
    save_aux,
    save_checkpoint,
    svg_plot,
    table,
    write_csv,
    write_loss,
    write_paths,
)
from difftime.base import NonFiniteError, map_jobs
from difftime.bridge import draw_fit_set, select_bic
from difftime.elbo import Budget, elbo_report, kl_bound_check, report_table
from difftime.likelihood import logdensity_ode, sequential_refit
from difftime.manifest import RunManifest, config_hash
from difftime.mixture import GaussianMixture, draw_data, log_density
from difftime.options import OPTIONS, WORKERS, set_options
from difftime.score import OracleScore, ScoreNet, TrainConfig, train
from difftime.sde import pnoise
from difftime.simulation import reverse_sample
from difftime.streams import Streams
from difftime.typing import BpdMode, SampleMode, ScoreFunction

logger = logging.getLogger("difftime")

__all__ = [
    "cmd_bpd",
    "cmd_elbo_sweep",
    "cmd_fit_aux",
    "cmd_kl_bounds",
    "cmd_sample",
    "cmd_train_scores",
    "load_score",
    "sample_summary",
    "sweep_summary",
]


def time_key(T: float) -> int:
    """Integer stream key of a diffusion time, stable when the grid changes."""
    return int(round(T * 1e6))


def _streams(manifest: RunManifest, *keys) -> Streams:
    return Streams(manifest.seed).spawn(*keys)


def _concurrently(job: Callable, items: Sequence) -> list:
    """Run `job` on each item concurrently; the jobs themselves run single-threaded."""
    workers = OPTIONS[WORKERS]
    with set_options(workers=1):
        return map_jobs(job, list(items), workers=workers)


def _status(done: Sequence[bool]) -> int:
    return 0 if all(done) else 2


def target_data(manifest: RunManifest) -> GaussianMixture | np.ndarray:
    """The data distribution: the analytic mixture or the sample set read from disk."""
    if isinstance(manifest.target, GaussianMixture):
        return manifest.target
    return read_samples(manifest.target)


def analytic_target(manifest: RunManifest) -> GaussianMixture:
    """The analytic data distribution, needed by every experiment that evaluates ``log p_data``."""
    if not isinstance(manifest.target, GaussianMixture):
        raise TypeError("This experiment needs an analytic mixture target, the manifest gives a sample file.")
    return manifest.target


def load_score(manifest: RunManifest, T: float, oracle: bool = False) -> ScoreFunction:
    """The score network trained at `T`, or the exact score of the analytic target."""
    if oracle:
        return OracleScore(analytic_target(manifest), manifest.spec)
    path = manifest.artifact("checkpoint", T)
    if not path.exists():
        raise FileNotFoundError(f"No score checkpoint for T={T} at {path}.")
    return load_checkpoint(path)


def cmd_train_scores(manifest: RunManifest) -> int:
    """
    Train one score network per diffusion time of the grid, each on times drawn from ``U(t_min, T)``.

    Writes a checkpoint and a loss trace per time. A diverging training is logged and the other times continue.
    """
    spec = manifest.spec
    data = target_data(manifest)
    tcfg = manifest.train

    def _job(T):
        cfg = TrainConfig(
            T=T,
            batch=tcfg["batch"],
            iters=manifest.budgets["train_iters"],
            lr=tcfg["lr"],
            lambda_mode=tcfg["lambda_mode"],
            seed=manifest.seed,
        )
        net = ScoreNet(spec.dim, tcfg["hidden"], tcfg["time_embed"], tcfg["activation"], seed=manifest.seed)
        try:
            trained = train(net, spec, data, cfg)
        except NonFiniteError as err:
            logger.error("Training at T=%s diverged: %s", T, err)
            return False
        save_checkpoint(trained.net, manifest.artifact("checkpoint", T))
        write_loss(trained, manifest.artifact("loss", T), manifest.hash)
        logger.info("Trained score at T=%s, final smoothed loss %.4g.", T, trained.ds.smoothed.values[-1])
        return True

    return _status(_concurrently(_job, manifest.T_grid.tolist()))


def cmd_fit_aux(manifest: RunManifest) -> int:
    """Fit and save the auxiliary mixture at every diffusion time, on exact forward samples."""
    spec = manifest.spec
    data = target_data(manifest)
    b = manifest.budgets

    def _job(T):
        streams = _streams(manifest, "aux", time_key(T))
        fit = select_bic(
            draw_fit_set(spec, data, T, b["n_fit"], streams),
            range(1, b["k_max"] + 1),
            b["em_iters"],
            streams,
            b["em_restarts"],
        )
        save_aux(fit, manifest.artifact("aux", T))
        logger.info("Auxiliary fit at T=%s: %d component(s), BIC %.2f.", T, fit.n_components, fit.bic)
        return True

    return _status(_concurrently(_job, manifest.T_grid.tolist()))


def sweep_summary(baseline: pd.DataFrame, bridged: pd.DataFrame | None = None) -> pd.DataFrame:
    """
    Summarize an ELBO sweep.

    Returns a single row: the best baseline time ``T_star`` with its ELBO, whether it is interior to the grid, and
    ``tau``, the smallest time not above ``T_star`` whose bridged ELBO is within two standard errors of the best
    baseline ELBO or above it (NaN if there is none).
    """
    best = baseline.elbo.to_numpy().argmax()
    star = baseline.iloc[best]
    row = {
        "T_star": star["T"],
        "elbo_star": star["elbo"],
        "elbo_star_se": star["elbo_se"],
        "interior": int(0 < best < len(baseline) - 1),
        "tau": np.nan,
        "tau_elbo": np.nan,
        "tau_elbo_se": np.nan,
    }
    if bridged is not None and len(bridged):
        cand = bridged[bridged["T"] <= star["T"]]
        ok = cand.elbo >= star["elbo"] - 2 * np.hypot(cand.elbo_se, star["elbo_se"])
        if ok.any():
            tau = cand[ok].iloc[0]
            row.update(tau=tau["T"], tau_elbo=tau["elbo"], tau_elbo_se=tau["elbo_se"])
    return pd.DataFrame([row])


def cmd_elbo_sweep(manifest: RunManifest, oracle: bool = False) -> int:
    """
    Compute the ELBO decomposition at every diffusion time of the grid.

    The reverse process starts from the noise distribution (baseline) and from the auxiliary fit (bridged).
    All times share the same random numbers. Times without a checkpoint are skipped, times without an auxiliary
    fit get no bridged row. Writes the two sweep tables, a summary and a plot of G, KL and the ELBO against T.
    """
    spec = manifest.spec
    gm = analytic_target(manifest)
    budget = Budget(manifest.budgets["n_mc"], manifest.budgets["n_time"])
    rng = _streams(manifest, "elbo")

    def _job(T):
        try:
            score = load_score(manifest, T, oracle)
        except FileNotFoundError as err:
            logger.warning("%s Skipped.", err)
            return None, None
        base = elbo_report(spec, gm, score, pnoise(spec, T), T, budget, rng)
        aux_path = manifest.artifact("aux", T)
        if not aux_path.exists():
            logger.warning("No auxiliary fit for T=%s, no bridged estimate.", T)
            return base, None
        return base, elbo_report(spec, gm, score, load_aux(aux_path).model, T, budget, rng)

    results = _concurrently(_job, manifest.T_grid.tolist())
    bases = [r[0] for r in results if r[0] is not None]
    bridged = [r[1] for r in results if r[1] is not None]
    if not bases:
        logger.error("No score checkpoint found, nothing to sweep.")
        return 2

    base_table = report_table(bases)
    write_csv(base_table, manifest.artifact("elbo_sweep"), manifest.hash)
    bridged_table = None
    if bridged:
        bridged_table = report_table(bridged)
        write_csv(bridged_table, manifest.artifact("elbo_sweep_bridged"), manifest.hash)
    summary = sweep_summary(base_table, bridged_table)
    write_csv(summary, manifest.artifact("elbo_summary"), manifest.hash)

    series = {"G": base_table.G, "KL": base_table.kl, "ELBO": base_table.elbo}
    if bridged_table is not None:
        series["ELBO (bridged)"] = base_table[["T"]].merge(bridged_table, on="T", how="left").elbo
    svg_plot(
        manifest.artifact("elbo_plot"),
        base_table["T"],
        series,
        title="ELBO decomposition",
        xlabel="diffusion time T",
        ylabel="nats",
    )
    logger.info("Best baseline diffusion time: T*=%s.", summary.T_star.iloc[0])
    return _status([r[0] is not None and r[1] is not None for r in results])


def sample_summary(loglik: Sequence[float]) -> dict:
    """Median, 95% quantile, mean and standard error of per-seed mean log-likelihoods."""
    loglik = np.asarray(loglik, dtype=np.float64)
    se = loglik.std(ddof=1) / np.sqrt(loglik.size) if loglik.size > 1 else 0.0
    return {
        "median": float(np.median(loglik)),
        "q95": float(np.quantile(loglik, 0.95)),
        "mean": float(loglik.mean()),
        "se": float(se),
    }


def _init_distribution(manifest: RunManifest, bridged: bool, T: float) -> GaussianMixture:
    if not bridged:
        return pnoise(manifest.spec, T)
    path = manifest.artifact("aux", T)
    if not path.exists():
        raise FileNotFoundError(f"No auxiliary fit for T={T} at {path}, run fit-aux first.")
    return load_aux(path).model


def cmd_sample(manifest: RunManifest, mode: SampleMode | str, T: float, oracle: bool = False) -> int:
    """
    Sample the reverse process at a diffusion time, for every seed of the budget.

    Each seed draws ``n_samples`` paths; the data log-likelihood of the samples, averaged per seed, is summarized
    by its median and 95% quantile over the seeds.
    """
    mode = SampleMode(mode)
    spec = manifest.spec
    gm = analytic_target(manifest)
    score = load_score(manifest, T, oracle)
    init = _init_distribution(manifest, mode is SampleMode.BRIDGED, T)
    steps = manifest.steps(T)
    n = manifest.budgets["n_samples"]

    def _job(s):
        return reverse_sample(spec, score, init, T, steps, n, _streams(manifest, "sample", s))

    batches = _concurrently(_job, range(manifest.budgets["seeds"]))
    loglik = [float(log_density(gm, b.states).mean()) for b in batches]

    write_paths(batches, manifest.artifact("samples", T, mode.value), manifest.hash, mode=mode.value, T=T)
    summary = {"mode": mode.value, "T": T, "steps": steps, "nfe": batches[0].nfe, "seeds": len(batches)}
    summary.update(sample_summary(loglik))
    write_csv(pd.DataFrame([summary]), manifest.artifact("sample_summary", T, mode.value), manifest.hash)
    logger.info("Samples %s at T=%s: median data log-likelihood %.4f.", mode.value, T, summary["median"])
    return 0


def cmd_bpd(manifest: RunManifest, mode: BpdMode | str, T: float, oracle: bool = False) -> int:
    """
    Bits per dimension of held-out points through the probability-flow ODE.

    The endpoints are scored under the noise distribution (``baseline``), the auxiliary fit on forward samples
    (``bridged-concurrent``) or an auxiliary fit on the ODE images of data samples (``bridged-sequential``, saved).
    Returns 2 if the trajectory of some point failed.
    """
    mode = BpdMode(mode)
    spec = manifest.spec
    data = target_data(manifest)
    b = manifest.budgets
    score = load_score(manifest, T, oracle)
    steps = manifest.ode_steps(T)
    points = draw_data(data, b["n_points"], _streams(manifest, "held-out").generator())

    if mode is BpdMode.BRIDGED_SEQUENTIAL:
        streams = _streams(manifest, "sequential", time_key(T))
        fit_set = draw_data(data, b["n_fit"], streams.generator())
        fit = sequential_refit(spec, score, fit_set, T, steps, range(1, b["k_max"] + 1), b["em_iters"], streams)
        save_aux(fit, manifest.artifact("aux_sequential", T))
        init = fit.model
    else:
        init = _init_distribution(manifest, mode is BpdMode.BRIDGED_CONCURRENT, T)

    res = logdensity_ode(spec, score, init, points, T, steps)
    df = table(res, ["point", "logp", "bpd", "failed"])
    df.insert(3, "nfe", res.attrs["nfe"])
    df["failed"] = df.failed.astype(int)
    write_csv(
        df,
        manifest.artifact("bpd", T, mode.value),
        manifest.hash,
        t_min=res.attrs["t_min"],
        steps=steps,
        init=config_hash(init.to_config()),
    )
    ok = ~res.failed.values
    stats = sample_summary(res.bpd.values[ok]) if ok.any() else {"mean": np.nan, "se": np.nan}
    logger.info(
        "BPD %s at T=%s: %.4f +/- %.4f (%d failed point(s)).", mode.value, T, stats["mean"], stats["se"], (~ok).sum()
    )
    return _status(ok)


def cmd_kl_bounds(manifest: RunManifest) -> int:
    """Check the decay rate of the noise-distribution mismatch over the grid and write ``klbounds.csv``."""
    gm = analytic_target(manifest)
    ds = kl_bound_check(manifest.spec, gm, manifest.T_grid, manifest.budgets["n_mc"], _streams(manifest, "kl-bounds"))
    df = table(ds, ["T", "kl", "kl_se", "decay", "clipped"])
    df["clipped"] = df.clipped.astype(int)
    for key in ("fitted_constant", "fitted_rate", "fitted_rate_ok", "inconclusive"):
        df[key] = ds.attrs[key]
    write_csv(df, manifest.artifact("klbounds"), manifest.hash, family=ds.attrs["family"])
    logger.info(
        "KL decay over the grid: rate achieved %s, inconclusive %s.",
        bool(ds.attrs["fitted_rate_ok"]),
        bool(ds.attrs["inconclusive"]),
    )
    return 0
