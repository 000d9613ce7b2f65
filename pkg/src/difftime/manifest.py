"""
# noqa: SS01
Run Manifests
=============

An experiment is fully described by a TOML run manifest: the seed, the forward process, the data distribution,
the grid of diffusion times, the Monte Carlo and training budgets and the names of the output files.
See ``docs/manifest.rst`` for the grammar.
"""

from __future__ import annotations

import hashlib
import json
import logging
import sys
import warnings
from pathlib import Path
from typing import Any

import numpy as np
from packaging.version import InvalidVersion, Version

from difftime.base import Parametrizable
from difftime.mixture import GaussianMixture
from difftime.sde import DiffusionSpec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger("difftime")

#: Defaults of the ``[budgets]`` table.
DEFAULT_BUDGETS = {
    "n_mc": 4096,
    "n_time": 64,
    "steps_per_unit": 1000,
    "ode_steps_per_unit": 200,
    "train_iters": 20000,
    "seeds": 8,
    "n_samples": 1024,
    "n_fit": 8192,
    "n_points": 256,
    "k_max": 8,
    "em_iters": 500,
    "em_restarts": 3,
}

#: Defaults of the ``[train]`` table.
DEFAULT_TRAIN = {
    "batch": 256,
    "lr": 1e-3,
    "lambda_mode": "g_squared",
    "hidden": [64, 64, 64],
    "time_embed": 4,
    "activation": "silu",
}

#: Output file names, ``{T}`` is replaced by the formatted diffusion time and ``{mode}`` by the run mode.
DEFAULT_ARTIFACTS = {
    "checkpoint": "checkpoints/score_T{T}.dtsn",
    "loss": "loss/loss_T{T}.csv",
    "aux": "aux/aux_T{T}.json",
    "aux_sequential": "aux/aux_sequential_T{T}.json",
    "elbo_sweep": "elbo_sweep.csv",
    "elbo_sweep_bridged": "elbo_sweep_bridged.csv",
    "elbo_summary": "elbo_summary.csv",
    "elbo_plot": "elbo_sweep.svg",
    "samples": "samples/samples_{mode}_T{T}.csv",
    "sample_summary": "samples/summary_{mode}_T{T}.csv",
    "bpd": "bpd_{mode}_T{T}.csv",
    "klbounds": "klbounds.csv",
}


def config_hash(config: dict) -> str:
    """SHA-256 of the canonical JSON form of a plain-type configuration."""
    text = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def format_time(T: float) -> str:
    """Diffusion time as written in file names."""
    return f"{T:.3f}"


class RunManifest(Parametrizable):
    """
    A parsed run manifest.

    Parameters
    ----------
    seed : int
        Master seed.
    spec : DiffusionSpec
        The forward process.
    target : GaussianMixture or str
        The data distribution, or the path to a CSV file of samples (one row per sample).
    T_grid : array
        Diffusion times, increasing.
    budgets : dict
        Monte Carlo, integration and training sizes, see :py:data:`DEFAULT_BUDGETS`.
    train : dict
        Network and optimizer settings, see :py:data:`DEFAULT_TRAIN`.
    artifact_paths : dict
        Output file names relative to `out_dir`, see :py:data:`DEFAULT_ARTIFACTS`.
    out_dir : str
        Output directory.
    tool_version : str
        Version of difftime the manifest was written for.
    """

    def __init__(
        self,
        seed: int,
        spec: DiffusionSpec,
        target: GaussianMixture | str,
        T_grid,
        budgets: dict | None = None,
        train: dict | None = None,
        artifact_paths: dict | None = None,
        out_dir: str = "difftime-run",
        tool_version: str | None = None,
    ):
        from difftime import __version__  # pylint: disable=import-outside-toplevel

        T_grid = np.sort(np.atleast_1d(np.asarray(T_grid, dtype=np.float64)))
        if T_grid.size == 0 or np.any(T_grid <= 0):
            raise ValueError(f"The diffusion-time grid must hold positive times, got {T_grid}.")
        unknown = set(budgets or {}) - set(DEFAULT_BUDGETS)
        unknown |= set(train or {}) - set(DEFAULT_TRAIN)
        unknown |= set(artifact_paths or {}) - set(DEFAULT_ARTIFACTS)
        if unknown:
            raise ValueError(f"Unknown manifest entries: {sorted(unknown)}.")
        tool_version = tool_version or __version__
        try:
            Version(tool_version)
        except InvalidVersion as err:
            raise ValueError(f"Invalid tool_version {tool_version!r}.") from err
        super().__init__(
            seed=int(seed),
            spec=spec,
            target=target,
            T_grid=T_grid,
            budgets={**DEFAULT_BUDGETS, **(budgets or {})},
            train={**DEFAULT_TRAIN, **(train or {})},
            artifact_paths={**DEFAULT_ARTIFACTS, **(artifact_paths or {})},
            out_dir=str(out_dir),
            tool_version=tool_version,
        )

    def to_config(self) -> dict[str, Any]:
        """Plain-type description of the manifest, without the output directory."""
        target = self.target.to_config() if isinstance(self.target, GaussianMixture) else {"path": self.target}
        return {
            "seed": self.seed,
            "tool_version": self.tool_version,
            "spec": self.spec.to_config(),
            "target": target,
            "grid": {"T": self.T_grid.tolist()},
            "budgets": dict(self.budgets),
            "train": dict(self.train),
            "artifacts": dict(self.artifact_paths),
        }

    @property
    def hash(self) -> str:
        """
        SHA-256 of the canonical JSON form of :py:meth:`to_config`.

        A sample-set target enters through the digest of its file. The output directory does not enter it.
        """
        cfg = self.to_config()
        if "path" in cfg["target"]:
            cfg["target"] = {"sha256": hashlib.sha256(Path(self.target).read_bytes()).hexdigest()}
        return config_hash(cfg)

    def artifact(self, name: str, T: float | None = None, mode: str = "") -> Path:
        """Path of an output file."""
        rel = self.artifact_paths[name].format(T="" if T is None else format_time(T), mode=mode)
        return Path(self.out_dir) / rel

    def steps(self, T: float) -> int:
        """Reverse-SDE steps at time `T`, proportional to `T`."""
        return max(1, round(self.budgets["steps_per_unit"] * T))

    def ode_steps(self, T: float) -> int:
        """Probability-flow steps at time `T`, proportional to `T`."""
        return max(1, round(self.budgets["ode_steps_per_unit"] * T))

    def replace(self, **overrides) -> RunManifest:
        """A copy with some entries replaced, e.g. the seed or the output directory given on the command line."""
        params = dict(self.parameters)
        params.update({k: v for k, v in overrides.items() if v is not None})
        return RunManifest(**params)


def load_manifest(path: str | Path) -> RunManifest:
    """
    Read a TOML run manifest.

    Parameters
    ----------
    path : str or Path
        The manifest file. A relative target path is resolved against its directory.

    Returns
    -------
    RunManifest
    """
    from difftime import __version__  # pylint: disable=import-outside-toplevel

    path = Path(path)
    with path.open("rb") as f:
        cfg = tomllib.load(f)

    missing = {"seed", "spec", "target", "grid"} - set(cfg)
    if missing:
        raise ValueError(f"Manifest {path} lacks the entries {sorted(missing)}.")
    spec_cfg = cfg["spec"]
    spec = DiffusionSpec.from_config(spec_cfg["family"], spec_cfg.get("params"), spec_cfg.get("dim", 1))

    tcfg = cfg["target"]
    if "path" in tcfg:
        target = str((path.parent / tcfg["path"]).resolve())
    else:
        target = GaussianMixture(tcfg["weights"], tcfg["means"], tcfg["vars"])
        if target.dim != spec.dim:
            raise ValueError(f"Target dimension {target.dim} differs from the process dimension {spec.dim}.")

    version = cfg.get("tool_version", __version__)
    if Version(version).major != Version(__version__).major:
        warnings.warn(f"Manifest written for difftime {version}, running {__version__}.")

    manifest = RunManifest(
        seed=cfg["seed"],
        spec=spec,
        target=target,
        T_grid=cfg["grid"]["T"],
        budgets=cfg.get("budgets"),
        train=cfg.get("train"),
        artifact_paths=cfg.get("artifacts"),
        out_dir=cfg.get("out_dir", "difftime-run"),
        tool_version=version,
    )
    logger.debug("Loaded manifest %s (hash %s).", path, manifest.hash)
    return manifest
