"""Testing utilities for difftime: a cache of trained score networks shared across test workers."""

from __future__ import annotations

import hashlib
import logging
import os
import tempfile
from pathlib import Path

from filelock import FileLock

from difftime.artifacts import load_checkpoint, save_checkpoint
from difftime.manifest import config_hash
from difftime.mixture import GaussianMixture
from difftime.score import ScoreNet, TrainConfig, train
from difftime.sde import DiffusionSpec

logger = logging.getLogger("difftime")

__all__ = [
    "SCORE_CACHE_DIR",
    "cached_score",
]

SCORE_CACHE_DIR = Path(os.getenv("DIFFTIME_TESTING_CACHE", Path(tempfile.gettempdir()) / "difftime-testing"))
"""Where trained test networks are kept.

Notes
-----
Set it with the environment variable:

.. code-block:: console

    $ env DIFFTIME_TESTING_CACHE="/path/to/cache" pytest
"""


def _cache_key(net: ScoreNet, spec: DiffusionSpec, gm: GaussianMixture, cfg: TrainConfig) -> str:
    return config_hash(
        {
            "net": {
                "dim": net.dim,
                "hidden": list(net.hidden),
                "time_embed": net.time_embed,
                "activation": net.activation,
                "params": hashlib.sha256(net.params_flat.tobytes()).hexdigest(),
            },
            "spec": spec.to_config(),
            "target": gm.to_config(),
            "train": {k: list(v) if isinstance(v, tuple) else v for k, v in cfg.parameters.items()},
        }
    )


def cached_score(
    net: ScoreNet,
    spec: DiffusionSpec,
    gm: GaussianMixture,
    cfg: TrainConfig,
    cache_dir: str | os.PathLike[str] | None = None,
) -> ScoreNet:
    """
    Train a network, or load it if the same training already ran.

    Training is deterministic, so the cached network equals a fresh one. Concurrent test workers wait on a file
    lock while the first one trains.
    """
    cache_dir = Path(cache_dir or SCORE_CACHE_DIR)
    cache_dir.mkdir(exist_ok=True, parents=True)
    key = _cache_key(net, spec, gm, cfg)
    path = cache_dir / f"{key[:16]}.dtsn"
    with FileLock(cache_dir / f"{key[:16]}.lock"):
        if path.exists():
            logger.debug("Loading cached score network %s.", path)
            return load_checkpoint(path)
        trained = train(net, spec, gm, cfg)
        save_checkpoint(trained.net, path)
    return trained.net
