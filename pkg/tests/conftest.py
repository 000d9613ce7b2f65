# noqa: D104
from __future__ import annotations

import numpy as np
import pytest

from difftime.mixture import GaussianMixture
from difftime.sde import VEDiffusion, VEToyDiffusion, VPDiffusion
from difftime.streams import Streams
from difftime.testing import separated_mixture, toy_target


@pytest.fixture
def random() -> np.random.Generator:
    return np.random.default_rng(seed=list(map(ord, "𝕽𝔞𝖓𝔡𝖔𝔪")))


@pytest.fixture
def streams() -> Streams:
    return Streams(20240917)


@pytest.fixture
def toy() -> GaussianMixture:
    return toy_target()


@pytest.fixture
def separated() -> GaussianMixture:
    return separated_mixture()


@pytest.fixture
def gaussian() -> GaussianMixture:
    return GaussianMixture.single([0.0], 1.0)


@pytest.fixture
def vp() -> VPDiffusion:
    return VPDiffusion(beta0=0.1, beta1=20)


@pytest.fixture
def ve() -> VEDiffusion:
    return VEDiffusion(sigma_min=0.01, sigma_max=50)


@pytest.fixture
def ve_toy() -> VEToyDiffusion:
    return VEToyDiffusion(sigma_base=10)


@pytest.fixture(params=["vp", "ve", "ve_toy"])
def any_spec(request):
    return request.getfixturevalue(request.param)


@pytest.fixture(autouse=True, scope="function")
def add_example_mixture(xdoctest_namespace, toy) -> None:
    ns = xdoctest_namespace
    ns["gm"] = toy
    ns["np"] = np


@pytest.fixture
def manifest_file(tmp_path):
    """Write a small run manifest and return its path."""

    def _manifest_file(family="VE_TOY", params=None, T=(0.4, 0.8), budgets=None, target=None, extra="", train=None):
        params = params if params is not None else {"sigma_base": 10.0}
        budgets = {
            "n_mc": 256,
            "n_time": 8,
            "steps_per_unit": 50,
            "ode_steps_per_unit": 20,
            "train_iters": 20,
            "seeds": 2,
            "n_samples": 64,
            "n_fit": 512,
            "n_points": 8,
            "k_max": 2,
            "em_iters": 50,
            "em_restarts": 1,
            **(budgets or {}),
        }
        lines = [
            "seed = 7",
            f'out_dir = "{(tmp_path / "run").as_posix()}"',
            "",
            "[spec]",
            f'family = "{family}"',
            "dim = 1",
            "[spec.params]",
            *[f"{k} = {float(v)}" for k, v in params.items()],
            "",
            "[target]",
            target or "weights = [0.3, 0.7]\nmeans = [[1.0], [3.0]]\nvars = [0.01, 0.25]",
            "",
            "[grid]",
            f"T = [{', '.join(str(float(t)) for t in T)}]",
            "",
            "[budgets]",
            *[f"{k} = {v}" for k, v in budgets.items()],
            "",
            "[train]",
            *[f"{k} = {v}" for k, v in {"hidden": [16, 16], "time_embed": 2, "batch": 32, **(train or {})}.items()],
            extra,
        ]
        path = tmp_path / "manifest.toml"
        path.write_text("\n".join(lines) + "\n")
        return path

    return _manifest_file
