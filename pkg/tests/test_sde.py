from __future__ import annotations

import numpy as np
import pytest

from difftime.sde import (
    DiffusionSpec,
    VEDiffusion,
    VEToyDiffusion,
    VPDiffusion,
    decay_variable,
    drift_diffusion,
    pnoise,
    transition,
)
from difftime.typing import Family

SPECS = [VPDiffusion(), VEDiffusion(), VEToyDiffusion()]


class TestDriftDiffusion:
    def test_vp_endpoints(self):
        spec = VPDiffusion(beta0=0.1, beta1=20)
        np.testing.assert_allclose(drift_diffusion(spec, 0.0), (-0.05, np.sqrt(0.1)))
        np.testing.assert_allclose(drift_diffusion(spec, 1.0), (-10.0, np.sqrt(20)))

    def test_ve_toy_origin(self):
        assert drift_diffusion(VEToyDiffusion(sigma_base=10), 0.0) == (0.0, 1.0)

    def test_arrays(self):
        t = np.linspace(0, 1, 5)
        alpha, g = drift_diffusion(VPDiffusion(), t)
        assert alpha.shape == g.shape == (5,)

    @pytest.mark.parametrize("spec", SPECS)
    def test_negative_time(self, spec):
        with pytest.raises(ValueError):
            drift_diffusion(spec, -0.1)
        with pytest.raises(ValueError):
            transition(spec, np.array([0.1, -1e-9]))


class TestTransition:
    def test_vp(self):
        spec = VPDiffusion(beta0=0.1, beta1=20)
        assert transition(spec, 0.0) == (1.0, 0.0)
        k = transition(spec, 1.0)
        np.testing.assert_allclose(k.mean_scale, np.exp(-5.025), rtol=1e-12)
        np.testing.assert_allclose(k.var, -np.expm1(-10.05), rtol=1e-12)

    def test_ve_toy(self):
        k = transition(VEToyDiffusion(sigma_base=10), 0.5)
        assert k.mean_scale == 1
        np.testing.assert_allclose(k.var, 9 / (2 * np.log(10)), rtol=1e-12)
        np.testing.assert_allclose(k.var, 1.9543, atol=5e-5)

    @pytest.mark.parametrize("spec", SPECS)
    def test_var_increasing(self, spec):
        t = np.linspace(0, 2, 201)
        k = transition(spec, t)
        assert k.var[0] == 0
        assert (np.diff(k.var) > 0).all()
        assert (k.mean_scale > 0).all()
        assert (k.mean_scale <= 1).all()
        assert (np.diff(k.mean_scale) <= 0).all()

    def test_vp_preserves_variance(self):
        t = np.linspace(0, 3, 301)
        k = transition(VPDiffusion(), t)
        np.testing.assert_allclose(k.mean_scale**2 + k.var, 1, atol=1e-12)

    @pytest.mark.parametrize("spec", [VEDiffusion(), VEToyDiffusion()])
    @pytest.mark.parametrize("t", [0.05, 0.3, 0.9])
    def test_ve_variance_rate(self, spec, t):
        h = 1e-5
        dvar = (transition(spec, t + h).var - transition(spec, t - h).var) / (2 * h)
        _, g = drift_diffusion(spec, t)
        np.testing.assert_allclose(dvar, g**2, rtol=1e-6)

    def test_vp_variance_rate(self):
        # d var / dt = g^2 + 2 alpha var for affine drifts
        spec, t, h = VPDiffusion(), 0.4, 1e-5
        dvar = (transition(spec, t + h).var - transition(spec, t - h).var) / (2 * h)
        alpha, g = drift_diffusion(spec, t)
        np.testing.assert_allclose(dvar, g**2 + 2 * alpha * transition(spec, t).var, rtol=1e-6)


class TestPNoise:
    def test_vp_stationary(self):
        a, b = pnoise(VPDiffusion(), 0.3), pnoise(VPDiffusion(), 3.0)
        assert a.n_components == 1
        np.testing.assert_array_equal(a.means, b.means)
        np.testing.assert_array_equal(a.vars, [1.0])
        np.testing.assert_array_equal(b.vars, [1.0])

    def test_ve(self):
        np.testing.assert_allclose(pnoise(VEDiffusion(sigma_min=0.01, sigma_max=50), 1.0).vars, [2500 - 1e-4])
        np.testing.assert_allclose(pnoise(VEToyDiffusion(sigma_base=10), 0.5).vars, [1.9543], atol=5e-5)

    def test_positive_time(self):
        with pytest.raises(ValueError):
            pnoise(VPDiffusion(), 0)


class TestConfig:
    @pytest.mark.parametrize("spec", SPECS)
    def test_roundtrip(self, spec):
        cfg = spec.to_config()
        other = DiffusionSpec.from_config(cfg["family"], cfg["params"], cfg["dim"])
        assert type(other) is type(spec)
        assert other.parameters == spec.parameters

    def test_defaults(self):
        spec = DiffusionSpec.from_config("VE_TOY", dim=2)
        assert spec.family is Family.VE_TOY
        assert spec.sigma_base == 10
        assert spec.dim == 2

    def test_bad_family(self):
        with pytest.raises(ValueError):
            DiffusionSpec.from_config("subVP")

    def test_bad_dim(self):
        with pytest.raises(ValueError):
            VPDiffusion(dim=0)


def test_decay_variable():
    spec = VPDiffusion(beta0=0.1, beta1=20)
    np.testing.assert_allclose(decay_variable(spec, 1.0), 10.05)
    ve = VEDiffusion()
    np.testing.assert_allclose(decay_variable(ve, 0.7), transition(ve, 0.7).var)
