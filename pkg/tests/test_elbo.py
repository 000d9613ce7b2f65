from __future__ import annotations

import numpy as np
import pytest
from scipy import integrate

from difftime import set_options
from difftime.bridge import draw_fit_set, select_bic
from difftime.elbo import (
    ELBO_COLUMNS,
    Budget,
    cumulative_terms,
    elbo_report,
    estimate_gap,
    estimate_I,
    estimate_K,
    estimate_kl,
    estimate_R,
    kl_bound_check,
    midpoint_nodes,
    prop1_residual,
    report_table,
)
from difftime.mixture import GaussianMixture, diffuse, log_density
from difftime.score import ScoreNet, oracle_score
from difftime.sde import pnoise
from difftime.testing import gaussian_I_zero, gaussian_K, gaussian_R


def _neg_entropy(gm):
    """E log p under a one-dimensional mixture, by quadrature."""

    def _f(x):
        lp = log_density(gm, np.array([[x]]))[0]
        return np.exp(lp) * lp

    return integrate.quad(_f, -10, 15, limit=200, points=gm.means[:, 0].tolist())[0]


@pytest.fixture
def single():
    return GaussianMixture.single([0.5], 0.3)


def test_midpoint_nodes():
    nodes, weights = midpoint_nodes(0.01, 1.0, 4)
    edges = np.geomspace(0.01, 1.0, 5)
    np.testing.assert_allclose(nodes, np.sqrt(edges[:-1] * edges[1:]))
    np.testing.assert_allclose(weights, nodes * np.log(10) / 2)
    np.testing.assert_allclose(midpoint_nodes(0.01, 1.0, 64)[1].sum(), 0.99, rtol=1e-3)
    assert midpoint_nodes(1.0, 1.0, 4)[0].size == 0
    with pytest.raises(ValueError):
        midpoint_nodes(0.01, 1, 0)
    with pytest.raises(ValueError):
        midpoint_nodes(0.0, 1, 4)


def test_midpoint_handles_singular_start():
    # integrand 1/(2t), integral ln(T/t_min)/2
    nodes, weights = midpoint_nodes(1e-5, 0.6, 64)
    np.testing.assert_allclose(np.sum(weights * 0.5 / nodes), 0.5 * np.log(0.6 / 1e-5), rtol=1e-10)


class TestTerms:
    @pytest.mark.parametrize("spec_name,T", [("vp", 0.6), ("ve_toy", 0.5), ("ve", 0.4)])
    def test_K_closed_form(self, request, single, spec_name, T):
        spec = request.getfixturevalue(spec_name)
        est = estimate_K(spec, single, T, n_mc=4096, n_time=64, rng=1)
        assert est.se > 0
        assert est.within(gaussian_K(spec, 0.3, T))

    @pytest.mark.parametrize("spec_name,T", [("vp", 0.6), ("ve_toy", 0.5)])
    def test_R_closed_form(self, request, single, spec_name, T):
        spec = request.getfixturevalue(spec_name)
        est = estimate_R(spec, single, T, n_mc=4096, n_time=64, rng=2)
        assert est.within(gaussian_R(spec, 0.3, T))

    def test_I_zero_score(self, single, vp):
        zero = ScoreNet(1, (4,), 1, zero_output=True)
        est = estimate_I(vp, single, zero, 0.6, n_mc=4096, n_time=64, rng=3)
        assert est.within(gaussian_I_zero(vp, 0.3, 0.6))

    def test_oracle_gap(self, toy, vp):
        est = estimate_gap(vp, toy, oracle_score(toy, vp), 0.7, n_mc=1024, n_time=16, rng=4)
        assert est.within(0.0)
        assert abs(est.value) < 1e-12

    def test_gap_is_paired(self, toy, vp):
        zero = ScoreNet(1, (4,), 1, zero_output=True)
        args = (0.5, 512, 8, 5)
        gap = estimate_gap(vp, toy, zero, *args)
        I = estimate_I(vp, toy, zero, *args)
        K = estimate_K(vp, toy, *args)
        np.testing.assert_allclose(gap.value, I.value - K.value, rtol=1e-10)
        assert gap.value > 0

    def test_sample_set_rejected(self, vp):
        with pytest.raises(TypeError):
            estimate_K(vp, np.zeros((10, 1)), 0.5)


class TestKL:
    def test_identical(self, toy):
        est = estimate_kl(toy, toy, 2048, rng=0)
        assert est.within(0.0)

    def test_gaussians(self):
        p = GaussianMixture.single([0.0], 0.5)
        q = GaussianMixture.single([0.0], 1.0)
        est = estimate_kl(p, q, 8192, rng=0)
        assert est.within(0.5 * (0.5 - 1 - np.log(0.5)))

    def test_mixture_positive(self, toy, vp):
        est = estimate_kl(diffuse(toy, vp, 0.3), pnoise(vp, 0.3), 4096, rng=1)
        assert est.value > 3 * est.se

    def test_dimension_mismatch(self, toy):
        with pytest.raises(ValueError):
            estimate_kl(toy, GaussianMixture.single([0.0, 0.0], 1.0))

    def test_negative_flag(self, monkeypatch):
        p = GaussianMixture.single([0.0], 1.0)
        q = GaussianMixture.single([0.0], 2.0)
        monkeypatch.setattr(
            "difftime.elbo.log_density", lambda gm, x: np.zeros(len(x)) if gm is q else -np.ones(len(x))
        )
        with pytest.warns(UserWarning, match="Negative KL"):
            est = estimate_kl(p, q, 64, rng=0)
        assert est.value == -1


class TestProp1:
    @pytest.mark.parametrize("spec_name,T", [("vp", 0.5), ("vp", 1.0), ("ve_toy", 0.8)])
    def test_residual(self, request, toy, spec_name, T):
        spec = request.getfixturevalue(spec_name)
        est = prop1_residual(spec, toy, T, n_mc=4096, n_time=64, rng=6)
        assert est.within(0.0)


class TestReport:
    def test_oracle_equality(self, toy, vp):
        T = 0.8
        ds = elbo_report(vp, toy, oracle_score(toy, vp), diffuse(toy, vp, T), T, Budget(8192, 16), rng=7)
        assert ds.G.item() == 0
        assert ds.kl.item() == 0
        assert abs(ds.elbo - _neg_entropy(toy)) <= 3 * ds.elbo_se
        assert "history" in ds.attrs

    def test_consistency(self, toy, ve_toy):
        zero = ScoreNet(1, (4,), 1, zero_output=True)
        T = 0.6
        ds = elbo_report(ve_toy, toy, zero, pnoise(ve_toy, T), T, Budget(1024, 8), rng=8)
        np.testing.assert_allclose(ds.G, ds.I - ds.K, rtol=1e-12)
        np.testing.assert_allclose(ds.elbo, ds.entropy_data - ds.G - ds.kl, rtol=1e-12)
        assert ds.attrs["family"] == "VE_TOY"
        assert ds.attrs["mc_samples"] == 1024
        assert ds.T.item() == T
        assert ds.kl > 0

    def test_shared_draws(self, toy, vp):
        zero = ScoreNet(1, (4,), 1, zero_output=True)
        ds = elbo_report(vp, toy, zero, pnoise(vp, 0.5), 0.5, Budget(512, 8), rng=9)
        assert ds.K.item() == estimate_K(vp, toy, 0.5, 512, 8, rng=9).value

    def test_extra_output(self, toy, vp):
        with set_options(extra_output=True):
            ds = elbo_report(vp, toy, oracle_score(toy, vp), pnoise(vp, 0.5), 0.5, Budget(256, 8), rng=0)
        assert ds.K_integrand.dims == ("node",)
        assert ds.node_time.size == 8
        assert {"I_integrand", "R_integrand"} <= set(ds.data_vars)

    def test_table(self, toy, vp):
        sc = oracle_score(toy, vp)
        reports = [elbo_report(vp, toy, sc, pnoise(vp, T), T, Budget(256, 4), rng=0) for T in (0.3, 0.6)]
        df = report_table(reports)
        assert list(df.columns) == ELBO_COLUMNS
        assert df["T"].tolist() == [0.3, 0.6]
        assert (df.n_mc == 256).all()

    def test_bridge_beats_noise(self, toy, ve_toy):
        sc = oracle_score(toy, ve_toy)
        T = 0.3
        base = elbo_report(ve_toy, toy, sc, pnoise(ve_toy, T), T, Budget(2048, 8), rng=1)
        exact = elbo_report(ve_toy, toy, sc, diffuse(toy, ve_toy, T), T, Budget(2048, 8), rng=1)
        assert exact.elbo > base.elbo

    @pytest.mark.parametrize("T", [0.2, 0.4, 0.8, 1.6])
    def test_fitted_aux_not_worse(self, toy, vp, T):
        sc = oracle_score(toy, vp)
        fit = select_bic(draw_fit_set(vp, toy, T, 4096, 0), (1, 2, 3), iters=200, rng=0, restarts=2)
        base = elbo_report(vp, toy, sc, pnoise(vp, T), T, Budget(4096, 16), rng=1)
        bridged = elbo_report(vp, toy, sc, fit.model, T, Budget(4096, 16), rng=1)
        assert bridged.elbo >= base.elbo - 2 * np.hypot(base.elbo_se, bridged.elbo_se)
        assert bridged.G.item() == base.G.item()


class TestCumulative:
    def test_monotone(self, toy, vp):
        zero = ScoreNet(1, (4,), 1, zero_output=True)
        ds = cumulative_terms(vp, toy, zero, [0.2, 0.4, 0.6, 0.8], n_mc=512, n_time=8, rng=0)
        assert (np.diff(ds.K) > 0).all()
        assert (np.diff(ds.I) > 0).all()
        assert (np.diff(ds.G) >= 0).all()
        np.testing.assert_allclose(ds.G, ds.I - ds.K, rtol=1e-12)

    def test_without_score(self, toy, vp):
        ds = cumulative_terms(vp, toy, None, [0.5, 0.25], n_mc=256, n_time=4, rng=0)
        assert set(ds.data_vars) == {"K", "K_se", "R", "R_se"}
        assert ds.T.values.tolist() == [0.25, 0.5]


class TestKLBounds:
    def test_vp_rate(self, toy, vp):
        ds = kl_bound_check(vp, toy, [0.2, 0.3, 0.4, 0.5, 0.6], n_mc=8192, rng=0)
        assert ds.attrs["inconclusive"] == 0
        assert ds.attrs["fitted_rate_ok"] == 1
        assert ds.attrs["fitted_rate"] >= 0.9
        assert (np.diff(ds.kl) < 0).all()

    def test_ve_rate(self, toy, ve_toy):
        ds = kl_bound_check(ve_toy, toy, [0.5, 1.0, 1.5, 2.0], n_mc=8192, rng=0)
        assert ds.attrs["family"] == "VE_TOY"
        assert ds.attrs["fitted_rate_ok"] == 1
        assert np.isfinite(ds.attrs["fitted_constant"])
        np.testing.assert_allclose(ds.decay, [diffuse(toy, ve_toy, T).vars[0] - 0.01 for T in ds.T.values])

    def test_inconclusive(self, gaussian, vp):
        ds = kl_bound_check(vp, gaussian, [2.0, 3.0, 4.0, 5.0], n_mc=256, rng=0)
        assert ds.attrs["inconclusive"] == 1
        assert ds.clipped.all()
        assert ds.attrs["fitted_rate_ok"] == 0

    def test_short_grid(self, toy, vp):
        with pytest.raises(ValueError):
            kl_bound_check(vp, toy, [0.2, 0.4, 0.6])


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(3))
def test_gap_grows_with_time(toy, ve_toy, seed):
    from difftime.score import TrainConfig
    from difftime.testing.utils import cached_score

    gaps = []
    for T in (0.2, 0.4, 0.6, 0.8):
        net = cached_score(
            ScoreNet(1, (32, 32), 2, seed=seed), ve_toy, toy, TrainConfig(T=T, iters=3000, batch=128, lr=3e-3, seed=seed + 1)
        )
        gaps.append(estimate_gap(ve_toy, toy, net, T, n_mc=4096, n_time=32, rng=seed))
    for lo, hi in zip(gaps[:-1], gaps[1:]):
        assert hi.value >= lo.value - 2 * np.hypot(lo.se, hi.se)
