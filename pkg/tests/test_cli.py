from __future__ import annotations

import numpy as np
import pytest
from typer.testing import CliRunner

from difftime.artifacts import load_aux, read_csv, read_metadata
from difftime.cli import app
from difftime.elbo import ELBO_COLUMNS, estimate_gap
from difftime.experiments import analytic_target, load_score, sample_summary, sweep_summary
from difftime.manifest import load_manifest

runner = CliRunner()


def _invoke(*args):
    return runner.invoke(app, [str(a) for a in args])


def test_help():
    result = _invoke("--help")
    assert result.exit_code == 0
    for cmd in ("train-scores", "fit-aux", "elbo-sweep", "sample", "bpd", "kl-bounds"):
        assert cmd in result.output


def test_missing_manifest(tmp_path):
    assert _invoke("kl-bounds", "-m", tmp_path / "nope.toml").exit_code != 0


class TestTrainAndSweep:
    def test_pipeline(self, manifest_file):
        path = manifest_file()
        m = load_manifest(path)
        assert _invoke("train-scores", "-m", path).exit_code == 0
        for T in m.T_grid:
            assert m.artifact("checkpoint", T).exists()
            loss = read_csv(m.artifact("loss", T))
            assert len(loss) == 20
            assert read_metadata(m.artifact("loss", T))["manifest"] == m.hash

        assert _invoke("fit-aux", "-m", path).exit_code == 0
        fit = load_aux(m.artifact("aux", 0.4))
        assert 1 <= fit.n_components <= 2

        assert _invoke("elbo-sweep", "-m", path).exit_code == 0
        sweep = read_csv(m.artifact("elbo_sweep"))
        assert sweep.columns.tolist() == ELBO_COLUMNS
        assert sweep["T"].tolist() == [0.4, 0.8]
        bridged = read_csv(m.artifact("elbo_sweep_bridged"))
        assert bridged["T"].tolist() == [0.4, 0.8]
        summary = read_csv(m.artifact("elbo_summary"))
        assert summary.T_star.iloc[0] in (0.4, 0.8)
        assert m.artifact("elbo_plot").read_text().startswith("<svg")

        assert _invoke("sample", "-m", path, "--T", 0.4, "--mode", "bridged").exit_code == 0
        samples = read_csv(m.artifact("samples", 0.4, "bridged"))
        assert samples.columns.tolist() == ["seed", "x0"]
        assert len(samples) == 2 * 64
        assert read_metadata(m.artifact("samples", 0.4, "bridged"))["nfe"] == "20"
        s = read_csv(m.artifact("sample_summary", 0.4, "bridged"))
        assert s.nfe.iloc[0] == m.steps(0.4) == 20

    @pytest.mark.slow
    def test_training_time_matters(self, manifest_file):
        path = manifest_file(
            T=(0.2, 0.4, 0.6, 1.0), budgets={"train_iters": 3000}, train={"hidden": [32, 32], "batch": 128, "lr": 0.003}
        )
        assert _invoke("train-scores", "-m", path).exit_code == 0
        m = load_manifest(path)
        assert all(m.artifact("checkpoint", T).exists() for T in m.T_grid)
        gm = analytic_target(m)
        own = estimate_gap(m.spec, gm, load_score(m, 0.4), 0.4, 4096, 32, rng=0)
        other = estimate_gap(m.spec, gm, load_score(m, 1.0), 0.4, 4096, 32, rng=0)
        assert other.value >= own.value - 2 * np.hypot(own.se, other.se)

    def test_missing_checkpoints(self, manifest_file):
        path = manifest_file()
        result = _invoke("elbo-sweep", "-m", path)
        assert result.exit_code == 2

    def test_sweep_without_aux(self, manifest_file):
        path = manifest_file()
        m = load_manifest(path)
        assert _invoke("elbo-sweep", "-m", path, "--oracle").exit_code == 2
        assert m.artifact("elbo_sweep").exists()
        assert not m.artifact("elbo_sweep_bridged").exists()


class TestReproducible:
    def test_rerun_identical(self, manifest_file, tmp_path):
        path = manifest_file()
        assert _invoke("fit-aux", "-m", path).exit_code == 0
        args = ("elbo-sweep", "-m", path, "--oracle")
        assert _invoke(*args).exit_code == 0
        m = load_manifest(path)
        first = {n: m.artifact(n).read_bytes() for n in ("elbo_sweep", "elbo_sweep_bridged", "elbo_summary")}
        assert _invoke(*args, "--workers", 3).exit_code == 0
        for name, content in first.items():
            assert m.artifact(name).read_bytes() == content

    def test_out_dir_and_seed(self, manifest_file, tmp_path):
        path = manifest_file(T=(0.3, 0.6, 0.9, 1.2))
        assert _invoke("kl-bounds", "-m", path, "--out-dir", tmp_path / "a").exit_code == 0
        assert _invoke("kl-bounds", "-m", path, "--out-dir", tmp_path / "b").exit_code == 0
        a = (tmp_path / "a" / "klbounds.csv").read_bytes()
        assert a == (tmp_path / "b" / "klbounds.csv").read_bytes()
        assert _invoke("kl-bounds", "-m", path, "--out-dir", tmp_path / "c", "--seed", 8).exit_code == 0
        assert a != (tmp_path / "c" / "klbounds.csv").read_bytes()


class TestCommands:
    def test_kl_bounds(self, manifest_file):
        path = manifest_file(T=(0.3, 0.6, 0.9, 1.2))
        assert _invoke("kl-bounds", "-m", path).exit_code == 0
        m = load_manifest(path)
        df = read_csv(m.artifact("klbounds"))
        assert df.columns.tolist()[:5] == ["T", "kl", "kl_se", "decay", "clipped"]
        assert read_metadata(m.artifact("klbounds"))["family"] == "VE_TOY"

    def test_kl_bounds_short_grid(self, manifest_file):
        assert _invoke("kl-bounds", "-m", manifest_file()).exit_code == 1

    @pytest.mark.parametrize("mode", ["baseline", "bridged-concurrent", "bridged-sequential"])
    def test_bpd(self, manifest_file, mode):
        path = manifest_file()
        if mode == "bridged-concurrent":
            assert _invoke("fit-aux", "-m", path).exit_code == 0
        assert _invoke("bpd", "-m", path, "--T", 0.8, "--mode", mode, "--oracle").exit_code == 0
        m = load_manifest(path)
        df = read_csv(m.artifact("bpd", 0.8, mode))
        assert df.columns.tolist() == ["point", "logp", "bpd", "nfe", "failed"]
        assert len(df) == 8
        assert (df.failed == 0).all()
        np.testing.assert_allclose(df.bpd, -df.logp / np.log(2), rtol=1e-10)
        if mode == "bridged-sequential":
            assert m.artifact("aux_sequential", 0.8).exists()

    def test_bridged_needs_fit(self, manifest_file):
        result = _invoke("sample", "-m", manifest_file(), "--T", 0.4, "--mode", "bridged", "--oracle")
        assert result.exit_code == 1

    def test_sample_file_target(self, manifest_file, tmp_path):
        (tmp_path / "data.csv").write_text("x0\n1.0\n1.1\n2.9\n3.2\n3.0\n")
        path = manifest_file(target='path = "data.csv"')
        assert _invoke("fit-aux", "-m", path).exit_code == 0
        # the ELBO needs an analytic target
        assert _invoke("elbo-sweep", "-m", path, "--oracle").exit_code == 1


def test_sweep_summary():
    import pandas as pd

    base = pd.DataFrame({"T": [0.2, 0.5, 0.8], "elbo": [-3.0, -1.0, -2.0], "elbo_se": [0.1, 0.1, 0.1]})
    bridged = pd.DataFrame({"T": [0.2, 0.5, 0.8], "elbo": [-1.1, -0.9, -1.5], "elbo_se": [0.1, 0.1, 0.1]})
    row = sweep_summary(base, bridged).iloc[0]
    assert row.T_star == 0.5
    assert row.interior == 1
    assert row.tau == 0.2
    assert np.isnan(sweep_summary(base).iloc[0].tau)


def test_sample_summary():
    out = sample_summary([1.0, 2.0, 3.0])
    assert out["median"] == 2.0
    assert out["mean"] == 2.0
    np.testing.assert_allclose(out["se"], 1 / np.sqrt(3))
