from __future__ import annotations

import numpy as np
import pandas as pd
import pytest

from difftime.artifacts import (
    load_aux,
    load_checkpoint,
    read_csv,
    read_metadata,
    read_samples,
    save_aux,
    save_checkpoint,
    svg_plot,
    write_csv,
    write_loss,
    write_paths,
)
from difftime.bridge import fit_em
from difftime.mixture import sample
from difftime.score import ScoreNet, TrainConfig, train
from difftime.simulation import PathBatch


def test_csv(tmp_path):
    df = pd.DataFrame({"T": [0.1, 0.2], "value": [1 / 3, np.nan]})
    path = write_csv(df, tmp_path / "sub" / "table.csv", "abc123", family="VP", steps=10)
    lines = path.read_text().splitlines()
    assert lines[0] == "# manifest: abc123"
    assert lines[3] == "T,value"
    assert lines[4] == "0.1,0.333333333333"
    assert read_metadata(path) == {"manifest": "abc123", "family": "VP", "steps": "10"}
    out = read_csv(path)
    assert list(out.columns) == ["T", "value"]
    assert np.isnan(out.value[1])


def test_paths(tmp_path):
    batch = PathBatch(np.arange(6.0).reshape(3, 2), 5, np.array([1.0, 0.0]))
    path = write_paths(batch, tmp_path / "paths.csv", "h")
    assert read_metadata(path)["nfe"] == "5"
    np.testing.assert_array_equal(read_samples(path), batch.states)


def test_paths_per_seed(tmp_path):
    batches = [PathBatch(np.full((2, 1), float(s)), 7, np.array([1.0, 0.0])) for s in range(3)]
    path = write_paths(batches, tmp_path / "samples.csv", "h", mode="baseline")
    meta = read_metadata(path)
    assert meta["nfe"] == "7"
    assert meta["mode"] == "baseline"
    df = read_csv(path)
    assert df.columns.tolist() == ["seed", "x0"]
    np.testing.assert_array_equal(df.seed, [0, 0, 1, 1, 2, 2])
    np.testing.assert_array_equal(df.x0, df.seed)


class TestCheckpoint:
    @pytest.mark.parametrize("activation", ["silu", "tanh"])
    def test_roundtrip(self, tmp_path, activation, random):
        net = ScoreNet(2, (8, 4), 3, activation=activation, seed=4)
        path = save_checkpoint(net, tmp_path / "net.dtsn")
        assert path.read_bytes()[:4] == b"DTSN"
        other = load_checkpoint(path)
        assert other.hidden == (8, 4)
        assert other.activation == activation
        x = random.normal(size=(5, 2))
        np.testing.assert_array_equal(other(x, 0.3), net(x, 0.3))

    def test_deterministic_bytes(self, tmp_path):
        a = save_checkpoint(ScoreNet(1, (4,), 1, seed=1), tmp_path / "a.dtsn")
        b = save_checkpoint(ScoreNet(1, (4,), 1, seed=1), tmp_path / "b.dtsn")
        assert a.read_bytes() == b.read_bytes()

    def test_corrupt(self, tmp_path):
        bad = tmp_path / "bad.dtsn"
        bad.write_bytes(b"NOPE")
        with pytest.raises(ValueError):
            load_checkpoint(bad)
        path = save_checkpoint(ScoreNet(1, (4,), 1), tmp_path / "net.dtsn")
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ValueError, match="Truncated"):
            load_checkpoint(path)


def test_loss(tmp_path, toy, ve_toy):
    trained = train(ScoreNet(1, (4,), 1), ve_toy, toy, TrainConfig(T=0.5, iters=4, batch=8))
    path = write_loss(trained, tmp_path / "loss.csv", "h")
    df = read_csv(path)
    assert df.columns.tolist() == ["iter", "loss"]
    assert df.iter.tolist() == [0, 1, 2, 3]
    assert read_metadata(path)["T"] == "0.5"


def test_aux(tmp_path, toy, random):
    fit = fit_em(sample(toy, 500, random), 2, rng=0, restarts=1)
    path = save_aux(fit, tmp_path / "aux.json")
    other = load_aux(path)
    np.testing.assert_array_equal(other.model.means, fit.model.means)
    np.testing.assert_array_equal(other.loglik_trace, fit.loglik_trace)
    assert other.metadata() == fit.metadata()
    (tmp_path / "other.json").write_text("[1, 2]")
    with pytest.raises(ValueError):
        load_aux(tmp_path / "other.json")


def test_svg(tmp_path):
    path = svg_plot(tmp_path / "p.svg", [0.1, 0.2, 0.3], {"a": [1, 2, np.nan], "b & c": [0, 0, 0]}, title="t<1>")
    text = path.read_text()
    assert text.startswith("<svg")
    assert text.count("<polyline") == 2
    assert "b &amp; c" in text
    assert "t&lt;1&gt;" in text
