"""
# noqa: SS01
Output Files
============

Readers and writers of the experiment artifacts: CSV tables stamped with the manifest hash, score-network
checkpoints, auxiliary fits and SVG line plots. Everything written here is a deterministic function of its inputs.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from pathlib import Path
from xml.sax.saxutils import escape

import jsonpickle
import numpy as np
import pandas as pd
import xarray as xr

from difftime.bridge import AuxFitResult
from difftime.score import ACTIVATIONS, ScoreNet, TrainedScore
from difftime.simulation import PathBatch

CHECKPOINT_MAGIC = b"DTSN"
CHECKPOINT_VERSION = 1
FLOAT_FORMAT = "%.12g"


def _prepare(path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def write_csv(df: pd.DataFrame, path: str | Path, manifest_hash: str, **metadata) -> Path:
    """
    Write a table preceded by comment lines: the manifest hash, then one ``# key: value`` line per metadata entry.

    Floats are written with a fixed format and the index is dropped.
    """
    path = _prepare(path)
    header = [f"# manifest: {manifest_hash}"] + [f"# {k}: {v}" for k, v in metadata.items()]
    with path.open("w", newline="") as f:
        f.write("\n".join(header) + "\n")
        df.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def read_csv(path: str | Path) -> pd.DataFrame:
    """Read a table written by :py:func:`write_csv`, skipping the comment lines."""
    return pd.read_csv(path, comment="#")


def read_metadata(path: str | Path) -> dict[str, str]:
    """The ``# key: value`` comment lines at the top of a table."""
    out = {}
    with Path(path).open() as f:
        for line in f:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].partition(":")
            out[key.strip()] = value.strip()
    return out


def read_samples(path: str | Path) -> np.ndarray:
    """A sample set, one row per sample and one column per coordinate, as a (n, dim) array."""
    return read_csv(path).to_numpy(dtype=np.float64)


def _states_frame(states: np.ndarray, seed: int | None = None) -> pd.DataFrame:
    df = pd.DataFrame(states, columns=[f"x{i}" for i in range(states.shape[1])])
    if seed is not None:
        df.insert(0, "seed", seed)
    return df


def write_paths(batches: PathBatch | Sequence[PathBatch] | np.ndarray, path: str | Path, manifest_hash: str, **metadata) -> Path:
    """
    Write final states, one row per sample with columns ``x0, x1, ...``.

    A sequence of batches, one per seed, gets a leading ``seed`` column. The score evaluations per path are
    recorded as the ``nfe`` metadata entry.
    """
    if isinstance(batches, np.ndarray):
        return write_csv(_states_frame(batches), path, manifest_hash, **metadata)
    if isinstance(batches, PathBatch):
        df = _states_frame(batches.states)
        nfe = batches.nfe
    else:
        df = pd.concat([_states_frame(b.states, s) for s, b in enumerate(batches)], ignore_index=True)
        nfe = batches[0].nfe
    return write_csv(df, path, manifest_hash, nfe=nfe, **metadata)


def write_loss(trained: TrainedScore, path: str | Path, manifest_hash: str) -> Path:
    """Write the loss trace of a trained network, columns ``iter, loss``."""
    df = trained.ds.loss.to_dataframe().reset_index()[["iter", "loss"]]
    return write_csv(df, path, manifest_hash, T=trained.cfg.T)


def save_checkpoint(net: ScoreNet, path: str | Path) -> Path:
    """
    Write a score network.

    The file holds the magic bytes ``DTSN``, then little-endian 64-bit integers
    ``[header length, version, dim, time_embed, activation index, number of hidden layers, *hidden, number of
    parameters]``, then the parameters as little-endian 64-bit floats.
    """
    path = _prepare(path)
    body = [
        CHECKPOINT_VERSION,
        net.dim,
        net.time_embed,
        list(ACTIVATIONS).index(net.activation),
        len(net.hidden),
        *net.hidden,
        net.n_params,
    ]
    header = np.array([len(body) + 1, *body], dtype="<i8")
    with path.open("wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(header.tobytes())
        f.write(np.asarray(net.params_flat, dtype="<f8").tobytes())
    return path


def load_checkpoint(path: str | Path) -> ScoreNet:
    """Read a score network written by :py:func:`save_checkpoint`."""
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a score-network checkpoint.")
    n_header = int(np.frombuffer(raw, dtype="<i8", count=1, offset=4)[0])
    header = np.frombuffer(raw, dtype="<i8", count=n_header, offset=4)
    version, dim, time_embed, act, n_hidden = (int(v) for v in header[1:6])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"Unsupported checkpoint version {version}.")
    hidden = tuple(int(h) for h in header[6 : 6 + n_hidden])
    n_params = int(header[6 + n_hidden])
    params = np.frombuffer(raw, dtype="<f8", offset=4 + 8 * n_header)
    if params.size != n_params:
        raise ValueError(f"Truncated checkpoint {path}: {params.size} of {n_params} parameters.")
    return ScoreNet(dim, hidden, time_embed, list(ACTIVATIONS)[act], params_flat=params.astype(np.float64))


def save_aux(fit: AuxFitResult, path: str | Path) -> Path:
    """Write an auxiliary fit as JSON: the mixture arrays and the fit metadata."""
    path = _prepare(path)
    path.write_text(jsonpickle.encode(fit, indent=2) + "\n")
    return path


def load_aux(path: str | Path) -> AuxFitResult:
    """Read an auxiliary fit written by :py:func:`save_aux`."""
    fit = jsonpickle.decode(Path(path).read_text())  # noqa: S301
    if not isinstance(fit, AuxFitResult):
        raise ValueError(f"{path} does not hold an auxiliary fit.")
    return fit


def table(ds: xr.Dataset, columns: Sequence[str]) -> pd.DataFrame:
    """The given variables and coordinates of a one-dimensional dataset as a table."""
    return ds.to_dataframe().reset_index()[list(columns)]


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    return np.linspace(lo, hi, n)


_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def svg_plot(
    path: str | Path,
    x: Sequence[float],
    series: Mapping[str, Sequence[float]],
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    width: int = 640,
    height: int = 400,
) -> Path:
    """
    Draw line plots as an SVG file, one polyline per series, with axes, ticks and a legend.

    Non-finite points are left out of their polyline.
    """
    path = _prepare(path)
    x = np.asarray(x, dtype=np.float64)
    ys = {k: np.asarray(v, dtype=np.float64) for k, v in series.items()}
    finite = np.concatenate([v[np.isfinite(v)] for v in ys.values()] + [np.empty(0)])
    ylo, yhi = (finite.min(), finite.max()) if finite.size else (0.0, 1.0)
    if yhi == ylo:
        ylo, yhi = ylo - 0.5, yhi + 0.5
    xlo, xhi = (x.min(), x.max()) if x.max() > x.min() else (x.min() - 0.5, x.max() + 0.5)
    left, right, top, bottom = 70, 20, 40, 50
    pw, ph = width - left - right, height - top - bottom

    def px(v):
        return left + (v - xlo) / (xhi - xlo) * pw

    def py(v):
        return top + (yhi - v) / (yhi - ylo) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" '
        'font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for v in _ticks(xlo, xhi):
        out.append(f'<line x1="{px(v):.2f}" y1="{top + ph}" x2="{px(v):.2f}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{px(v):.2f}" y="{top + ph + 18}" text-anchor="middle">{v:.3g}</text>')
    for v in _ticks(ylo, yhi):
        out.append(f'<line x1="{left - 5}" y1="{py(v):.2f}" x2="{left}" y2="{py(v):.2f}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{py(v) + 4:.2f}" text-anchor="end">{v:.3g}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(
        f'<text x="15" y="{top + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 15 {top + ph / 2:.1f})">{escape(ylabel)}</text>'
    )
    for i, (label, y) in enumerate(ys.items()):
        color = _COLORS[i % len(_COLORS)]
        ok = np.isfinite(y)
        points = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x[ok], y[ok]))
        out.append(f'<polyline points="{points}" fill="none" stroke="{color}" stroke-width="2"/>')
        ly = top + 15 + 16 * i
        lx = left + pw - 120
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 25}" y="{ly + 4}">{escape(label)}</text>')
    out.append("</svg>")
    path.write_text("\n".join(out) + "\n")
    return path
