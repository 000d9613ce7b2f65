"""
# noqa: SS01
Score Networks and Denoising Score Matching
===========================================

A small multilayer perceptron ``s(x, t)`` with hand-written reverse-mode gradients, trained with Adam on the
denoising score-matching objective. The network output is the raw score; no ``1/sqrt(var)`` rescaling is applied.
"""

from __future__ import annotations

import logging
from typing import NamedTuple

import bottleneck as bn
import numpy as np
import xarray as xr

from difftime.base import NonFiniteError, Parametrizable, ParametrizableWithDataset, as_states
from difftime.mixture import GaussianMixture, diffuse, draw_data, score, score_at_times, target_dim
from difftime.options import OPTIONS, T_MIN
from difftime.sde import DiffusionSpec
from difftime.streams import Streams
from difftime.typing import LambdaMode

logger = logging.getLogger("difftime")

__all__ = [
    "Adam",
    "DSMBatch",
    "OracleScore",
    "ScoreNet",
    "TrainConfig",
    "TrainedScore",
    "draw_dsm_batch",
    "dsm_loss",
    "dsm_residuals",
    "forward",
    "oracle_score",
    "train",
]


def _silu(z):
    return z * (0.5 * (1 + np.tanh(0.5 * z)))


def _dsilu(z):
    sig = 0.5 * (1 + np.tanh(0.5 * z))
    return sig * (1 + z * (1 - sig))


def _dtanh(z):
    return 1 - np.tanh(z) ** 2


# name: (function, derivative, Lipschitz constant)
ACTIVATIONS = {
    "silu": (_silu, _dsilu, 1.0998),
    "tanh": (np.tanh, _dtanh, 1.0),
}


class ScoreNet(Parametrizable):
    """
    Multilayer perceptron approximating the score of the time marginals.

    The input is ``[x, t, sin(2^k pi t), cos(2^k pi t)]`` for ``k < time_embed``, of width ``dim + 2 time_embed + 1``;
    the output has width `dim`. All weights and biases live in the single vector `params_flat`; the layers are views
    into it, laid out as ``W_0, b_0, W_1, b_1, ...`` with ``W_l`` of shape (fan_in, fan_out).

    Parameters
    ----------
    dim : int
        Dimension of the state.
    hidden : tuple of int
        Widths of the hidden layers.
    time_embed : int
        Number of sinusoidal time frequencies.
    activation : {'silu', 'tanh'}
        Smooth nonlinearity of the hidden layers.
    params_flat : array, optional
        Parameter vector. If not given, weights are drawn from ``N(0, 1/fan_in)`` and biases are zero.
    seed : int
        Seed of the initial weights.
    zero_output : bool
        If True, the last layer is initialized to zero so the network outputs 0 everywhere.
    """

    _repr_hide_params = ["params_flat"]

    def __init__(
        self,
        dim: int = 1,
        hidden: tuple[int, ...] = (64, 64, 64),
        time_embed: int = 4,
        activation: str = "silu",
        params_flat: np.ndarray | None = None,
        seed: int = 0,
        zero_output: bool = False,
    ):
        if activation not in ACTIVATIONS:
            raise ValueError(f"Unknown activation {activation!r}, expected one of {list(ACTIVATIONS)}.")
        super().__init__(
            dim=int(dim),
            hidden=tuple(int(h) for h in hidden),
            time_embed=int(time_embed),
            activation=activation,
            seed=int(seed),
            zero_output=zero_output,
        )
        if params_flat is None:
            params_flat = self._init_params()
        params_flat = np.array(params_flat, dtype=np.float64)
        if params_flat.shape != (self.n_params,):
            raise ValueError(f"Expected {self.n_params} parameters for this architecture, got {params_flat.shape}.")
        self["params_flat"] = params_flat

    @property
    def widths(self) -> tuple[int, ...]:
        """Widths of all layers, input and output included."""
        return (self.dim + 2 * self.time_embed + 1, *self.hidden, self.dim)

    @property
    def shapes(self) -> list[tuple[int, int]]:
        """Weight shapes, layer by layer."""
        return list(zip(self.widths[:-1], self.widths[1:]))

    @property
    def n_params(self) -> int:
        """Size of the parameter vector."""
        return sum(a * b + b for a, b in self.shapes)

    @property
    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """(weight, bias) views into `params_flat`."""
        out = []
        i = 0
        for a, b in self.shapes:
            W = self.params_flat[i : i + a * b].reshape(a, b)
            i += a * b
            out.append((W, self.params_flat[i : i + b]))
            i += b
        return out

    def _init_params(self) -> np.ndarray:
        rng = Streams(self.seed).spawn("init").generator()
        chunks = []
        for l, (a, b) in enumerate(self.shapes):
            W = rng.standard_normal((a, b)) / np.sqrt(a)
            if self.zero_output and l == len(self.shapes) - 1:
                W[:] = 0
            chunks.extend([W.ravel(), np.zeros(b)])
        return np.concatenate(chunks)

    def copy(self, params_flat: np.ndarray | None = None) -> ScoreNet:
        """Same architecture, with a copy of the parameters or the given ones."""
        params = self.parameters
        params["params_flat"] = self.params_flat.copy() if params_flat is None else params_flat
        return ScoreNet(**params)

    def features(self, x: np.ndarray, t: float | np.ndarray) -> np.ndarray:
        """Network input for a batch of states and times."""
        x = as_states(x, self.dim)
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
        freqs = np.pi * 2.0 ** np.arange(self.time_embed)
        ft = t[:, np.newaxis] * freqs
        return np.concatenate([x, t[:, np.newaxis], np.sin(ft), np.cos(ft)], axis=1)

    def _forward(self, X: np.ndarray) -> tuple[np.ndarray, list]:
        """Evaluate on features, keeping what the backward pass needs."""
        act = ACTIVATIONS[self.activation][0]
        cache = []
        h = X
        *hidden, (W_out, b_out) = self.layers
        for W, b in hidden:
            z = h @ W + b
            cache.append((h, z))
            h = act(z)
        cache.append((h, None))
        return h @ W_out + b_out, cache

    def _backward(self, cache: list, dout: np.ndarray) -> np.ndarray:
        """Gradient of ``sum(dout * output)`` with respect to `params_flat`."""
        dact = ACTIVATIONS[self.activation][1]
        layers = self.layers
        grads = [None] * len(layers)
        delta = dout
        for l in range(len(layers) - 1, -1, -1):
            h, _ = cache[l]
            grads[l] = (h.T @ delta, delta.sum(axis=0))
            if l > 0:
                delta = (delta @ layers[l][0].T) * dact(cache[l - 1][1])
        return np.concatenate([part.ravel() for pair in grads for part in pair])

    def __call__(self, x: np.ndarray, t: float | np.ndarray) -> np.ndarray:
        """Score estimate at a batch of states, shape (n, dim)."""
        return self._forward(self.features(x, t))[0]

    def lipschitz_bound(self) -> float:
        """Upper bound of the Lipschitz constant with respect to the input, from the spectral norms of the weights."""
        lip = ACTIVATIONS[self.activation][2]
        bound = 1.0
        for l, (W, _) in enumerate(self.layers):
            bound *= np.linalg.norm(W, ord=2) * (lip if l < len(self.shapes) - 1 else 1.0)
        return float(bound)


def forward(net: ScoreNet, x: np.ndarray, t: float | np.ndarray) -> np.ndarray:
    """
    Evaluate a score network.

    Parameters
    ----------
    net : ScoreNet
        The network.
    x : array, (dim,) or (n, dim)
        States.
    t : float or array (n,)
        Times.

    Returns
    -------
    array
        Same shape as `x`.
    """
    x = np.asarray(x, dtype=np.float64)
    out = net(x, t)
    return out[0] if x.ndim == 1 and x.size == net.dim else out


class TrainConfig(Parametrizable):
    """
    Settings of score-matching training.

    Parameters
    ----------
    T : float
        Diffusion time; training times are drawn from U(t_min, T).
    t_min : float, optional
        Time floor. Defaults to the ``t_min`` option.
    batch : int
        Samples per iteration.
    iters : int
        Number of Adam steps.
    lr : float
        Learning rate.
    adam : tuple of float
        (b1, b2, eps) of Adam.
    lambda_mode : {'g_squared', 'unit'}
        Loss weighting, g(t)^2 (likelihood weighting) or 1.
    seed : int
        Seed of the training batches.
    full_batch : bool
        If True, every iteration reuses the first batch.
    """

    def __init__(
        self,
        T: float,
        t_min: float | None = None,
        batch: int = 256,
        iters: int = 20000,
        lr: float = 1e-3,
        adam: tuple[float, float, float] = (0.9, 0.999, 1e-8),
        lambda_mode: str | LambdaMode = "g_squared",
        seed: int = 0,
        full_batch: bool = False,
    ):
        t_min = OPTIONS[T_MIN] if t_min is None else float(t_min)
        if not 0 < t_min < T:
            raise ValueError(f"Training times need 0 < t_min < T, got t_min={t_min}, T={T}.")
        if batch < 1 or iters < 0 or not lr > 0:
            raise ValueError(f"Invalid training budget: batch={batch}, iters={iters}, lr={lr}.")
        super().__init__(
            T=float(T),
            t_min=t_min,
            batch=int(batch),
            iters=int(iters),
            lr=float(lr),
            adam=tuple(float(a) for a in adam),
            lambda_mode=LambdaMode(lambda_mode).value,
            seed=int(seed),
            full_batch=full_batch,
        )


class DSMBatch(NamedTuple):
    """One batch of the denoising score-matching objective."""

    x0: np.ndarray
    t: np.ndarray
    xt: np.ndarray
    target: np.ndarray
    weight: np.ndarray


def draw_dsm_batch(
    spec: DiffusionSpec, data: GaussianMixture | np.ndarray, cfg: TrainConfig, rng: np.random.Generator
) -> DSMBatch:
    """
    Draw times, clean and noisy states and regression targets.

    The target ``-eps / sqrt(var)`` is the conditional score of the transition kernel at the noisy state.
    """
    t = rng.uniform(cfg.t_min, cfg.T, size=cfg.batch)
    x0 = draw_data(data, cfg.batch, rng)
    eps = rng.standard_normal((cfg.batch, target_dim(data)))
    m, s = spec.transition(t)
    sd = np.sqrt(s)[:, np.newaxis]
    xt = m[:, np.newaxis] * x0 + sd * eps
    _, g = spec.drift_diffusion(t)
    weight = g**2 if cfg.lambda_mode == LambdaMode.G_SQUARED.value else np.ones_like(t)
    return DSMBatch(x0, t, xt, -eps / sd, weight)


def dsm_residuals(score_fn, batch: DSMBatch) -> np.ndarray:
    """Per-sample loss terms ``lambda(t) |s(x_t, t) - target|^2``."""
    return batch.weight * np.sum((score_fn(batch.xt, batch.t) - batch.target) ** 2, axis=1)


def dsm_loss(
    net: ScoreNet, spec: DiffusionSpec, gm: GaussianMixture | np.ndarray, cfg: TrainConfig, batch_rng: np.random.Generator
) -> tuple[float, np.ndarray]:
    """
    Denoising score-matching loss and its exact gradient.

    Parameters
    ----------
    net : ScoreNet
        The network.
    spec : DiffusionSpec
        The forward process.
    gm : GaussianMixture or array
        The data distribution, analytic or as a sample set.
    cfg : TrainConfig
        Training settings.
    batch_rng : np.random.Generator
        Source of the batch.

    Returns
    -------
    loss : float
        ``T * mean(lambda(t) |s(x_t, t) - target|^2)``.
    grad : array
        Gradient with respect to ``net.params_flat``.
    """
    batch = draw_dsm_batch(spec, gm, cfg, batch_rng)
    out, cache = net._forward(net.features(batch.xt, batch.t))
    diff = out - batch.target
    loss = cfg.T * np.mean(batch.weight * np.sum(diff**2, axis=1))
    dout = (2 * cfg.T / cfg.batch) * batch.weight[:, np.newaxis] * diff
    return float(loss), net._backward(cache, dout)


class Adam:
    """
    Adam optimizer acting in place on a flat parameter vector.

    Parameters
    ----------
    params : array
        Parameters, updated in place by :py:meth:`step`.
    lr : float
        Step size.
    b1, b2 : float
        Decay rates of the first and second moment estimates.
    eps : float
        Denominator offset.
    """

    def __init__(self, params: np.ndarray, lr: float = 1e-3, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1 = b1
        self.b2 = b2
        self.eps = eps
        self.t = 0
        self.m = np.zeros_like(params)
        self.v = np.zeros_like(params)

    def step(self, grad: np.ndarray) -> None:
        """Apply one update."""
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad**2
        m_hat = self.m / (1 - self.b1**self.t)
        v_hat = self.v / (1 - self.b2**self.t)
        self.params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class TrainedScore(ParametrizableWithDataset):
    """
    A trained score network with its training settings.

    The loss trace is stored in ``ds`` (variables ``loss`` and ``smoothed`` along ``iter``).
    Instances are score functions and can be restored from their dataset with :py:meth:`from_dataset`.
    """

    _repr_hide_params = ["net"]

    def __init__(self, net: ScoreNet, cfg: TrainConfig, family: str = ""):
        super().__init__(net=net, cfg=cfg, family=family)

    def __call__(self, x, t):
        """Evaluate the trained network."""
        return self.net(x, t)

    @property
    def loss(self) -> np.ndarray:
        """Per-iteration loss."""
        return self.ds.loss.values


def smooth_loss(loss: np.ndarray, window: int | None = None) -> np.ndarray:
    """Trailing moving average of a loss trace, window of 5% of its length by default."""
    if loss.size == 0:
        return loss
    window = window or max(1, min(500, loss.size // 20))
    return bn.move_mean(loss, window, min_count=1)


def train(net: ScoreNet, spec: DiffusionSpec, gm: GaussianMixture | np.ndarray, cfg: TrainConfig) -> TrainedScore:
    """
    Train a score network with Adam on the denoising score-matching loss.

    Parameters
    ----------
    net : ScoreNet
        Initial network. It is not modified.
    spec : DiffusionSpec
        The forward process.
    gm : GaussianMixture or array
        The data distribution.
    cfg : TrainConfig
        Training settings. Batches come from ``Streams(cfg.seed)``, one counter per iteration,
        so two runs with the same configuration give identical traces.

    Returns
    -------
    TrainedScore
        The final network and its loss trace.

    Raises
    ------
    NonFiniteError
        If the loss or its gradient stops being finite. The iteration, loss and gradient norm are reported.
    """
    work = net.copy()
    b1, b2, eps = cfg.adam
    opt = Adam(work.params_flat, lr=cfg.lr, b1=b1, b2=b2, eps=eps)
    streams = Streams(cfg.seed).spawn("dsm")
    losses = np.empty(cfg.iters)
    report_every = max(1, cfg.iters // 10)
    for it in range(cfg.iters):
        loss, grad = dsm_loss(work, spec, gm, cfg, streams.generator(0 if cfg.full_batch else it))
        gnorm = float(np.linalg.norm(grad))
        if not (np.isfinite(loss) and np.isfinite(gnorm)):
            raise NonFiniteError("Non-finite training loss", iteration=it, loss=loss, grad_norm=gnorm)
        losses[it] = loss
        opt.step(grad)
        if (it + 1) % report_every == 0:
            logger.debug("T=%s iteration %s: loss %.5g, grad norm %.3g", cfg.T, it + 1, loss, gnorm)

    out = TrainedScore(work, cfg, family=spec.family.value)
    ds = xr.Dataset(
        {
            "loss": (("iter",), losses, {"long_name": "Denoising score-matching loss"}),
            "smoothed": (("iter",), smooth_loss(losses), {"long_name": "Moving average of the loss"}),
        },
        coords={"iter": np.arange(cfg.iters)},
        attrs={"T": cfg.T, "lambda_mode": cfg.lambda_mode, "seed": cfg.seed},
    )
    out.set_dataset(ds)
    return out


class OracleScore(Parametrizable):
    """Exact score of the time marginals of an analytic target, usable wherever a trained network is."""

    def __init__(self, gm: GaussianMixture, spec: DiffusionSpec):
        super().__init__(gm=gm, spec=spec)

    def __call__(self, x: np.ndarray, t: float | np.ndarray) -> np.ndarray:
        """Score of p(x, t), shape (n, dim)."""
        x = as_states(x, self.gm.dim)
        if np.ndim(t) == 0:
            return score(diffuse(self.gm, self.spec, float(t)), x)
        return score_at_times(self.gm, self.spec, x, np.asarray(t))


def oracle_score(gm: GaussianMixture, spec: DiffusionSpec) -> OracleScore:
    """
    Wrap the analytic score of ``diffuse(gm, spec, t)`` as a score function.

    Examples
    --------
    >>> from difftime.mixture import GaussianMixture
    >>> from difftime.sde import VPDiffusion
    >>> s = oracle_score(GaussianMixture.single([0.0], 1.0), VPDiffusion())
    >>> round(float(s([[2.0]], 0.5)[0, 0]), 6)
    -2.0
    """
    return OracleScore(gm, spec)
