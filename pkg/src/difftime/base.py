"""
# noqa: SS01
Base Classes and Developer Tools
================================
"""

from __future__ import annotations

from collections import UserDict
from collections.abc import Callable, Sequence
from inspect import _empty, signature
from typing import Any

import dask
import jsonpickle
import jsonpickle.ext.numpy as jsonpickle_numpy
import numpy as np
import xarray as xr

from difftime.options import OPTIONS, WORKERS

jsonpickle_numpy.register_handlers()


class Parametrizable(UserDict):
    """
    Value object stored as a dictionary of parameters.

    Processes, mixtures, networks, fits and manifests are fully described by their parameters, read with item access
    (``obj["seed"]``), attribute access (``obj.seed``) or :py:attr:`parameters`. Only these parameters survive a
    ``jsonpickle`` round trip; caches set as plain attributes (``obj._key = ...``) are rebuilt on demand.
    Numpy arrays are handled by the registered ``jsonpickle`` numpy extension.
    """

    _repr_hide_params = []

    def __getstate__(self):
        """State for (json)pickle: the parameters only."""
        return self.data

    def __setstate__(self, state):
        """Restore from the parameters."""
        # __init__ is skipped when unpickling, so data does not exist yet
        self.data = {**state}

    def __getattr__(self, attr):
        """Parameters are readable as attributes."""
        if attr == "data" or attr not in self.data:
            return self.__getattribute__(attr)
        return self.data[attr]

    @property
    def parameters(self) -> dict:
        """A copy of the parameters."""
        return {**self.data}

    def __repr__(self) -> str:
        """Class name and non-default parameters, arrays abbreviated."""
        defaults = {
            n: [p.default] if p.default is not None else [[], {}, set(), None]
            for n, p in signature(self.__init__).parameters.items()
            if p.default is not _empty
        }
        shown = [
            f"{k}={_short_repr(v)}"
            for k, v in self.items()
            if k not in self._repr_hide_params and not _is_default(v, defaults.get(k, []))
        ]
        return f"{type(self).__name__}({', '.join(shown)})"


def _is_default(value: Any, defaults: list) -> bool:
    if isinstance(value, np.ndarray):
        return False
    try:
        return value in defaults
    except (TypeError, ValueError):
        return False


def _short_repr(value: Any) -> str:
    if isinstance(value, np.ndarray):
        if value.size <= 6:
            return np.array2string(value, precision=4, separator=", ")
        return f"<array {value.shape}>"
    return repr(value)


class ParametrizableWithDataset(Parametrizable):
    """A :py:class:`Parametrizable` whose outputs live in a dataset, ``ds``, that also carries the encoded object."""

    _attribute = "_difftime_parameters"

    @classmethod
    def from_dataset(cls, ds: xr.Dataset):
        """
        Rebuild an object from its output dataset.

        ``ds.attrs[cls._attribute]`` must hold the ``jsonpickle`` encoding written by :py:meth:`set_dataset`.
        """
        obj = jsonpickle.decode(ds.attrs[cls._attribute])  # noqa: S301
        obj.set_dataset(ds)
        return obj

    def set_dataset(self, ds: xr.Dataset) -> None:
        """Attach `ds` and stamp it with the encoded parameters."""
        self.ds = ds
        self.ds.attrs[self._attribute] = jsonpickle.encode(self)


class NonFiniteError(FloatingPointError):
    """
    A computation produced NaN or infinite values.

    Parameters
    ----------
    msg : str
        What went wrong.
    **diagnostics
        Where it went wrong (`iteration`, `step`, ...) and the values at that point. They are kept
        in the ``diagnostics`` attribute and appended to the message.
    """

    def __init__(self, msg: str, **diagnostics):
        self.diagnostics = diagnostics
        details = ", ".join(f"{k}={v}" for k, v in diagnostics.items())
        super().__init__(f"{msg} ({details})" if details else msg)


def check_finite(arr: np.ndarray, what: str, **diagnostics) -> np.ndarray:
    """Raise a :py:class:`NonFiniteError` if `arr` holds any NaN or infinite value."""
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"Non-finite {what}", **diagnostics)
    return arr


def map_jobs(func: Callable, items: Sequence, workers: int | None = None) -> list:
    """
    Apply `func` to each item, possibly concurrently, and return the results in input order.

    Parameters
    ----------
    func : callable
        Applied to each item. Must not share mutable state between calls.
    items : sequence
        The work items.
    workers : int, optional
        Number of threads. Defaults to the ``workers`` option. With a single worker,
        items are processed in a plain loop.

    Returns
    -------
    list
        The outputs of `func`, in the order of `items`.
    """
    workers = workers or OPTIONS[WORKERS]
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    tasks = [dask.delayed(func, pure=False)(item) for item in items]
    return list(dask.compute(*tasks, scheduler="threads", num_workers=workers))


def as_states(x: np.ndarray, dim: int | None = None) -> np.ndarray:
    """
    Return `x` as a float64 (n, dim) batch.

    A single vector is promoted to a batch of one. If `dim` is given, the trailing dimension must match.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x[np.newaxis, :] if dim is None or x.shape[0] == dim else x[:, np.newaxis]
    if x.ndim != 2:
        raise ValueError(f"Expected a vector or a (n, dim) batch, got shape {x.shape}.")
    if dim is not None and x.shape[1] != dim:
        raise ValueError(f"States have dimension {x.shape[1]}, expected {dim}.")
    return x
