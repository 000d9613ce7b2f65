"""
# noqa: SS01
Formatting Utilities
====================

Provenance of the report datasets: every decorated estimator appends a timestamped call string to the ``history``
attribute of its output. History never reaches the CSV artifacts, which must stay byte-identical between runs.
"""

from __future__ import annotations

import datetime as dt
import itertools
from collections.abc import Callable
from inspect import signature

import numpy as np
import xarray as xr
from boltons.funcutils import wraps


def update_history(hist_str: str, *inputs: xr.Dataset) -> str:
    r"""
    Build a history string: the histories of the inputs, then a timestamped entry for `hist_str`.

    The entry reads ``[<timestamp>] <hist_str> - difftime version: <version>``.

    Parameters
    ----------
    hist_str : str
        The call that produced the new dataset.
    \*inputs : xr.Dataset
        Datasets the new one was computed from.

    Returns
    -------
    str
        One line per history entry.
    """
    from difftime import (  # pylint: disable=cyclic-import,import-outside-toplevel
        __version__,
    )

    lines = [ds.attrs["history"] for ds in inputs if "history" in ds.attrs]
    lines.append(f"[{dt.datetime.now():%Y-%m-%d %H:%M:%S}] {hist_str} - difftime version: {__version__}")
    return "\n".join(lines)


def update_difftime_history(func: Callable):
    """
    Decorator recording the call in the ``history`` attribute of the returned dataset.

    With a tuple output, the first element gets the history. The `boltons` wrapper passes every argument by keyword,
    so the call string shows all arguments as ``name=value``.
    """

    @wraps(func)
    def _call_and_add_history(*args, **kwargs):
        outs = func(*args, **kwargs)
        out = outs[0] if isinstance(outs, tuple) else outs
        if not isinstance(out, xr.Dataset):
            raise TypeError(f"`update_difftime_history` expects {func.__name__} to return a Dataset, got {type(out)}.")

        bound = signature(func).bind(*args, **kwargs)
        out.attrs["history"] = update_history(
            gen_call_string(func.__name__, **bound.arguments),
            *[arg for arg in args if isinstance(arg, xr.Dataset)],
        )
        return outs

    return _call_and_add_history


def _short(val) -> str:
    if isinstance(val, np.ndarray):
        return f"<array {val.shape}>"
    rep = repr(val)
    if isinstance(val, (int | float | str | bool)) or val is None or len(rep) <= 80:
        return rep
    return f"<{type(val).__name__}>"


def gen_call_string(funcname: str, *args, **kwargs) -> str:
    r"""
    Call string for the history attribute.

    Arrays are shown by their shape. Scalars, strings and None are shown as is, and so are other objects whose
    representation is short, like processes and mixtures. Long representations are replaced by the type name.

    Parameters
    ----------
    funcname : str
        Name of the function.
    \*args
        Positional arguments.
    \*\*kwargs
        Keyword arguments.

    Returns
    -------
    str
        ``funcname(arg, ..., key=value, ...)``.

    Examples
    --------
    >>> gen_call_string("func", np.zeros((3, 2)), b=2.0, c="3", d=[10] * 100)
    "func(<array (3, 2)>, b=2.0, c='3', d=<list>)"
    """
    elements = [
        _short(val) if name is None else f"{name}={_short(val)}"
        for name, val in itertools.chain(zip([None] * len(args), args), kwargs.items())
    ]
    return f"{funcname}({', '.join(elements)})"
