"""
Global or contextual options for difftime, similar to xarray.set_options.
"""

from __future__ import annotations

T_MIN = "t_min"
WORKERS = "workers"
EXTRA_OUTPUT = "extra_output"
KL_FLAG_SIGMA = "kl_flag_sigma"

OPTIONS = {
    T_MIN: 1e-5,
    WORKERS: 1,
    EXTRA_OUTPUT: False,
    KL_FLAG_SIGMA: 3.0,
}

_VALIDATORS = {
    T_MIN: lambda opt: isinstance(opt, float) and 0 < opt < 1,
    WORKERS: lambda opt: isinstance(opt, int) and opt >= 1,
    EXTRA_OUTPUT: lambda opt: isinstance(opt, bool),
    KL_FLAG_SIGMA: lambda opt: isinstance(opt, (int, float)) and opt > 0,
}


class set_options:
    """
    Set options for difftime in a controlled context.

    Attributes
    ----------
    t_min : float
        Time floor of score training, quadrature and reverse integration. Default: ``1e-5``.
    workers : int
        Number of threads used for independent jobs (per-T items, EM fits for different k,
        blocks of sample paths). Results do not depend on this value. Default: ``1``.
    extra_output : bool
        Whether to add per-node diagnostic variables to the outputs of the ELBO estimators.
        Default: ``False``.
    kl_flag_sigma : float
        A KL estimate below ``-kl_flag_sigma * se`` is flagged with a warning, and one below ``kl_flag_sigma * se``
        is left out of decay-rate fits. Default: ``3.0``.

    Examples
    --------
    You can use ``set_options`` either as a context manager:

    >>> from difftime import set_options
    >>> with set_options(workers=4):
    ...     pass

    Or to set global options:

    .. code-block:: python

        import difftime

        difftime.set_options(t_min=1e-4)
    """

    def __init__(self, **kwargs):
        self.old = {}
        for k, v in kwargs.items():
            if k not in OPTIONS:
                msg = f"Argument name {k!r} is not in the set of valid options {set(OPTIONS)!r}."
                raise ValueError(msg)
            if k in _VALIDATORS and not _VALIDATORS[k](v):
                raise ValueError(f"option {k!r} given an invalid value: {v!r}")

            self.old[k] = OPTIONS[k]

        self._update(kwargs)

    def __enter__(self):
        """Context management."""
        return

    @staticmethod
    def _update(kwargs):
        """Update values."""
        OPTIONS.update(kwargs)

    def __exit__(self, option_type, value, traceback):  # noqa: F841
        """Context management."""
        self._update(self.old)
