# pylint: disable=no-value-for-parameter
"""
# noqa: SS01
Numba-accelerated Utilities
===========================
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(
    fastmath=False,
    nogil=True,
    cache=False,
)
def _mixture_eval(x, log_w, means, variances):
    """
    Log-density, score and responsibilities of isotropic Gaussian mixtures.

    Parameters
    ----------
    x : array, (n, d)
        Evaluation points.
    log_w : array, (k,)
        Log-weights, -inf for empty components.
    means : array, (m, k, d)
        Component means, with m = 1 (shared by all points) or m = n (one mixture per point).
    variances : array, (m, k)
        Isotropic component variances, same convention as `means`.

    Returns
    -------
    logp : array, (n,)
    score : array, (n, d)
    resp : array, (n, k)

    Notes
    -----
    The log-sum-exp is shifted by the largest component term of each point, so densities
    that underflow in linear space stay finite in log space.
    """
    n, d = x.shape
    k = log_w.shape[0]
    shared = means.shape[0] == 1
    logp = np.empty(n)
    score = np.zeros((n, d))
    resp = np.empty((n, k))
    log2pi = np.log(2 * np.pi)
    for i in range(n):
        j = 0 if shared else i
        top = -np.inf
        for c in range(k):
            sq = 0.0
            for a in range(d):
                diff = x[i, a] - means[j, c, a]
                sq += diff * diff
            v = variances[j, c]
            resp[i, c] = log_w[c] - 0.5 * (d * (log2pi + np.log(v)) + sq / v)
            if resp[i, c] > top:
                top = resp[i, c]
        tot = 0.0
        for c in range(k):
            resp[i, c] = np.exp(resp[i, c] - top)
            tot += resp[i, c]
        logp[i] = top + np.log(tot)
        for c in range(k):
            r = resp[i, c] / tot
            resp[i, c] = r
            for a in range(d):
                score[i, a] += r * (means[j, c, a] - x[i, a]) / variances[j, c]
    return logp, score, resp
