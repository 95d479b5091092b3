"""Runtime checks on solver histories: descent, rates and stationarity."""
from __future__ import annotations

import numpy as np

from .penalty import PenaltyConfig, penalty_subdifferential


def descent_violations(state, rho: float, rel_eps: float = 1e-8):
    """Iterations whose merit drop is smaller than ``(sigma - n*rho) * ||dw||^2``.

    Only steps with ``sigma > n*rho`` are checked.  Returns a list of
    ``(k, observed_change, allowed_change)`` tuples, empty when every checked
    step satisfies

        merit[k+1] - merit[k] <= -(sigma_k - n*rho) * dw_k + rel_eps * (1 + |merit[k]|)
    """
    m = np.asarray(state.merit_history, dtype=float)
    dw = np.asarray(state.dw_history, dtype=float)
    sig = np.asarray(state.sigma_history, dtype=float)
    steps = min(len(dw), len(m) - 1)
    nrho = state.n_total * rho
    bad = []
    for k in range(steps):
        if not sig[k] > nrho:
            continue
        change = m[k + 1] - m[k]
        allowed = -(sig[k] - nrho) * dw[k] + rel_eps * (1.0 + abs(m[k]))
        if change > allowed:
            bad.append((k, float(change), float(allowed)))
    return bad


def loglog_slope(values, start: int = 1, last_decade: bool = True) -> float:
    """Least-squares slope of ``log(values[k])`` against ``log(k)``.

    ``values[i]`` belongs to iteration ``k = start + i``.  With
    ``last_decade`` only ``k >= k_max / 10`` enters the fit; nonpositive
    entries are dropped.
    """
    v = np.asarray(values, dtype=float)
    k = np.arange(start, start + v.size, dtype=float)
    keep = v > 0
    if last_decade:
        keep &= k >= k[-1] / 10.0
    if keep.sum() < 2:
        raise ValueError("need at least two positive points to fit a slope")
    slope, _ = np.polyfit(np.log(k[keep]), np.log(v[keep]), 1)
    return float(slope)


def stationarity_residual(datasets, w, tau: float, penalty: PenaltyConfig, zero_tol: float = 0.0):
    """Distance of 0 from the coordinatewise subdifferential interval at ``w``.

    The interval for coordinate ``j`` is the sum over samples of the check-loss
    subdifferential (residuals with ``|z| <= zero_tol`` count as kinks and
    contribute their full interval) plus ``n`` times the penalty's.  The
    intercept is unpenalized.  Returns one nonnegative distance per coordinate.
    """
    w = np.asarray(w, dtype=float)
    lo = np.zeros_like(w)
    hi = np.zeros_like(w)
    n = 0
    for ds in datasets:
        X, y = ds.features, ds.responses
        z = y - X @ w
        n += len(z)
        kink = np.abs(z) <= zero_tol
        s = np.where(z > 0, tau, tau - 1.0)
        fixed = -(X[~kink].T @ s[~kink])
        Xk = X[kink]
        a, b = -Xk * (tau - 1.0), -Xk * tau
        lo += fixed + np.minimum(a, b).sum(axis=0)
        hi += fixed + np.maximum(a, b).sum(axis=0)
    plo, phi = penalty_subdifferential(w[:-1], penalty)
    lo[:-1] += n * plo
    hi[:-1] += n * phi
    return np.maximum(np.maximum(lo, -hi), 0.0)
