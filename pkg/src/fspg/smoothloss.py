"""Check loss and its Huber-type smoothing.

``check_loss(u, tau) = 0.5*|u| + (tau - 0.5)*u`` and the smoothed version
replaces ``|u|`` by ``smooth_abs(u, mu)``, which is quadratic inside the tube
``|u| < mu`` and exact outside it.  ``mu = 0`` is accepted as the limit case
and gives back the unsmoothed loss and the sign subgradient.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigurationError


def _check_tau(tau):
    if not 0.0 < tau < 1.0:
        raise ConfigurationError(f"tau must lie in (0, 1), got {tau}")


def _out(x, like):
    return float(x) if np.ndim(like) == 0 else x


def check_loss(u, tau: float):
    """Pinball loss ``u * (tau - 1{u < 0})``."""
    _check_tau(tau)
    u = np.asarray(u, dtype=float)
    return _out(u * (tau - (u < 0)), u)


def smooth_abs(u, mu: float):
    """``|u|`` if ``|u| >= mu`` else ``u**2/(2 mu) + mu/2``."""
    if mu < 0:
        raise ConfigurationError(f"smoothing width must be >= 0, got {mu}")
    a = np.abs(np.asarray(u, dtype=float))
    if mu == 0:
        return _out(a, u)
    return _out(np.where(a >= mu, a, a * a / (2.0 * mu) + mu / 2.0), u)


def smooth_abs_grad(u, mu: float):
    """Derivative of :func:`smooth_abs`: ``sign(u)`` outside the tube, ``u/mu`` inside."""
    if mu < 0:
        raise ConfigurationError(f"smoothing width must be >= 0, got {mu}")
    u = np.asarray(u, dtype=float)
    if mu == 0:
        return _out(np.sign(u), u)
    return _out(np.where(np.abs(u) >= mu, np.sign(u), u / mu), u)


def smoothed_local_loss(z, tau: float, mu: float) -> float:
    """``h(z, mu) = 0.5 * sum smooth_abs(z_i, mu) + (tau - 0.5) * sum z_i``."""
    _check_tau(tau)
    z = np.asarray(z, dtype=float)
    if z.size == 0:
        return 0.0
    return float(0.5 * np.sum(smooth_abs(z, mu)) + (tau - 0.5) * np.sum(z))


def smoothed_local_loss_grad(z, tau: float, mu: float):
    """Gradient of :func:`smoothed_local_loss` with respect to ``z``."""
    _check_tau(tau)
    return 0.5 * smooth_abs_grad(np.asarray(z, dtype=float), mu) + (tau - 0.5)
