"""Separable sparsity penalties (MCP, SCAD, L1) and their scalar proximal maps.

Every function here works elementwise on scalars or numpy arrays and
returns a Python float for scalar input.  The prox scale ``t`` multiplies
the penalty, i.e. ``prox(a, cfg, t) = argmin_w t*g(w) + (w - a)**2 / 2``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ConvexityError


class PenaltyKind(str, enum.Enum):
    MCP = "MCP"
    SCAD = "SCAD"
    L1 = "L1"
    NONE = "None"


@dataclass(frozen=True)
class PenaltyConfig:
    """Penalty family and its parameters.

    Parameters
    ----------
    kind : PenaltyKind or str
        One of ``"MCP"``, ``"SCAD"``, ``"L1"``, ``"None"``.
    lam : float
        Penalty level, must be nonnegative.
    gamma : float
        Concavity parameter; ``gamma >= 1`` for MCP and ``gamma >= 2`` for
        SCAD.  Ignored by L1 and None.
    """

    kind: PenaltyKind = PenaltyKind.MCP
    lam: float = 0.0
    gamma: float = 3.0

    def __post_init__(self):
        try:
            kind = PenaltyKind(self.kind)
        except ValueError:
            raise ConfigurationError(f"unknown penalty kind {self.kind!r}") from None
        object.__setattr__(self, "kind", kind)
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ConfigurationError(f"penalty lambda must be >= 0, got {self.lam}")
        if kind is PenaltyKind.MCP and not self.gamma >= 1:
            raise ConfigurationError(f"MCP requires gamma >= 1, got {self.gamma}")
        if kind is PenaltyKind.SCAD and not self.gamma >= 2:
            raise ConfigurationError(f"SCAD requires gamma >= 2, got {self.gamma}")

    @classmethod
    def from_dict(cls, d):
        return cls(kind=d.get("kind", "MCP"), lam=float(d.get("lambda", 0.0)),
                   gamma=float(d.get("gamma", 3.0)))

    def to_dict(self):
        return {"kind": self.kind.value, "lambda": self.lam, "gamma": self.gamma}

    @property
    def rho(self) -> float:
        return weak_convexity_rho(self)

    @property
    def max_prox_scale(self) -> float:
        """Supremum of prox scales ``t`` for which the prox objective stays convex."""
        if self.kind is PenaltyKind.MCP:
            return self.gamma
        if self.kind is PenaltyKind.SCAD:
            return self.gamma - 1.0
        return np.inf


def _out(x, like):
    return float(x) if np.ndim(like) == 0 else x


def weak_convexity_rho(cfg: PenaltyConfig) -> float:
    """Smallest rho such that ``g(w) + rho * w**2 / 2`` is convex."""
    if cfg.kind is PenaltyKind.MCP:
        return 1.0 / cfg.gamma
    if cfg.kind is PenaltyKind.SCAD:
        return 1.0 / (cfg.gamma - 1.0)
    return 0.0


def penalty_value(w, cfg: PenaltyConfig):
    """Elementwise penalty ``g_{lambda,gamma}(w)``."""
    a = np.abs(np.asarray(w, dtype=float))
    lam, gam = cfg.lam, cfg.gamma
    if cfg.kind is PenaltyKind.MCP:
        val = np.where(a <= gam * lam, lam * a - a * a / (2.0 * gam), gam * lam * lam / 2.0)
    elif cfg.kind is PenaltyKind.SCAD:
        mid = -(a * a - 2.0 * gam * lam * a + lam * lam) / (2.0 * (gam - 1.0))
        val = np.where(a <= lam, lam * a,
                       np.where(a <= gam * lam, mid, (gam + 1.0) * lam * lam / 2.0))
    elif cfg.kind is PenaltyKind.L1:
        val = lam * a
    else:
        val = np.zeros_like(a)
    return _out(val, w)


def penalty_sum(coeffs, cfg: PenaltyConfig) -> float:
    """``P(w) = sum_p g(w_p)`` over the coefficient entries only."""
    return float(np.sum(penalty_value(np.asarray(coeffs, dtype=float), cfg)))


def penalty_subgradient(w, cfg: PenaltyConfig):
    """One element of the (Clarke) subdifferential; picks 0 at ``w = 0``."""
    w = np.asarray(w, dtype=float)
    a, s = np.abs(w), np.sign(w)
    lam, gam = cfg.lam, cfg.gamma
    if cfg.kind is PenaltyKind.MCP:
        g = np.where(a <= gam * lam, lam * s - w / gam, 0.0)
    elif cfg.kind is PenaltyKind.SCAD:
        g = np.where(a <= lam, lam * s,
                     np.where(a <= gam * lam, s * (gam * lam - a) / (gam - 1.0), 0.0))
    elif cfg.kind is PenaltyKind.L1:
        g = lam * s
    else:
        g = np.zeros_like(w)
    return _out(g, w)


def penalty_subdifferential(w, cfg: PenaltyConfig):
    """Interval ``(lo, hi)`` of the subdifferential at each entry of ``w``."""
    w = np.asarray(w, dtype=float)
    g = np.asarray(penalty_subgradient(w, cfg), dtype=float)
    lo, hi = g.copy(), g.copy()
    if cfg.kind is not PenaltyKind.NONE:
        zero = w == 0
        lo[zero], hi[zero] = -cfg.lam, cfg.lam
    return lo, hi


def prox(a, cfg: PenaltyConfig, t: float):
    """Closed-form ``argmin_w t*g(w) + (w - a)**2 / 2``.

    Raises
    ------
    ConvexityError
        If ``t`` is at or beyond the weak-convexity limit (``t >= gamma`` for
        MCP, ``t >= gamma - 1`` for SCAD), where the subproblem stops being
        strongly convex and the closed form is no longer the minimizer.
    """
    if not t > 0:
        raise ConfigurationError(f"prox scale must be positive, got {t}")
    if t >= cfg.max_prox_scale:
        raise ConvexityError(
            f"prox scale t={t:.6g} violates t < {cfg.max_prox_scale:.6g} for {cfg.kind.value}",
            t=t)
    x = np.asarray(a, dtype=float)
    ax, s = np.abs(x), np.sign(x)
    lam, gam = cfg.lam, cfg.gamma
    if cfg.kind is PenaltyKind.MCP:
        shrunk = s * (ax - t * lam) / (1.0 - t / gam)
        out = np.where(ax <= t * lam, 0.0, np.where(ax <= gam * lam, shrunk, x))
    elif cfg.kind is PenaltyKind.SCAD:
        soft = s * np.maximum(ax - t * lam, 0.0)
        mid = ((gam - 1.0) * x - s * gam * lam * t) / (gam - 1.0 - t)
        out = np.where(ax <= (1.0 + t) * lam, soft, np.where(ax <= gam * lam, mid, x))
    elif cfg.kind is PenaltyKind.L1:
        out = s * np.maximum(ax - t * lam, 0.0)
    else:
        out = x.copy()
    return _out(out, a)
