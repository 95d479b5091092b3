"""Server side of the federated smoothing proximal gradient method.

The coordinator owns sigma, mu, the penalty and the model; clients only ever
see ``(w, mu, tau)``.  One round = broadcast a request, wait for every client,
sum the replies in ascending ``client_id`` order, apply one update.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import transport as tp
from .errors import ConfigurationError, ProtocolError
from .penalty import PenaltyConfig, penalty_subgradient, penalty_sum, prox

logger = logging.getLogger(__name__)

ALGORITHMS = ("FSPG", "FHPG", "FPG", "SUB")


@dataclass(frozen=True)
class Schedule:
    """``sigma_{k+1} = c (k+1)^d`` and ``mu_{k+1} = beta / (k+1)^d``."""

    c: float
    beta: float
    d: float

    def __post_init__(self):
        if not self.c > 0 or not self.beta > 0:
            raise ConfigurationError(f"schedule needs c > 0 and beta > 0, got c={self.c}, "
                                     f"beta={self.beta}")
        if not 0 < self.d < 1:
            raise ConfigurationError(f"schedule exponent d must lie in (0, 1), got {self.d}")

    def sigma(self, k: int) -> float:
        return sigma_at(self, k)

    def mu(self, k: int) -> float:
        return mu_at(self, k)


def sigma_at(sched: Schedule, k: int) -> float:
    """Proximal weight used by the update in round ``k`` (``sigma^{(k+1)}``)."""
    if k < 0:
        raise ConfigurationError(f"iteration index must be >= 0, got {k}")
    return sched.c * (k + 1) ** sched.d


def mu_at(sched: Schedule, k: int) -> float:
    """Smoothing width used in round ``k`` (``mu^{(k+1)}``)."""
    if k < 0:
        raise ConfigurationError(f"iteration index must be >= 0, got {k}")
    return sched.beta / (k + 1) ** sched.d


def check_beta_c(sched: Schedule, lambda_max: float, relax: bool = False):
    """Reject schedules whose ``beta*c`` is below the spectral condition.

    The default demands ``beta*c >= lambda_max``; ``relax=True`` accepts the
    weaker ``beta*c >= lambda_max / 2``.
    """
    need = lambda_max / 2.0 if relax else lambda_max
    if sched.beta * sched.c < need * (1.0 - 1e-12):
        form = "lambda_max/2" if relax else "lambda_max"
        raise ConfigurationError(
            f"beta*c = {sched.beta * sched.c:.6g} is below {form} = {need:.6g} "
            f"(computed lambda_max = {lambda_max:.6g})")


@dataclass
class SolverState:
    w: np.ndarray
    n_total: int
    spectral_bound: float
    client_ids: tuple
    k: int = 0
    sigma: float = float("nan")
    mu: float = float("nan")
    w_prev: np.ndarray | None = None
    step_sigma: float = float("nan")
    pre_k_steps: int = 0
    merit_history: list = field(default_factory=list)
    dw_history: list = field(default_factory=list)
    kappa_history: list = field(default_factory=list)
    sigma_history: list = field(default_factory=list)
    mu_history: list = field(default_factory=list)

    @property
    def coeffs(self):
        return self.w[:-1]

    @property
    def intercept(self) -> float:
        return float(self.w[-1])


def aggregate(state: SolverState, grads) -> np.ndarray:
    """Sum ``(client_id, vector)`` pairs in ascending id order.

    Exactly one gradient per registered client is required.
    """
    by_id = {}
    for cid, g in grads:
        if cid in by_id:
            raise ProtocolError(f"duplicate gradient from client {cid}", client_id=cid)
        by_id[cid] = g
    missing = set(state.client_ids) - set(by_id)
    extra = set(by_id) - set(state.client_ids)
    if missing or extra:
        raise ProtocolError(f"gradient set mismatch: missing {sorted(missing)}, "
                            f"unexpected {sorted(extra)}")
    total = np.zeros_like(state.w)
    for cid in sorted(by_id):
        g = np.asarray(by_id[cid], dtype=float)
        if g.shape != state.w.shape:
            raise ProtocolError(f"client {cid}: gradient shape {g.shape} != {state.w.shape}",
                                client_id=cid)
        total += g
    return total


def _prox_step(state, total, penalty):
    a = state.w - total / state.sigma
    t = state.n_total / state.sigma
    w_new = a.copy()
    if t < penalty.max_prox_scale:
        w_new[:-1] = prox(a[:-1], penalty, t)
    else:
        if state.pre_k_steps == 0:
            logger.warning("sigma=%.6g <= n*rho=%.6g at k=%d: using identity prox until the "
                           "schedule catches up", state.sigma, state.n_total * penalty.rho, state.k)
        state.pre_k_steps += 1
    return w_new


def _commit(state, w_new):
    state.w_prev = state.w
    state.step_sigma = state.sigma
    state.dw_history.append(float(np.sum((w_new - state.w) ** 2)))
    state.sigma_history.append(state.sigma)
    state.mu_history.append(state.mu)
    state.w = w_new
    state.k += 1
    return state


def fspg_step(state: SolverState, grads, penalty: PenaltyConfig) -> SolverState:
    """One proximal update ``w <- prox(w - sum(grads)/sigma; n/sigma)``.

    ``state.sigma`` and ``state.mu`` must already hold the values for this
    round.  The intercept (last entry) is not penalized.  While
    ``sigma <= n*rho`` the coefficient prox is replaced by the identity.
    The state is updated in place and returned.
    """
    total = aggregate(state, grads)
    return _commit(state, _prox_step(state, total, penalty))


def baseline_step(kind: str, state: SolverState, grads, penalty: PenaltyConfig,
                  eta0: float | None = None) -> SolverState:
    """Update rule of a comparison method.

    ``FHPG`` and ``FPG`` share :func:`fspg_step`; they differ from FSPG only
    in the sigma/mu the caller sets and, for FPG, in the clients returning
    unsmoothed subgradients (``mu = 0``).  ``SUB`` takes a plain subgradient
    step of length ``eta0 / sqrt(k + 1)``.
    """
    if kind in ("FHPG", "FPG"):
        return fspg_step(state, grads, penalty)
    if kind != "SUB":
        raise ConfigurationError(f"unknown baseline {kind!r}")
    if eta0 is None or not eta0 > 0:
        raise ConfigurationError("SUB needs a positive eta0")
    total = aggregate(state, grads)
    total[:-1] += state.n_total * penalty_subgradient(state.w[:-1], penalty)
    eta = eta0 / math.sqrt(state.k + 1)
    state.sigma = 1.0 / eta
    return _commit(state, state.w - eta * total)


def merit(state: SolverState, local_losses, penalty: PenaltyConfig) -> float:
    """``sum_l g_l(w, mu) + n * P(w)``, appended to ``state.merit_history``."""
    value = math.fsum(local_losses) + state.n_total * penalty_sum(state.w[:-1], penalty)
    state.merit_history.append(value)
    return value


def kappa_norm(state: SolverState, prev_grad_sum, new_grad_sum) -> float:
    """Norm of ``G(w_new, mu_next) - G(w_old, mu) + sigma (w_old - w_new)``.

    ``prev_grad_sum`` was evaluated at ``state.w_prev`` and ``new_grad_sum``
    at ``state.w``; sigma is the one used by the last step.
    """
    kappa = (np.asarray(new_grad_sum) - np.asarray(prev_grad_sum)
             + state.step_sigma * (state.w_prev - state.w))
    value = float(np.linalg.norm(kappa))
    state.kappa_history.append(value)
    return value


def spectral_bound(transport, max_iter: int = 500, tol: float = 1e-10, seed: int = 0,
                   safety: float = 1e-6) -> float:
    """Largest eigenvalue of the pooled ``X^T X`` by distributed power iteration.

    Every iteration broadcasts the current unit vector, sums the clients'
    Gram-vector products and renormalizes.  Stops when the Rayleigh quotient
    changes by less than ``tol`` (relative).  The estimate is inflated by
    ``1 + safety`` since the Rayleigh quotient approaches from below.
    """
    if not transport.client_ids:
        raise ConfigurationError("spectral bound needs at least one client")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(transport.n_features + 1)
    v /= np.linalg.norm(v)
    rq_prev = None
    for it in range(max_iter):
        replies = transport.run_round(tp.GramVecRequest(it, v))
        u = np.zeros_like(v)
        for r in replies:
            u += np.asarray(r.product)
        rq = float(v @ u)
        norm = np.linalg.norm(u)
        if norm == 0:
            raise ConfigurationError("pooled Gram matrix is zero")
        if rq_prev is not None and abs(rq - rq_prev) < tol * abs(rq):
            break
        rq_prev = rq
        v = u / norm
    return rq * (1.0 + safety)


class Coordinator:
    """Drives rounds of one algorithm over a transport.

    Parameters
    ----------
    transport : fspg.transport.Transport
        Registered clients.
    penalty : PenaltyConfig
    tau : float
        Quantile level.
    algorithm : {"FSPG", "FHPG", "FPG", "SUB"}
    beta, d : float
        Schedule constants; ``c`` is either given directly or as
        ``c_fraction * lambda_max``.
    relax_beta_c : bool
        Accept ``beta*c >= lambda_max/2`` instead of ``>= lambda_max``.
    fhpg_mu : float
        Constant smoothing width for FHPG.
    sub_eta0 : float
        SUB initial step; defaults to ``1 / lambda_max``.
    lambda_max : float, optional
        Skip the power iteration and use this bound.
    """

    def __init__(self, transport, penalty: PenaltyConfig, tau: float, algorithm: str = "FSPG",
                 beta: float = 4.0, d: float = 0.5, c: float | None = None,
                 c_fraction: float | None = 0.125, relax_beta_c: bool = False,
                 fhpg_mu: float | None = None, sub_eta0: float | None = None,
                 lambda_max: float | None = None, w0=None, spectral_seed: int = 0):
        if algorithm not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {algorithm!r}")
        if not 0 < tau < 1:
            raise ConfigurationError(f"tau must lie in (0, 1), got {tau}")
        self.transport = transport
        self.penalty = penalty
        self.tau = tau
        self.algorithm = algorithm
        self.lambda_max = (spectral_bound(transport, seed=spectral_seed)
                           if lambda_max is None else float(lambda_max))
        if c is None:
            if c_fraction is None:
                raise ConfigurationError("need either c or c_fraction")
            c = c_fraction * self.lambda_max
        self.schedule = Schedule(c, beta, d)
        if algorithm == "FSPG":
            check_beta_c(self.schedule, self.lambda_max, relax=relax_beta_c)
        n = transport.n_total
        if algorithm == "FHPG":
            if fhpg_mu is None or not fhpg_mu > 0:
                raise ConfigurationError("FHPG needs a positive constant mu")
            self.fhpg_mu = float(fhpg_mu)
            self.fhpg_sigma = 1.01 * max(n * penalty.rho, self.lambda_max / (2.0 * fhpg_mu))
        self.sub_eta0 = 1.0 / self.lambda_max if sub_eta0 is None else float(sub_eta0)
        dim = transport.n_features + 1
        w = np.zeros(dim) if w0 is None else np.array(w0, dtype=float)
        if w.shape != (dim,):
            raise ConfigurationError(f"w0 must have length {dim}")
        self.state = SolverState(w=w, n_total=n, spectral_bound=self.lambda_max,
                                 client_ids=tuple(transport.client_ids))
        self._prev_grad = None

    def _round_params(self, k):
        if self.algorithm == "FSPG":
            return self.schedule.sigma(k), self.schedule.mu(k)
        if self.algorithm == "FHPG":
            return self.fhpg_sigma, self.fhpg_mu
        if self.algorithm == "FPG":
            return self.schedule.sigma(k), 0.0
        return 1.0 / self.sub_eta0 * math.sqrt(k + 1), 0.0

    def _gather(self, k, mu):
        replies = self.transport.run_round(tp.GradRequest(k, self.state.w, mu, self.tau))
        grads = [(r.client_id, np.asarray(r.gradient)) for r in replies]
        losses = [r.local_loss for r in replies]
        return grads, losses

    def _observe(self, grads, losses):
        merit(self.state, losses, self.penalty)
        total = aggregate(self.state, grads)
        if self._prev_grad is not None:
            kappa_norm(self.state, self._prev_grad, total)
        self._prev_grad = total

    def _round(self):
        s = self.state
        s.sigma, s.mu = self._round_params(s.k)
        grads, losses = self._gather(s.k, s.mu)
        self._observe(grads, losses)
        return grads

    def _update(self, grads):
        if self.algorithm == "FSPG":
            return fspg_step(self.state, grads, self.penalty)
        return baseline_step(self.algorithm, self.state, grads, self.penalty, eta0=self.sub_eta0)

    def step(self):
        """One round at the current iterate followed by one update."""
        return self._update(self._round())

    def run(self, max_iters: int, callback=None, every: int = 1):
        """Run ``max_iters`` updates.

        A final extra round at the last iterate closes the merit and kappa
        series.  ``callback(state)`` fires for iterate ``k >= 1`` whenever
        ``k % every == 0`` and for the last iterate, after that iterate's
        merit (and the kappa of the step that produced it) are recorded.
        """
        s = self.state
        for i in range(max_iters + 1):
            t0 = time.perf_counter_ns()
            grads = self._round()
            self.last_wall_ns = time.perf_counter_ns() - t0
            if callback is not None and s.k > 0 and (s.k % every == 0 or i == max_iters):
                callback(s)
            if i == max_iters:
                break
            self._update(grads)
        return s

    def send_final_model(self):
        self.transport.run_round(tp.FinalModel(self.state.w))
