"""Client-side state: one local dataset and the requests it can answer."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import transport as tp
from .errors import ConfigurationError, ProtocolError
from .smoothloss import smoothed_local_loss, smoothed_local_loss_grad


@dataclass(frozen=True, eq=False)
class ClientDataset:
    """Local design matrix (rows are samples, last column all ones) and responses."""

    features: np.ndarray
    responses: np.ndarray
    client_id: int = 0

    def __post_init__(self):
        X = np.ascontiguousarray(self.features, dtype=float)
        y = np.ascontiguousarray(self.responses, dtype=float).ravel()
        if X.ndim != 2 or X.shape[1] < 1:
            raise ConfigurationError(f"features must be a 2-d array, got shape {X.shape}")
        if X.shape[0] != y.shape[0]:
            raise ConfigurationError(
                f"client {self.client_id}: {X.shape[0]} feature rows vs {y.shape[0]} responses")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ConfigurationError(f"client {self.client_id}: non-finite entries in data")
        if X.shape[0] and not np.all(X[:, -1] == 1.0):
            raise ConfigurationError(f"client {self.client_id}: last feature column must be all ones")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "responses", y)

    @classmethod
    def from_raw(cls, X, y, client_id=0):
        """Build from a design matrix *without* the ones column."""
        X = np.asarray(X, dtype=float)
        return cls(np.column_stack([X, np.ones(X.shape[0])]), y, client_id)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        """Number of coefficients P (excluding the intercept column)."""
        return self.features.shape[1] - 1


class ClientNode:
    """Answers gradient, loss and Gram-vector requests for one dataset.

    The node never sees sigma, the penalty or other clients' data.  All
    methods are read-only, so one node may serve concurrent requests.
    """

    def __init__(self, dataset: ClientDataset):
        self.data = dataset

    @property
    def client_id(self) -> int:
        return self.data.client_id

    def _check_dim(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.data.features.shape[1],):
            raise ProtocolError(
                f"client {self.client_id}: expected vector of length "
                f"{self.data.features.shape[1]}, got shape {v.shape}", client_id=self.client_id)
        return v

    def residuals(self, w):
        w = self._check_dim(w)
        return self.data.responses - self.data.features @ w

    def local_loss(self, w, mu: float, tau: float) -> float:
        return smoothed_local_loss(self.residuals(w), tau, mu)

    def local_gradient(self, w, mu: float, tau: float) -> np.ndarray:
        """``-X^T [0.5 * f'(z, mu) + (tau - 0.5)]`` with ``z = y - X w``.

        ``mu = 0`` yields the check-loss subgradient with ``sign(0) = 0``.
        """
        z = self.residuals(w)
        return -(self.data.features.T @ smoothed_local_loss_grad(z, tau, mu))

    def gram_vector_product(self, v) -> np.ndarray:
        """``X^T (X v)`` without forming the Gram matrix."""
        v = self._check_dim(v)
        return self.data.features.T @ (self.data.features @ v)

    def hello(self) -> tp.Hello:
        return tp.Hello(self.client_id, self.data.n_samples, self.data.n_features)

    def handle(self, msg):
        """Serve one protocol request; returns the reply or ``None`` for Shutdown/FinalModel."""
        if isinstance(msg, tp.GradRequest):
            w = np.asarray(msg.w)
            grad = self.local_gradient(w, msg.mu, msg.tau)
            loss = self.local_loss(w, msg.mu, msg.tau)
            return tp.GradResponse(self.client_id, msg.k, tuple(grad.tolist()), loss)
        if isinstance(msg, tp.GramVecRequest):
            prod = self.gram_vector_product(np.asarray(msg.v))
            return tp.GramVecResponse(self.client_id, msg.round, tuple(prod.tolist()))
        if isinstance(msg, (tp.FinalModel, tp.Shutdown)):
            return None
        raise ProtocolError(f"client {self.client_id}: unexpected message {type(msg).__name__}",
                            client_id=self.client_id)
