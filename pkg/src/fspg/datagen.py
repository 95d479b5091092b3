"""Synthetic compressible quantile-regression scenarios and CSV ingestion.

Features are AR(0.5)-correlated Gaussians; the heteroscedastic feature is
pushed through the normal CDF so it lies in (0, 1).  Each client ``l`` adds
its own noise level ``|upsilon_l|``, so the pooled intercept is a quantile of
an equal-weight Gaussian scale mixture.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr, ndtri

from .client import ClientDataset
from .errors import ConfigurationError, IngestionError


@dataclass
class ScenarioSpec:
    """Parameters of one synthetic scenario.

    ``active_set`` and ``heteroscedastic_index`` are 1-based feature indices.
    ``M`` is either a per-client sample count or a list of ``L`` counts.
    ``client_scales`` overrides the random per-client noise levels.
    """

    M: int | list = 10
    L: int = 20
    P: int = 100
    tau: float = 0.55
    active_set: tuple = (6, 12, 15, 20)
    heteroscedastic_index: int = 1
    xi_sd: float = 1e-3
    seed: int = 0
    hetero_coef: float = 0.7
    client_scales: list | None = None

    def __post_init__(self):
        self.active_set = tuple(int(p) for p in self.active_set)
        if self.L < 1 or self.P < 1:
            raise ConfigurationError("need L >= 1 and P >= 1")
        counts = self.sample_counts
        if len(counts) != self.L or min(counts) < 1:
            raise ConfigurationError(f"M must be >= 1 per client (and have L={self.L} entries)")
        if not 0 < self.tau < 1:
            raise ConfigurationError(f"tau must lie in (0, 1), got {self.tau}")
        if any(not 1 <= p <= self.P for p in self.active_set):
            raise ConfigurationError(f"active_set must be within 1..{self.P}")
        if not 1 <= self.heteroscedastic_index <= self.P:
            raise ConfigurationError("heteroscedastic_index out of range")
        if self.xi_sd < 0:
            raise ConfigurationError("xi_sd must be >= 0")
        if self.client_scales is not None:
            if len(self.client_scales) != self.L or min(self.client_scales) < 0:
                raise ConfigurationError("client_scales needs L nonnegative entries")

    @property
    def sample_counts(self):
        if isinstance(self.M, (list, tuple)):
            return [int(m) for m in self.M]
        return [int(self.M)] * self.L

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown scenario fields {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["active_set"] = list(self.active_set)
        return d


@dataclass
class GroundTruth:
    w_star: np.ndarray
    client_scales: list
    active: tuple = field(default=())  # 0-based coefficient indices counted as active

    def to_dict(self):
        return {"coeffs": self.w_star[:-1].tolist(), "intercept": float(self.w_star[-1]),
                "client_scales": list(self.client_scales), "active": list(self.active)}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(list(d["coeffs"]) + [d["intercept"]], dtype=float),
                   list(d["client_scales"]), tuple(d.get("active", ())))


def ar_covariance(P: int, r: float = 0.5) -> np.ndarray:
    idx = np.arange(P)
    return r ** np.abs(idx[:, None] - idx[None, :])


def mixture_quantile(scales, tau: float, tol: float = 1e-12) -> float:
    """tau-quantile of the equal-weight mixture of ``N(0, s^2)`` for ``s`` in ``scales``.

    Bisection for ``mean(Phi(Q / s)) = tau`` on ``[-10 max(s), 10 max(s)]``.
    """
    if not 0 < tau < 1:
        raise ConfigurationError(f"tau must lie in (0, 1), got {tau}")
    s = np.asarray(scales, dtype=float)
    if s.size == 0 or np.any(s <= 0) or not np.all(np.isfinite(s)):
        raise ConfigurationError("scales must be a nonempty list of positive numbers")
    lo, hi = -10.0 * s.max(), 10.0 * s.max()
    mid = 0.5 * (lo + hi)
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        gap = float(np.mean(ndtr(mid / s))) - tau
        if abs(gap) <= tol or mid in (lo, hi):
            break
        if gap < 0:
            lo = mid
        else:
            hi = mid
    return mid


def active_indices(spec: ScenarioSpec) -> tuple:
    """0-based coefficient indices whose true value is O(1)."""
    act = {p - 1 for p in spec.active_set}
    if spec.hetero_coef != 0 and spec.tau != 0.5:
        act.add(spec.heteroscedastic_index - 1)
    return tuple(sorted(act))


def generate_scenario(spec: ScenarioSpec):
    """Draw client datasets and the true quantile coefficients.

    Returns
    -------
    datasets : list of ClientDataset
    truth : GroundTruth
    """
    rng = np.random.default_rng(spec.seed)
    P, L = spec.P, spec.L
    chol = np.linalg.cholesky(ar_covariance(P))
    h = spec.heteroscedastic_index - 1
    xi = spec.xi_sd * rng.standard_normal(P)
    if spec.client_scales is None:
        scales = np.abs(rng.standard_normal(L))
    else:
        scales = np.asarray(spec.client_scales, dtype=float)
    beta = xi.copy()
    for p in spec.active_set:
        beta[p - 1] += 1.0

    datasets = []
    for l, m in enumerate(spec.sample_counts):
        x = rng.standard_normal((m, P)) @ chol.T
        x[:, h] = ndtr(x[:, h])
        eps = rng.standard_normal(m)
        nu = scales[l] * rng.standard_normal(m)
        y = x @ beta + spec.hetero_coef * eps * x[:, h] + nu
        datasets.append(ClientDataset.from_raw(x, y, client_id=l))

    w_star = np.zeros(P + 1)
    w_star[:P] = beta
    w_star[h] += spec.hetero_coef * ndtri(spec.tau)
    if np.all(scales == 0):
        w_star[P] = 0.0
    else:
        w_star[P] = mixture_quantile(scales, spec.tau)
    return datasets, GroundTruth(w_star, scales.tolist(), active_indices(spec))


# ------------------------------------------------------------------ CSV I/O

def _read_numeric_csv(path):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise IngestionError(f"{path}: row {lineno} has {len(row)} cells, "
                                     f"header has {len(header)}")
            vals = []
            for col, cell in zip(header, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise IngestionError(f"{path}: non-numeric cell {cell!r} at row {lineno}, "
                                         f"column {col!r}") from None
                if not math.isfinite(v):
                    raise IngestionError(f"{path}: non-finite cell at row {lineno}, column {col!r}")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise IngestionError(f"{path}: no data rows")
    return header, np.array(rows, dtype=float)


def _split_xy(header, data, response_column, path):
    if response_column not in header:
        raise ConfigurationError(f"{path}: response column {response_column!r} not in header")
    j = header.index(response_column)
    return np.delete(data, j, axis=1), data[:, j]


def load_csv(path, response_column: str, partition: str = "random", L: int = 10,
             seed: int = 0, train_fraction: float = 0.8):
    """Read headered numeric CSV data into client datasets plus a test set.

    ``partition="random"``: one file, rows shuffled with ``seed``, the first
    ``round(train_fraction * n)`` go to training and are dealt round-robin to
    ``L`` clients; the rest form the test set.  ``partition="by_file"``:
    ``path`` is a list of files, one client each; every file is shuffled and
    split by ``train_fraction`` and the held-out rows are pooled.
    """
    if not 0 < train_fraction <= 1:
        raise ConfigurationError("train_fraction must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    if partition == "random":
        header, data = _read_numeric_csv(path)
        X, y = _split_xy(header, data, response_column, path)
        order = rng.permutation(len(y))
        n_train = int(round(train_fraction * len(y)))
        tr, te = order[:n_train], order[n_train:]
        if n_train < L:
            raise ConfigurationError(f"{n_train} training rows cannot feed {L} clients")
        train = [ClientDataset.from_raw(X[tr[l::L]], y[tr[l::L]], client_id=l) for l in range(L)]
        test = ClientDataset.from_raw(X[te], y[te], client_id=-1)
        return train, test
    if partition == "by_file":
        paths = [path] if isinstance(path, (str, Path)) else list(path)
        train, tx, ty = [], [], []
        for l, p in enumerate(paths):
            header, data = _read_numeric_csv(p)
            X, y = _split_xy(header, data, response_column, p)
            order = rng.permutation(len(y))
            n_train = int(round(train_fraction * len(y)))
            train.append(ClientDataset.from_raw(X[order[:n_train]], y[order[:n_train]], l))
            tx.append(X[order[n_train:]])
            ty.append(y[order[n_train:]])
        test = ClientDataset.from_raw(np.vstack(tx), np.concatenate(ty), client_id=-1)
        return train, test
    raise ConfigurationError(f"unknown partition {partition!r}")


def load_client_csv(path, client_id: int, response_column: str = "y") -> ClientDataset:
    """One client's file as written by :func:`export_clients`."""
    header, data = _read_numeric_csv(path)
    X, y = _split_xy(header, data, response_column, path)
    return ClientDataset.from_raw(X, y, client_id)


def export_clients(datasets, out_dir, truth: GroundTruth | None = None, spec=None):
    """Write ``client_<id>.csv`` files (``x1..xP, y``) plus optional truth/spec JSON."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for ds in datasets:
        p = out / f"client_{ds.client_id}.csv"
        P = ds.n_features
        with p.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"x{j + 1}" for j in range(P)] + ["y"])
            for row, yi in zip(ds.features[:, :-1], ds.responses):
                w.writerow([repr(float(v)) for v in row] + [repr(float(yi))])
        paths.append(p)
    if truth is not None:
        (out / "truth.json").write_text(json.dumps(truth.to_dict(), indent=2) + "\n")
    if spec is not None:
        (out / "spec.json").write_text(json.dumps(spec.to_dict(), indent=2) + "\n")
    return paths


def load_exported(data_dir):
    """Inverse of :func:`export_clients`: datasets sorted by id and the truth (if present)."""
    d = Path(data_dir)
    files = sorted(d.glob("client_*.csv"), key=lambda p: int(p.stem.split("_")[1]))
    if not files:
        raise IngestionError(f"{d}: no client_*.csv files")
    datasets = [load_client_csv(p, int(p.stem.split("_")[1])) for p in files]
    truth = None
    if (d / "truth.json").exists():
        truth = GroundTruth.from_dict(json.loads((d / "truth.json").read_text()))
    return datasets, truth
