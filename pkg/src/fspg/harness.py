"""Experiment configs, presets, metrics and report files.

A run is described by one JSON document (see ``docs/config.md``).  It may
name a ``preset`` and override any of its keys; nested objects are merged.
"""
from __future__ import annotations

import copy
import csv
import json
import logging
import math
import platform
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .client import ClientNode
from .coordinator import ALGORITHMS, Coordinator
from .datagen import GroundTruth, ScenarioSpec, generate_scenario, load_csv, load_exported
from .errors import ConfigurationError, FSPGError
from .penalty import PenaltyConfig
from .transport import ClientServer, InProcessTransport, SocketTransport

logger = logging.getLogger(__name__)

RUN_ALGORITHMS = ALGORITHMS + ("NC",)

_BASE_DEFAULTS = {
    "algorithm": "FSPG",
    "tau": 0.55,
    "penalty": {"kind": "MCP", "lambda": 0.055, "gamma": 2.4},
    "schedule": {"c_mode": "lambda_max_fraction", "c_fraction": 0.125, "beta": 4.0, "d": 0.5,
                 "relax_beta_c": True},
    "max_iters": 10000,
    "data": {"source": "scenario",
             "scenario": {"M": 10, "L": 20, "P": 100, "active_set": [6, 12, 15, 20],
                          "heteroscedastic_index": 1}},
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


PRESETS = {
    # baseline comparison at the published size
    "scenario1": _BASE_DEFAULTS,
    # same size, upper quantile
    "scenario2": _merge(_BASE_DEFAULTS, {"tau": 0.7}),
    # small system whose active set is swept by the caller
    "scenario3": _merge(_BASE_DEFAULTS, {"data": {"scenario": {
        "M": 10, "L": 10, "P": 20, "active_set": [2, 3, 4, 5, 6]}}}),
    # many samples per client, used for the non-cooperative comparison
    "scenario4": _merge(_BASE_DEFAULTS, {"data": {"scenario": {"M": 100, "L": 10, "P": 100}}}),
    # schedule exponent study (override schedule.d)
    "scenario5": _merge(_BASE_DEFAULTS, {"schedule": {"d": 0.5}}),
    # CI-sized version of scenario1
    "desk": _merge(_BASE_DEFAULTS, {"max_iters": 2000,
                                     "data": {"scenario": {"M": 10, "L": 5, "P": 30}}}),
    # headered CSV; the caller supplies data.path and data.response_column
    "realdata": _merge({k: v for k, v in _BASE_DEFAULTS.items() if k != "data"}, {
        "tau": 0.5,
        "penalty": {"lambda": 0.01},
        "data": {"source": "csv", "partition": "random", "L": 10, "train_fraction": 0.8}}),
    # the long-running full replication: scenario1 over many seeds via ``replicates``
    "full_scale": _merge(_BASE_DEFAULTS, {"replicates": 1000}),
}


@dataclass
class ScheduleConfig:
    c_mode: str = "lambda_max_fraction"
    c: float | None = None
    c_fraction: float = 0.125
    beta: float = 4.0
    d: float = 0.5
    relax_beta_c: bool = False

    def __post_init__(self):
        if self.c_mode not in ("explicit", "lambda_max_fraction"):
            raise ConfigurationError(f"unknown schedule.c_mode {self.c_mode!r}")
        if self.c_mode == "explicit" and (self.c is None or not self.c > 0):
            raise ConfigurationError("schedule.c_mode 'explicit' needs a positive schedule.c")
        if self.c_mode == "lambda_max_fraction" and not self.c_fraction > 0:
            raise ConfigurationError("schedule.c_fraction must be positive")
        if not self.beta > 0 or not 0 < self.d < 1:
            raise ConfigurationError("schedule needs beta > 0 and 0 < d < 1")


@dataclass
class DataConfig:
    """Where client data comes from.

    ``source`` is ``"scenario"`` (synthetic, ``scenario`` holds ScenarioSpec
    fields), ``"csv"`` (``path`` split into ``L`` clients plus a test set)
    or ``"dir"`` (a directory written by ``gen-data``).
    """

    source: str = "scenario"
    scenario: dict | None = None
    path: str | list | None = None
    response_column: str = "y"
    partition: str = "random"
    L: int = 10
    train_fraction: float = 0.8

    def __post_init__(self):
        if self.source not in ("scenario", "csv", "dir"):
            raise ConfigurationError(f"unknown data.source {self.source!r}")
        if self.source in ("csv", "dir") and not self.path:
            raise ConfigurationError(f"data.source {self.source!r} needs data.path")


@dataclass
class TransportConfig:
    """``inproc`` or ``socket``; socket mode without ``addresses`` spawns local client servers."""

    mode: str = "inproc"
    addresses: list | None = None
    timeout: float = 30.0
    serialize: bool = False

    def __post_init__(self):
        if self.mode not in ("inproc", "socket"):
            raise ConfigurationError(f"unknown transport.mode {self.mode!r}")
        if not self.timeout > 0:
            raise ConfigurationError("transport.timeout must be positive")


@dataclass
class RunConfig:
    algorithm: str = "FSPG"
    penalty: PenaltyConfig = field(default_factory=lambda: PenaltyConfig("MCP", 0.055, 2.4))
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    tau: float = 0.55
    max_iters: int = 10000
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    transport: TransportConfig = field(default_factory=TransportConfig)
    diagnostics_every: int = 1
    record_wall_time: bool = False
    fhpg_mu: float | None = None
    sub_eta0: float | None = None
    eps_active: float = 1e-3
    replicates: int = 1
    preset: str | None = None

    def __post_init__(self):
        if self.algorithm not in RUN_ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {self.algorithm!r}; "
                                     f"expected one of {RUN_ALGORITHMS}")
        if not 0 < self.tau < 1:
            raise ConfigurationError(f"tau must lie in (0, 1), got {self.tau}")
        if self.max_iters < 1 or self.diagnostics_every < 1 or self.replicates < 1:
            raise ConfigurationError("max_iters, diagnostics_every and replicates must be >= 1")
        if not self.eps_active > 0:
            raise ConfigurationError("eps_active must be positive")
        if self.algorithm == "FHPG" and (self.fhpg_mu is None or not self.fhpg_mu > 0):
            raise ConfigurationError("FHPG needs a positive fhpg_mu")
        if self.data.source == "scenario":
            self.scenario_spec()  # validate early

    def scenario_spec(self) -> ScenarioSpec:
        """The ScenarioSpec for synthetic data; tau and seed default to the run's."""
        d = dict(self.data.scenario or {})
        if "tau" in d and d["tau"] != self.tau:
            raise ConfigurationError(f"scenario tau {d['tau']} differs from run tau {self.tau}")
        d["tau"] = self.tau
        d.setdefault("seed", self.seed)
        return ScenarioSpec.from_dict(d)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        doc = dict(doc)
        preset = doc.get("preset")
        if preset is not None:
            if preset not in PRESETS:
                raise ConfigurationError(f"unknown preset {preset!r}; known: {sorted(PRESETS)}")
            doc = _merge(PRESETS[preset], doc)
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys {sorted(unknown)}")

        def sub(key, klass):
            val = doc.get(key, {})
            if not isinstance(val, dict):
                raise ConfigurationError(f"{key} must be a JSON object")
            names = {f.name for f in fields(klass)}
            bad = set(val) - names
            if bad:
                raise ConfigurationError(f"unknown {key} keys {sorted(bad)}")
            return klass(**val)

        if "penalty" in doc:
            doc["penalty"] = PenaltyConfig.from_dict(doc["penalty"])
        doc["schedule"] = sub("schedule", ScheduleConfig)
        doc["data"] = sub("data", DataConfig)
        doc["transport"] = sub("transport", TransportConfig)
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["penalty"] = self.penalty.to_dict()
        for key in ("schedule", "data", "transport"):
            d[key] = asdict(d[key])
        return d


@dataclass
class MetricsRecord:
    """Diagnostics at iterate ``k``.

    ``sigma`` and ``mu`` are the values used by the step that produced
    iterate ``k``; ``merit`` is evaluated at iterate ``k`` with the next
    round's smoothing width.  Fields that do not apply are ``None``.
    """

    k: int
    sigma: float | None = None
    mu: float | None = None
    merit: float | None = None
    dw_sq: float | None = None
    kappa: float | None = None
    mse_truth: float | None = None
    mse_pred: float | None = None
    mse_test: float | None = None
    support_accuracy: float | None = None
    wall_ns: int | None = None


FIELDS = tuple(f.name for f in fields(MetricsRecord))


@dataclass
class RunResult:
    config: RunConfig
    records: list
    w: np.ndarray | list
    truth: GroundTruth | None
    lambda_max: float | list
    manifest: dict
    states: list = field(default_factory=list)
    nc_transport_clients: list | None = None


def support_accuracy(w_hat, truth: GroundTruth, eps_active: float = 1e-3) -> float:
    """Share of coefficients whose active/inactive status matches the truth.

    A coefficient counts as predicted active when ``|w_p| > eps_active``.
    ``w_hat`` may include the trailing intercept, which is ignored.
    """
    P = truth.w_star.size - 1
    w = np.asarray(w_hat, dtype=float)
    if w.size == P + 1:
        w = w[:-1]
    if w.size != P:
        raise ConfigurationError(f"model has {w.size} coefficients, truth has {P}")
    actual = np.zeros(P, dtype=bool)
    actual[list(truth.active)] = True
    return float(np.mean((np.abs(w) > eps_active) == actual))


def mse_truth(w_hat, truth: GroundTruth) -> float:
    return float(np.sum((np.asarray(w_hat, dtype=float) - truth.w_star) ** 2))


def mse_pred(w_hat, datasets) -> float:
    """Mean squared prediction error pooled over ``datasets``."""
    sq = [np.sum((ds.responses - ds.features @ w_hat) ** 2) for ds in datasets]
    n = sum(ds.n_samples for ds in datasets)
    return float(math.fsum(sq) / n) if n else float("nan")


# ------------------------------------------------------------------ wiring

def load_data(cfg: RunConfig):
    """Return ``(train_datasets, test_dataset_or_None, truth_or_None)``."""
    dc = cfg.data
    if dc.source == "scenario":
        datasets, truth = generate_scenario(cfg.scenario_spec())
        return datasets, None, truth
    if dc.source == "csv":
        train, test = load_csv(dc.path, dc.response_column, dc.partition, dc.L, cfg.seed,
                               dc.train_fraction)
        return train, (test if test.n_samples else None), None
    datasets, truth = load_exported(dc.path)
    return datasets, None, truth


class _Servers:
    """Local socket servers for ``transport.mode == "socket"`` without addresses."""

    def __init__(self, datasets):
        self.servers = [ClientServer(ClientNode(ds)).start() for ds in datasets]

    @property
    def addresses(self):
        return [s.address for s in self.servers]

    def stop(self):
        for s in self.servers:
            s.stop()


def open_transport(cfg: RunConfig, datasets):
    """Build the configured transport; returns ``(transport, cleanup)``."""
    tc = cfg.transport
    if tc.mode == "inproc":
        return InProcessTransport([ClientNode(ds) for ds in datasets], serialize=tc.serialize), None
    if tc.addresses:
        return SocketTransport(tc.addresses, timeout=tc.timeout), None
    servers = _Servers(datasets)
    try:
        return SocketTransport(servers.addresses, timeout=tc.timeout), servers
    except BaseException:
        servers.stop()
        raise


def _coordinator(cfg: RunConfig, transport, algorithm: str):
    sc = cfg.schedule
    explicit = sc.c_mode == "explicit"
    return Coordinator(transport, cfg.penalty, cfg.tau, algorithm=algorithm, beta=sc.beta, d=sc.d,
                       c=sc.c if explicit else None,
                       c_fraction=None if explicit else sc.c_fraction,
                       relax_beta_c=sc.relax_beta_c, fhpg_mu=cfg.fhpg_mu, sub_eta0=cfg.sub_eta0,
                       spectral_seed=cfg.seed)


def _record(state, coord, cfg, datasets, test, truth):
    w = state.w
    rec = MetricsRecord(
        k=state.k,
        sigma=state.sigma_history[-1],
        mu=state.mu_history[-1],
        merit=state.merit_history[-1],
        dw_sq=state.dw_history[-1],
        kappa=state.kappa_history[-1] if state.kappa_history else None,
        mse_pred=mse_pred(w, datasets) if datasets else None,
        mse_test=mse_pred(w, [test]) if test is not None else None,
    )
    if truth is not None:
        rec.mse_truth = mse_truth(w, truth)
        rec.support_accuracy = support_accuracy(w, truth, cfg.eps_active)
    if cfg.record_wall_time:
        rec.wall_ns = int(coord.last_wall_ns)
    return rec


def _solve(cfg, datasets, test, truth, algorithm):
    """One federated solve over ``datasets``; returns ``(records, coordinator)``."""
    transport, servers = open_transport(cfg, datasets)
    try:
        with transport:
            coord = _coordinator(cfg, transport, algorithm)
            records = []
            coord.run(cfg.max_iters,
                      callback=lambda s: records.append(_record(s, coord, cfg, datasets, test, truth)),
                      every=cfg.diagnostics_every)
            coord.send_final_model()
            coord.client_ids = tuple(transport.client_ids)
    finally:
        if servers is not None:
            servers.stop()
    return records, coord


def _mean(values):
    vals = [v for v in values if v is not None]
    return math.fsum(vals) / len(vals) if vals else None


def _run_nc(cfg, datasets, test, truth):
    """``L`` independent single-client solves; records average the per-client metrics."""
    per_client, coords = [], []
    for ds in datasets:
        records, coord = _solve(cfg, [ds], None, truth, "FSPG")
        if coord.client_ids != (ds.client_id,):
            raise ConfigurationError("non-cooperative solve reached more than one client")
        per_client.append(records)
        coords.append(coord)
    merged = []
    for recs in zip(*per_client):
        rec = MetricsRecord(
            k=recs[0].k,
            merit=math.fsum(r.merit for r in recs),
            dw_sq=math.fsum(r.dw_sq for r in recs),
            kappa=(math.sqrt(math.fsum(r.kappa ** 2 for r in recs))
                   if all(r.kappa is not None for r in recs) else None),
            mse_truth=_mean(r.mse_truth for r in recs),
            mse_pred=_mean(r.mse_pred for r in recs),
            support_accuracy=_mean(r.support_accuracy for r in recs),
        )
        if cfg.record_wall_time:
            rec.wall_ns = sum(r.wall_ns for r in recs)
        merged.append(rec)
    if test is not None and merged:
        merged[-1].mse_test = _mean(mse_pred(c.state.w, [test]) for c in coords)
    return merged, coords


def _versions():
    import scipy

    return {"fspg": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


def run_experiment(cfg: RunConfig, out_dir=None, fmt: str = "jsonl") -> RunResult:
    """Generate or load data, run the configured algorithm and collect metrics.

    With ``out_dir`` the metrics (``metrics.jsonl`` or ``metrics.csv``),
    ``final_model.json`` and ``manifest.json`` are written there.  Errors
    from the modules propagate with the algorithm and seed prefixed.
    """
    context = f"{cfg.algorithm} run (seed {cfg.seed})"
    try:
        datasets, test, truth = load_data(cfg)
        if cfg.algorithm == "NC":
            records, coords = _run_nc(cfg, datasets, test, truth)
            w = [c.state.w for c in coords]
            lam = [c.lambda_max for c in coords]
            nc_clients = [list(c.client_ids) for c in coords]
        else:
            records, coord = _solve(cfg, datasets, test, truth, cfg.algorithm)
            coords = [coord]
            w, lam, nc_clients = coord.state.w, coord.lambda_max, None
    except FSPGError as exc:
        if exc.args and isinstance(exc.args[0], str):
            exc.args = (f"{context}: {exc.args[0]}",) + exc.args[1:]
        raise
    manifest = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "versions": _versions(),
        "lambda_max": lam,
        "n_total": sum(ds.n_samples for ds in datasets),
        "pre_k_steps": [c.state.pre_k_steps for c in coords],
    }
    result = RunResult(cfg, records, w, truth, lam, manifest,
                       states=[c.state for c in coords], nc_transport_clients=nc_clients)
    if out_dir is not None:
        write_run(result, out_dir, fmt)
    return result


def iter_replicates(cfg: RunConfig, n: int | None = None, seed0: int | None = None):
    """Yield ``n`` runs with consecutive seeds (default ``cfg.replicates`` from ``cfg.seed``)."""
    n = cfg.replicates if n is None else n
    seed0 = cfg.seed if seed0 is None else seed0
    for i in range(n):
        c = copy.deepcopy(cfg)
        c.seed = seed0 + i
        if c.data.scenario is not None:
            c.data.scenario = {k: v for k, v in c.data.scenario.items() if k != "seed"}
        yield run_experiment(c)


def run_replicates(cfg: RunConfig, n: int | None = None, seed0: int | None = None):
    return list(iter_replicates(cfg, n, seed0))


# ------------------------------------------------------------------ reports

def _model_doc(w):
    w = np.asarray(w, dtype=float)
    return {"coeffs": w[:-1].tolist(), "intercept": float(w[-1])}


def write_run(result: RunResult, out_dir, fmt: str = "jsonl"):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = emit_report(result.records, fmt, out, manifest=result.manifest)
    if result.config.algorithm == "NC":
        model = {"models": [dict(client_id=i, **_model_doc(w)) for i, w in enumerate(result.w)]}
    else:
        model = _model_doc(result.w)
    model["k"] = result.records[-1].k if result.records else 0
    (out / "final_model.json").write_text(json.dumps(model) + "\n")
    return path


def _cell(v):
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else str(v)


def emit_report(records, fmt: str, out_dir, manifest: dict | None = None, stem: str = "metrics"):
    """Write ``<stem>.csv`` or ``<stem>.jsonl`` (and ``manifest.json`` if given).

    Floats are written in shortest round-trip form, so :func:`read_report`
    gives back identical records.  Returns the metrics path.
    """
    if not records:
        raise ConfigurationError("no records to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        path = out / f"{stem}.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(FIELDS)
            for r in records:
                w.writerow([_cell(getattr(r, f)) for f in FIELDS])
    elif fmt == "jsonl":
        path = out / f"{stem}.jsonl"
        with path.open("w", encoding="utf-8") as fh:
            for r in records:
                fh.write(json.dumps(asdict(r), allow_nan=False) + "\n")
    else:
        raise ConfigurationError(f"unknown report format {fmt!r}")
    if manifest is not None:
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _parse_cell(name, cell):
    if cell == "":
        return None
    return int(cell) if name in ("k", "wall_ns") else float(cell)


def read_report(path):
    """Parse a metrics file written by :func:`emit_report`."""
    path = Path(path)
    if path.suffix == ".csv":
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if tuple(header) != FIELDS:
                raise ConfigurationError(f"{path}: unexpected header {header}")
            return [MetricsRecord(**{n: _parse_cell(n, c) for n, c in zip(header, row)})
                    for row in reader]
    if path.suffix == ".jsonl":
        with path.open(encoding="utf-8") as fh:
            return [MetricsRecord(**json.loads(line)) for line in fh if line.strip()]
    raise ConfigurationError(f"{path}: expected .csv or .jsonl")


def convert_report(in_dir, fmt: str = "csv"):
    """Rewrite ``in_dir/metrics.jsonl`` (or ``.csv``) in the other format."""
    d = Path(in_dir)
    src = d / ("metrics.jsonl" if fmt == "csv" else "metrics.csv")
    if not src.exists():
        raise ConfigurationError(f"{src} not found")
    return emit_report(read_report(src), fmt, d)
