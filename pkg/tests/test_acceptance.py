"""Acceptance criteria, one test each, at the stated tolerances and time limits.

Every test records a PASS/FAIL line (see ``conftest.py``), shown in the
terminal summary.  A FAIL line is also a failing test.
"""
import math
import time

import numpy as np
import pytest

from fspg.client import ClientDataset, ClientNode
from fspg.coordinator import Coordinator, spectral_bound
from fspg.datagen import ScenarioSpec, generate_scenario, mixture_quantile
from fspg.diagnostics import descent_violations, loglog_slope
from fspg.harness import RunConfig, run_experiment
from fspg.penalty import PenaltyConfig, prox
from fspg.smoothloss import check_loss, smoothed_local_loss
from fspg.transport import InProcessTransport

from oracles import central_difference, prox_by_search

DESK = dict(M=10, L=5, P=30)
PENALTIES = {"MCP": PenaltyConfig("MCP", 0.055, 2.4), "SCAD": PenaltyConfig("SCAD", 0.055, 3.1)}
SEEDS = range(20)


def desk_coordinator(kind, tau, seed=0):
    datasets, _ = generate_scenario(ScenarioSpec(tau=tau, seed=seed, **DESK))
    t = InProcessTransport([ClientNode(d) for d in datasets])
    return Coordinator(t, PENALTIES[kind], tau, relax_beta_c=True)


def desk_final(seed, algorithm, **extra):
    doc = {"preset": "desk", "max_iters": 10000, "diagnostics_every": 10000, "seed": seed,
           "algorithm": algorithm}
    doc.update(extra)
    return run_experiment(RunConfig.from_dict(doc)).records[-1]


def test_01_prox_oracle(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for kind in ("MCP", "SCAD", "L1"):
        for _ in range(1000):
            lam = rng.uniform(1e-3, 1.0)
            gamma = rng.uniform(1.0, 6.0) if kind == "MCP" else rng.uniform(2.0, 6.0)
            cfg = PenaltyConfig(kind, lam, gamma)
            t = rng.uniform(1e-3, 0.999 * min(cfg.max_prox_scale, 5.0))
            a = rng.uniform(-3, 3)
            worst = max(worst, abs(prox(a, cfg, t) - prox_by_search(a, kind, lam, gamma, t)))
    ok = acceptance.record(1, "prox vs golden-section", worst <= 1e-6,
                           f"max |diff| {worst:.2e} over 3x1000 cases", time.perf_counter() - t0, 10)
    assert ok


def test_02_gradient_finite_differences(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(102)
    worst = 0.0
    for _ in range(50):
        M, P = int(rng.integers(1, 17)), int(rng.integers(1, 9))
        node = ClientNode(ClientDataset.from_raw(rng.normal(size=(M, P)), rng.normal(size=M)))
        w = rng.normal(size=P + 1)
        mu, tau = rng.uniform(0.05, 2.0), rng.uniform(0.05, 0.95)
        fd = central_difference(lambda v: node.local_loss(v, mu, tau), w)
        g = node.local_gradient(w, mu, tau)
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1.0))
    ok = acceptance.record(2, "gradient vs finite differences", worst <= 1e-5,
                           f"max rel err {worst:.2e}", time.perf_counter() - t0, 10)
    assert ok


def test_03_smoothing_sandwich(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(103)
    bad = 0
    for _ in range(100):
        M = int(rng.integers(1, 50))
        tau = rng.uniform(0.01, 0.99)
        for mu in (2.0, 0.5, 0.01):
            z = rng.normal(scale=rng.choice([mu, 1.0, 5.0]), size=M)
            gap = smoothed_local_loss(z, tau, mu) - float(np.sum(check_loss(z, tau)))
            bad += not (-1e-12 <= gap <= M * mu / 4 + 1e-12)
    ok = acceptance.record(3, "smoothing sandwich", bad == 0, f"{bad} of 300 outside bounds",
                           time.perf_counter() - t0, 5)
    assert ok


CONFIGS = [(k, tau) for k in ("MCP", "SCAD") for tau in (0.55, 0.7)]


def test_04_monotone_descent(acceptance):
    t0 = time.perf_counter()
    details = []
    total = 0
    for kind, tau in CONFIGS:
        coord = desk_coordinator(kind, tau)
        coord.run(2000)
        v = descent_violations(coord.state, PENALTIES[kind].rho)
        total += len(v)
        details.append(f"{kind}/{tau}: {len(v)}")
    ok = acceptance.record(4, "monotone descent", total == 0,
                           "violations " + ", ".join(details), time.perf_counter() - t0, 120)
    assert ok


def test_05_rate_diagnostics(acceptance):
    t0 = time.perf_counter()
    details, ok_all = [], True
    for kind, tau in CONFIGS:
        coord = desk_coordinator(kind, tau)
        coord.run(10000)
        s = coord.state
        dw_slope = loglog_slope(s.dw_history, start=1)
        kappa_slope = loglog_slope(s.kappa_history, start=1)
        ok_all &= dw_slope <= -1.5 + 0.2 and kappa_slope <= -0.10
        details.append(f"{kind}/{tau}: dw {dw_slope:.2f}, kappa {kappa_slope:.2f}")
    ok = acceptance.record(5, "rate diagnostics (dw <= -1.3, kappa <= -0.10)", ok_all,
                           "; ".join(details), time.perf_counter() - t0, 600)
    assert ok


def test_06_federated_equals_centralized(acceptance):
    t0 = time.perf_counter()
    datasets, _ = generate_scenario(ScenarioSpec(tau=0.55, seed=0, **DESK))
    pooled = ClientDataset(np.vstack([d.features for d in datasets]),
                           np.concatenate([d.responses for d in datasets]))
    paths = []
    for group in (datasets, [pooled]):
        t = InProcessTransport([ClientNode(d) for d in group])
        coord = Coordinator(t, PENALTIES["MCP"], 0.55, relax_beta_c=True)
        seen = []
        coord.run(2000, callback=lambda s: seen.append(s.w.copy()))
        paths.append(np.array(seen))
    worst = float(np.max(np.abs(paths[0] - paths[1])))
    ok = acceptance.record(6, "federated == centralized", worst <= 1e-10 and len(paths[0]) == 2000,
                           f"max coordinate diff {worst:.1e} over 2000 iterates",
                           time.perf_counter() - t0, 120)
    assert ok


def test_07_transport_equivalence(acceptance, tmp_path):
    t0 = time.perf_counter()
    base = {"preset": "desk", "max_iters": 200, "seed": 0,
            "data": {"scenario": {"M": 10, "L": 4, "P": 30}}}
    a = run_experiment(RunConfig.from_dict(base), tmp_path / "inproc")
    b = run_experiment(RunConfig.from_dict(dict(base, transport={"mode": "socket"})),
                       tmp_path / "socket")
    same = ((tmp_path / "inproc/metrics.jsonl").read_bytes()
            == (tmp_path / "socket/metrics.jsonl").read_bytes())
    ok = acceptance.record(7, "in-process == socket", same and a.records == b.records,
                           f"{len(a.records)} metric records {'identical' if same else 'differ'}",
                           time.perf_counter() - t0, 60)
    assert ok


_FINALS = {}


def finals(algorithm, **extra):
    key = (algorithm, tuple(sorted(extra.items())))
    if key not in _FINALS:
        _FINALS[key] = [desk_final(seed, algorithm, **extra) for seed in SEEDS]
    return _FINALS[key]


@pytest.mark.slow
def test_08_comparative_ordering(acceptance):
    t0 = time.perf_counter()
    med = {}
    for alg in ("FSPG", "FPG", "SUB"):
        recs = finals(alg)
        med[alg] = (float(np.median([r.mse_truth for r in recs])),
                    float(np.median([r.support_accuracy for r in recs])))
    checks = {
        "mse FSPG<FPG": med["FSPG"][0] < med["FPG"][0],
        "mse FSPG<SUB": med["FSPG"][0] < med["SUB"][0],
        "acc FSPG>=FPG": med["FSPG"][1] >= med["FPG"][1],
        "acc FSPG>=SUB": med["FSPG"][1] >= med["SUB"][1],
    }
    detail = ("median mse/acc " + ", ".join(f"{a} {m:.3f}/{s:.3f}" for a, (m, s) in med.items())
              + "; failed: " + (", ".join(k for k, v in checks.items() if not v) or "none"))
    ok = acceptance.record(8, "comparative ordering at k=1e4", all(checks.values()), detail,
                           time.perf_counter() - t0, 1800)
    assert ok


@pytest.mark.slow
def test_09_fhpg_relationship(acceptance):
    t0 = time.perf_counter()
    fspg = float(np.median([r.mse_truth for r in finals("FSPG")]))
    fhpg = {mu: float(np.median([r.mse_truth for r in finals("FHPG", fhpg_mu=mu)]))
            for mu in (1.0, 2.0, 0.5)}
    best = min(fhpg.values())
    detail = (f"median mse FSPG {fspg:.3f} vs FHPG "
              + ", ".join(f"mu={mu:g} {v:.3f}" for mu, v in fhpg.items())
              + f"; bound 1.05 x {best:.3f} = {1.05 * best:.3f}")
    ok = acceptance.record(9, "FSPG within 1.05x best FHPG", fspg <= 1.05 * best, detail,
                           time.perf_counter() - t0, 1200)
    assert ok


def test_10_mixture_quantile(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(110)
    worst = 0.0
    zero_ok = True
    for _ in range(10):
        scales = np.abs(rng.standard_normal(int(rng.integers(1, 21)))) + 1e-3
        idx = rng.integers(0, scales.size, size=10**7)
        draws = scales[idx] * rng.standard_normal(10**7)
        for tau in (0.55, 0.7):
            worst = max(worst, abs(mixture_quantile(scales, tau) - np.quantile(draws, tau)))
        zero_ok &= mixture_quantile(scales, 0.5) == 0.0
    ok = acceptance.record(10, "mixture quantile vs Monte Carlo", worst <= 2e-3 and zero_ok,
                           f"max |diff| {worst:.1e}, exact zero at 0.5: {zero_ok}",
                           time.perf_counter() - t0, 60)
    assert ok


def test_11_spectral_bound(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(111)
    worst = 0.0
    for _ in range(20):
        n, P, L = int(rng.integers(10, 60)), int(rng.integers(1, 12)), int(rng.integers(1, 6))
        X, y = rng.normal(size=(n, P)) * rng.uniform(0.1, 3, size=P), rng.normal(size=n)
        parts = np.array_split(rng.permutation(n), L)
        nodes = [ClientNode(ClientDataset.from_raw(X[i], y[i], l)) for l, i in enumerate(parts)]
        est = spectral_bound(InProcessTransport(nodes))
        Xb = np.column_stack([X, np.ones(n)])
        exact = float(np.linalg.eigvalsh(Xb.T @ Xb)[-1])
        worst = max(worst, abs(est - exact) / max(abs(est), abs(exact)))
        assert math.isfinite(est)
    ok = acceptance.record(11, "spectral bound vs dense eigensolver", worst <= 1e-6,
                           f"max rel diff {worst:.1e} over 20 datasets", time.perf_counter() - t0, 10)
    assert ok
