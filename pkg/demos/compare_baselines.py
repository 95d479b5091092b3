"""
Smoothed vs unsmoothed vs plain subgradient
===========================================

Run every algorithm on the same data for a handful of seeds and print the
median error against the true coefficients and the median support accuracy.
Small problems overfit, so the ranking depends on the regime; try
``preset="scenario1"`` (slow) for the larger setting.
"""
import sys

import numpy as np

from fspg.harness import RunConfig, run_experiment

preset = sys.argv[1] if len(sys.argv) > 1 else "desk"
seeds = range(5)
variants = {
    "FSPG": {},
    "FPG": {},
    "SUB": {},
    "FHPG mu=1": {"algorithm": "FHPG", "fhpg_mu": 1.0},
}

print(f"{'algorithm':12s} {'median mse':>11s} {'median acc':>11s}")
for name, extra in variants.items():
    doc = {"preset": preset, "algorithm": name.split()[0], "diagnostics_every": 10**6}
    doc.update(extra)
    finals = [run_experiment(RunConfig.from_dict(dict(doc, seed=s))).records[-1] for s in seeds]
    mse = np.median([r.mse_truth for r in finals])
    acc = np.median([r.support_accuracy for r in finals])
    print(f"{name:12s} {mse:11.4f} {acc:11.3f}")
