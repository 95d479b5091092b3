"""
Reading off convergence rates
=============================

With sigma_k = c (k+1)^d the squared step length should shrink roughly like
k^(-(1+d)) and the stationarity measure kappa keeps falling.  The slope is
fitted on log-log axes over the last decade of iterations.
"""
from fspg.client import ClientNode
from fspg.coordinator import Coordinator
from fspg.datagen import ScenarioSpec, generate_scenario
from fspg.diagnostics import descent_violations, loglog_slope
from fspg.penalty import PenaltyConfig
from fspg.transport import InProcessTransport

datasets, _ = generate_scenario(ScenarioSpec(M=10, L=5, P=30, tau=0.7, seed=2))
penalty = PenaltyConfig("MCP", 0.055, 2.4)
coord = Coordinator(InProcessTransport([ClientNode(d) for d in datasets]), penalty, 0.7,
                    relax_beta_c=True)
state = coord.run(5000)

print("descent violations:", len(descent_violations(state, penalty.rho)))
print(f"slope of |dw|^2: {loglog_slope(state.dw_history):.2f}")
print(f"slope of kappa:  {loglog_slope(state.kappa_history):.2f}")
