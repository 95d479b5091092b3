"""
Clients behind TCP sockets
==========================

Each client serves its own data on a local port; the coordinator only ever
sees gradients and Gram-vector products.  The trajectory is bit-for-bit the
same as the in-process run.
"""
import numpy as np

from fspg.client import ClientNode
from fspg.coordinator import Coordinator
from fspg.datagen import ScenarioSpec, generate_scenario
from fspg.penalty import PenaltyConfig
from fspg.transport import ClientServer, InProcessTransport, SocketTransport

datasets, truth = generate_scenario(ScenarioSpec(M=10, L=4, P=30, seed=3))
penalty = PenaltyConfig("MCP", 0.055, 2.4)

# port 0 asks the OS for a free port
servers = [ClientServer(ClientNode(d), port=0).start() for d in datasets]
addresses = [f"{host}:{port}" for host, port in (s.address for s in servers)]
print("clients listening on", addresses)

with SocketTransport(addresses, timeout=10.0) as transport:
    coord = Coordinator(transport, penalty, 0.55, relax_beta_c=True)
    w_socket = coord.run(300).w.copy()
for s in servers:
    s.stop()

local = Coordinator(InProcessTransport([ClientNode(d) for d in datasets]), penalty, 0.55,
                    relax_beta_c=True)
w_local = local.run(300).w
print("identical to in-process run:", np.array_equal(w_socket, w_local))
