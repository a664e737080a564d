"""Deterministic control-plane simulator for SR-IOV/RDMA-aware scheduling.

Core pieces: the cluster model (``cluster``), the per-node hardware daemon
(``daemon``), the scheduler with its multi-knapsack extender
(``scheduling``), the pod network lifecycle (``cni``), the flow-level
bandwidth sharing engine (``sharing``), and the scenario runner
(``scenario``). A FastAPI service (``conrdma_sim.service``) exposes the
wire interfaces; the ``conrdma-sim`` CLI is a thin client for it.
"""

__version__ = "0.1.0"
