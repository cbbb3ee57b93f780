"""lightci: a lightweight, modular continuous-integration service.

Two-phase PR inspection (pre-build checks gate post-build package builds),
FIFO wait queue with a bounded run queue, supersession of resubmitted PRs,
a tiered plugin store, and a deterministic workload simulator.
"""

__version__ = "0.1.0"
