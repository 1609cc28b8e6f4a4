"""Simulation of dynamic random graphs under node churn and of flooding over them."""
from .engine import Simulator, run_model, static_dout_graph
from .flooding import flood, flood_async, flood_discretized, flood_sync
from .model import ModelKind, ModelParams, Snapshot, Trajectory, load_trajectory, save_trajectory, snapshot_at
from .rng import RandomStream

__all__ = [
    "ModelKind", "ModelParams", "RandomStream", "Simulator", "Snapshot", "Trajectory",
    "flood", "flood_async", "flood_discretized", "flood_sync", "load_trajectory",
    "run_model", "save_trajectory", "snapshot_at", "static_dout_graph",
]
__version__ = "0.1.0"
