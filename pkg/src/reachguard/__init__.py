"""Reachability-based safety shield for receding-horizon trajectory planning."""

__version__ = "0.1.0"
