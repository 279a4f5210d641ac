"""Qubit Trajectories: simulation and filtering of a continuously monitored qubit."""

from qubit_trajectories.project_meta import get_project_version

__all__ = ["get_project_version"]
