"""Ensemble experiments built on the trajectory engine."""
