"""Test suite for Qubit Trajectories."""
