"""Simulation operations: channels, circuits, scheduling, trajectories, decoding and analysis."""
