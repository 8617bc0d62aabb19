"""Deterministic 2D driving micro-simulator.

The environment transition lives in :mod:`latentdrive.sim.world`, the ego
dynamics in :mod:`latentdrive.sim.vehicle`.
"""
