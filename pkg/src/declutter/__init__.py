"""Grasp planning by probabilistic set cover, with a raster garment simulator.

Modules: ``raster`` (grids and masks), ``scene`` (simulated garments),
``predictor`` (grasp success model), ``candidates`` (grasp candidates),
``setcover`` (exact and greedy planners), ``policies`` and ``harness``.
"""

__version__ = "0.1.0"
