"""Estimators for planar dead-reckoning with position fixes.

Subpackages: exact group operations (:mod:`invnav.se2`), scenario
simulation (:mod:`invnav.sim`), the filter family (:mod:`invnav.filters`),
closed-form cross-checks (:mod:`invnav.analysis`), windowed MAP smoothing
(:mod:`invnav.smoothing`) and the experiment runner
(:mod:`invnav.experiments`, CLI in :mod:`invnav.cli`).
"""

from . import analysis, criteria, filters, se2, sim, smoothing

__all__ = ["analysis", "criteria", "filters", "se2", "sim", "smoothing"]
__version__ = "0.1.0"
