"""Hyperspectral skin-cube biomarker pipeline.

Calibrated spectral cubes in, evaluation reports out: cube IO and
preprocessing, band-ratio tissue indices, clinical record handling and
bedside scores, a deterministic random forest with recursive feature
elimination, nested cross-validation with bootstrap AUROC estimates, and
Welch-based group statistics. Everything is reproducible from a single
seed and exercisable on synthetic cohorts.
"""

__version__ = "0.1.0"
