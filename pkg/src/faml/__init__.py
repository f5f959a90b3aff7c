"""Fairness-aware multi-view evidential learning.

Per-view evidential networks produce Dirichlet evidence under an adaptive,
training-trajectory prior; views are fused by confidence-weighted evidence
averaging, and training adds a class-evidence fairness penalty and a
cross-view consistency penalty to a class-balanced expected cross-entropy.
"""

__version__ = "0.1.0"
