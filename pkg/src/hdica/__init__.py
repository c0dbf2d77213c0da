"""High-dimensional independent component analysis.

Projection-slicing initialization of deflationary FastICA, sample-split
prewhitening, and normal-approximation inference for the mixing matrix.
"""
from .fastica import FastIcaConfig, MixingEstimate, fit
from .inference import SourceMoments, align, confidence_intervals, losses
from .init import InitMethod
from .simulate import Scenario, SourceSpec, generate, sample_haar_orthogonal
from .whiten import WhitenPlan, unwhiten_columns, whiten

__all__ = [
    "FastIcaConfig", "InitMethod", "MixingEstimate", "Scenario", "SourceMoments",
    "SourceSpec", "WhitenPlan", "align", "confidence_intervals", "fit", "generate",
    "losses", "sample_haar_orthogonal", "unwhiten_columns", "whiten",
]

__version__ = "0.1.0"
