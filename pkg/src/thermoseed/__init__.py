"""Thermoseed: physically consistent thermal models for building zones.

The package pairs a neural model whose energy-accumulator module is
physically consistent by construction with a lumped RC baseline, a
synthetic building data generator, a training harness and a verification
suite that checks the consistency identities numerically.
"""

__version__ = "0.1.0"

from .timeseries import Normalizer, TimeSeriesTable

__all__ = ["Normalizer", "TimeSeriesTable", "__version__"]
