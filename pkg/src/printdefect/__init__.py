"""Blockwise detection and characterisation of local print defects."""

__version__ = "0.1.0"

from .classifier import CostSensitiveTreeClassifier
from .pipeline import LocalDefectDetector, analyze_page

__all__ = ["CostSensitiveTreeClassifier", "LocalDefectDetector", "analyze_page", "__version__"]
