"""Gaze-based search-pattern analytics for chest X-ray reading sessions.

Subpackages cover the full pipeline: raw log ingestion, per-case
segmentation, performance metrics (sensitivity, coverage, heterogeneity,
interruptions, review time, heatmaps), fixation features, mixed-design
ANOVA with power analysis, feedback report rendering, and a synthetic
trial simulator that exercises everything end to end.
"""

from gazelab import fixations, ingest, metrics, preprocess, report, stats, trial

__version__ = "0.1.0"

__all__ = [
    "ingest",
    "preprocess",
    "metrics",
    "fixations",
    "stats",
    "report",
    "trial",
    "__version__",
]
