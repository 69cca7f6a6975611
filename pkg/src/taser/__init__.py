"""Schema-guided extraction of fund holdings tables with iterative schema refinement."""

__version__ = "0.1.0"
