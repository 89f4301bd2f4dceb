"""CrossNet speaker separation, written against a small numpy autodiff core."""

__version__ = "0.1.0"
