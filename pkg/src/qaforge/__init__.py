"""Static-analysis quality toolkit: clone detection, architecture conformance,
findings aggregation, quality gates and trends."""

__version__ = "0.1.0"
