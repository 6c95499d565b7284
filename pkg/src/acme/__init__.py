"""Tree-overlay sensor aggregation stack with a deterministic network simulator."""

__version__ = "0.1.0"
