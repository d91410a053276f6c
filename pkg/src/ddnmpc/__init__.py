"""Data-driven economic MPC with a learned horizon-cost surrogate."""

__version__ = "0.1.0"
