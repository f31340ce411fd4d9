"""Fairness evaluation of classical recommenders with and without bias mitigation."""

__version__ = "0.1.0"
