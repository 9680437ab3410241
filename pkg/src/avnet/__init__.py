"""Simulation and analysis toolkit for cohort-based autonomic vehicular networks."""

__version__ = "0.1.0"
