"""Simulation lab for stealthy sensor attacks and active defenses on a redundant arm."""

__version__ = "0.1.0"
