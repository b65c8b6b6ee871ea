"""Coupling, heralding and detection-statistics model for type-II SPDC pair sources."""

__version__ = "0.1.0"
