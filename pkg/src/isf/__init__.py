"""Desk-scale in-situ simulation/ML coupling framework."""

__version__ = "0.1.0"
