"""Discrete-event simulator for adaptive-consistency SDN controller clusters."""

__version__ = "0.1.0"
