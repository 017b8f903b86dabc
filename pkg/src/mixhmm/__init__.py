"""Heterogeneous multiscale solver for two-component, two-phase flow."""

__version__ = "0.1.0"
