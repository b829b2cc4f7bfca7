"""Structural model of advertisers learning click-through rates from direct buys."""

__version__ = "0.1.0"
