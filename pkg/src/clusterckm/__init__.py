"""Cluster-wise channel knowledge maps for MIMO-OFDM channel estimation."""

__version__ = "0.1.0"
