"""Hierarchical stage-wise training of linked neural networks for Wi-Fi
fingerprint localization across multiple buildings and floors."""

__version__ = "0.1.0"
