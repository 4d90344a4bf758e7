"""Grow an ensemble of subnetworks iteratively under a parameter budget."""
__version__ = "0.1.0"
