"""Measurement and modeling toolkit for maliciously registered phishing domains."""

__version__ = "0.1.0"
