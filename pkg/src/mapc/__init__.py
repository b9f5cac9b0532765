"""Agentic multi-AP coordination simulator for OBSS Wi-Fi downlink."""

__version__ = "0.1.0"
