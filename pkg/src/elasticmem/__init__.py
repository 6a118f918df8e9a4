"""Elastic KV-cache / activation memory management for LLM serving, simulated."""

__version__ = "0.1.0"
