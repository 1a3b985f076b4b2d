"""Offline RL model selection with off-policy evaluation on a tabular sepsis simulator."""

__version__ = "0.1.0"
