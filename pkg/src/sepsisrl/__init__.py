"""Offline reinforcement learning for sepsis treatment policies on synthetic ICU cohorts."""

__version__ = "0.1.0"
