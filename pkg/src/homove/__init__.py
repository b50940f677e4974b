"""Handover-parameter optimisation lab: synthetic radio world, 3GPP-style
handover stack, trust-region Bayesian optimisation and a PPO agent."""

__version__ = "0.1.0"
