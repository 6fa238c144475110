"""Offline policy learning toolkit: improve recorded actions with
hindsight-informed (robust) MPC experts, then distill them into a quadratic
Q-function by convex inverse optimization."""

__version__ = "0.1.0"
