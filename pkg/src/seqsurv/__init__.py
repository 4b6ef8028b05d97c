"""Sequence encoders plus Cox proportional hazards for recurrent-event data."""

__version__ = "0.1.0"
