"""Semantic-communication SAGIN simulator with a distributional soft actor-critic."""

__version__ = "0.1.0"
