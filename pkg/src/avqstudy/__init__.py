"""Crowdsourced audio-visual quality study platform."""

__version__ = "0.1.0"
