"""Multichannel character-level recognizer with a highway-LSTM encoder."""

__version__ = "0.1.0"
