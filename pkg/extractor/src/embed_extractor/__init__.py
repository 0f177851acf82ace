"""Format bridge: vision-model features and signal arrays to EMBD files."""

__version__ = "0.1.0"
