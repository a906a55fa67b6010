"""Compile automata into exact transformer weights and check them against oracles."""

__version__ = "0.1.0"
