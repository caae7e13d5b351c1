"""Plot scripts for solver harness CSV outputs."""

__version__ = "0.1.0"
