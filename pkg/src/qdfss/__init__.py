"""Fine-structure-splitting toolkit for quantum-dot polarization spectroscopy."""

__version__ = "0.1.0"
