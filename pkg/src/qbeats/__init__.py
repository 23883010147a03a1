"""Ground-state quantum beats in cavity-QED photon correlations."""

__version__ = "0.1.0"
