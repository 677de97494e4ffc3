"""Agent-based simulator for shared flexible transit with learning travellers and adaptive fleets."""

__version__ = "0.1.0"
