"""Small-swarm underwater acoustic network simulator."""

__version__ = "0.1.0"
