"""leaksim: trajectory simulation of leakage in quantum error correction memory experiments."""

from .simulator import LeakageSimulator

__all__ = ["LeakageSimulator"]
