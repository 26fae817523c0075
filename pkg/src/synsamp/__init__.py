"""Synaptic sampling: Langevin parameter dynamics for RBMs and spiking WTA networks."""

__version__ = "0.1.0"
