"""Kinetic simulation of a heavy test particle in a Maxwell-Boltzmann gas."""
__version__ = "0.1.0"
