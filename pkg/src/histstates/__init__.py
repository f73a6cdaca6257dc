"""Quantum history states: chain operators, families, history observables and ancilla marking."""

__version__ = "0.1.0"
