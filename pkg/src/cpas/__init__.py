"""Simulation of a GPRS-backed civil alarm network.

Pieces: alarm terminals with an emulated GPRS modem, a monitoring server
holding thousands of terminal sessions, a simulated SMS channel between each
terminal and its user, and a deterministic discrete-event harness that wires
them together over impaired links.
"""

__version__ = "0.1.0"
