"""Distributed overlapped community detection on a lockstep network simulator."""

__version__ = "0.1.0"
