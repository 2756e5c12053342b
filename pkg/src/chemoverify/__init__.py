"""Simulator and bound-verification harness for the local-sensing chemotaxis system
u_t = Delta(u gamma(v)), 0 = Delta v - v + u, with no-flux boundary conditions."""

__version__ = "0.1.0"
