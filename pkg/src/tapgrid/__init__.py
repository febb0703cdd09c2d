"""Tabular gridworld testbed for planning over generated target states.

Subpackages are plain modules; import what you need, e.g.
``from tapgrid import gridworld, dp_oracle``.
"""
__version__ = "0.1.0"
