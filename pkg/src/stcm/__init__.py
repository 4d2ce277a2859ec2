"""Semantics-driven channel twin for integrated sensing and communication.

A textual or structured scene description is validated into a four-level
semantic scene, embedded into a conditioning code, and mapped by a
conditional generator to target, clutter and interaction parameters. The
synthesizer renders multipath channels from those parameters, and the
fidelity module scores generated channels against reference targets.
"""

__version__ = "0.1.0"
