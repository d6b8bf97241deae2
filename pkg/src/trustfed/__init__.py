"""Deterministic simulator of an EU-style cross-border trust federation.

Library modules:

- registry: member-state eID schemes and the notification lifecycle
- network: cross-border authentication flows between national nodes
- trust: certificates, trusted lists, signatures, seals, timestamps
- delivery: four-corner registered delivery with exactly-once semantics
- health: zero-knowledge citizen health-data platform scenario
- scenario / cli: text scenarios and the command-line harness
"""

from .dates import SimDate
from .errors import InvariantViolation, ParseError, SimulationError

__version__ = "0.1.0"

__all__ = [
    "SimDate",
    "SimulationError",
    "ParseError",
    "InvariantViolation",
    "__version__",
]
