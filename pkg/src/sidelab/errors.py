"""Exception types shared across the simulator."""


class SidelabError(Exception):
    """Base class for all simulator errors."""


class InvalidConfig(SidelabError, ValueError):
    """A configuration violates one of its invariants."""


class UnsupportedInstruction(SidelabError):
    """The modeled ISA lacks the instruction an operation needs (e.g. a line flush)."""


class DegenerateMatrix(SidelabError):
    """Every probe latency is identical, so no occupancy threshold exists."""


class DegenerateClusters(SidelabError):
    """Every power sample is identical, so SPA has nothing to separate."""


class InsufficientTraces(SidelabError):
    """Too few traces, or a partition class is empty, for DPA."""


class InfeasiblePartition(InvalidConfig):
    """The way-partition cannot give every actor at least one way."""


class ScenarioError(InvalidConfig):
    """A scenario document failed to parse or validate."""


class NoOccupancy(SidelabError):
    """The monitored column never shows victim activity."""
