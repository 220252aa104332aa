"""Exception hierarchy for the ofu package.

Everything raised on bad input derives from OfuError so the CLI can map
input problems to exit code 1 and keep unexpected exceptions (exit 2)
distinguishable.
"""

from __future__ import annotations


class OfuError(Exception):
    """Base class for all input/domain errors raised by this package."""


class MissingPrecision(OfuError):
    """Architecture has no clock or FLOPs/cycle entry for the requested precision."""


class UnknownArchitecture(OfuError):
    """No architecture with the requested name exists in the database."""


class NonPositiveRatio(OfuError):
    """Peak scaling ratio must be > 0."""


class ParseError(OfuError):
    """Structured input could not be parsed; carries line/field or byte-offset context."""


class InvariantViolation(OfuError):
    """A loaded record breaks a documented validity rule; names the failed check."""


class EmptyWindow(OfuError):
    """No samples were retained inside the aggregation window."""


class EmptyMix(OfuError):
    """Precision mix has no entry with positive FLOPs."""


class NonPositivePeak(OfuError):
    """Peak throughput must be > 0."""


class UnderTheoretic(OfuError):
    """Executed FLOPs fell below the 2*M*N*K floor; measurement or model bug."""


class NonPositiveFlops(OfuError):
    """Executed FLOPs must be > 0."""


class MissingHeader(OfuError):
    """Trace CSV does not start with the required header row."""


class MalformedRow(OfuError):
    """A trace record violated the sample constraints (raised only in strict mode)."""


class NonMultipleInterval(OfuError):
    """Study interval is not a whole multiple of the simulation base interval."""


class ZeroReference(OfuError):
    """Speedup reference utilization or peak is zero."""


class NonPositiveFactor(OfuError):
    """FLOPs correction factor must be > 0."""
