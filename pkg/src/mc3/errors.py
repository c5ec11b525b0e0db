"""Exception hierarchy shared by every mc3 module."""
from __future__ import annotations


class MC3Error(Exception):
    """Base class for all toolkit errors."""


class NonByteAlignedLength(MC3Error, ValueError):
    pass


class LengthMismatch(MC3Error, ValueError):
    pass


class ClockUnavailable(MC3Error, RuntimeError):
    pass


class KernelFailure(MC3Error, RuntimeError):
    pass


class AllocationFailure(KernelFailure):
    pass


class BackendUnavailable(KernelFailure):
    pass


class CacheInflatedReading(KernelFailure):
    """A cache-bypassing kernel reported more than twice the configured peak."""


class CalibrationFailure(MC3Error, RuntimeError):
    pass


class UnknownActor(MC3Error, KeyError):
    pass


class MissedStartEpoch(MC3Error, RuntimeError):
    pass


class EmptyTrace(MC3Error, ValueError):
    pass


class DomainError(MC3Error, ValueError):
    pass


class SchemaVersionError(MC3Error, ValueError):
    pass


class ConfigError(MC3Error, ValueError):
    pass
