"""Simulated stream-triggered message passing for GPU clusters."""

from .errors import (BadDims, CorrectnessFailure, Deadlock, DestroyBusy, DuplicateRegistration,
                     FreeWhilePending, MessageTruncated, OutOfRange, SameNode, SimError, SpecError,
                     UnknownCounter, UnknownQueue, UnknownStream, WildcardUnsupported)
from .sim import CostModel, Simulator, TraceRecord
from .world import Process, World

__all__ = [
    "BadDims", "CorrectnessFailure", "CostModel", "Deadlock", "DestroyBusy",
    "DuplicateRegistration", "FreeWhilePending", "MessageTruncated", "OutOfRange", "Process",
    "SameNode", "SimError", "Simulator", "SpecError", "TraceRecord", "UnknownCounter",
    "UnknownQueue", "UnknownStream", "World", "WildcardUnsupported",
]
