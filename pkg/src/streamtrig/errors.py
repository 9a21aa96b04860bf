"""Exception types raised by the simulator and its models."""


class SimError(Exception):
    pass


class Deadlock(SimError):
    """Event queue drained while some actors were still blocked."""

    def __init__(self, blocked_actors, at=0):
        self.blocked_actors = list(blocked_actors)
        self.at = at
        super().__init__(f"deadlock at t={at}: blocked {', '.join(self.blocked_actors)}")


class SameNode(SimError):
    pass


class OutOfRange(SimError):
    pass


class UnknownCounter(SimError):
    pass


class WildcardUnsupported(SimError):
    pass


class MessageTruncated(SimError):
    pass


class UnknownStream(SimError):
    pass


class DestroyBusy(SimError):
    pass


class UnknownQueue(SimError):
    pass


class FreeWhilePending(SimError):
    pass


class DuplicateRegistration(SimError):
    pass


class BadDims(SimError):
    pass


class CorrectnessFailure(SimError):
    def __init__(self, rank, index, expected=None, got=None):
        self.rank = rank
        self.index = tuple(index)
        self.expected = expected
        self.got = got
        super().__init__(
            f"rank {rank}: first mismatch at local index {self.index} "
            f"(expected {expected}, got {got})"
        )


class SpecError(SimError):
    """Experiment spec failed validation; ``problems`` maps field -> message."""

    def __init__(self, problems):
        self.problems = dict(problems)
        detail = "; ".join(f"{k}: {v}" for k, v in self.problems.items())
        super().__init__(f"invalid experiment spec: {detail}")
