"""The host (CPU) side of a rank: runs a program written as a generator.

Nonblocking API calls take effect immediately in program order.  Calls
that cost host time (posting a send, say) advance the host's private clock;
their effect is scheduled at that clock.  A program only yields to wait:

    req = ctx.mpi.isend(...)
    yield ctx.mpi.wait(req)
    yield ctx.stream_synchronize(stream)

Every yielded wait counts as a blocking event in ``Host.log``; plain
nonblocking calls never do.
"""

from __future__ import annotations

from typing import TYPE_CHECKING, Callable, Generator, NamedTuple

from .sim import Actor, Simulator

if TYPE_CHECKING:
    from .gpu import Gpu
    from .mpix import Request
    from .progress import Progress


class HostEvent(NamedTuple):
    time: int
    kind: str  # "call", "block" or "unblock"
    name: str


class Blocking:
    kind = "block"

    def arm(self, host: "Host", wake: Callable[[int], None]) -> None:
        raise NotImplementedError

    def describe(self) -> str:
        return self.kind


class Sleep(Blocking):
    """Busy the host for a while (host-side compute).  Not a blocking wait."""

    kind = "sleep"

    def __init__(self, ticks: int):
        if ticks < 0:
            raise ValueError(f"cannot sleep for {ticks} ticks")
        self.ticks = ticks


class WaitRequests(Blocking):
    def __init__(self, requests: list["Request"], kind: str = "waitall"):
        self.requests = requests
        self.kind = kind

    def arm(self, host, wake):
        remaining = [r for r in self.requests if not r.done]
        if not remaining:
            wake(0)
            return
        left = [len(remaining)]

        def one_done(_req):
            left[0] -= 1
            if left[0] == 0:
                wake(0)

        for r in remaining:
            r.on_complete(one_done)

    def describe(self):
        ids = ",".join(str(r.id) for r in self.requests if not r.done)
        return f"{self.kind} on requests [{ids}]"


class StreamSync(Blocking):
    kind = "stream_synchronize"

    def __init__(self, gpu: "Gpu", stream: int):
        self.gpu = gpu
        self.stream = stream

    def arm(self, host, wake):
        cost = host.sim.cost.host_device_sync_cost
        self.gpu.when_drained(self.stream, lambda: wake(cost))

    def describe(self):
        return f"stream_synchronize on {self.gpu.name}.stream{self.stream}"


class Host(Actor):
    def __init__(self, sim: Simulator, rank: int, progress: "Progress | None" = None):
        super().__init__(sim, f"rank{rank}.host")
        self.rank = rank
        self.progress = progress
        self.clock = 0
        self.log: list[HostEvent] = []
        self.waiting: Blocking | None = None
        self.finished_at: int | None = None
        self._gen: Generator | None = None

    def start(self, gen) -> None:
        if not hasattr(gen, "send"):
            self.sim.schedule(self.name, self._finish, label="finish")
            return
        self._gen = gen
        self.sim.schedule(self.name, lambda: self._resume(None), label="start")

    # -- time accounting --------------------------------------------------

    def spend(self, cost: int) -> int:
        start = max(self.sim.now, self.clock)
        self.clock = start + cost
        self.charged += cost
        return self.clock

    def issue(self, fn: Callable[[], None], cost: int, name: str, detail: str = "") -> None:
        """Run a nonblocking call's effect once ``cost`` ticks of host time are spent."""
        when = self.spend(cost)
        self.log.append(HostEvent(when, "call", name))
        self.sim.at(when, self.name, fn, label=name, detail=detail)

    def log_call(self, name: str) -> None:
        self.log.append(HostEvent(max(self.sim.now, self.clock), "call", name))

    @property
    def block_events(self) -> list[HostEvent]:
        return [e for e in self.log if e.kind == "block"]

    # -- generator driving ------------------------------------------------

    def _resume(self, value) -> None:
        self.clock = max(self.clock, self.sim.now)
        try:
            cmd = self._gen.send(value)
        except StopIteration:
            self.sim.at(self.clock, self.name, self._finish, label="finish")
            return
        if isinstance(cmd, Sleep):
            when = self.spend(cmd.ticks)
            self.sim.at(when, self.name, lambda: self._resume(None), label="sleep_done")
        elif isinstance(cmd, Blocking):
            self.sim.at(self.clock, self.name, lambda: self._block(cmd), label=cmd.kind)
        else:
            raise TypeError(f"{self.name}: program yielded {cmd!r}; yield a wait command")

    def _block(self, cmd: Blocking) -> None:
        self.log.append(HostEvent(self.sim.now, "block", cmd.kind))
        self.waiting = cmd

        def wake(extra: int):
            if self.waiting is not cmd:
                return
            self.waiting = None
            when = self.sim.now + extra
            self.charge(extra)
            self.clock = when
            self.sim.at(when, self.name, lambda: self._unblock(cmd), label=f"{cmd.kind}_done")

        cmd.arm(self, wake)

    def _unblock(self, cmd: Blocking) -> None:
        self.log.append(HostEvent(self.sim.now, "unblock", cmd.kind))
        self._resume(None)

    def _finish(self) -> None:
        self.finished_at = self.sim.now
        if self.progress is not None:
            self.progress.stop()

    def blocked_on(self) -> str | None:
        if self.waiting is not None:
            return self.waiting.describe()
        return None
