"""GPU streams and the per-device control processor (CP) that runs them.

Each stream is a FIFO of kernels and stream memory operations.  A stream
runs its head operation to completion before starting the next one; a
``WaitValue`` whose condition is false parks the whole stream until the
watched word changes to a satisfying value.  Streams on one device do not
order each other.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Union

from .errors import DestroyBusy, UnknownStream
from .nic import MASK64, Counter
from .sim import Actor, Simulator


@dataclass(eq=False)
class Kernel:
    """A device kernel; ``effect`` mutates device buffers when it completes."""

    name: str = "kernel"
    work_bytes: int = 0
    effect: Callable[[], None] | None = None
    extra_ticks: int = 0


@dataclass(eq=False)
class WriteValue:
    target: Counter
    value: int


@dataclass(eq=False)
class WaitValue:
    """Block the stream until ``(target & mask) >= value`` (unsigned)."""

    target: Counter
    value: int
    mask: int = MASK64

    def satisfied(self) -> bool:
        return (self.target.value & self.mask) >= (self.value & MASK64)


StreamOp = Union[Kernel, WriteValue, WaitValue]


@dataclass(eq=False)
class Stream:
    id: int
    device: int
    ops: deque = field(default_factory=deque)
    running: StreamOp | None = None
    blocked: WaitValue | None = None
    reserved: int = 0
    enqueued: int = 0
    completed: int = 0
    start_log: list[int] = field(default_factory=list)
    drain_waiters: list[Callable[[], None]] = field(default_factory=list)

    @property
    def state(self) -> str:
        return "blocked" if self.blocked is not None else "running"

    @property
    def idle(self) -> bool:
        return not self.ops and self.running is None and self.reserved == 0


class Gpu(Actor):
    """Control processor of one GPU device (one device per rank)."""

    def __init__(self, sim: Simulator, device: int):
        super().__init__(sim, f"rank{device}.gpu")
        self.device = device
        self.streams: dict[int, Stream] = {}
        self.write_values_executed = 0
        self.wait_value_checks = 0

    def stream_create(self) -> int:
        sid = self.sim.next_id(f"stream{self.device}")
        self.streams[sid] = Stream(sid, self.device)
        return sid

    def stream(self, sid: int) -> Stream:
        try:
            return self.streams[sid]
        except KeyError:
            raise UnknownStream(f"{self.name}: no stream {sid}") from None

    def stream_destroy(self, sid: int) -> None:
        s = self.stream(sid)
        if not s.idle or s.blocked is not None:
            raise DestroyBusy(f"{self.name}: stream {sid} still has work")
        del self.streams[sid]

    def reserve(self, sid: int) -> None:
        """Note an operation a host has issued but which has not reached the stream yet."""
        self.stream(sid).reserved += 1

    def alloc_word(self) -> Counter:
        """A plain 64-bit device memory word usable as a WriteValue/WaitValue target."""
        return Counter(self.sim.next_id("word"), "mem", self.device)

    # -- enqueue ----------------------------------------------------------

    def enqueue(self, sid: int, op: StreamOp, reserved: bool = False) -> None:
        s = self.stream(sid)
        if reserved:
            s.reserved -= 1
        s.ops.append(op)
        op._seq = s.enqueued
        s.enqueued += 1
        self._pump(s)

    def enqueue_kernel(self, sid: int, kernel: Kernel, reserved: bool = False) -> None:
        self.enqueue(sid, kernel, reserved)

    def stream_write_value(self, sid: int, target: Counter, value: int, reserved: bool = False) -> None:
        self.enqueue(sid, WriteValue(target, value), reserved)

    def stream_wait_value(self, sid: int, target: Counter, value: int, mask: int = MASK64,
                          reserved: bool = False) -> None:
        self.enqueue(sid, WaitValue(target, value, mask), reserved)

    def when_drained(self, sid: int, fn: Callable[[], None]) -> None:
        s = self.stream(sid)
        if s.idle:
            fn()
        else:
            s.drain_waiters.append(fn)

    # -- execution --------------------------------------------------------

    def _pump(self, s: Stream) -> None:
        if s.running is not None or not s.ops:
            return
        op = s.ops.popleft()
        s.running = op
        s.start_log.append(op._seq)
        cost = self.sim.cost
        where = f"stream{s.id}"
        if isinstance(op, Kernel):
            ticks = (cost.kernel_launch_cost
                     + math.ceil(op.work_bytes * cost.kernel_run_cost_per_byte) + op.extra_ticks)
            self.charge(ticks)
            self.sim.schedule(self.name, lambda: self._kernel_done(s, op), ticks,
                              label="kernel_done", detail=f"{where} {op.name}")
        elif isinstance(op, WriteValue):
            self.charge(cost.stream_write_value_cost)
            self.sim.schedule(self.name, lambda: self._write_done(s, op),
                              cost.stream_write_value_cost,
                              label="write_value", detail=f"{where} {op.target!r}<-{op.value}")
        else:
            self._poll_wait(s, op)

    def _kernel_done(self, s: Stream, k: Kernel) -> None:
        if k.effect is not None:
            k.effect()
        self._finish(s)

    def _write_done(self, s: Stream, op: WriteValue) -> None:
        self.write_values_executed += 1
        op.target.write(op.value)
        self._finish(s)

    def _poll_wait(self, s: Stream, op: WaitValue) -> None:
        poll = self.sim.cost.stream_wait_value_poll_cost
        self.charge(poll)
        self.wait_value_checks += 1
        if op.satisfied():
            self.sim.schedule(self.name, lambda: self._finish(s), poll,
                              label="wait_value_pass", detail=f"stream{s.id} {op.target!r}>={op.value}")
            return
        s.blocked = op
        self.sim.record(self.name, "wait_value_block", f"stream{s.id} {op.target!r}>={op.value}")

        def recheck(counter: Counter):
            self.charge(poll)
            self.wait_value_checks += 1
            if op.satisfied():
                counter.unwatch(recheck)
                s.blocked = None
                self.sim.schedule(self.name, lambda: self._finish(s), poll,
                                  label="wait_value_pass", detail=f"stream{s.id} {op.target!r}>={op.value}")

        op.target.watch(recheck)

    def _finish(self, s: Stream) -> None:
        s.running = None
        s.completed += 1
        self._pump(s)
        if s.idle and s.drain_waiters:
            waiters, s.drain_waiters = s.drain_waiters, []
            for fn in waiters:
                fn()

    def blocked_actors(self) -> list[str]:
        return [f"{self.name}.stream{s.id} (WaitValue {s.blocked.target!r} >= {s.blocked.value})"
                for s in self.streams.values() if s.blocked is not None]
