"""Discrete-event engine plus the cost model every actor charges against.

Time is an integer count of virtual nanoseconds ("ticks").  Events are
ordered by ``(fire_at, seq)`` where ``seq`` is a global insertion counter,
so equal-time events are delivered in the order they were scheduled and two
runs of the same program produce the same event sequence.
"""

from __future__ import annotations

import dataclasses
import heapq
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, NamedTuple

from .errors import Deadlock


@dataclass(frozen=True)
class CostModel:
    """Per-action costs in ticks (ns) and link rates in bytes per tick.

    None of these numbers come from measurements; they are chosen so that
    the relative sizes of the control-path overheads are plausible for a GPU
    node with a 200 Gb/s class NIC.
    """

    host_device_sync_cost: int = 6_000
    kernel_launch_cost: int = 2_000
    kernel_run_cost_per_byte: float = 0.002
    stream_write_value_cost: int = 1_500
    stream_wait_value_poll_cost: int = 1_500
    nic_trigger_fire_cost: int = 150
    nic_send_setup_cost: int = 600
    fabric_latency: int = 2_000
    fabric_bandwidth_bytes_per_tick: float = 25.0
    dma_latency: int = 1_500
    dma_bandwidth_bytes_per_tick: float = 50.0
    progress_poll_interval: int = 5_000
    progress_poll_cost: int = 2_000
    progress_recv_handle_cost: int = 400
    rendezvous_extra_host_cost: int = 1_000
    eager_threshold: int = 16_384

    def __post_init__(self):
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ValueError(f"{f.name} must be a number, got {value!r}")
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{f.name} must be finite and >= 0, got {value}")
        for name in ("fabric_bandwidth_bytes_per_tick", "dma_bandwidth_bytes_per_tick",
                     "progress_poll_interval"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_mapping(cls, values: dict[str, Any]) -> "CostModel":
        return cls().with_overrides(**values)

    def with_overrides(self, **values) -> "CostModel":
        known = {f.name: f for f in dataclasses.fields(self)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise KeyError(f"unknown cost model keys: {', '.join(unknown)}")
        converted = {}
        for key, raw in values.items():
            kind = int if known[key].type in ("int", int) else float
            converted[key] = _coerce(raw, kind, key)
        return dataclasses.replace(self, **converted)

    @classmethod
    def from_file(cls, path) -> "CostModel":
        """Load from a ``.json`` object or a ``key = value`` text file."""
        path = Path(path)
        text = path.read_text()
        if path.suffix == ".json":
            return cls.from_mapping(json.loads(text))
        return cls.from_mapping(parse_key_values(text))

    def to_text(self) -> str:
        return "".join(f"{k} = {getattr(self, k)}\n" for k in self.keys())

    def as_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def _coerce(raw, kind, key):
    if isinstance(raw, str):
        raw = raw.strip()
        try:
            raw = float(raw) if kind is float or any(c in raw for c in ".eE") else int(raw)
        except ValueError:
            raise ValueError(f"{key}: not a number: {raw!r}") from None
    if kind is int:
        if float(raw) != int(raw):
            raise ValueError(f"{key} must be an integer tick count, got {raw}")
        return int(raw)
    return float(raw)


def parse_key_values(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def transfer_ticks(nbytes: int, bytes_per_tick: float) -> int:
    return math.ceil(nbytes / bytes_per_tick) if nbytes else 0


class TraceRecord(NamedTuple):
    time: int
    actor: str
    action: str
    details: str

    def line(self) -> str:
        return f"{self.time}\t{self.actor}\t{self.action}\t{self.details}"


class Actor:
    """Something that owns state and is charged time for the work it does.

    ``busy_until`` serialises work on actors that can only do one thing at a
    time (a NIC command processor, a progress thread, a host thread).
    """

    def __init__(self, sim: "Simulator", name: str):
        self.sim = sim
        self.name = name
        self.busy_until = 0
        self.charged = 0
        sim.register(self)

    def occupy(self, cost: int, earliest: int | None = None) -> int:
        """Reserve ``cost`` ticks of this actor's time; returns the finish time."""
        start = max(self.sim.now if earliest is None else earliest, self.busy_until)
        self.busy_until = start + cost
        self.charged += cost
        return self.busy_until

    def charge(self, cost: int) -> None:
        self.charged += cost

    def blocked_on(self) -> str | None:
        """Description of what this actor waits for, or None if not blocked."""
        return None

    def blocked_actors(self) -> list[str]:
        reason = self.blocked_on()
        return [f"{self.name} ({reason})"] if reason else []

    def finalize(self) -> None:
        """Called once the event queue has drained."""


@dataclass(order=True)
class _Event:
    fire_at: int
    seq: int
    target: str = field(compare=False)
    payload: Any = field(compare=False)
    label: str = field(compare=False, default="")
    detail: str = field(compare=False, default="")


class Simulator:
    def __init__(self, cost: CostModel | None = None, trace: bool = False):
        self.cost = cost if cost is not None else CostModel()
        self.actors: dict[str, Actor] = {}
        self.trace: list[TraceRecord] | None = [] if trace else None
        self.events_processed = 0
        self._queue: list[_Event] = []
        self._seq = itertools.count()
        self._now = 0
        self._ids: dict[str, itertools.count] = {}

    @property
    def now(self) -> int:
        return self._now

    def next_id(self, kind: str) -> int:
        """Per-simulation id allocator, so ids are identical across reruns."""
        return next(self._ids.setdefault(kind, itertools.count()))

    def register(self, actor: Actor) -> None:
        if actor.name in self.actors:
            raise ValueError(f"duplicate actor name {actor.name!r}")
        self.actors[actor.name] = actor

    def schedule(self, target: str, payload: Any, delay: int = 0, *,
                 label: str | None = None, detail: str = "") -> int:
        """Deliver ``payload`` to ``target`` after ``delay`` ticks.

        A callable payload is invoked; anything else is handed to the target
        actor's ``receive`` method.  Returns the event's sequence number.
        """
        if not isinstance(delay, int) or delay < 0:
            raise ValueError(f"delay must be a non-negative int, got {delay!r}")
        seq = next(self._seq)
        if label is None:
            label = payload if isinstance(payload, str) else getattr(payload, "__name__", "event")
        heapq.heappush(self._queue, _Event(self._now + delay, seq, target, payload, label, detail))
        return seq

    def at(self, when: int, target: str, payload: Any, **kw) -> int:
        return self.schedule(target, payload, max(0, when - self._now), **kw)

    def record(self, actor: str, action: str, detail: str = "") -> None:
        if self.trace is not None:
            self.trace.append(TraceRecord(self._now, actor, action, detail))

    def step(self) -> bool:
        if not self._queue:
            return False
        ev = heapq.heappop(self._queue)
        assert ev.fire_at >= self._now, "clock went backwards"
        self._now = ev.fire_at
        self.events_processed += 1
        if self.trace is not None:
            self.trace.append(TraceRecord(ev.fire_at, ev.target, ev.label, ev.detail))
        if callable(ev.payload):
            ev.payload()
        else:
            self.actors[ev.target].receive(ev.payload)
        return True

    def run_until_quiescent(self) -> int:
        """Process events until none remain; returns the final clock value.

        Raises Deadlock if any actor is still blocked at that point.
        """
        while self.step():
            pass
        for actor in self.actors.values():
            actor.finalize()
        blocked = [b for actor in self.actors.values() for b in actor.blocked_actors()]
        if blocked:
            raise Deadlock(blocked, at=self._now)
        return self._now

    def pending_events(self) -> int:
        return len(self._queue)

