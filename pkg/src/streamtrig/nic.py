"""Per-rank NIC: hardware counters driving a deferred send queue, plus tag matching.

Deferred sends sit inert in the command queue until their trigger counter
reaches the descriptor's threshold.  Receives are never deferred here; the
hardware being modelled has no triggered receive, so there is deliberately no
``dwq_enqueue_tagged_recv``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, NamedTuple

from .errors import MessageTruncated, UnknownCounter, WildcardUnsupported
from .fabric import Buffer, Fabric
from .sim import Actor, Simulator

ANY_SOURCE = -1
ANY_TAG = -1
MASK64 = (1 << 64) - 1


class Counter:
    """A 64-bit word that others can watch for changes.

    Used both for NIC hardware counters and for plain memory words that a
    GPU stream writes.
    """

    def __init__(self, cid: int, kind: str = "nic", owner: int = 0):
        self.id = cid
        self.kind = kind
        self.owner = owner
        self.value = 0
        self._watchers: list[Callable[["Counter"], None]] = []

    def __repr__(self):
        return f"Counter({self.kind}{self.id}@{self.owner}={self.value})"

    def watch(self, fn: Callable[["Counter"], None]) -> None:
        self._watchers.append(fn)

    def unwatch(self, fn: Callable[["Counter"], None]) -> None:
        self._watchers.remove(fn)

    def write(self, value: int) -> None:
        self.value = value & MASK64
        for fn in list(self._watchers):
            fn(self)

    def add(self, delta: int) -> None:
        self.write(self.value + delta)


@dataclass(frozen=True)
class Envelope:
    source: int
    dest: int
    tag: int
    comm: int
    bytes: int

    def __post_init__(self):
        check_no_wildcards(self.source, self.tag)
        if self.dest < 0:
            raise WildcardUnsupported(f"invalid destination {self.dest}")
        if self.bytes < 0:
            raise ValueError("negative message size")

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.source, self.tag, self.comm)


def check_no_wildcards(source: int, tag: int) -> None:
    if source == ANY_SOURCE or source < 0:
        raise WildcardUnsupported(f"source {source}: wildcard / negative sources are not supported")
    if tag == ANY_TAG or tag < 0:
        raise WildcardUnsupported(f"tag {tag}: wildcard / negative tags are not supported")


@dataclass(eq=False)
class PostedRecv:
    source: int
    tag: int
    comm: int
    buffer: Buffer
    capacity: int
    on_complete: Callable[[], None] | None = None
    id: int = -1

    def __post_init__(self):
        check_no_wildcards(self.source, self.tag)
        if self.capacity > self.buffer.len_bytes:
            raise ValueError(f"receive of {self.capacity}B into {self.buffer!r}")

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.source, self.tag, self.comm)

    def land(self, payload: bytes) -> None:
        if len(payload) > self.capacity:
            raise MessageTruncated(f"{len(payload)}B message into {self.capacity}B receive")
        self.buffer.write(payload)
        if self.on_complete is not None:
            self.on_complete()


@dataclass(eq=False)
class Incoming:
    """An envelope that reached a rank, waiting to be paired with a receive.

    ``payload`` is None for a rendezvous request-to-send.  ``on_match`` is
    called with the receive once the pairing is made.
    """

    envelope: Envelope
    payload: bytes | None
    on_match: Callable[[PostedRecv], None]
    msg_id: int = -1


class MatchEvent(NamedTuple):
    time: int
    kind: str  # "post" or "arrive"
    ident: int
    key: tuple[int, int, int]


class Matcher:
    """Posted-receive list and unexpected-message queue of one rank.

    Both are scanned in FIFO order for an exact (source, tag, comm) match.
    """

    def __init__(self, sim: Simulator, rank: int):
        self.sim = sim
        self.rank = rank
        self.posted: list[PostedRecv] = []
        self.unexpected: deque[Incoming] = deque()
        self.log: list[MatchEvent] = []
        self.pairs: list[tuple[int, int]] = []

    def post_receive(self, recv: PostedRecv) -> bool:
        check_no_wildcards(recv.source, recv.tag)
        self.log.append(MatchEvent(self.sim.now, "post", recv.id, recv.key))
        for inc in self.unexpected:
            if inc.envelope.key == recv.key:
                self.unexpected.remove(inc)
                self._pair(inc, recv)
                return True
        self.posted.append(recv)
        return False

    def match_incoming(self, inc: Incoming) -> PostedRecv | None:
        self.log.append(MatchEvent(self.sim.now, "arrive", inc.msg_id, inc.envelope.key))
        for recv in self.posted:
            if recv.key == inc.envelope.key:
                self.posted.remove(recv)
                self._pair(inc, recv)
                return recv
        self.unexpected.append(inc)
        return None

    def _pair(self, inc: Incoming, recv: PostedRecv) -> None:
        self.pairs.append((inc.msg_id, recv.id))
        self.sim.record(f"rank{self.rank}.match", "pair", f"msg{inc.msg_id} recv{recv.id}")
        inc.on_match(recv)


@dataclass(eq=False)
class DwqDescriptor:
    envelope: Envelope
    src_buffer: Buffer
    trigger_counter: int
    completion_counter: int
    threshold: int
    on_complete: Callable[[], None] | None = None
    id: int = -1


class FireRecord(NamedTuple):
    time: int
    descriptor: int
    trigger_value: int
    threshold: int


class Nic(Actor):
    """One NIC per rank.  ``peers`` maps every rank to its NIC."""

    def __init__(self, sim: Simulator, rank: int, fabric: Fabric, matcher: Matcher):
        super().__init__(sim, f"rank{rank}.nic")
        self.rank = rank
        self.fabric = fabric
        self.matcher = matcher
        self.peers: dict[int, Nic] = {}
        self.progress = None  # set by the world; takes rendezvous completion work
        self.counters: dict[int, Counter] = {}
        self.command_queue: list[DwqDescriptor] = []
        self.fired: list[FireRecord] = []
        self.descriptors_created = 0

    # -- counters ---------------------------------------------------------

    def counter_create(self) -> int:
        c = Counter(self.sim.next_id("counter"), "nic", self.rank)
        c.watch(self._on_counter)
        self.counters[c.id] = c
        return c.id

    def counter(self, cid: int) -> Counter:
        try:
            return self.counters[cid]
        except KeyError:
            raise UnknownCounter(f"{self.name}: no counter {cid}") from None

    def counter_read(self, cid: int) -> int:
        return self.counter(cid).value

    def counter_write(self, cid: int, value: int) -> None:
        self.counter(cid).write(value)

    def counter_add(self, cid: int, delta: int) -> None:
        self.counter(cid).add(delta)

    def _on_counter(self, counter: Counter) -> None:
        ready = [d for d in self.command_queue
                 if d.trigger_counter == counter.id and counter.value >= d.threshold]
        for d in ready:
            self.command_queue.remove(d)
            self._fire(d, counter.value)

    # -- deferred sends ---------------------------------------------------

    def dwq_enqueue_tagged_send(self, d: DwqDescriptor) -> None:
        trigger = self.counter(d.trigger_counter)
        self.counter(d.completion_counter)
        if d.id < 0:
            d.id = self.sim.next_id("descriptor")
        self.descriptors_created += 1
        self.sim.record(self.name, "dwq_enqueue",
                        f"d{d.id} tag={d.envelope.tag} ->{d.envelope.dest} thr={d.threshold}")
        if trigger.value >= d.threshold:
            self._fire(d, trigger.value)
        else:
            self.command_queue.append(d)

    def _fire(self, d: DwqDescriptor, trigger_value: int) -> None:
        assert trigger_value >= d.threshold
        self.fired.append(FireRecord(self.sim.now, d.id, trigger_value, d.threshold))
        self.sim.record(self.name, "fire", f"d{d.id} trigger={trigger_value} thr={d.threshold}")
        payload = d.src_buffer.read(d.envelope.bytes)
        start = self.occupy(self.sim.cost.nic_trigger_fire_cost)
        self.sim.at(start, self.name,
                    lambda: self.execute_send(d.envelope, payload, d.on_complete, deferred=True),
                    label="execute_send", detail=f"d{d.id}")

    def execute_send(self, env: Envelope, payload: bytes,
                     on_complete: Callable[[], None] | None, deferred: bool = False,
                     msg_id: int | None = None) -> None:
        """Push a captured payload to a remote rank with eager or rendezvous protocol.

        ``on_complete`` runs once the receiver has matched and taken the data
        (remote acknowledgement).  For deferred sends that used rendezvous, the
        completion update is routed through the progress thread.
        """
        dest = self.peers[env.dest]
        if msg_id is None:
            msg_id = self.sim.next_id("message")
        rendezvous = env.bytes > self.sim.cost.eager_threshold

        def acked():
            if rendezvous and deferred and self.progress is not None:
                self.progress.run_task(self.sim.cost.rendezvous_extra_host_cost, on_complete,
                                       "rendezvous_completion")
            elif on_complete is not None:
                on_complete()

        def deliver_to(recv: PostedRecv):
            recv.land(payload)
            self.fabric.transmit(env.dest, env.source, 0, acked, kind="ack")

        if not rendezvous:
            inc = Incoming(env, payload, deliver_to, msg_id)
            self.fabric.transmit(env.source, env.dest, env.bytes,
                                 lambda: dest.arrive(inc), kind="eager")
            return

        def clear_to_send(recv: PostedRecv):
            self.fabric.transmit(
                env.dest, env.source, 0,
                lambda: self.fabric.transmit(env.source, env.dest, env.bytes,
                                             lambda: deliver_to(recv), kind="data"),
                kind="cts")

        inc = Incoming(env, None, clear_to_send, msg_id)
        self.fabric.transmit(env.source, env.dest, 0, lambda: dest.arrive(inc), kind="rts")

    # -- receive side -----------------------------------------------------

    def arrive(self, inc: Incoming) -> PostedRecv | None:
        return self.match_incoming(inc)

    def match_incoming(self, inc: Incoming) -> PostedRecv | None:
        return self.matcher.match_incoming(inc)

    def post_receive(self, recv: PostedRecv) -> bool:
        return self.matcher.post_receive(recv)
