"""Per-rank asynchronous progress thread.

It emulates the deferred operations the NIC cannot run itself: every
stream-triggered receive and every intra-node stream-triggered send.  The
thread wakes on a fixed polling grid (multiples of ``progress_poll_interval``),
spends ``progress_poll_cost`` per poll, and ``progress_recv_handle_cost`` for
each operation it acts on.

Idle polls are not simulated one event at a time.  They are accounted
lazily: whenever the thread is about to do real work, the grid points it
spent idling since its last piece of work are counted (and charged) in one
go, and an idle poll that is still running delays the new work exactly as a
real one would.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from .errors import DuplicateRegistration, MessageTruncated
from .fabric import Buffer, Fabric
from .nic import Counter, Envelope, Incoming, Matcher, PostedRecv, check_no_wildcards
from .sim import Actor, Simulator

ST_RECV_INTER = "st_recv_inter"
ST_RECV_INTRA = "st_recv_intra"
ST_SEND_INTRA = "st_send_intra"


@dataclass(eq=False)
class EmulatedOp:
    kind: str
    envelope: Envelope
    buffer: Buffer
    trigger_counter: Counter
    threshold: int
    completion_counter: Counter
    on_complete: Callable[[], None] | None = None
    request_id: int = -1
    acted_at: int | None = None
    trigger_seen: int | None = None

    def armed(self) -> bool:
        return self.trigger_counter.value >= self.threshold


def intra_node_send(fabric: Fabric, matcher: Matcher, env: Envelope, payload: bytes,
                    on_complete: Callable[[], None] | None, msg_id: int) -> None:
    """Hand a captured payload to a same-node receiver's matcher.

    The DMA copy starts once a receive matches; both sides complete when
    the copy lands.
    """

    def matched(recv: PostedRecv):
        if len(payload) > recv.capacity:
            raise MessageTruncated(f"{len(payload)}B message into {recv.capacity}B receive")

        def landed():
            if recv.on_complete is not None:
                recv.on_complete()
            if on_complete is not None:
                on_complete()

        fabric.dma_write(payload, recv.buffer, landed)

    matcher.match_incoming(Incoming(env, payload, matched, msg_id))


class Progress(Actor):
    def __init__(self, sim: Simulator, rank: int, matcher: Matcher, fabric: Fabric):
        super().__init__(sim, f"rank{rank}.progress")
        self.rank = rank
        self.matcher = matcher
        self.fabric = fabric
        self.matchers: dict[int, Matcher] = {}
        self.registered: list[EmulatedOp] = []
        self.acted: list[EmulatedOp] = []
        self.polls = 0
        self.active_polls = 0
        self.stopped_at: int | None = None
        self._request_ids: set[int] = set()
        self._watched: set[int] = set()
        self._next_grid = 0  # index of the first grid point not yet accounted
        self._poll_pending: int | None = None

    # -- polling grid -----------------------------------------------------

    @property
    def interval(self) -> int:
        return self.sim.cost.progress_poll_interval

    def _grid_at_or_after(self, t: int) -> int:
        return -(-t // self.interval) * self.interval

    def _account_idle(self, until: int) -> None:
        """Count idle polls at grid points before ``until`` (exclusive)."""
        if self.stopped_at is not None:
            until = min(until, self.stopped_at)
        first = max(self._next_grid, -(-self.busy_until // self.interval))
        last = -(-until // self.interval)  # grid indices < last are before ``until``
        if last <= first:
            return
        idle = last - first
        cost = self.sim.cost.progress_poll_cost
        self.polls += idle
        self.charged += idle * cost
        self._next_grid = last
        self.busy_until = max(self.busy_until, (last - 1) * self.interval + cost)

    def _request_poll(self) -> None:
        when = self._grid_at_or_after(max(self.sim.now, self.busy_until))
        if self._poll_pending is not None and self._poll_pending <= when:
            return
        self._poll_pending = when
        self.sim.at(when, self.name, self._poll, label="poll")

    def _poll(self) -> None:
        now = self.sim.now
        if self._poll_pending != now:
            return  # superseded by an earlier poll
        self._poll_pending = None
        if self.busy_until > now:
            self._request_poll()
            return
        self._account_idle(now)
        cost = self.sim.cost
        self.polls += 1
        self.active_polls += 1
        self._next_grid = now // self.interval + 1
        self.occupy(cost.progress_poll_cost)
        ready = [op for op in self.registered if op.armed()]
        for op in ready:
            self.registered.remove(op)
            op.trigger_seen = op.trigger_counter.value
            done = self.occupy(cost.progress_recv_handle_cost)
            self.sim.at(done, self.name, lambda op=op: self._act(op), label="act",
                        detail=f"{op.kind} tag={op.envelope.tag} req{op.request_id}")
        if any(op.armed() for op in self.registered):
            self._request_poll()

    # -- registration and actions ----------------------------------------

    def register(self, op: EmulatedOp) -> None:
        check_no_wildcards(op.envelope.source, op.envelope.tag)
        if op.request_id in self._request_ids:
            raise DuplicateRegistration(f"{self.name}: request {op.request_id} already registered")
        self._request_ids.add(op.request_id)
        self.registered.append(op)
        if op.trigger_counter.id not in self._watched:
            self._watched.add(op.trigger_counter.id)
            op.trigger_counter.watch(self._on_trigger)
        if op.armed():
            self._request_poll()

    def _on_trigger(self, counter: Counter) -> None:
        if any(op.trigger_counter is counter and op.armed() for op in self.registered):
            self._request_poll()

    def _act(self, op: EmulatedOp) -> None:
        assert op.armed()
        op.acted_at = self.sim.now
        self.acted.append(op)
        env = op.envelope
        if op.kind == ST_SEND_INTRA:
            payload = op.buffer.read(env.bytes)
            intra_node_send(self.fabric, self.matchers[env.dest], env, payload,
                            op.on_complete, self.sim.next_id("message"))
        else:
            recv = PostedRecv(env.source, env.tag, env.comm, op.buffer, env.bytes,
                              op.on_complete, op.request_id)
            self.matcher.post_receive(recv)

    def run_task(self, cost: int, fn: Callable[[], None] | None, label: str = "task") -> int:
        """Queue ``cost`` ticks of CPU work on this thread, then run ``fn``."""
        self._account_idle(self.sim.now + 1)
        done = self.occupy(cost)
        if fn is not None:
            self.sim.at(done, self.name, fn, label=label)
        return done

    def stop(self) -> None:
        """The owning host program ended; idle polling stops here."""
        self._account_idle(self.sim.now)
        self.stopped_at = self.sim.now

    def finalize(self) -> None:
        if self.stopped_at is None:
            self._account_idle(self.sim.now)

    def pending(self) -> list[EmulatedOp]:
        return list(self.registered)
