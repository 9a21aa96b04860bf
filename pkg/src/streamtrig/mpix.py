"""Message-passing API of one rank: baseline nonblocking P2P plus stream-triggered queues.

Stream-triggered (ST) operations are recorded on an :class:`MpixQueue` and
only run once the GPU stream reaches the ``WriteValue`` appended by
:meth:`Mpi.enqueue_start`.  Trigger scheme, per queue:

* the trigger counter holds the number of batches started so far;
* an op enqueued while ``b`` batches have been started gets threshold ``b + 1``;
* ``enqueue_wait`` blocks the stream until the completion counter reaches the
  number of ops started so far (each finished op adds exactly 1).

Inter-node ST sends become NIC deferred descriptors.  ST receives and all
intra-node ST sends are handed to the rank's progress thread.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Iterable

from .errors import FreeWhilePending, OutOfRange, UnknownQueue, UnknownStream
from .fabric import Buffer
from .host import Host, WaitRequests
from .nic import MASK64, DwqDescriptor, Envelope, PostedRecv, check_no_wildcards
from .progress import ST_RECV_INTER, ST_RECV_INTRA, ST_SEND_INTRA, EmulatedOp, intra_node_send

if TYPE_CHECKING:
    from .world import World

BYTE = 1
INT = 4
INT64 = 8

BASELINE_SEND = "baseline_send"
BASELINE_RECV = "baseline_recv"
ST_SEND = "st_send"
ST_RECV = "st_recv"


@dataclass(frozen=True)
class Communicator:
    id: int
    size: int


@dataclass(eq=False)
class Request:
    id: int
    kind: str
    envelope: Envelope
    state: str = "enqueued"
    completed_at: int | None = None
    _waiters: list[Callable[["Request"], None]] = field(default_factory=list, repr=False)

    @property
    def done(self) -> bool:
        return self.state == "complete"

    def mark_started(self) -> None:
        if self.state == "enqueued":
            self.state = "started"

    def complete(self, now: int) -> None:
        assert self.state != "complete", f"request {self.id} completed twice"
        self.state = "complete"
        self.completed_at = now
        waiters, self._waiters = self._waiters, []
        for fn in waiters:
            fn(self)

    def on_complete(self, fn: Callable[["Request"], None]) -> None:
        if self.done:
            fn(self)
        else:
            self._waiters.append(fn)


@dataclass(eq=False)
class MpixQueue:
    id: int
    rank: int
    stream: int
    trigger_counter: int
    completion_counter: int
    batches_started: int = 0
    pending_ops: list[Request] = field(default_factory=list)
    started_op_total: int = 0
    freed: bool = False


class Mpi:
    """The API a rank's host program calls.  Nonblocking calls return at once;
    ``wait``/``waitall`` return a command the program must ``yield``."""

    def __init__(self, world: "World", rank: int):
        self.world = world
        self.rank = rank
        self.sim = world.sim
        self.host: Host = world.hosts[rank]
        self.gpu = world.gpus[rank]
        self.nic = world.nics[rank]
        self.progress = world.progresses[rank]
        self.matcher = world.matchers[rank]
        self.queues: dict[int, MpixQueue] = {}
        self.comm_world = Communicator(0, world.size)
        self._next_comm = 1
        self.requests: list[Request] = []

    # -- helpers ----------------------------------------------------------

    def comm_dup(self, comm: Communicator | None = None) -> Communicator:
        comm = comm or self.comm_world
        dup = Communicator(self._next_comm, comm.size)
        self._next_comm += 1
        return dup

    def _envelope(self, buf: Buffer, count: int, elem_size: int, source: int, dest: int,
                  tag: int, comm: Communicator) -> Envelope:
        peer = dest if source == self.rank else source
        check_no_wildcards(source, tag)
        if not 0 <= peer < comm.size:
            raise ValueError(f"rank {peer} not in communicator of size {comm.size}")
        if count < 0 or elem_size <= 0:
            raise ValueError("count must be >= 0 and elem_size > 0")
        nbytes = count * elem_size
        if nbytes > buf.len_bytes:
            raise OutOfRange(f"{nbytes}B message does not fit {buf!r}")
        if buf.rank != self.rank:
            raise ValueError(f"{buf!r} does not belong to rank {self.rank}")
        return Envelope(source, dest, tag, comm.id, nbytes)

    def _request(self, kind: str, env: Envelope) -> Request:
        req = Request(self.sim.next_id("request"), kind, env)
        self.requests.append(req)
        return req

    def _queue(self, q: MpixQueue) -> MpixQueue:
        if q.freed or self.queues.get(q.id) is not q:
            raise UnknownQueue(f"rank {self.rank}: queue {q.id} is not live")
        return q

    def inter_node(self, peer: int) -> bool:
        return not self.world.topology.same_node(self.rank, peer)

    # -- queue lifecycle --------------------------------------------------

    def create_queue(self, stream: int) -> MpixQueue:
        """Bind a new queue to ``stream``.  Purely local: opens two NIC counters."""
        if stream not in self.gpu.streams:
            raise UnknownStream(f"rank {self.rank}: no stream {stream}")
        q = MpixQueue(self.sim.next_id("queue"), self.rank, stream,
                      self.nic.counter_create(), self.nic.counter_create())
        self.queues[q.id] = q
        self.host.log_call("create_queue")
        return q

    def free_queue(self, q: MpixQueue) -> None:
        self._queue(q)
        if q.pending_ops:
            raise FreeWhilePending(f"queue {q.id}: {len(q.pending_ops)} ops enqueued but never started")
        done = self.nic.counter_read(q.completion_counter)
        if done < q.started_op_total:
            raise FreeWhilePending(f"queue {q.id}: {q.started_op_total - done} started ops not complete")
        q.freed = True
        del self.queues[q.id]
        self.host.log_call("free_queue")

    # -- stream-triggered operations -------------------------------------

    def _st_done(self, req: Request, q: MpixQueue) -> Callable[[], None]:
        completion = self.nic.counter(q.completion_counter)

        def done():
            req.complete(self.sim.now)
            completion.add(1)

        return done

    def enqueue_send(self, buf: Buffer, count: int, elem_size: int, dest: int, tag: int,
                     comm: Communicator, q: MpixQueue) -> Request:
        self._queue(q)
        env = self._envelope(buf, count, elem_size, self.rank, dest, tag, comm)
        req = self._request(ST_SEND, env)
        threshold = q.batches_started + 1
        q.pending_ops.append(req)
        done = self._st_done(req, q)
        if self.inter_node(dest):
            d = DwqDescriptor(env, buf, q.trigger_counter, q.completion_counter, threshold, done)
            self.host.issue(lambda: self.nic.dwq_enqueue_tagged_send(d), 0, "enqueue_send",
                            f"tag={tag} ->{dest} thr={threshold}")
        else:
            op = EmulatedOp(ST_SEND_INTRA, env, buf, self.nic.counter(q.trigger_counter), threshold,
                            self.nic.counter(q.completion_counter), done, req.id)
            self.host.issue(lambda: self.progress.register(op), 0, "enqueue_send",
                            f"tag={tag} ->{dest} thr={threshold} (progress)")
        return req

    def enqueue_recv(self, buf: Buffer, count: int, elem_size: int, source: int, tag: int,
                     comm: Communicator, q: MpixQueue) -> Request:
        self._queue(q)
        env = self._envelope(buf, count, elem_size, source, self.rank, tag, comm)
        req = self._request(ST_RECV, env)
        threshold = q.batches_started + 1
        q.pending_ops.append(req)
        kind = ST_RECV_INTER if self.inter_node(source) else ST_RECV_INTRA
        op = EmulatedOp(kind, env, buf, self.nic.counter(q.trigger_counter), threshold,
                        self.nic.counter(q.completion_counter), self._st_done(req, q), req.id)
        self.host.issue(lambda: self.progress.register(op), 0, "enqueue_recv",
                        f"tag={tag} <-{source} thr={threshold}")
        return req

    def enqueue_start(self, q: MpixQueue) -> None:
        """Append the WriteValue that triggers every op enqueued since the last start."""
        self._queue(q)
        q.batches_started += 1
        for req in q.pending_ops:
            req.mark_started()
        q.started_op_total += len(q.pending_ops)
        q.pending_ops.clear()
        trigger = self.nic.counter(q.trigger_counter)
        value = q.batches_started
        self.gpu.reserve(q.stream)
        self.host.issue(lambda: self.gpu.stream_write_value(q.stream, trigger, value, reserved=True),
                        0, "enqueue_start", f"batch={value}")

    def enqueue_wait(self, q: MpixQueue) -> None:
        """Append a WaitValue for all ops started so far; the host does not block."""
        self._queue(q)
        completion = self.nic.counter(q.completion_counter)
        target = q.started_op_total
        self.gpu.reserve(q.stream)
        self.host.issue(lambda: self.gpu.stream_wait_value(q.stream, completion, target, MASK64,
                                                           reserved=True),
                        0, "enqueue_wait", f"completions>={target}")

    # -- baseline nonblocking P2P ----------------------------------------

    def isend(self, buf: Buffer, count: int, elem_size: int, dest: int, tag: int,
              comm: Communicator) -> Request:
        env = self._envelope(buf, count, elem_size, self.rank, dest, tag, comm)
        req = self._request(BASELINE_SEND, env)
        req.mark_started()

        def go():
            payload = buf.read(env.bytes)
            done = lambda: req.complete(self.sim.now)  # noqa: E731
            if self.inter_node(dest):
                self.nic.execute_send(env, payload, done)
            else:
                intra_node_send(self.world.fabric, self.world.matchers[dest], env, payload, done,
                                self.sim.next_id("message"))

        self.host.issue(go, self.sim.cost.nic_send_setup_cost, "isend", f"tag={tag} ->{dest}")
        return req

    def irecv(self, buf: Buffer, count: int, elem_size: int, source: int, tag: int,
              comm: Communicator) -> Request:
        env = self._envelope(buf, count, elem_size, source, self.rank, tag, comm)
        req = self._request(BASELINE_RECV, env)
        req.mark_started()
        recv = PostedRecv(source, tag, comm.id, buf, env.bytes,
                          lambda: req.complete(self.sim.now), req.id)
        self.host.issue(lambda: self.matcher.post_receive(recv),
                        self.sim.cost.nic_send_setup_cost, "irecv", f"tag={tag} <-{source}")
        return req

    def wait(self, req: Request):
        return self.waitall([req], name="wait")

    def waitall(self, reqs: Iterable[Request], name: str = "waitall") -> WaitRequests:
        return WaitRequests(list(reqs), name)

