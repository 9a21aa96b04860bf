"""Assemble a simulated cluster and run one host program per rank."""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

from .errors import DestroyBusy
from .fabric import DEVICE, Buffer, Fabric, Topology
from .gpu import Gpu, Kernel
from .host import Host, Sleep, StreamSync
from .mpix import Mpi
from .nic import MASK64, Counter, Matcher, Nic
from .progress import Progress
from .sim import CostModel, Simulator


class Process:
    """The handle a rank's program works through; ``mpi`` holds the message-passing calls."""

    def __init__(self, world: "World", rank: int):
        self.world = world
        self.rank = rank
        self.size = world.size
        self.node = world.topology.node_of(rank)
        self.sim = world.sim
        self.host = world.hosts[rank]
        self.gpu = world.gpus[rank]
        self.mpi = Mpi(world, rank)

    @property
    def comm_world(self):
        return self.mpi.comm_world

    def alloc(self, nbytes: int, space: str = DEVICE) -> Buffer:
        return Buffer(nbytes, space, self.rank, self.node, self.sim.next_id("buffer"))

    def sleep(self, ticks: int) -> Sleep:
        return Sleep(ticks)

    # -- host-side stream API --------------------------------------------

    def stream_create(self) -> int:
        return self.gpu.stream_create()

    def stream_destroy(self, stream: int) -> None:
        s = self.gpu.stream(stream)
        if not s.idle or s.blocked is not None:
            raise DestroyBusy(f"rank {self.rank}: stream {stream} has pending work")
        self.gpu.stream_destroy(stream)

    def launch(self, stream: int, kernel: Kernel) -> None:
        self.gpu.reserve(stream)
        self.host.issue(lambda: self.gpu.enqueue_kernel(stream, kernel, reserved=True), 0,
                        f"launch:{kernel.name}", f"stream{stream}")

    def write_value(self, stream: int, target: Counter, value: int) -> None:
        self.gpu.reserve(stream)
        self.host.issue(lambda: self.gpu.stream_write_value(stream, target, value, reserved=True),
                        0, "write_value")

    def wait_value(self, stream: int, target: Counter, value: int, mask: int = MASK64) -> None:
        self.gpu.reserve(stream)
        self.host.issue(lambda: self.gpu.stream_wait_value(stream, target, value, mask, reserved=True),
                        0, "wait_value")

    def stream_synchronize(self, stream: int) -> StreamSync:
        self.gpu.stream(stream)
        return StreamSync(self.gpu, stream)


Program = Callable[[Process], object]


class World:
    """Ranks placed on nodes, with one simulated device stack per rank."""

    def __init__(self, topology: Topology, cost: CostModel | None = None, trace: bool = False):
        self.topology = topology
        self.size = topology.size
        self.sim = Simulator(cost, trace=trace)
        self.fabric = Fabric(self.sim, topology)
        self.matchers = [Matcher(self.sim, r) for r in range(self.size)]
        self.nics = [Nic(self.sim, r, self.fabric, self.matchers[r]) for r in range(self.size)]
        self.gpus = [Gpu(self.sim, r) for r in range(self.size)]
        self.progresses = [Progress(self.sim, r, self.matchers[r], self.fabric) for r in range(self.size)]
        self.hosts = [Host(self.sim, r, self.progresses[r]) for r in range(self.size)]
        peers = dict(enumerate(self.nics))
        matchers = dict(enumerate(self.matchers))
        for nic, prog in zip(self.nics, self.progresses):
            nic.peers = peers
            nic.progress = prog
            prog.matchers = matchers
        self.procs = [Process(self, r) for r in range(self.size)]

    @classmethod
    def build(cls, nodes: int, ranks_per_node: int, cost: CostModel | None = None,
              trace: bool = False) -> "World":
        return cls(Topology.block(nodes, ranks_per_node), cost, trace)

    def run(self, programs: Program | Sequence[Program | None]) -> int:
        """Start every rank's program at t=0 and run to quiescence.

        ``programs`` is one function used by all ranks, or a per-rank list
        (``None`` for ranks with nothing to do).  Returns the final time.
        """
        if callable(programs):
            programs = [programs] * self.size
        if len(programs) != self.size:
            raise ValueError(f"need {self.size} programs, got {len(programs)}")
        for proc, prog in zip(self.procs, programs):
            self.hosts[proc.rank].start(prog(proc) if prog is not None else None)
        return self.sim.run_until_quiescent()

    # -- introspection used by tests and reports --------------------------

    def descriptors_created(self) -> int:
        return sum(n.descriptors_created for n in self.nics)

    def fire_records(self) -> Iterable:
        for nic in self.nics:
            yield from nic.fired
