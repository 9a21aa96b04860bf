"""Byte movement: inter-node fabric links and intra-node DMA engines."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import OutOfRange, SameNode
from .sim import Actor, Simulator, transfer_ticks

HOST = "host"
DEVICE = "device"


@dataclass(frozen=True)
class Topology:
    """Placement of ranks on nodes; ``rank_to_node[r]`` is the node of rank r."""

    rank_to_node: tuple[int, ...]

    @classmethod
    def block(cls, nodes: int, ranks_per_node: int) -> "Topology":
        """Consecutive ranks share a node (ranks 0..rpn-1 on node 0, ...)."""
        if nodes < 1 or ranks_per_node < 1:
            raise ValueError("nodes and ranks_per_node must be >= 1")
        return cls(tuple(r // ranks_per_node for r in range(nodes * ranks_per_node)))

    @property
    def size(self) -> int:
        return len(self.rank_to_node)

    def node_of(self, rank: int) -> int:
        return self.rank_to_node[rank]

    def same_node(self, a: int, b: int) -> bool:
        return self.rank_to_node[a] == self.rank_to_node[b]


_buffer_ids = itertools.count()


class Buffer:
    """A contiguous byte region in host or device memory of one rank."""

    def __init__(self, nbytes: int, space: str = DEVICE, rank: int = 0, node: int = 0,
                 buffer_id: int | None = None):
        if nbytes < 0:
            raise ValueError("buffer length must be >= 0")
        if space not in (HOST, DEVICE):
            raise ValueError(f"unknown memory space {space!r}")
        self.id = next(_buffer_ids) if buffer_id is None else buffer_id
        self.len_bytes = nbytes
        self.space = space
        self.rank = rank
        self.node = node
        self.data = bytearray(nbytes)

    def __repr__(self):
        return f"Buffer(id={self.id}, {self.len_bytes}B, {self.space}, rank={self.rank})"

    def view(self, dtype=np.int64) -> np.ndarray:
        """Writable numpy view over the buffer contents."""
        return np.frombuffer(self.data, dtype=dtype)

    def read(self, nbytes: int | None = None, offset: int = 0) -> bytes:
        nbytes = self.len_bytes - offset if nbytes is None else nbytes
        self._check(offset, nbytes)
        return bytes(self.data[offset:offset + nbytes])

    def write(self, payload: bytes, offset: int = 0) -> None:
        self._check(offset, len(payload))
        self.data[offset:offset + len(payload)] = payload

    def _check(self, offset, nbytes):
        if offset < 0 or nbytes < 0 or offset + nbytes > self.len_bytes:
            raise OutOfRange(f"[{offset}, {offset + nbytes}) outside {self!r}")


class Fabric(Actor):
    """Point-to-point links between NICs plus one DMA engine model per node.

    There is no contention: every transfer sees latency + size/bandwidth.
    Deliveries between one (src, dst) pair never overtake each other.
    """

    def __init__(self, sim: Simulator, topology: Topology, name: str = "fabric"):
        super().__init__(sim, name)
        self.topology = topology
        self._last_delivery: dict[tuple[int, int], int] = {}
        self.transmits = 0
        self.dma_copies = 0

    def transmit(self, src_rank: int, dst_rank: int, nbytes: int,
                 on_delivered: Callable[[], None], kind: str = "data") -> int:
        """Send ``nbytes`` from one node to another; returns the delivery time."""
        if self.topology.same_node(src_rank, dst_rank):
            raise SameNode(f"ranks {src_rank} and {dst_rank} share node "
                           f"{self.topology.node_of(src_rank)}")
        cost = self.sim.cost
        when = self.sim.now + cost.fabric_latency + transfer_ticks(nbytes, cost.fabric_bandwidth_bytes_per_tick)
        pair = (src_rank, dst_rank)
        when = max(when, self._last_delivery.get(pair, 0))
        self._last_delivery[pair] = when
        self.transmits += 1
        self.sim.record(self.name, "transmit", f"{kind} {src_rank}->{dst_rank} {nbytes}B")
        self.sim.at(when, self.name, on_delivered, label="deliver",
                    detail=f"{kind} {src_rank}->{dst_rank} {nbytes}B")
        return when

    def dma_copy(self, src: Buffer, dst: Buffer, nbytes: int,
                 on_done: Callable[[], None] | None = None) -> int:
        """Copy the first ``nbytes`` of ``src`` into ``dst`` on one node.

        Source bytes are read when the copy is issued and land in ``dst`` at
        completion.  Copying a buffer onto itself is rejected.
        """
        if src.node != dst.node:
            raise ValueError(f"dma_copy across nodes {src.node} -> {dst.node}")
        if src.id == dst.id:
            raise OutOfRange(f"dma_copy source and destination alias buffer {src.id}")
        if nbytes > src.len_bytes or nbytes > dst.len_bytes or nbytes < 0:
            raise OutOfRange(f"{nbytes}B does not fit {src!r} -> {dst!r}")
        return self.dma_write(src.read(nbytes), dst, on_done)

    def dma_write(self, payload: bytes, dst: Buffer,
                  on_done: Callable[[], None] | None = None, offset: int = 0) -> int:
        """Land an already captured payload in ``dst`` through the DMA engine."""
        dst._check(offset, len(payload))
        cost = self.sim.cost
        when = self.sim.now + cost.dma_latency + transfer_ticks(len(payload), cost.dma_bandwidth_bytes_per_tick)
        self.dma_copies += 1

        def done():
            dst.write(payload, offset)
            if on_done is not None:
                on_done()

        self.sim.at(when, self.name, done, label="dma_done",
                    detail=f"node{dst.node} buf{dst.id} {len(payload)}B")
        return when
