"""Small fixed programs used as smoke tests and CLI micro-scenarios."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gpu import Kernel
from .mpix import INT
from .sim import CostModel
from .world import World

FOUR_SEND_TAGS = (123, 126, 125, 124)


@dataclass
class ScenarioResult:
    world: World
    end_time: int
    sources: list
    destinations: list

    @property
    def buffers_match(self) -> bool:
        return all(bytes(a.data) == bytes(b.data) for a, b in zip(self.sources, self.destinations))


def four_sends(nodes: int = 2, ranks_per_node: int = 1, count: int = 64,
               cost: CostModel | None = None, trace: bool = False) -> ScenarioResult:
    """Rank 0 computes four buffers and ST-sends them to rank 1 with one start
    and one wait; rank 1 posts the mirrored ST receives.  Both synchronize."""
    world = World.build(nodes, ranks_per_node, cost, trace)
    if world.size != 2:
        raise ValueError("four_sends needs exactly 2 ranks")
    bufs: dict[int, list] = {}

    def program(ctx):
        s = ctx.stream_create()
        comm = ctx.mpi.comm_dup()
        q = ctx.mpi.create_queue(s)
        mine = bufs[ctx.rank] = [ctx.alloc(count * INT) for _ in FOUR_SEND_TAGS]
        if ctx.rank == 0:
            def fill():
                for i, b in enumerate(mine):
                    b.view(np.int32)[:] = np.arange(count) + 1000 * i

            ctx.launch(s, Kernel("compute", len(mine) * count * INT, fill))
            for b, tag in zip(mine, FOUR_SEND_TAGS):
                ctx.mpi.enqueue_send(b, count, INT, 1, tag, comm, q)
        else:
            for b, tag in zip(mine, FOUR_SEND_TAGS):
                ctx.mpi.enqueue_recv(b, count, INT, 0, tag, comm, q)
        ctx.mpi.enqueue_start(q)
        ctx.mpi.enqueue_wait(q)
        yield ctx.stream_synchronize(s)
        ctx.mpi.free_queue(q)
        ctx.stream_destroy(s)

    end = world.run(program)
    return ScenarioResult(world, end, bufs[0], bufs[1])
