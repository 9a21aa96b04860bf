"""Faces: nearest-neighbour halo exchange over a 3-D block decomposition.

Every rank owns an ``n x n x n`` block of int64 values.  Adjacent blocks
share their boundary points (the last plane of one block and the first
plane of the next are the same physical points), so one inner iteration
does a direct-stiffness style summation: each rank ships every surface
piece to up to 26 neighbours and adds what it receives onto the same
surface points.  Meanwhile an interior kernel adds 1 to every point not on
the block surface.

Arithmetic is int64 addition only, wrapping on overflow in both the
simulated run and the reference, so comparisons are exact.
"""

from __future__ import annotations

import dataclasses
import itertools
import random
import statistics
from dataclasses import dataclass, field

import numpy as np

from .errors import BadDims, CorrectnessFailure
from .fabric import Topology
from .gpu import Kernel
from .mpix import INT64
from .sim import CostModel
from .world import Process, World

DIRECTIONS: tuple[tuple[int, int, int], ...] = tuple(
    d for d in itertools.product((-1, 0, 1), repeat=3) if d != (0, 0, 0))
KINDS = ("face", "edge", "corner")

BASELINE = "baseline"
ST = "st"
VARIANTS = (BASELINE, ST)


def kind_of(d) -> str:
    return KINDS[sum(1 for c in d if c != 0) - 1]


def tag_of(d) -> int:
    return DIRECTIONS.index(tuple(d))


def opposite(d):
    return tuple(-c for c in d)


@dataclass(frozen=True)
class Decomposition:
    dims: tuple[int, int, int]

    @property
    def size(self) -> int:
        px, py, pz = self.dims
        return px * py * pz

    def coords(self, rank: int) -> tuple[int, int, int]:
        px, py, _ = self.dims
        return (rank % px, (rank // px) % py, rank // (px * py))

    def rank_of(self, coords) -> int | None:
        x, y, z = coords
        px, py, pz = self.dims
        if 0 <= x < px and 0 <= y < py and 0 <= z < pz:
            return x + px * (y + py * z)
        return None

    def neighbors(self, rank: int) -> dict[tuple[int, int, int], int]:
        """Direction -> neighbour rank, non-periodic, in ``DIRECTIONS`` order."""
        c = self.coords(rank)
        out = {}
        for d in DIRECTIONS:
            r = self.rank_of(tuple(a + b for a, b in zip(c, d)))
            if r is not None:
                out[d] = r
        return out


def decompose(num_ranks: int, dims) -> Decomposition:
    dims = tuple(int(v) for v in dims)
    if len(dims) != 3 or any(v < 1 for v in dims):
        raise BadDims(f"dims must be three positive integers, got {dims}")
    if dims[0] * dims[1] * dims[2] != num_ranks:
        raise BadDims(f"{dims} holds {dims[0] * dims[1] * dims[2]} ranks, not {num_ranks}")
    return Decomposition(dims)


def region(d, n: int) -> tuple[slice, slice, slice]:
    """Surface points of a block on the side given by direction ``d``."""
    pick = {-1: slice(0, 1), 0: slice(0, n), 1: slice(n - 1, n)}
    return tuple(pick[c] for c in d)


def message_count(d, n: int) -> int:
    return n ** sum(1 for c in d if c == 0)


# -- reference ----------------------------------------------------------------

def initial_grid(deco: Decomposition, n: int, seed: int, *stage: int) -> np.ndarray:
    """Global starting values: small integers, fixed by seed and loop indices."""
    rng = np.random.default_rng([seed, *stage])
    px, py, pz = deco.dims
    return rng.integers(0, 10, size=(px * n, py * n, pz * n), dtype=np.int64)


def block_of(grid: np.ndarray, deco: Decomposition, rank: int, n: int) -> np.ndarray:
    x, y, z = deco.coords(rank)
    return grid[x * n:(x + 1) * n, y * n:(y + 1) * n, z * n:(z + 1) * n]


def reference_oracle(grid: np.ndarray, n: int, inner_loops: int) -> np.ndarray:
    """Sequential CPU reference over the assembled global grid.

    Per iteration: (1) every stored value is replaced by the sum over all
    stored copies of the same physical point, (2) points interior to their
    block get +1.  Stored index X maps to physical index ``X - X // n``
    along each axis, since neighbouring blocks share one plane.
    """
    g = grid.astype(np.int64, copy=True)
    phys = [np.arange(s) - np.arange(s) // n for s in g.shape]
    pshape = tuple(int(p[-1]) + 1 for p in phys)
    idx = np.ix_(*phys)
    local = [np.arange(s) % n for s in g.shape]
    inner = [(l > 0) & (l < n - 1) for l in local]
    interior = inner[0][:, None, None] & inner[1][None, :, None] & inner[2][None, None, :]
    for _ in range(inner_loops):
        total = np.zeros(pshape, dtype=np.int64)
        np.add.at(total, idx, g)
        g = total[idx]
        g[interior] += 1
    return g


def check_block(rank: int, expected: np.ndarray, got: np.ndarray) -> None:
    if not np.array_equal(expected, got):
        bad = np.argwhere(expected != got)[0]
        i = tuple(int(v) for v in bad)
        raise CorrectnessFailure(rank, i, int(expected[i]), int(got[i]))


# -- configuration and report -------------------------------------------------

@dataclass(frozen=True)
class FacesConfig:
    dims: tuple[int, int, int] = (2, 1, 1)
    n: int = 16
    outer_loops: int = 10
    middle_loops: int = 100
    inner_loops: int = 100
    variant: str = ST
    nodes: int | None = None
    ranks_per_node: int = 1
    cost: CostModel = field(default_factory=CostModel)
    repeats: int = 5
    seed: int = 0
    kernel_jitter: float = 0.02
    st_recv: bool = False
    trace: bool = False

    def __post_init__(self):
        if min(self.outer_loops, self.middle_loops, self.inner_loops, self.repeats) < 1:
            raise ValueError("loop counts and repeats must be >= 1")
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if not 0 <= self.kernel_jitter < 1:
            raise ValueError("kernel_jitter must be in [0, 1)")
        size = self.dims[0] * self.dims[1] * self.dims[2]
        if self.node_count * self.ranks_per_node != size:
            raise BadDims(f"{self.node_count} nodes x {self.ranks_per_node} ranks != {size} ranks")

    @property
    def num_ranks(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    @property
    def node_count(self) -> int:
        if self.nodes is not None:
            return self.nodes
        return -(-self.dims[0] * self.dims[1] * self.dims[2] // self.ranks_per_node)

    def replace(self, **kw) -> "FacesConfig":
        return dataclasses.replace(self, **kw)


@dataclass
class FacesReport:
    variant: str
    times: list[int]
    correctness: bool
    messages_per_iteration: dict[int, int]
    traces: list = field(default_factory=list, repr=False)
    host_logs: list = field(default_factory=list, repr=False)
    worlds: list = field(default_factory=list, repr=False)

    @property
    def total_time(self) -> int:
        return sum(self.times)

    @property
    def min(self) -> int:
        return min(self.times)

    @property
    def max(self) -> int:
        return max(self.times)

    @property
    def avg(self) -> float:
        return statistics.fmean(self.times)


# -- per-rank program ---------------------------------------------------------

class _RankState:
    def __init__(self, ctx: Process, cfg: FacesConfig, deco: Decomposition, repeat: int):
        self.ctx = ctx
        self.cfg = cfg
        self.n = cfg.n
        self.neighbors = deco.neighbors(ctx.rank)
        self.rng = random.Random(f"{cfg.seed}:{repeat}:{ctx.rank}")
        self.inner_time = 0

    def kernel(self, name, work_bytes, effect) -> Kernel:
        k = Kernel(name, work_bytes, effect)
        if self.cfg.kernel_jitter:
            cost = self.ctx.sim.cost
            base = cost.kernel_launch_cost + work_bytes * cost.kernel_run_cost_per_byte
            k.extra_ticks = int(base * self.cfg.kernel_jitter * self.rng.random())
        return k

    def allocate(self):
        ctx, n = self.ctx, self.n
        self.block_buf = ctx.alloc(n ** 3 * INT64)
        self.block = self.block_buf.view().reshape(n, n, n)
        self.send = {d: ctx.alloc(message_count(d, n) * INT64) for d in self.neighbors}
        self.recv = [{d: ctx.alloc(message_count(d, n) * INT64) for d in self.neighbors}
                     for _ in range(2)]

    def pack_kernels(self):
        n = self.n
        for kind in KINDS:
            dirs = [d for d in self.neighbors if kind_of(d) == kind]
            if not dirs:
                continue

            def pack(dirs=dirs):
                for d in dirs:
                    self.send[d].view()[:] = self.block[region(d, n)].ravel()

            nbytes = sum(message_count(d, n) for d in dirs) * INT64
            self.ctx.launch(self.stream, self.kernel(f"pack_{kind}s", nbytes, pack))

    def unpack_kernels(self, parity):
        n = self.n
        for kind in KINDS:
            dirs = [d for d in self.neighbors if kind_of(d) == kind]
            if not dirs:
                continue

            def unpack(dirs=dirs):
                for d in dirs:
                    target = self.block[region(d, n)]
                    target += self.recv[parity][d].view().reshape(target.shape)

            nbytes = sum(message_count(d, n) for d in dirs) * INT64
            self.ctx.launch(self.stream, self.kernel(f"unpack_{kind}s", nbytes, unpack))

    def interior_kernel(self):
        def interior():
            self.block[1:-1, 1:-1, 1:-1] += 1

        self.ctx.launch(self.stream, self.kernel("interior", self.n ** 3 * INT64, interior))

    def post_receives(self, parity, queue=None):
        mpi, comm = self.ctx.mpi, self.comm
        reqs = []
        for d, nbr in self.neighbors.items():
            buf = self.recv[parity][d]
            count = message_count(d, self.n)
            tag = tag_of(opposite(d))
            if queue is not None:
                reqs.append(mpi.enqueue_recv(buf, count, INT64, nbr, tag, comm, queue))
            else:
                reqs.append(mpi.irecv(buf, count, INT64, nbr, tag, comm))
        return reqs

    def baseline_iteration(self, parity):
        ctx, mpi = self.ctx, self.ctx.mpi
        rreqs = self.post_receives(parity)
        self.pack_kernels()
        yield ctx.stream_synchronize(self.stream)
        sreqs = [mpi.isend(self.send[d], message_count(d, self.n), INT64, nbr, tag_of(d), self.comm)
                 for d, nbr in self.neighbors.items()]
        self.interior_kernel()
        yield mpi.waitall(rreqs)
        self.unpack_kernels(parity)
        yield mpi.waitall(sreqs)

    def st_iteration(self, parity):
        mpi, q = self.ctx.mpi, self.queue
        rreqs = self.post_receives(parity, q if self.cfg.st_recv else None)
        self.pack_kernels()
        for d, nbr in self.neighbors.items():
            mpi.enqueue_send(self.send[d], message_count(d, self.n), INT64, nbr, tag_of(d),
                             self.comm, q)
        mpi.enqueue_start(q)
        self.interior_kernel()
        yield mpi.waitall(rreqs)
        self.unpack_kernels(parity)
        mpi.enqueue_wait(q)


def _rank_program(ctx: Process, cfg: FacesConfig, deco: Decomposition, repeat: int,
                  expected, results):
    st = _RankState(ctx, cfg, deco, repeat)
    st.stream = ctx.stream_create()
    st.comm = ctx.mpi.comm_dup()
    results[ctx.rank] = st
    for outer in range(cfg.outer_loops):
        st.allocate()
        st.queue = ctx.mpi.create_queue(st.stream) if cfg.variant == ST else None
        for middle in range(cfg.middle_loops):
            grid0, final = expected(outer, middle)
            st.block[...] = block_of(grid0, deco, ctx.rank, cfg.n)
            t0 = ctx.sim.now
            for inner in range(cfg.inner_loops):
                if cfg.variant == ST:
                    yield from st.st_iteration(inner % 2)
                else:
                    yield from st.baseline_iteration(inner % 2)
            yield ctx.stream_synchronize(st.stream)
            st.inner_time += ctx.sim.now - t0
            check_block(ctx.rank, block_of(final, deco, ctx.rank, cfg.n), st.block)
        if st.queue is not None:
            ctx.mpi.free_queue(st.queue)
    ctx.stream_destroy(st.stream)


def run_once(cfg: FacesConfig, repeat: int = 0) -> tuple[int, World, dict]:
    """One simulated execution; returns (inner-loop time, world, rank states)."""
    deco = decompose(cfg.num_ranks, cfg.dims)
    world = World(Topology.block(cfg.node_count, cfg.ranks_per_node), cfg.cost, trace=cfg.trace)
    cache: dict = {}

    def expected(outer, middle):
        if (outer, middle) not in cache:
            grid0 = initial_grid(deco, cfg.n, cfg.seed, repeat, outer, middle)
            cache.clear()
            cache[(outer, middle)] = (grid0, reference_oracle(grid0, cfg.n, cfg.inner_loops))
        return cache[(outer, middle)]

    states: dict = {}
    world.run(lambda ctx: _rank_program(ctx, cfg, deco, repeat, expected, states))
    return max(s.inner_time for s in states.values()), world, states


def run(cfg: FacesConfig, keep_worlds: bool = False) -> FacesReport:
    """Run ``cfg.repeats`` seeded repetitions; raises CorrectnessFailure on a mismatch."""
    times, traces, logs, worlds = [], [], [], []
    deco = decompose(cfg.num_ranks, cfg.dims)
    for repeat in range(cfg.repeats):
        t, world, _ = run_once(cfg, repeat)
        times.append(t)
        if cfg.trace:
            traces.append(world.sim.trace)
        logs.append([h.log for h in world.hosts])
        if keep_worlds:
            worlds.append(world)
    msgs = {r: len(deco.neighbors(r)) for r in range(cfg.num_ranks)}
    return FacesReport(cfg.variant, times, True, msgs, traces, logs, worlds)
