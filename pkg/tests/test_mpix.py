import numpy as np
import pytest

from streamtrig.errors import (Deadlock, FreeWhilePending, OutOfRange, UnknownQueue, UnknownStream,
                               WildcardUnsupported)
from streamtrig.gpu import Kernel
from streamtrig.mpix import BASELINE_RECV, INT, INT64, ST_SEND
from streamtrig.nic import ANY_SOURCE
from streamtrig.scenarios import FOUR_SEND_TAGS, four_sends
from streamtrig.world import World


@pytest.mark.parametrize("nodes,rpn", [(2, 1), (1, 2)])
def test_four_sends_program(nodes, rpn):
    res = four_sends(nodes, rpn)
    assert res.buffers_match
    assert all(b.view(np.int32)[1] == 1 + 1000 * i for i, b in enumerate(res.destinations))
    host0 = res.world.hosts[0]
    assert [e.name for e in host0.block_events] == ["stream_synchronize"]


def test_four_sends_creates_four_descriptors_with_threshold_one():
    res = four_sends(2, 1, trace=True)
    trace = res.world.sim.trace
    fired = list(res.world.fire_records())
    assert res.world.descriptors_created() == 4
    assert [f.threshold for f in fired] == [1, 1, 1, 1]
    enq = [r.details for r in trace if r.action == "dwq_enqueue"]
    assert [int(d.split()[1][4:]) for d in enq] == list(FOUR_SEND_TAGS)
    enq_ids = [d.split()[0] for d in enq]
    fire_ids = [r.details.split()[0] for r in trace if r.action == "fire"]
    assert fire_ids == enq_ids
    assert res.world.nics[0].command_queue == []


def test_four_sends_same_node_uses_no_descriptors():
    res = four_sends(1, 2)
    assert res.world.descriptors_created() == 0
    assert len(res.world.progresses[0].acted) == 4
    assert len(res.world.progresses[1].acted) == 4


def run2(program, nodes=2, rpn=1, trace=False, cost=None):
    w = World.build(nodes, rpn, cost, trace)
    w.run(program)
    return w


def test_create_queue_is_local():
    out = {}

    def prog(ctx):
        s = ctx.stream_create()
        q1 = ctx.mpi.create_queue(s)
        q2 = ctx.mpi.create_queue(s)
        out[ctx.rank] = (q1, q2, ctx)
        yield ctx.stream_synchronize(s)

    w = run2(prog, trace=True)
    q1, q2, ctx = out[0]
    assert {q1.trigger_counter, q1.completion_counter}.isdisjoint(
        {q2.trigger_counter, q2.completion_counter})
    assert all(ctx.mpi.nic.counter_read(c) == 0 for c in (q1.trigger_counter, q2.completion_counter))
    assert w.fabric.transmits == 0
    assert not [r for r in w.sim.trace if r.actor == "fabric"]


def test_create_queue_needs_stream():
    w = World.build(1, 1)
    with pytest.raises(UnknownStream):
        w.procs[0].mpi.create_queue(99)


def test_free_queue_rules():
    def prog(ctx):
        s = ctx.stream_create()
        q = ctx.mpi.create_queue(s)
        peer = 1 - ctx.rank
        buf = ctx.alloc(8)
        if ctx.rank == 0:
            ctx.mpi.enqueue_send(buf, 1, INT64, peer, 0, ctx.comm_world, q)
            with pytest.raises(FreeWhilePending):
                ctx.mpi.free_queue(q)  # never started
            ctx.mpi.enqueue_start(q)
            ctx.mpi.enqueue_wait(q)
            with pytest.raises(FreeWhilePending):
                ctx.mpi.free_queue(q)  # started, not complete
        else:
            req = ctx.mpi.irecv(buf, 1, INT64, peer, 0, ctx.comm_world)
            yield ctx.mpi.wait(req)
        yield ctx.stream_synchronize(s)
        ctx.mpi.free_queue(q)
        with pytest.raises(UnknownQueue):
            ctx.mpi.free_queue(q)
        with pytest.raises(UnknownQueue):
            ctx.mpi.enqueue_start(q)

    run2(prog)


def test_self_send_goes_through_progress():
    got = {}

    def prog(ctx):
        s = ctx.stream_create()
        q = ctx.mpi.create_queue(s)
        src, dst = ctx.alloc(8), ctx.alloc(8)
        src.view()[0] = 77
        ctx.mpi.enqueue_send(src, 1, INT64, 0, 3, ctx.comm_world, q)
        r = ctx.mpi.irecv(dst, 1, INT64, 0, 3, ctx.comm_world)
        ctx.mpi.enqueue_start(q)
        ctx.mpi.enqueue_wait(q)
        yield ctx.mpi.wait(r)
        yield ctx.stream_synchronize(s)
        got["v"] = dst.view()[0]

    w = World.build(1, 1)
    w.run(prog)
    assert got["v"] == 77
    assert w.descriptors_created() == 0 and len(w.progresses[0].acted) == 1


@pytest.mark.parametrize("nodes,rpn", [(2, 1), (1, 2)])
def test_zero_count_message_matches(nodes, rpn):
    reqs = {}

    def prog(ctx):
        s = ctx.stream_create()
        q = ctx.mpi.create_queue(s)
        buf = ctx.alloc(8)
        if ctx.rank == 0:
            reqs[0] = ctx.mpi.enqueue_send(buf, 0, INT, 1, 5, ctx.comm_world, q)
            ctx.mpi.enqueue_start(q)
            ctx.mpi.enqueue_wait(q)
        else:
            reqs[1] = ctx.mpi.irecv(buf, 0, INT, 0, 5, ctx.comm_world)
            yield ctx.mpi.wait(reqs[1])
        yield ctx.stream_synchronize(s)

    w = run2(prog, nodes, rpn)
    assert reqs[0].done and reqs[1].done
    assert len(w.matchers[1].pairs) == 1


def test_wildcard_and_bad_arguments_rejected():
    w = World.build(2, 1)
    ctx = w.procs[1]
    s = ctx.stream_create()
    q = ctx.mpi.create_queue(s)
    buf = ctx.alloc(8)
    with pytest.raises(WildcardUnsupported):
        ctx.mpi.enqueue_recv(buf, 1, INT64, ANY_SOURCE, 1, ctx.comm_world, q)
    with pytest.raises(WildcardUnsupported):
        ctx.mpi.irecv(buf, 1, INT64, 0, -1, ctx.comm_world)
    with pytest.raises(OutOfRange):
        ctx.mpi.isend(buf, 2, INT64, 0, 1, ctx.comm_world)
    with pytest.raises(ValueError):
        ctx.mpi.isend(buf, 1, INT64, 5, 1, ctx.comm_world)
    with pytest.raises(ValueError):
        ctx.mpi.isend(w.procs[0].alloc(8), 1, INT64, 0, 1, ctx.comm_world)


def test_two_batches_get_thresholds_one_and_two():
    marks = {}

    def prog(ctx):
        s = ctx.stream_create()
        q = ctx.mpi.create_queue(s)
        a, b = ctx.alloc(8), ctx.alloc(8)
        if ctx.rank == 0:
            ctx.mpi.enqueue_send(a, 1, INT64, 1, 1, ctx.comm_world, q)
            ctx.mpi.enqueue_start(q)
            ctx.launch(s, Kernel("gap", 0, lambda: marks.setdefault("gap", ctx.sim.now)))
            ctx.mpi.enqueue_send(b, 1, INT64, 1, 2, ctx.comm_world, q)
            ctx.mpi.enqueue_start(q)
            ctx.mpi.enqueue_wait(q)
            yield ctx.stream_synchronize(s)
        else:
            r = [ctx.mpi.irecv(x, 1, INT64, 0, t, ctx.comm_world) for x, t in ((a, 1), (b, 2))]
            yield ctx.mpi.waitall(r)

    w = run2(prog)
    fired = list(w.fire_records())
    assert [(f.threshold, f.trigger_value) for f in fired] == [(1, 1), (2, 2)]
    assert fired[0].time < marks["gap"] <= fired[1].time
    assert w.gpus[0].write_values_executed == 2


def test_empty_start_still_writes():
    def prog(ctx):
        s = ctx.stream_create()
        q = ctx.mpi.create_queue(s)
        ctx.mpi.enqueue_start(q)
        ctx.mpi.enqueue_wait(q)  # zero started ops: passes at once
        yield ctx.stream_synchronize(s)
        assert ctx.mpi.nic.counter_read(q.trigger_counter) == 1

    w = World.build(1, 1)
    w.run(prog)
    assert w.gpus[0].write_values_executed == 1
    assert w.descriptors_created() == 0


def test_host_never_blocks_on_st_calls():
    def prog(ctx):
        s = ctx.stream_create()
        q = ctx.mpi.create_queue(s)
        buf = ctx.alloc(64)
        peer = 1 - ctx.rank
        for i in range(3):
            if ctx.rank == 0:
                ctx.mpi.enqueue_send(buf, 8, INT64, peer, i, ctx.comm_world, q)
            else:
                ctx.mpi.enqueue_recv(buf, 8, INT64, peer, i, ctx.comm_world, q)
            ctx.mpi.enqueue_start(q)
            ctx.mpi.enqueue_wait(q)
        yield ctx.stream_synchronize(s)
        ctx.mpi.free_queue(q)

    for nodes, rpn in ((2, 1), (1, 2)):
        w = run2(prog, nodes, rpn)
        for h in w.hosts:
            assert [e.name for e in h.block_events] == ["stream_synchronize"]


def test_isend_irecv_pair():
    out = {}

    def prog(ctx):
        buf = ctx.alloc(8)
        if ctx.rank == 0:
            buf.write(b"12345678")
            r = ctx.mpi.isend(buf, 8, 1, 1, 4, ctx.comm_world)
        else:
            r = ctx.mpi.irecv(buf, 8, 1, 0, 4, ctx.comm_world)
        yield ctx.mpi.wait(r)
        out[ctx.rank] = (buf.read(), r.state)

    for nodes, rpn in ((2, 1), (1, 2)):
        run2(prog, nodes, rpn)
        assert out[1] == (b"12345678", "complete") and out[0][1] == "complete"


def test_waitall_over_mixed_requests_and_irecv_matches_enqueue_send():
    seen = {}

    def prog(ctx):
        s = ctx.stream_create()
        q = ctx.mpi.create_queue(s)
        out_buf, in_buf = ctx.alloc(8), ctx.alloc(8)
        peer = 1 - ctx.rank
        out_buf.view()[0] = 100 + ctx.rank
        rr = ctx.mpi.irecv(in_buf, 1, INT64, peer, 8, ctx.comm_world)
        ss = ctx.mpi.enqueue_send(out_buf, 1, INT64, peer, 8, ctx.comm_world, q)
        assert ss.state == "enqueued"
        ctx.mpi.enqueue_start(q)
        assert ss.state == "started"
        yield ctx.mpi.waitall([rr, ss])
        seen[ctx.rank] = (in_buf.view()[0], rr.kind, ss.kind, ctx.sim.now)
        yield ctx.stream_synchronize(s)

    for nodes, rpn in ((2, 1), (1, 2)):
        run2(prog, nodes, rpn)
        assert seen[0][:3] == (101, BASELINE_RECV, ST_SEND)
        assert seen[1][:3] == (100, BASELINE_RECV, ST_SEND)


@pytest.mark.parametrize("nodes,rpn", [(2, 1), (1, 2)])
def test_kernel_between_enqueue_and_start_changes_payload(nodes, rpn):
    got = {}

    def prog(ctx):
        s = ctx.stream_create()
        q = ctx.mpi.create_queue(s)
        buf = ctx.alloc(8)
        if ctx.rank == 0:
            buf.view()[0] = 1
            ctx.mpi.enqueue_send(buf, 1, INT64, 1, 0, ctx.comm_world, q)
            ctx.launch(s, Kernel("mutate", 8, lambda: buf.view().fill(2)))
            ctx.mpi.enqueue_start(q)
            ctx.mpi.enqueue_wait(q)
            yield ctx.stream_synchronize(s)
        else:
            r = ctx.mpi.irecv(buf, 1, INT64, 0, 0, ctx.comm_world)
            yield ctx.mpi.wait(r)
            got["v"] = int(buf.view()[0])

    run2(prog, nodes, rpn)
    assert got["v"] == 2


def test_enqueue_wait_covers_only_started_ops():
    def prog(ctx):
        s = ctx.stream_create()
        q = ctx.mpi.create_queue(s)
        buf = ctx.alloc(8)
        if ctx.rank == 0:
            ctx.mpi.enqueue_send(buf, 1, INT64, 1, 0, ctx.comm_world, q)
            ctx.mpi.enqueue_wait(q)  # nothing started yet: target 0
            yield ctx.stream_synchronize(s)
            ctx.mpi.enqueue_start(q)
            ctx.mpi.enqueue_wait(q)
            yield ctx.stream_synchronize(s)
        else:
            yield ctx.mpi.wait(ctx.mpi.irecv(buf, 1, INT64, 0, 0, ctx.comm_world))

    w = run2(prog)
    assert w.descriptors_created() == 1


def test_unreceived_rendezvous_send_deadlocks_on_stream():
    def prog(ctx):
        if ctx.rank == 1:
            return
        s = ctx.stream_create()
        q = ctx.mpi.create_queue(s)
        n = ctx.sim.cost.eager_threshold + 1
        buf = ctx.alloc(n)
        ctx.mpi.enqueue_send(buf, n, 1, 1, 0, ctx.comm_world, q)
        ctx.mpi.enqueue_start(q)
        ctx.mpi.enqueue_wait(q)
        yield ctx.stream_synchronize(s)

    with pytest.raises(Deadlock) as exc:
        run2(prog)
    blocked = exc.value.blocked_actors
    assert any(b.startswith("rank0.gpu.stream") and "WaitValue" in b for b in blocked)
    assert any(b.startswith("rank0.host") for b in blocked)


def test_request_ids_are_deterministic():
    def ids():
        w = World.build(2, 1)
        seen = []

        def prog(ctx):
            buf = ctx.alloc(8)
            r = (ctx.mpi.isend if ctx.rank == 0 else ctx.mpi.irecv)(buf, 1, INT64, 1 - ctx.rank, 0,
                                                                    ctx.comm_world)
            seen.append(r.id)
            yield ctx.mpi.wait(r)

        w.run(prog)
        return seen

    assert ids() == ids()
