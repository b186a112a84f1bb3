from __future__ import annotations

import random
from fractions import Fraction

import pytest
from conftest import NAME
from delay_oracle import oracle_delay
from harness import NOW, run_handshake

from icntls.errors import (
    BadTranscriptSignature,
    DisconnectedTopology,
    FlowIncomplete,
    InvalidTopology,
    NoRoute,
    Replay,
    UnknownNode,
)
from icntls.handshake import HandshakeConfig, Phase
from icntls.names import make_name, routable
from icntls.session import open_record, seal_record
from icntls.simnet import (
    DEFAULT_NAME,
    EventKind,
    Action,
    AggregateResult,
    LinkSpec,
    Mode,
    Network,
    NodeRole,
    NodeSpec,
    Scenario,
    Simulation,
    Topology,
    first_byte_delay,
    measure_first_byte,
    parse_topology,
    run,
)
from icntls.wire import DataRecord, Envelope, Flags, decode, subscription


def _topo(nodes, links):
    return Topology([NodeSpec(i, NodeRole(r)) for i, r in nodes], [LinkSpec(a, b, Fraction(l)) for a, b, l in links])


@pytest.mark.parametrize("L", [1, 5, 10])
@pytest.mark.parametrize("alpha", [Fraction(1, 4), Fraction(1, 2), 1, 2, 4])
def test_closed_forms_match_oracle(L, alpha):
    got = {m: first_byte_delay(m, L, alpha) for m in Mode}
    for mode, value in got.items():
        assert value == oracle_delay(mode.value, L, alpha)
    assert got[Mode.DUMMY] == 2 * L * (1 + alpha)
    assert got[Mode.DIRECT] == 4 * L * (1 + alpha)
    assert got[Mode.MIDDLEBOX] == 4 * L + 2 * alpha * L
    assert got[Mode.DUMMY] < got[Mode.MIDDLEBOX] < got[Mode.DIRECT]


def test_alpha_zero_colocated():
    assert [first_byte_delay(m, 1, 0) for m in (Mode.DUMMY, Mode.DIRECT, Mode.MIDDLEBOX)] == [2, 4, 4]


def test_lazy_channel_adds_setup_cost():
    topo = Topology.chain(1, 1)
    trace = run(topo, Scenario.single(Mode.MIDDLEBOX, "sub", preestablish_channel=False))
    assert measure_first_byte(trace, "sub", DEFAULT_NAME) > 6


def test_deterministic_traces():
    digests = {run(Topology.fan_in(1, 2), Scenario(Mode.MIDDLEBOX, [Action(0, "sub1"), Action(1, "sub2")]), 42).digest() for _ in range(10)}
    assert len(digests) == 1
    assert run(Topology.chain(1, 1), Scenario.single(Mode.DIRECT), 43).digest() != run(Topology.chain(1, 1), Scenario.single(Mode.DIRECT), 44).digest()


def test_two_node_delivery_time():
    topo = _topo([("a", "Subscriber"), ("b", "TrustedPublisher")], [("a", "b", 10)])
    sim = Simulation(topo, Scenario.single(Mode.DIRECT, "a"))
    trace = sim.run()
    (first,) = [e for e in trace.events if e.kind is EventKind.DELIVER][:1]
    assert first.time == 10 and first.dst == "b"
    assert measure_first_byte(trace, "a", DEFAULT_NAME) == 40


def test_unknown_node():
    with pytest.raises(UnknownNode):
        _topo([("a", "Subscriber")], [("a", "ghost", 1)]).validate()
    with pytest.raises(UnknownNode):
        Simulation(Topology.chain(1, 1), Scenario.single(Mode.DIRECT, "nobody")).run()


def test_disconnected_and_negative():
    with pytest.raises(DisconnectedTopology):
        _topo([("a", "Subscriber"), ("b", "TrustedPublisher"), ("c", "Router")], [("a", "c", 1)]).validate()
    with pytest.raises(InvalidTopology):
        _topo([("a", "Subscriber"), ("b", "TrustedPublisher")], [("a", "b", -1)]).validate()
    with pytest.raises(InvalidTopology):
        _topo([("a", "Subscriber"), ("a", "TrustedPublisher")], []).validate()


def test_no_route_drops():
    topo = Topology.chain(1, 1)
    net = Network(topo)
    with pytest.raises(NoRoute):
        net.nearest_advertiser("sub", NAME)
    trace = run(topo, Scenario.single(Mode.DIRECT, name=make_name(["music", "x"])))
    assert any(isinstance(e, NoRoute) for _, _, e in trace.failures)
    with pytest.raises(FlowIncomplete):
        measure_first_byte(trace, "sub", "/music/x")


def test_nearest_advertiser_wins():
    topo = _topo(
        [("s", "Subscriber"), ("near", "Middlebox"), ("far", "Middlebox"), ("r", "Router"), ("tp", "TrustedPublisher")],
        [("s", "r", 1), ("r", "near", 1), ("r", "far", 3), ("far", "tp", 1)],
    )
    net = Network(topo)
    for node in ("near", "far", "tp"):
        net.advertise(node, ("movies",))
    assert net.nearest_advertiser("s", NAME) == "near"
    assert net.nearest_advertiser("near", NAME, exclude="near") == "far"


def test_publications_follow_reverse_path():
    topo = _topo([("s", "Subscriber"), ("r1", "Router"), ("r2", "Router"), ("tp", "TrustedPublisher")], [("s", "r1", 1), ("r1", "r2", 2), ("r2", "tp", 3)])
    trace = run(topo, Scenario.single(Mode.DIRECT, "s"))
    hops = [(e.src, e.dst) for e in trace.deliveries("PubHello")]
    assert hops == [("tp", "r2"), ("r2", "r1"), ("r1", "s")]
    assert measure_first_byte(trace, "s", DEFAULT_NAME) == 24


def _sub(flags, seq=0):
    return subscription(str(NAME), routable(NAME), DataRecord(seq, b"q"), flags)


def test_try_aggregate():
    net = Network(Topology.fan_in(1, 1))
    assert net.try_aggregate("mb", _sub(Flags.NONE), "sub1") is AggregateResult.FORWARDED
    assert net.try_aggregate("mb", _sub(Flags.NONE), "sub2") is AggregateResult.AGGREGATED
    assert net.pit["mb"][str(NAME)].faces == {"sub1", "sub2"}
    assert net.try_aggregate("mb", _sub(Flags.NONE, 1), "sub2") is AggregateResult.FORWARDED
    for face in ("sub1", "sub2"):
        assert net.try_aggregate("mb", _sub(Flags.NON_AGGREGATABLE, 9), face) is AggregateResult.FORWARDED


def test_handshake_publications_never_cached():
    for mode in (Mode.DIRECT, Mode.MIDDLEBOX):
        sim = Simulation(Topology.fan_in(1, 1, 3), Scenario(mode, [Action(i, f"sub{i + 1}") for i in range(3)]))
        sim.run()
        for cache in sim.network.caches.values():
            assert cache.entries == {}


def test_cached_pubhello_injection_fails():
    """A router cache poisoned with an earlier PubHello never completes a handshake."""
    plain = HandshakeConfig(use_nonce=False)

    def poison(sim):
        (old,) = [e.envelope for e in sim.trace.deliveries("PubHello") if e.dst == "sub1"]
        sim.network.caches["mb"].force_insert(old)

    for seed in range(20):
        actions = [Action(0, "sub1", config=plain), Action(50, "mb", kind="call", fn=poison), Action(60, "sub2", config=plain)]
        sim = Simulation(Topology.fan_in(1, 1), Scenario(Mode.DIRECT, actions), seed)
        trace = sim.run()
        (victim,) = sim.apps["sub2"].endpoint.flows.values()
        assert victim.state.phase is Phase.FAILED and not victim.established
        assert any(node == "sub2" and isinstance(exc, BadTranscriptSignature) for node, _, exc in trace.failures)


def test_relabelled_pubhello_fails_with_nonce(world):
    rng = random.Random(5).randbytes
    old = decode(run_handshake(world, rng).wire[1])
    for _ in range(100):
        sub = world.subscriber()
        hello = sub.start(NAME, rng=rng)
        forged = Envelope(old.direction, hello.wire_name, old.forwarding_id, old.flags, old.payload)
        with pytest.raises(BadTranscriptSignature):
            sub.handle(forged, NOW, rng)
        assert sub.flows[hello.wire_name].state.phase is Phase.FAILED


def test_replayed_records_rejected(world, rng):
    r = run_handshake(world, rng)
    prng = random.Random(11)
    sent = [seal_record(r.pub_session, prng.randbytes(16)) for _ in range(200)]
    for rec in sent:
        open_record(r.sub_session, rec)
    replays = 0
    for _ in range(10_000):
        with pytest.raises(Replay):
            open_record(r.sub_session, prng.choice(sent))
        replays += 1
    assert replays == 10_000
    # the session still accepts fresh records afterwards
    assert open_record(r.sub_session, seal_record(r.pub_session, b"fresh")) == b"fresh"


def test_replay_inside_simulation():
    def reinject(sim):
        (rec, *_) = [e.envelope for e in sim.trace.deliveries("DataRecord") if e.dst == "sub"]
        sim.emit("mb", rec)

    sc = Scenario(Mode.DIRECT, [Action(0, "sub"), Action(100, "mb", kind="call", fn=reinject)])
    sim = Simulation(Topology.chain(1, 1), sc)
    trace = sim.run()
    assert [type(e) for n, _, e in trace.failures if n == "sub"] == [Replay]
    (flow,) = sim.apps["sub"].endpoint.flows.values()
    assert b"".join(flow.received) == sc.content[DEFAULT_NAME.prefix]


def test_parse_topology():
    text = """
    # fan-in with a router
    node s1 Subscriber
    node s2 Subscriber
    node r Router
    node tp TrustedPublisher
    link s1 r L
    link s2 r 2*L
    link r tp aL
    """
    topo = parse_topology(text, L=3, alpha=Fraction(1, 2))
    assert {(l.a, l.b): l.latency for l in topo.links} == {("s1", "r"): 3, ("s2", "r"): 6, ("r", "tp"): Fraction(3, 2)}
    assert topo.role_of("r") is NodeRole.ROUTER
    for bad in ("node x Wizard", "link a", "node a Subscriber\nnode b Router\nlink a b 2*zz"):
        with pytest.raises(InvalidTopology):
            parse_topology(bad)


def test_csv_export():
    trace = run(Topology.chain(1, 1), Scenario.single(Mode.MIDDLEBOX))
    lines = trace.to_csv().splitlines()
    assert lines[0] == "time_ms,kind,from,to,msg_type"
    assert lines[1].split(",")[1:] == ["Send", "sub", "mb", "SubHello"]
    assert len(lines) == len(trace.events) + 1
    times = [Fraction(l.split(",")[0]) for l in lines[1:]]
    assert times == sorted(times)
