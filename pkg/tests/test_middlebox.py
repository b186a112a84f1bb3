from __future__ import annotations

import random
from dataclasses import dataclass

import pytest
from conftest import CONTENT, NAME, make_world
from harness import NOW

from icntls.credentials import KeyPair
from icntls.errors import (
    BadDelegatedSignature,
    BadTranscriptSignature,
    HandshakeAborted,
    NoContent,
    NoDownstream,
    NoUpstreamChannel,
    SignerRefused,
)
from icntls.handshake import Phase, finish_flight, publisher_respond
from icntls.middlebox import (
    AccessStats,
    MiddleboxNode,
    SigningPolicy,
    aggregate_and_fanout,
    complete_downstream,
    complete_intercepted,
    delegated_signer,
    intercept_start,
    open_channel,
    read_signature_reply,
    refusal_alert,
    request_signature,
    trusted_sign,
)
from icntls.names import make_name
from icntls.nodes import Subscriber
from icntls.session import open_record, seal_record
from icntls.simnet import (
    DEFAULT_NAME,
    Action,
    Mode,
    Scenario,
    Simulation,
    Topology,
    rng_from_seed,
)
from icntls.wire import Alert, AlertCode, SigRequest, SigResponse


@dataclass
class Setup:
    world: object
    tp: object
    mb: MiddleboxNode
    rng: object

    def intercept(self, name=NAME):
        """One downstream handshake through the middlebox; returns (subscriber flow, downstream session or None)."""
        sub = self.world.subscriber()
        hello = sub.start(name, rng=self.rng)
        flow = sub.flows[hello.wire_name]
        pending = intercept_start(self.mb, hello, self.rng)
        (reply,) = self.tp.handle_record(request_signature(self.mb, pending))
        pending, answer = read_signature_reply(self.mb, reply)
        if isinstance(answer, Alert):
            with pytest.raises(HandshakeAborted):
                sub.handle(refusal_alert(pending, answer), NOW, self.rng)
            return flow, None
        (finish,) = sub.handle(complete_intercepted(self.mb, pending, answer), NOW, self.rng)
        session, out = complete_downstream(self.mb, finish, NOW, self.rng)
        for env in out:
            sub.handle(env, NOW, self.rng)
        return flow, session


def make_setup(seed=1, cached=True, allow=True, channel=True) -> Setup:
    world = make_world(seed)
    rng = rng_from_seed(seed + 50)
    tp = world.publisher(content={NAME.prefix: CONTENT, ("account", "credentials"): b"pin"})
    mb_key = KeyPair.generate("mb", rng)
    if allow:
        tp.policy.allow_middleboxes.add(mb_key.public_key)
    mb = MiddleboxNode(world.cert, mb_key, world.trust, content_store={NAME.prefix: CONTENT} if cached else {})
    if channel:
        open_channel(mb, tp, NOW, rng)
    return Setup(world, tp, mb, rng)


def test_cached_intercept_start(rng):
    s = make_setup()
    pending = intercept_start(s.mb, s.world.subscriber().start(NAME, rng=rng), rng)
    assert pending.signature is None and pending.upstream_hello is None


def test_uncached_intercept_opens_upstream(rng):
    s = make_setup(cached=False)
    pending = intercept_start(s.mb, s.world.subscriber().start(NAME, rng=rng), rng)
    assert pending.upstream_hello is not None
    again = intercept_start(s.mb, s.world.subscriber().start(NAME, rng=rng), rng)
    assert again.upstream_hello is None  # one upstream flow per name


def test_uncached_unreachable_is_no_content(rng):
    s = make_setup(cached=False)
    s.mb.upstream_reachable = False
    with pytest.raises(NoContent):
        intercept_start(s.mb, s.world.subscriber().start(NAME, rng=rng), rng)


def test_no_channel(rng):
    s = make_setup(channel=False)
    pending = intercept_start(s.mb, s.world.subscriber().start(NAME, rng=rng), rng)
    with pytest.raises(NoUpstreamChannel):
        request_signature(s.mb, pending)


def test_two_requests_share_one_channel(rng):
    s = make_setup()
    reqs = [request_signature(s.mb, intercept_start(s.mb, s.world.subscriber().start(NAME, rng=rng), rng)) for _ in range(2)]
    assert reqs[0].wire_name == reqs[1].wire_name == s.mb.upstream_session.wire_name
    assert [r.payload.seq for r in reqs] == [1, 2]  # seq 0 carried the channel authentication


def test_oblivious_subscriber_reaches_established():
    s = make_setup()
    flow, session = s.intercept()
    assert flow.established and b"".join(flow.received) == CONTENT
    assert flow.session.keys == session.keys
    assert s.tp.stats[NAME] == 1


def _request(s: Setup, name=NAME):
    pending = intercept_start(s.mb, s.world.subscriber().start(name, rng=s.rng), s.rng)
    return pending, SigRequest(name, pending.to_be_signed)


def test_trusted_sign_grants_and_counts():
    s = make_setup()
    _, req = _request(s)
    stats = AccessStats()
    reply = trusted_sign(s.tp, req, s.mb.middlebox_keypair.public_key, s.tp.policy, stats)
    assert isinstance(reply, SigResponse) and stats[NAME] == 1


def test_deny_prefix_refused():
    s = make_setup(cached=False)
    s.tp.policy.deny_prefixes.append(("account", "credentials"))
    name = make_name(["account", "credentials"])
    _, req = _request(s, name)
    reply = trusted_sign(s.tp, req, s.mb.middlebox_keypair.public_key)
    assert isinstance(reply, Alert) and reply.code == AlertCode.REFUSED
    assert s.tp.stats.total() == 0


def test_disabled_policy_refused():
    s = make_setup()
    s.tp.policy.enabled = False
    _, req = _request(s)
    reply = trusted_sign(s.tp, req, s.mb.middlebox_keypair.public_key)
    assert isinstance(reply, Alert) and reply.code == AlertCode.REFUSED and s.tp.stats.total() == 0


def test_unknown_middlebox():
    s = make_setup(allow=False)
    flow, session = s.intercept()
    assert session is None and flow.state.phase is Phase.FAILED
    assert s.tp.stats.total() == 0


def test_signing_oracle_rejects_foreign_bytes():
    s = make_setup()
    reply = trusted_sign(s.tp, SigRequest(NAME, b"transfer all funds"), s.mb.middlebox_keypair.public_key)
    assert isinstance(reply, Alert) and reply.code == AlertCode.BAD_REQUEST
    _, req = _request(s)
    other = SigRequest(make_name(["movies", "other"]), req.to_be_signed)  # name/tuple mismatch
    assert trusted_sign(s.tp, other, s.mb.middlebox_keypair.public_key).code == AlertCode.BAD_REQUEST


def test_tampered_delegated_signature_caught_at_middlebox():
    s = make_setup()
    pending, req = _request(s)
    sig = trusted_sign(s.tp, req, s.mb.middlebox_keypair.public_key).signature
    with pytest.raises(BadDelegatedSignature):
        complete_intercepted(s.mb, pending, SigResponse(bytes([sig[0] ^ 1]) + sig[1:]))


def test_cross_request_signature_swap_fails_at_subscriber():
    s = make_setup()
    sub = s.world.subscriber()
    hello = sub.start(NAME, rng=s.rng)
    pending = intercept_start(s.mb, hello, s.rng)
    _, other = _request(s)
    swapped = trusted_sign(s.tp, other, s.mb.middlebox_keypair.public_key)
    with pytest.raises(BadDelegatedSignature):
        complete_intercepted(s.mb, pending, swapped)
    # a middlebox skipping its own check still cannot fool the subscriber
    flight = finish_flight(s.mb.store, pending, swapped.signature)
    with pytest.raises(BadTranscriptSignature):
        sub.handle(flight, NOW, s.rng)
    assert sub.flows[hello.wire_name].state.phase is Phase.FAILED


def test_delegated_signer_plugs_into_publisher_respond():
    s = make_setup()
    sub = s.world.subscriber()
    hello = sub.start(NAME, rng=s.rng)
    _, flight = publisher_respond(s.mb.store, hello, s.mb.held_certificate, delegated_signer(s.mb, s.tp), rng=s.rng)
    assert sub.handle(flight, NOW, s.rng)
    s.tp.policy.enabled = False
    before = len(s.mb.store)
    with pytest.raises(SignerRefused):
        publisher_respond(s.mb.store, sub.start(NAME, rng=s.rng), s.mb.held_certificate, delegated_signer(s.mb, s.tp), rng=s.rng)
    assert len(s.mb.store) == before


def _upstream_flow(s: Setup):
    """Content session between the middlebox and the publisher, built in-process."""
    up = Subscriber("mb", s.world.trust)
    hello = up.start(NAME, rng=s.rng)
    reply, _ = s.tp.handle_hello(hello, NOW, s.rng)
    (finish,) = up.handle(reply, NOW, s.rng)
    publisher_side, fin = s.tp.handle_finish(finish, NOW, s.rng)
    up.handle(fin, NOW, s.rng)
    s.mb.upstream_content[NAME.prefix] = up.flows[hello.wire_name].session
    return publisher_side


def test_fanout_distinct_ciphertexts():
    s = make_setup(cached=False)
    flows = {}
    for _ in range(2):
        flow, _ = s.intercept()
        flows[flow.state.wire_name] = flow
    upstream = _upstream_flow(s)
    prng = random.Random(3)
    ones = total = 0
    for _ in range(1000):
        plaintext = prng.randbytes(64)
        out = aggregate_and_fanout(s.mb, seal_record(upstream, plaintext))
        assert len(out) == 2 and out[0].payload.ciphertext != out[1].payload.ciphertext
        for env in out:
            assert open_record(flows[env.wire_name].session, env) == plaintext
            ones += sum(bin(b).count("1") for b in env.payload.ciphertext)
            total += 8 * len(env.payload.ciphertext)
    assert 0.48 < ones / total < 0.52


def test_fanout_without_downstream():
    s = make_setup(cached=False)
    upstream = _upstream_flow(s)
    with pytest.raises(NoDownstream):
        aggregate_and_fanout(s.mb, seal_record(upstream, b"x"))
    assert s.mb.received[NAME.prefix] == [b"x"]


def test_policy_file_roundtrip():
    p = SigningPolicy([("account", "credentials")], {bytes(32), b"\x01" * 32}, False)
    assert SigningPolicy.decode(p.encode()) == p


# --- simulated scenarios ----------------------------------------------------------------


def _fan_in(seed=0, **kw):
    sc = Scenario(Mode.MIDDLEBOX, [Action(0, "sub1"), Action(0, "sub2")], middlebox_cached=False, **kw)
    sim = Simulation(Topology.fan_in(1, 1), sc, seed)
    return sim, sim.run()


def test_fan_in_one_upstream_two_downstream():
    sim, trace = _fan_in()
    assert not trace.failures
    upstream = {e.envelope.wire_name for e in trace.deliveries("SubHello") if e.dst == "tp" and "_delegation" not in e.envelope.wire_name}
    assert len(upstream) == 1
    assert len(sim.middlebox.downstream_sessions) == 2
    cts = {d: [e.envelope.payload.ciphertext for e in trace.deliveries("DataRecord") if e.dst == d] for d in ("sub1", "sub2")}
    assert len(cts["sub1"]) == len(cts["sub2"]) > 0
    assert all(a != b for a, b in zip(cts["sub1"], cts["sub2"]))
    for s in ("sub1", "sub2"):
        (flow,) = sim.apps[s].endpoint.flows.values()
        assert b"".join(flow.received) == sim.scenario.content[DEFAULT_NAME.prefix]


def _secret_absent(sim, trace):
    secret = sim.publisher.keypair.private_key
    for raw in trace.wire_bytes():
        assert secret not in raw
    mb = sim.middlebox
    if mb is not None:
        for value in vars(mb).values():
            assert secret not in repr(value).encode()
            if isinstance(value, (bytes, bytearray)):
                assert secret not in value


@pytest.mark.parametrize("mode", list(Mode))
@pytest.mark.parametrize("pre", [True, False])
def test_private_key_absent_from_traces(mode, pre):
    sim = Simulation(Topology.fan_in(2, 1, 3), Scenario(mode, [Action(i, f"sub{i + 1}") for i in range(3)], preestablish_channel=pre), 9)
    trace = sim.run()
    _secret_absent(sim, trace)
    if mode is Mode.MIDDLEBOX:
        assert sim.publisher.keypair.private_key not in sim.trace.to_csv().encode()


def test_stats_match_granted_handshakes_randomized():
    names = [make_name(["movies", "a"]), make_name(["movies", "b"]), make_name(["account", "credentials"])]
    for seed in range(30):
        prng = random.Random(seed)
        n = prng.randint(1, 5)
        actions = [Action(prng.choice([0, 1, 2, 5]), f"sub{i + 1}", name=prng.choice(names)) for i in range(n)]
        sc = Scenario(
            Mode.MIDDLEBOX,
            actions,
            content={nm.prefix: prng.randbytes(prng.randint(1, 3000)) for nm in names},
            middlebox_cached=prng.random() < 0.5,
            preestablish_channel=prng.random() < 0.5,
            deny_prefixes=[("account",)] if prng.random() < 0.5 else [],
        )
        sim = Simulation(Topology.fan_in(1, prng.choice([0.5, 1, 2]), n), sc, seed)
        trace = sim.run()
        established = {}
        for i in range(n):
            for flow in sim.apps[f"sub{i + 1}"].endpoint.flows.values():
                if flow.established:
                    established[flow.session.name.prefix] = established.get(flow.session.name.prefix, 0) + 1
        assert sim.publisher.stats.counts == established, (seed, trace.failures)
        for node, _, exc in trace.failures:
            assert isinstance(exc, HandshakeAborted) and sc.deny_prefixes


def test_disabling_policy_halts_new_handshakes_only():
    def disable(sim):
        sim.publisher.policy.enabled = False

    actions = [Action(0, "sub1"), Action(20, "tp", kind="call", fn=disable), Action(30, "sub2")]
    for seed in range(5):
        sim = Simulation(Topology.fan_in(1, 1), Scenario(Mode.MIDDLEBOX, actions), seed)
        trace = sim.run()
        (first,) = sim.apps["sub1"].endpoint.flows.values()
        (second,) = sim.apps["sub2"].endpoint.flows.values()
        assert first.established and second.state.phase is Phase.FAILED
        assert [type(e).__name__ for _, _, e in trace.failures] == ["HandshakeAborted"]
        assert sim.publisher.stats.total() == 1
        # the established session keeps working after the policy change
        (down,) = sim.middlebox.downstream_sessions.values()
        assert open_record(first.session, seal_record(down, b"still here")) == b"still here"
