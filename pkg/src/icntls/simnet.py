"""Deterministic discrete-event simulator for the handshake variants.

Virtual time is kept as exact fractions of a millisecond and processing takes
no time, so measured delays equal sums of link latencies. Subscriptions are
routed toward the nearest node advertising a matching prefix; publications
follow pending-subscription (PIT) state back along the reverse path.

Three evaluation modes share the chain subscriber -- middlebox --
publisher:

``dummy``
    Content is pre-encrypted and cached at the middlebox; the subscriber asks
    the middlebox for it and, in parallel, asks the publisher for the key.
``direct``
    Full handshake with the trusted publisher; the middlebox only forwards.
``middlebox``
    The middlebox intercepts the handshake and obtains the signature from the
    publisher over a delegation channel.
"""

from __future__ import annotations

import enum
import hashlib
import heapq
import io
import itertools
import logging
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Optional, Union

import networkx as nx
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .credentials import KeyPair, OwnerKeyPair, issue_certificate
from .errors import (
    DisconnectedTopology,
    FlowIncomplete,
    IcnTlsError,
    InvalidTopology,
    NoDownstream,
    NoRoute,
    UnknownNode,
)
from .handshake import HandshakeConfig, subscriber_process_flight, subscriber_verify_finish
from .middlebox import (
    MiddleboxNode,
    aggregate_and_fanout,
    channel_auth_record,
    complete_downstream,
    complete_intercepted,
    intercept_start,
    open_channel,
    read_signature_reply,
    refusal_alert,
    request_signature,
    start_channel,
)
from .names import ContentName, RandomSource, make_name, parse_name, routable
from .nodes import Subscriber, TrustedPublisher, chunks
from .session import KeyGenerator
from .wire import (
    Alert,
    DataRecord,
    Direction,
    Envelope,
    Flags,
    PubFinish,
    PubHello,
    SubFinish,
    SubHello,
    encode,
    encode_payload,
    publication,
    subscription,
)

log = logging.getLogger(__name__)

LOCAL = "<local>"
EPOCH = 1_700_000_000
DEFAULT_NAME = make_name(["movies", "trailer1"])
DEFAULT_CONTENT = bytes(range(256)) * 8
KEY_PREFIX = "keys"

Number = Union[int, float, str, Fraction]


def as_fraction(value: Number) -> Fraction:
    """Exact value; floats go through their shortest repr so 0.1 means 1/10."""
    if isinstance(value, float):
        return Fraction(repr(value))
    return Fraction(value)


def rng_from_seed(seed: int) -> RandomSource:
    """Reproducible byte source for simulations. Not for real keys."""
    gen = random.Random(seed)
    return gen.randbytes


class NodeRole(str, enum.Enum):
    SUBSCRIBER = "Subscriber"
    MIDDLEBOX = "Middlebox"
    TRUSTED_PUBLISHER = "TrustedPublisher"
    ROUTER = "Router"


@dataclass(frozen=True)
class NodeSpec:
    id: str
    role: NodeRole


@dataclass(frozen=True)
class LinkSpec:
    a: str
    b: str
    latency: Fraction


@dataclass
class Topology:
    """Nodes and symmetric links. Zero latency means co-located nodes."""

    nodes: list[NodeSpec]
    links: list[LinkSpec]

    def validate(self) -> None:
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise InvalidTopology("duplicate node id")
        known = set(ids)
        for link in self.links:
            for end in (link.a, link.b):
                if end not in known:
                    raise UnknownNode(end)
            if link.latency < 0:
                raise InvalidTopology(f"negative latency on {link.a}-{link.b}")
        if not nx.is_connected(self.graph()):
            raise DisconnectedTopology("topology is not connected")

    def graph(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(n.id for n in self.nodes)
        for link in self.links:
            g.add_edge(link.a, link.b, latency=link.latency)
        return g

    def role_of(self, node_id: str) -> NodeRole:
        for n in self.nodes:
            if n.id == node_id:
                return n.role
        raise UnknownNode(node_id)

    def ids(self, role: NodeRole) -> list[str]:
        return [n.id for n in self.nodes if n.role is role]

    @classmethod
    def chain(cls, L: Number, alpha: Number) -> "Topology":
        """Chain: subscriber -(L)- middlebox -(alpha*L)- trusted publisher."""
        L, alpha = as_fraction(L), as_fraction(alpha)
        return cls(
            [
                NodeSpec("sub", NodeRole.SUBSCRIBER),
                NodeSpec("mb", NodeRole.MIDDLEBOX),
                NodeSpec("tp", NodeRole.TRUSTED_PUBLISHER),
            ],
            [LinkSpec("sub", "mb", L), LinkSpec("mb", "tp", alpha * L)],
        )

    @classmethod
    def fan_in(cls, L: Number, alpha: Number, subscribers: int = 2) -> "Topology":
        """Fan-in: several subscribers behind one middlebox."""
        L, alpha = as_fraction(L), as_fraction(alpha)
        subs = [f"sub{i + 1}" for i in range(subscribers)]
        nodes = [NodeSpec(s, NodeRole.SUBSCRIBER) for s in subs]
        nodes += [NodeSpec("mb", NodeRole.MIDDLEBOX), NodeSpec("tp", NodeRole.TRUSTED_PUBLISHER)]
        links = [LinkSpec(s, "mb", L) for s in subs] + [LinkSpec("mb", "tp", alpha * L)]
        return cls(nodes, links)


def parse_topology(text: str, L: Number = 1, alpha: Number = 1) -> Topology:
    """Parse ``node <id> <role>`` / ``link <a> <b> <latency>`` lines.

    A latency is a number of milliseconds, or ``L`` / ``aL`` (optionally with a
    numeric factor, e.g. ``2*aL``) resolved against the given ``L`` and ``alpha``.
    """
    L, alpha = as_fraction(L), as_fraction(alpha)
    nodes, links = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "node" and len(parts) == 3:
                nodes.append(NodeSpec(parts[1], NodeRole(parts[2])))
            elif parts[0] == "link" and len(parts) == 4:
                links.append(LinkSpec(parts[1], parts[2], _latency(parts[3], L, alpha)))
            else:
                raise ValueError("expected 'node <id> <role>' or 'link <a> <b> <latency>'")
        except ValueError as exc:
            raise InvalidTopology(f"line {lineno}: {exc}") from exc
    topo = Topology(nodes, links)
    topo.validate()
    return topo


def _latency(token: str, L: Fraction, alpha: Fraction) -> Fraction:
    factor, _, unit = token.rpartition("*")
    base = {"L": L, "aL": alpha * L}.get(unit)
    if base is None:
        if factor:
            raise ValueError(f"bad latency {token!r}")
        return Fraction(unit)
    return (Fraction(factor) if factor else 1) * base


# --- events and traces ----------------------------------------------------------------


class EventKind(str, enum.Enum):
    SEND = "Send"
    DELIVER = "Deliver"
    DROP = "Drop"


@dataclass(frozen=True)
class SimEvent:
    time: Fraction
    kind: EventKind
    envelope: Envelope
    src: str
    dst: str

    @property
    def msg_type(self) -> str:
        return type(self.envelope.payload).__name__


def format_ms(t: Fraction) -> str:
    return str(t.numerator) if t.denominator == 1 else repr(float(t))


@dataclass
class Trace:
    events: list[SimEvent] = field(default_factory=list)
    first_byte: dict[tuple[str, str], Fraction] = field(default_factory=dict)
    flow_start: dict[tuple[str, str], Fraction] = field(default_factory=dict)
    failures: list[tuple[str, str, IcnTlsError]] = field(default_factory=list)

    def wire_bytes(self) -> Iterable[bytes]:
        for ev in self.events:
            yield encode(ev.envelope)

    def digest(self) -> str:
        h = hashlib.sha256()
        for ev, raw in zip(self.events, self.wire_bytes()):
            h.update(f"{ev.time}|{ev.kind.value}|{ev.src}|{ev.dst}|".encode())
            h.update(raw)
        return h.hexdigest()

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("time_ms,kind,from,to,msg_type\n")
        for ev in self.events:
            out.write(f"{format_ms(ev.time)},{ev.kind.value},{ev.src},{ev.dst},{ev.msg_type}\n")
        return out.getvalue()

    def deliveries(self, msg_type: Optional[str] = None) -> list[SimEvent]:
        return [e for e in self.events if e.kind is EventKind.DELIVER and (msg_type is None or e.msg_type == msg_type)]


def measure_first_byte(trace: Trace, subscriber: str, name: Union[ContentName, str]) -> Fraction:
    key = (subscriber, str(name))
    if key not in trace.first_byte:
        raise FlowIncomplete(f"no data reached {subscriber} for {name}")
    return trace.first_byte[key] - trace.flow_start.get(key, Fraction(0))


# --- forwarding plane -----------------------------------------------------------------


class CacheStore:
    """Per-node publication cache keyed by wire name."""

    def __init__(self) -> None:
        self.entries: dict[str, Envelope] = {}

    def insert(self, env: Envelope) -> bool:
        if env.flags & Flags.NON_CACHEABLE:
            return False
        self.entries[env.wire_name] = env
        return True

    def force_insert(self, env: Envelope) -> None:
        """Test hook: store even a non-cacheable publication."""
        self.entries[env.wire_name] = env

    def lookup(self, wire_name: str) -> Optional[Envelope]:
        return self.entries.get(wire_name)


@dataclass
class PitEntry:
    faces: set[str] = field(default_factory=set)
    in_flight: set[bytes] = field(default_factory=set)


class AggregateResult(enum.Enum):
    AGGREGATED = "aggregated"
    FORWARDED = "forwarded"


class Network:
    """Routing tables, pending-subscription tables and caches for one topology."""

    def __init__(self, topology: Topology) -> None:
        topology.validate()
        self.topology = topology
        g = topology.graph()
        self.latency = {(l.a, l.b): l.latency for l in topology.links}
        self.latency.update({(l.b, l.a): l.latency for l in topology.links})
        self.dist = {n: d for n, d in nx.all_pairs_dijkstra_path_length(g, weight="latency")}
        self.paths = {n: p for n, p in nx.all_pairs_dijkstra_path(g, weight="latency")}
        self.advertised: dict[str, list[tuple[str, ...]]] = {n.id: [] for n in topology.nodes}
        self.pit: dict[str, dict[str, PitEntry]] = {n.id: {} for n in topology.nodes}
        self.caches: dict[str, CacheStore] = {n.id: CacheStore() for n in topology.nodes}

    def advertise(self, node: str, prefix: Iterable[str]) -> None:
        if node not in self.advertised:
            raise UnknownNode(node)
        self.advertised[node].append(tuple(prefix))

    def advertises(self, node: str, name: ContentName) -> bool:
        return any(name.has_prefix(p) for p in self.advertised[node])

    def nearest_advertiser(self, node: str, name: ContentName, exclude: Optional[str] = None) -> str:
        candidates = [n for n in self.advertised if n != exclude and self.advertises(n, name)]
        if not candidates:
            raise NoRoute(f"no node advertises a prefix of {name}")
        return min(candidates, key=lambda n: (self.dist[node][n], n))

    def forward(self, node: str, envelope: Envelope, origin: Optional[str] = None, ingress: Optional[str] = None) -> list[str]:
        """Next hops for ``envelope`` at ``node``; ``LOCAL`` means hand it to the node's application."""
        if envelope.direction is Direction.PUBLICATION:
            entry = self.pit[node].get(envelope.wire_name)
            if entry is None:
                raise NoRoute(f"{node}: no pending subscription for {envelope.wire_name!r}")
            return sorted(f for f in entry.faces if f != ingress and not (f == LOCAL and node == origin))
        target = self.nearest_advertiser(node, parse_name(bytes(envelope.forwarding_id).decode()), exclude=origin)
        if target == node:
            return [LOCAL]
        return [self.paths[node][target][1]]

    def try_aggregate(self, node: str, sub: Envelope, face: str = LOCAL) -> AggregateResult:
        """Merge ``sub`` into an identical in-flight subscription when that is allowed."""
        entry = self.pit[node].setdefault(sub.wire_name, PitEntry())
        body = encode_payload(sub.payload)
        aggregatable = not sub.flags & Flags.NON_AGGREGATABLE
        if aggregatable and body in entry.in_flight:
            entry.faces.add(face)
            return AggregateResult.AGGREGATED
        entry.faces.add(face)
        if aggregatable:
            entry.in_flight.add(body)
        return AggregateResult.FORWARDED


# --- scenarios --------------------------------------------------------------------------


class Mode(str, enum.Enum):
    DUMMY = "dummy"
    DIRECT = "direct"
    MIDDLEBOX = "middlebox"


@dataclass
class Action:
    time: Number
    node: str
    kind: str = "fetch"  # "fetch" or "call"
    name: ContentName = DEFAULT_NAME
    config: Optional[HandshakeConfig] = None
    fn: Optional[Callable[["Simulation"], None]] = None


@dataclass
class Scenario:
    mode: Mode
    actions: list[Action]
    content: dict[tuple[str, ...], bytes] = field(default_factory=lambda: {DEFAULT_NAME.prefix: DEFAULT_CONTENT})
    authorized_prefixes: tuple[tuple[str, ...], ...] = (("movies",), ("account",))
    middlebox_cached: bool = True
    preestablish_channel: bool = True
    deny_prefixes: list[tuple[str, ...]] = field(default_factory=list)
    allow_middlebox: bool = True
    issue_tickets: bool = False

    @classmethod
    def single(cls, mode: Union[Mode, str], subscriber: str = "sub", name: ContentName = DEFAULT_NAME, **kw) -> "Scenario":
        return cls(Mode(mode), [Action(0, subscriber, "fetch", name)], **kw)


# --- node applications --------------------------------------------------------------------


class App:
    def __init__(self, sim: "Simulation", node: str) -> None:
        self.sim = sim
        self.node = node

    def on_subscription(self, env: Envelope) -> None:
        raise NoRoute(f"{self.node} does not serve subscriptions")

    def on_publication(self, env: Envelope) -> None:
        raise NoRoute(f"{self.node} expects no publications")

    def on_fetch(self, action: Action) -> None:
        raise NoRoute(f"{self.node} cannot start fetches")

    def send(self, env: Envelope) -> None:
        self.sim.emit(self.node, env)


class SubscriberApp(App):
    def __init__(self, sim: "Simulation", node: str) -> None:
        super().__init__(sim, node)
        self.endpoint = Subscriber(node, sim.trust_store)
        self.names: dict[str, ContentName] = {}

    def on_fetch(self, action: Action) -> None:
        hello = self.endpoint.start(action.name, action.config, self.sim.rng)
        self.names[hello.wire_name] = action.name
        self.sim.trace.flow_start[(self.node, str(action.name))] = self.sim.now
        self.send(hello)

    def on_publication(self, env: Envelope) -> None:
        for reply in self.endpoint.handle(env, self.sim.clock(), self.sim.rng):
            self.send(reply)
        if isinstance(env.payload, DataRecord):
            self.sim.mark_first_byte(self.node, self.names[env.wire_name])


class PublisherApp(App):
    def __init__(self, sim: "Simulation", node: str, endpoint: TrustedPublisher) -> None:
        super().__init__(sim, node)
        self.endpoint = endpoint

    def on_subscription(self, env: Envelope) -> None:
        tp, now, rng = self.endpoint, self.sim.clock(), self.sim.rng
        msg = env.payload
        if isinstance(msg, SubHello):
            reply, resumed = tp.handle_hello(env, now, rng)
            self.send(reply)
            if resumed is not None:
                for rec in tp.content_records(resumed):
                    self.send(rec)
        elif isinstance(msg, SubFinish):
            session, fin = tp.handle_finish(env, now, rng)
            self.send(fin)
            for rec in tp.content_records(session):
                self.send(rec)
        elif isinstance(msg, DataRecord):
            for reply in tp.handle_record(env):
                self.send(reply)
        else:
            raise NoRoute(f"publisher cannot handle {type(msg).__name__}")


class MiddleboxApp(App):
    """Intercepting middlebox: delegated signing downstream, plain subscriber upstream."""

    def __init__(self, sim: "Simulation", node: str, endpoint: MiddleboxNode) -> None:
        super().__init__(sim, node)
        self.mb = endpoint
        self.waiting: list = []  # flights queued until the channel is up

    def start_channel(self) -> None:
        self.send(start_channel(self.mb, self.sim.rng))

    def on_subscription(self, env: Envelope) -> None:
        msg = env.payload
        if isinstance(msg, SubHello):
            pending = intercept_start(self.mb, env, self.sim.rng)
            if pending.upstream_hello is not None:
                self.send(pending.upstream_hello)
            if self.mb.upstream_session is None:
                self.waiting.append(pending)
            else:
                self.send(request_signature(self.mb, pending))
        elif isinstance(msg, SubFinish):
            _, out = complete_downstream(self.mb, env, self.sim.clock(), self.sim.rng)
            for e in out:
                self.send(e)
        else:
            raise NoRoute(f"middlebox cannot handle {type(msg).__name__}")

    def on_publication(self, env: Envelope) -> None:
        mb, now, rng = self.mb, self.sim.clock(), self.sim.rng
        msg = env.payload
        channel = mb.upstream_session
        if mb.channel_state is not None and env.wire_name == mb.channel_state.wire_name:
            if isinstance(msg, PubHello):
                _, finish = subscriber_process_flight(mb.channel_state, env, mb.trust_store, now, rng)
                self.send(finish)
                return
            if isinstance(msg, PubFinish):
                mb.upstream_session = subscriber_verify_finish(mb.channel_state, env)
                self.send(channel_auth_record(mb))
                for pending in self.waiting:
                    self.send(request_signature(mb, pending))
                self.waiting.clear()
                return
        if channel is not None and env.wire_name == channel.wire_name and isinstance(msg, DataRecord):
            pending, reply = read_signature_reply(mb, env)
            if isinstance(reply, Alert):
                self.send(refusal_alert(pending, reply))
            else:
                self.send(complete_intercepted(mb, pending, reply))
            return
        prefix = next((p for p, st in mb.fetching.items() if st.wire_name == env.wire_name), None)
        if prefix is not None:
            state = mb.fetching[prefix]
            if isinstance(msg, PubHello):
                _, finish = subscriber_process_flight(state, env, mb.trust_store, now, rng)
                self.send(finish)
            elif isinstance(msg, PubFinish):
                mb.upstream_content[prefix] = subscriber_verify_finish(state, env)
                del mb.fetching[prefix]
            return
        if isinstance(msg, DataRecord):
            try:
                out = aggregate_and_fanout(mb, env)
            except NoDownstream:
                return
            for rec in out:
                self.send(rec)
            return
        raise NoRoute(f"middlebox got unexpected {type(msg).__name__} on {env.wire_name!r}")


def _dummy_nonce(seq: int) -> bytes:
    return seq.to_bytes(12, "big")


class DummySubscriberApp(App):
    """Fetches cached ciphertext and the content key in parallel."""

    def __init__(self, sim: "Simulation", node: str) -> None:
        super().__init__(sim, node)
        self.keys: dict[str, bytes] = {}
        self.records: dict[str, list[DataRecord]] = {}
        self.plaintext: dict[str, list[bytes]] = {}

    def on_fetch(self, action: Action) -> None:
        name = action.name
        self.sim.trace.flow_start[(self.node, str(name))] = self.sim.now
        request = DataRecord(0, b"")
        self.send(subscription(str(name), routable(name), request, Flags.NONE))
        key_name = ContentName((KEY_PREFIX,) + name.prefix)
        self.send(subscription(str(key_name), routable(key_name), request, Flags.NON_AGGREGATABLE))

    def on_publication(self, env: Envelope) -> None:
        name = parse_name(env.wire_name)
        if name.prefix[0] == KEY_PREFIX:
            content = ContentName(name.prefix[1:])
            self.keys[str(content)] = env.payload.ciphertext
        else:
            content = name
            self.records.setdefault(str(content), []).append(env.payload)
        key = self.keys.get(str(content))
        if key is None:
            return
        pending = self.records.pop(str(content), [])
        for rec in pending:
            self.plaintext.setdefault(str(content), []).append(AESGCM(key).decrypt(_dummy_nonce(rec.seq), rec.ciphertext, None))
        if pending:
            self.sim.mark_first_byte(self.node, content)


class DummyMiddleboxApp(App):
    def __init__(self, sim: "Simulation", node: str, store: dict[tuple[str, ...], list[bytes]]) -> None:
        super().__init__(sim, node)
        self.store = store

    def on_subscription(self, env: Envelope) -> None:
        name = parse_name(env.wire_name)
        for seq, ct in enumerate(self.store[name.prefix]):
            self.send(publication(env.wire_name, env.forwarding_id, DataRecord(seq, ct), Flags.NONE))


class DummyPublisherApp(App):
    def __init__(self, sim: "Simulation", node: str, keys: dict[tuple[str, ...], bytes]) -> None:
        super().__init__(sim, node)
        self.content_keys = keys

    def on_subscription(self, env: Envelope) -> None:
        name = parse_name(env.wire_name)
        key = self.content_keys[name.prefix[1:]]
        self.send(publication(env.wire_name, env.forwarding_id, DataRecord(0, key), Flags.NON_CACHEABLE))


# --- simulation ---------------------------------------------------------------------------


class Simulation:
    def __init__(self, topology: Topology, scenario: Scenario, seed: int = 0) -> None:
        self.network = Network(topology)
        self.topology = topology
        self.scenario = scenario
        self.rng = rng_from_seed(seed)
        self.now = Fraction(0)
        self.trace = Trace()
        self._queue: list = []
        self._seq = itertools.count()
        self.apps: dict[str, App] = {}
        self.publisher: Optional[TrustedPublisher] = None
        self.middlebox: Optional[MiddleboxNode] = None
        self._build()

    def clock(self) -> int:
        """Wall-clock seconds used for certificate and ticket checks."""
        return EPOCH + int(self.now // 1000)

    # setup

    def _build(self) -> None:
        sc, rng = self.scenario, self.rng
        self.owner = OwnerKeyPair.generate("owner", rng)
        self.trust_store = {self.owner.owner_id: self.owner.public_key}
        publishers = self.topology.ids(NodeRole.TRUSTED_PUBLISHER)
        middleboxes = self.topology.ids(NodeRole.MIDDLEBOX)
        for node in self.topology.ids(NodeRole.SUBSCRIBER):
            self.apps[node] = DummySubscriberApp(self, node) if sc.mode is Mode.DUMMY else SubscriberApp(self, node)
        if not publishers:
            raise UnknownNode("scenario needs a TrustedPublisher node")
        tp_id = publishers[0]
        tp_key = KeyPair.generate(tp_id, rng)
        cert = issue_certificate(self.owner, tp_key.public_key, sc.authorized_prefixes, (EPOCH - 3600, EPOCH + 365 * 86400))
        keygen = KeyGenerator.create(publishers, EPOCH, rng) if sc.issue_tickets else None
        self.publisher = TrustedPublisher(tp_id, tp_key, cert, content=dict(sc.content), keygen=keygen, issue_tickets=sc.issue_tickets)
        self.publisher.policy.deny_prefixes = list(sc.deny_prefixes)

        if sc.mode is Mode.DUMMY:
            keys = {prefix: rng(16) for prefix in sc.content}
            store = {
                prefix: [AESGCM(keys[prefix]).encrypt(_dummy_nonce(i), part, None) for i, part in enumerate(chunks(data))]
                for prefix, data in sc.content.items()
            }
            self.apps[tp_id] = DummyPublisherApp(self, tp_id, keys)
            self.network.advertise(tp_id, (KEY_PREFIX,))
            for mb in middleboxes:
                self.apps[mb] = DummyMiddleboxApp(self, mb, store)
                for prefix in sc.content:
                    self.network.advertise(mb, prefix)
            return

        self.apps[tp_id] = PublisherApp(self, tp_id, self.publisher)
        for prefix in sc.authorized_prefixes:
            self.network.advertise(tp_id, prefix)
        if sc.mode is Mode.MIDDLEBOX and middleboxes:
            mb_id = middleboxes[0]
            mb_key = KeyPair.generate(mb_id, rng)
            if sc.allow_middlebox:
                self.publisher.policy.allow_middleboxes.add(mb_key.public_key)
            cached = dict(sc.content) if sc.middlebox_cached else {}
            self.middlebox = MiddleboxNode(cert, mb_key, self.trust_store, content_store=cached)
            app = MiddleboxApp(self, mb_id, self.middlebox)
            self.apps[mb_id] = app
            for prefix in sc.content:
                self.network.advertise(mb_id, prefix)
            if sc.preestablish_channel:
                open_channel(self.middlebox, self.publisher, self.clock(), rng)
            else:
                self._schedule(Fraction(0), app.start_channel)

    # event loop

    def _schedule(self, time: Fraction, fn: Callable[[], None]) -> None:
        heapq.heappush(self._queue, (time, next(self._seq), fn))

    def run(self) -> Trace:
        for action in self.scenario.actions:
            if action.node not in self.network.advertised:
                raise UnknownNode(action.node)
            self._schedule(as_fraction(action.time), lambda a=action: self._do_action(a))
        while self._queue:
            self.now, _, fn = heapq.heappop(self._queue)
            fn()
        return self.trace

    def _do_action(self, action: Action) -> None:
        if action.kind == "call":
            action.fn(self)
            return
        app = self.apps.get(action.node)
        if app is None:
            raise UnknownNode(f"{action.node} runs no application")
        self._guard(action.node, str(action.name), lambda: app.on_fetch(action))

    def _guard(self, node: str, flow: str, fn: Callable[[], None]) -> None:
        try:
            fn()
        except IcnTlsError as exc:
            log.debug("%s: %s failed: %r", node, flow, exc)
            self.trace.failures.append((node, flow, exc))

    def mark_first_byte(self, node: str, name: ContentName) -> None:
        self.trace.first_byte.setdefault((node, str(name)), self.now)

    def emit(self, node: str, env: Envelope) -> None:
        """An application at ``node`` sends ``env``."""
        self._process(node, env, origin=node, ingress=LOCAL)

    def _send(self, src: str, dst: str, env: Envelope, origin: str) -> None:
        self.trace.events.append(SimEvent(self.now, EventKind.SEND, env, src, dst))
        arrival = self.now + self.network.latency[(src, dst)]
        self._schedule(arrival, lambda: self._arrive(src, dst, env, origin))

    def _arrive(self, src: str, dst: str, env: Envelope, origin: str) -> None:
        self.trace.events.append(SimEvent(self.now, EventKind.DELIVER, env, src, dst))
        self._process(dst, env, origin, ingress=src)

    def _drop(self, node: str, env: Envelope, exc: IcnTlsError) -> None:
        self.trace.events.append(SimEvent(self.now, EventKind.DROP, env, node, node))
        self.trace.failures.append((node, env.wire_name, exc))

    def _process(self, node: str, env: Envelope, origin: str, ingress: str) -> None:
        net = self.network
        if env.direction is Direction.SUBSCRIPTION:
            if net.try_aggregate(node, env, ingress) is AggregateResult.AGGREGATED:
                return
            if node != origin:
                cached = net.caches[node].lookup(env.wire_name)
                if cached is not None:
                    self._process(node, cached, origin=node, ingress=LOCAL)
                    return
        else:
            entry = net.pit[node].get(env.wire_name)
            if entry is not None:
                entry.in_flight.clear()
            if node != origin:
                net.caches[node].insert(env)
        try:
            hops = net.forward(node, env, origin, ingress)
        except NoRoute as exc:
            self._drop(node, env, exc)
            return
        for hop in hops:
            if hop == LOCAL:
                app = self.apps.get(node)
                if app is None:
                    self._drop(node, env, NoRoute(f"{node} has no application"))
                    continue
                handler = app.on_subscription if env.direction is Direction.SUBSCRIPTION else app.on_publication
                self._guard(node, env.wire_name, lambda h=handler: h(env))
            else:
                self._send(node, hop, env, origin)


def run(topology: Topology, scenario: Scenario, seed: int = 0) -> Trace:
    return Simulation(topology, scenario, seed).run()


def first_byte_delay(mode: Union[Mode, str], L: Number, alpha: Number, seed: int = 0, topology: Optional[Topology] = None) -> Fraction:
    """First-byte delay of one fetch on the evaluation chain (or a supplied topology)."""
    topo = topology or Topology.chain(L, alpha)
    sub = topo.ids(NodeRole.SUBSCRIBER)[0]
    trace = run(topo, Scenario.single(mode, sub), seed)
    return measure_first_byte(trace, sub, DEFAULT_NAME)
