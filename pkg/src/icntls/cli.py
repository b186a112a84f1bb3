"""Command-line entry point: evaluation grid, demos and fixture tooling."""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Callable, Optional, Sequence

from .credentials import KeyPair, OwnerKeyPair, issue_certificate
from .errors import (
    CliError,
    FixtureExists,
    IcnTlsError,
    InvalidRange,
    MissingOwnerKey,
    ScenarioFailed,
    WriteFailure,
)
from .handshake import HandshakeConfig
from .names import make_name
from .nodes import Subscriber, TrustedPublisher, run_direct
from .session import KeyGenerator, compromise_demo
from .simnet import (
    DEFAULT_CONTENT,
    DEFAULT_NAME,
    EPOCH,
    EventKind,
    Mode,
    Scenario,
    Simulation,
    Topology,
    as_fraction,
    first_byte_delay,
    format_ms,
    parse_topology,
    rng_from_seed,
)

MODE_ORDER = (Mode.DUMMY, Mode.MIDDLEBOX, Mode.DIRECT)
HANDSHAKE_TYPES = {"SubHello", "PubHello", "SubFinish", "PubFinish"}


# --- eval -----------------------------------------------------------------------------


@dataclass
class EvalConfig:
    L: Fraction = Fraction(1)
    alpha_min: Fraction = Fraction(1, 4)
    alpha_max: Fraction = Fraction(4)
    alpha_step: Fraction = Fraction(1, 4)
    modes: Sequence[Mode] = MODE_ORDER
    seed: int = 0
    out: Optional[Path] = None
    topology: Optional[str] = None  # template text with L / aL latencies

    def validate(self) -> None:
        if self.alpha_step <= 0:
            raise InvalidRange("alpha step must be positive")
        if self.alpha_min > self.alpha_max:
            raise InvalidRange("alpha min exceeds alpha max")
        if self.alpha_min < 0:
            raise InvalidRange("alpha must be non-negative")
        if self.L <= 0:
            raise InvalidRange("L must be positive")

    def alphas(self) -> list[Fraction]:
        n = int((self.alpha_max - self.alpha_min) / self.alpha_step)
        return [self.alpha_min + i * self.alpha_step for i in range(n + 1)]


def eval_rows(config: EvalConfig) -> list[tuple[Fraction, Mode, Fraction]]:
    """(alpha, mode, delay / L) for every grid point, in (alpha, mode) order."""
    config.validate()
    wanted = [m for m in MODE_ORDER if m in set(config.modes)]
    rows = []
    for alpha in config.alphas():
        topo = parse_topology(config.topology, config.L, alpha) if config.topology else None
        for mode in wanted:
            rows.append((alpha, mode, first_byte_delay(mode, config.L, alpha, config.seed, topo) / config.L))
    return rows


def format_csv(rows: Sequence[tuple[Fraction, Mode, Fraction]]) -> str:
    lines = ["alpha,mode,delay_over_L"]
    lines += [f"{float(a):g},{m.value},{float(d)!r}" for a, m, d in rows]
    return "\n".join(lines) + "\n"


def cmd_eval(config: EvalConfig) -> str:
    text = format_csv(eval_rows(config))
    if config.out is not None:
        try:
            Path(config.out).write_text(text, newline="\n")
        except OSError as exc:
            raise WriteFailure(f"cannot write {config.out}: {exc}") from exc
    return text


# --- demos ----------------------------------------------------------------------------


def _fp(secret: bytes) -> str:
    return hashlib.sha256(b"fingerprint" + secret).hexdigest()[:16]


def _check(ok: bool, what: str) -> None:
    if not ok:
        raise ScenarioFailed(what)


def _print_handshake(sim: Simulation, out: Callable[[str], None], at: set[str]) -> None:
    for ev in sim.trace.events:
        if ev.kind is EventKind.DELIVER and ev.msg_type in HANDSHAKE_TYPES and ev.dst in at:
            out(f"  t={format_ms(ev.time)}ms {ev.msg_type:<9} arrives at {ev.dst}")


def demo_handshake(seed: int, out: Callable[[str], None]) -> None:
    sim = Simulation(Topology.chain(1, 1), Scenario.single(Mode.DIRECT), seed)
    trace = sim.run()
    _check(not trace.failures, f"failures: {trace.failures}")
    _print_handshake(sim, out, {"sub", "tp"})
    (flow,) = sim.apps["sub"].endpoint.flows.values()
    _check(flow.established, "subscriber did not reach Established")
    theirs = sim.publisher.sessions[flow.session.wire_name]
    _check(flow.session.keys == theirs.keys, "key schedules differ")
    _check(b"".join(flow.received) == DEFAULT_CONTENT, "content mismatch")
    out(f"Established: subscriber {flow.session.keys.fingerprint()} publisher {theirs.keys.fingerprint()}")


def _group(seed: int, members: Sequence[str]) -> tuple[dict, dict[str, TrustedPublisher]]:
    rng = rng_from_seed(seed)
    owner = OwnerKeyPair.generate("owner", rng)
    key = KeyPair.generate("tp", rng)
    cert = issue_certificate(owner, key.public_key, [("movies",)], (EPOCH - 3600, EPOCH + 86400))
    keygen = KeyGenerator.create(members, EPOCH, rng)
    pubs = {m: TrustedPublisher(m, key, cert, content={DEFAULT_NAME.prefix: DEFAULT_CONTENT}, keygen=keygen) for m in members}
    return {owner.owner_id: owner.public_key}, pubs


def demo_migrate(seed: int, out: Callable[[str], None]) -> None:
    trust, pubs = _group(seed, ["A", "B"])
    rng = rng_from_seed(seed + 1)
    outsider = TrustedPublisher("C", pubs["A"].keypair, pubs["A"].certificate, content=pubs["A"].content)
    sub = Subscriber("sub", trust)
    first, sent = run_direct(sub, pubs["A"], DEFAULT_NAME, EPOCH, rng)
    out(f"full handshake at A: {len([e for e in sent if type(e.payload).__name__ in HANDSHAKE_TYPES])} messages, keys {first.session.keys.fingerprint()}")
    _check(first.session.ticket is not None, "A issued no ticket")
    ticket = first.session.resumption()
    fingerprints = []
    for attempt in (1, 2):
        flow, sent = run_direct(sub, pubs["B"], DEFAULT_NAME, EPOCH + 60, rng, HandshakeConfig(ticket=ticket))
        n = len([e for e in sent if type(e.payload).__name__ in HANDSHAKE_TYPES])
        _check(flow.session is not None and flow.session.resumed and n == 2, f"resume {attempt} at B was not a 2-message resumption")
        _check(b"".join(flow.received) == DEFAULT_CONTENT, "content mismatch after resumption")
        fingerprints.append(flow.session.keys.fingerprint())
        out(f"resume {attempt} at B: {n} messages, keys {fingerprints[-1]}")
    _check(len(set(fingerprints + [first.session.keys.fingerprint()])) == 3, "resumed traffic keys repeat")
    flow, sent = run_direct(sub, outsider, DEFAULT_NAME, EPOCH + 60, rng, HandshakeConfig(ticket=ticket))
    n = len([e for e in sent if type(e.payload).__name__ in HANDSHAKE_TYPES])
    _check(flow.session is not None and not flow.session.resumed and n == 4, "non-member did not fall back")
    out(f"resume at non-member C: fell back to full handshake ({n} messages)")


def demo_intercept(seed: int, out: Callable[[str], None]) -> None:
    scenario = Scenario(Mode.MIDDLEBOX, [], middlebox_cached=False)
    scenario.actions = [Scenario.single(Mode.MIDDLEBOX, s).actions[0] for s in ("sub1", "sub2")]
    sim = Simulation(Topology.fan_in(1, 1), scenario, seed)
    trace = sim.run()
    _check(not trace.failures, f"failures: {trace.failures}")
    _print_handshake(sim, out, {"sub1", "sub2", "mb"})
    upstream = {e.envelope.wire_name for e in trace.deliveries("SubHello") if e.dst == "tp"}
    downstream = sim.middlebox.downstream_sessions
    _check(len(upstream) == 1, f"expected 1 upstream flow, saw {len(upstream)}")
    _check(len(downstream) == 2, f"expected 2 downstream flows, saw {len(downstream)}")
    cts = {}
    for e in trace.deliveries("DataRecord"):
        if e.dst in ("sub1", "sub2"):
            cts.setdefault(e.dst, []).append(e.envelope.payload.ciphertext)
    _check(len(cts) == 2 and cts["sub1"] != cts["sub2"], "downstream ciphertexts are not distinct")
    for s in ("sub1", "sub2"):
        (flow,) = sim.apps[s].endpoint.flows.values()
        _check(b"".join(flow.received) == DEFAULT_CONTENT, f"{s} got wrong content")
        out(f"{s}: Established via middlebox, keys {flow.session.keys.fingerprint()}")
    out(f"upstream flows: {len(upstream)}; downstream flows: {len(downstream)}; delegated signatures: {sim.publisher.stats.total()}")


def demo_compromise(seed: int, out: Callable[[str], None]) -> None:
    trust, pubs = _group(seed, ["A"])
    rng = rng_from_seed(seed + 1)
    sub = Subscriber("sub", trust)
    flow, _ = run_direct(sub, pubs["A"], DEFAULT_NAME, EPOCH, rng)
    session = flow.session
    _check(session.ticket is not None, "no ticket issued")
    stolen = pubs["A"].key_ring[0]
    recovered = compromise_demo(session.ticket, stolen)
    out(f"session master secret fingerprint:   {_fp(session.keys.master_secret)}")
    out(f"recovered with stolen ticket key:    {_fp(recovered)}")
    _check(recovered == session.keys.master_secret, "stolen ticket key did not recover the session")
    out("ticketed sessions lose forward secrecy once the ticket key leaks")


DEMOS = {
    "handshake": demo_handshake,
    "migrate": demo_migrate,
    "intercept": demo_intercept,
    "compromise": demo_compromise,
}


def cmd_demo(name: str, seed: int = 0, out: Callable[[str], None] = print) -> None:
    try:
        DEMOS[name](seed, out)
    except ScenarioFailed:
        raise
    except IcnTlsError as exc:
        raise ScenarioFailed(f"{name}: {type(exc).__name__}: {exc}") from exc
    out(f"{name}: ok")


# --- keys -----------------------------------------------------------------------------


def _write_new(path: Path, data: bytes, force: bool) -> None:
    if path.exists() and not force:
        raise FixtureExists(f"{path} exists (use --force)")
    try:
        path.write_bytes(data)
    except OSError as exc:
        raise WriteFailure(f"cannot write {path}: {exc}") from exc


def _rng(seed: Optional[int]):
    if seed is None:
        import secrets

        return secrets.token_bytes
    return rng_from_seed(seed)


def cmd_gen_owner(out: Path, owner_id: str = "owner", seed: Optional[int] = None, force: bool = False) -> OwnerKeyPair:
    owner = OwnerKeyPair.generate(owner_id, _rng(seed))
    _write_new(Path(out), owner.to_file_bytes(), force)
    return owner


def cmd_issue_cert(
    owner_key: Path,
    prefixes: Sequence[str],
    out: Path,
    publisher_key: Optional[Path] = None,
    not_before: int = EPOCH,
    not_after: int = EPOCH + 365 * 86400,
    seed: Optional[int] = None,
    force: bool = False,
):
    """Issue a certificate; a missing publisher key file is generated next to it."""
    owner_key = Path(owner_key)
    if not owner_key.exists():
        raise MissingOwnerKey(f"owner key {owner_key} not found")
    owner = OwnerKeyPair.from_file_bytes(owner_key.read_bytes())
    pub_path = Path(publisher_key) if publisher_key else Path(str(out) + ".key")
    fresh = not (publisher_key and pub_path.exists())
    pub = KeyPair.generate("publisher", _rng(seed)) if fresh else KeyPair.from_file_bytes(pub_path.read_bytes())
    # issue before touching the filesystem so a rejected request leaves nothing behind
    cert = issue_certificate(owner, pub.public_key, [make_name(p.strip("/").split("/")) for p in prefixes], (not_before, not_after))
    targets = [Path(out)] + ([pub_path] if fresh else [])
    for path in targets:
        if path.exists() and not force:
            raise FixtureExists(f"{path} exists (use --force)")
    _write_new(Path(out), cert.encode(), force)
    if fresh:
        _write_new(pub_path, pub.to_file_bytes(), force)
    return cert


# --- argparse ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # usage errors exit 3, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(3, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="icntls", description="Content-oriented TLS for ICN: simulator and tooling.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    ev = sub.add_parser("eval", help="first-byte delay grid as CSV")
    ev.add_argument("--L", type=as_fraction, default=Fraction(1), help="link latency in ms (default 1)")
    ev.add_argument("--alpha-min", type=as_fraction, default=Fraction(1, 4))
    ev.add_argument("--alpha-max", type=as_fraction, default=Fraction(4))
    ev.add_argument("--alpha-step", type=as_fraction, default=Fraction(1, 4))
    ev.add_argument("--modes", default="dummy,middlebox,direct", help="comma-separated subset of dummy,middlebox,direct")
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--out", type=Path, help="CSV path (default stdout)")
    ev.add_argument("--topology", type=Path, help="topology template; latencies may be L or aL")

    dm = sub.add_parser("demo", help="run a scripted scenario and check its invariants")
    dm.add_argument("name", choices=sorted(DEMOS))
    dm.add_argument("--seed", type=int, default=0)

    ks = sub.add_parser("keys", help="fixture key and certificate files")
    kss = ks.add_subparsers(dest="action", required=True, parser_class=_Parser)
    go = kss.add_parser("gen-owner")
    go.add_argument("--out", type=Path, required=True)
    go.add_argument("--id", default="owner")
    go.add_argument("--seed", type=int)
    go.add_argument("--force", action="store_true")
    ic = kss.add_parser("issue-cert")
    ic.add_argument("--owner-key", type=Path, required=True)
    ic.add_argument("--prefix", action="append", default=[], help="authorized prefix, repeatable")
    ic.add_argument("--publisher-key", type=Path)
    ic.add_argument("--not-before", type=int, default=EPOCH)
    ic.add_argument("--not-after", type=int, default=EPOCH + 365 * 86400)
    ic.add_argument("--out", type=Path, required=True)
    ic.add_argument("--seed", type=int)
    ic.add_argument("--force", action="store_true")
    return p


def _modes(text: str) -> list[Mode]:
    try:
        return [Mode(m.strip()) for m in text.split(",") if m.strip()]
    except ValueError as exc:
        raise InvalidRange(str(exc)) from exc


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help or a usage error
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        if args.command == "eval":
            template = None
            if args.topology:
                try:
                    template = args.topology.read_text()
                except OSError as exc:
                    raise InvalidRange(f"cannot read topology: {exc}") from exc
            config = EvalConfig(args.L, args.alpha_min, args.alpha_max, args.alpha_step, _modes(args.modes), args.seed, args.out, template)
            text = cmd_eval(config)
            if args.out is None:
                sys.stdout.write(text)
        elif args.command == "demo":
            cmd_demo(args.name, args.seed)
        elif args.action == "gen-owner":
            owner = cmd_gen_owner(args.out, args.id, args.seed, args.force)
            print(f"wrote {args.out} (owner {owner.owner_id})")
        else:
            cert = cmd_issue_cert(args.owner_key, args.prefix, args.out, args.publisher_key, args.not_before, args.not_after, args.seed, args.force)
            print(f"wrote {args.out} ({len(cert.authorized_prefixes)} prefixes)")
    except ScenarioFailed as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return exc.exit_code
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except IcnTlsError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
