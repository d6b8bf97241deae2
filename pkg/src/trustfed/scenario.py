"""Text scenarios: parsing and deterministic execution.

A scenario is a plain-text script, one directive per line, in the form
``verb key=value ...``. Directives declare entities (nodes, providers,
citizens, certificates, participants, accounts) and then act on them
(authenticate, sign, validate, send, share, ingest, donate) with optional
``expect=`` outcome assertions. Directives may only reference entities
declared on earlier lines.

Execution is deterministic: one seeded generator drives identity synthesis,
payloads, key generation, and the transport, so a (scenario, seed) pair
always produces the same event-log digest.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

from . import delivery, health, network, trust
from .dates import SimDate
from .errors import InvariantViolation, ParseError, SimulationError
from .registry import AssuranceLevel, AttributeKind, FederationRegistry, bundled_registry


class ForwardReference(ParseError):
    """A directive references an entity declared later (or never)."""


class AssertionFailure(SimulationError):
    """A directive's expectation or an assert directive failed."""

    def __init__(self, message: str, directive_index: int):
        super().__init__(f"directive {directive_index}: {message}")
        self.directive_index = directive_index


@dataclass(frozen=True)
class Directive:
    verb: str
    args: dict[str, str]
    line: int
    index: int

    def get(self, key: str, default: Optional[str] = None) -> Optional[str]:
        return self.args.get(key, default)

    def require(self, key: str) -> str:
        try:
            return self.args[key]
        except KeyError:
            raise ParseError(f"{self.verb}: missing required key {key}=", self.line) from None


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    clock: SimDate
    directives: tuple[Directive, ...]


# Which verb declares into which namespace, and which keys must be present.
_DECLARING_VERBS = {
    "node": "nodes",
    "sp": "sps",
    "citizen": "citizens",
    "tsp": "tsps",
    "device": "devices",
    "certificate": "certs",
    "tsa": "tsas",
    "document": "docs",
    "tamper": "docs",
    "participant": "participants",
    "platform": "platforms",
    "account": "accounts",
    "record": "records",
    "hcp": "sources",
    "ncp": "sources",
    "sign": "sigs",
    "authenticate": "flows",
    "send": "batches",
    "ingest": "jobs",
    "ncp-fetch": "jobs",
    "donate": "donations",
    "share": "grants",
}

_REQUIRED_KEYS = {
    "node": ("state",),
    "sp": ("id", "state"),
    "citizen": ("id", "state"),
    "tsp": ("id", "state"),
    "device": ("id",),
    "certificate": ("id", "tsp", "subject", "from", "to"),
    "tsa": ("id",),
    "document": ("id",),
    "tamper": ("id", "document"),
    "participant": ("id", "tsp"),
    "platform": ("id",),
    "account": ("id", "email", "phone"),
    "record": ("id", "account"),
    "hcp": ("id",),
    "ncp": ("id", "participant"),
    "sign": ("id", "document", "certificate", "device", "on"),
    "authenticate": ("id", "sp", "citizen"),
    "send": ("id", "from", "to", "count"),
    "ingest": ("id", "account"),
    "ncp-fetch": ("id", "ncp", "account"),
    "donate": ("id", "account", "record", "consent"),
    "share": ("id", "owner", "grantee", "mode"),
    "extend": ("signature", "tsa", "on"),
    "validate": ("signature", "document", "at", "expect"),
    "classify": ("signature", "expect"),
    "transport": (),
    "assert": ("kind",),
}

# References each verb may carry: key -> namespace that must already hold it.
_REFERENCE_KEYS = {
    "authenticate": {"sp": "sps", "citizen": "citizens"},
    "certificate": {"tsp": "tsps"},
    "sign": {"document": "docs", "certificate": "certs", "device": "devices"},
    "extend": {"signature": "sigs", "tsa": "tsas"},
    "validate": {"signature": "sigs", "document": "docs"},
    "classify": {"signature": "sigs", "device": "devices"},
    "tamper": {"document": "docs"},
    "participant": {"tsp": "tsps"},
    "send": {"from": "participants", "to": "participants"},
    "account": {"eid": "flows"},
    "record": {"account": "accounts"},
    "share": {"owner": "accounts", "grantee": "accounts"},
    "ingest": {"source": "sources", "account": "accounts", "document": "docs", "seal": "sigs", "job": "jobs"},
    "donate": {"account": "accounts", "record": "records"},
    "ncp": {"participant": "participants"},
    "ncp-fetch": {"ncp": "sources", "account": "accounts"},
}

# Health-platform verbs demand a platform declared first.
_NEEDS_PLATFORM = {"account", "record", "hcp", "ncp", "share", "ingest", "donate", "ncp-fetch"}


def parse_scenario(text: str) -> Scenario:
    """Parse scenario text; empty input yields a runnable no-op scenario."""
    name = "empty"
    seed = 0
    clock = SimDate(2019, 6, 1)
    directives: list[Directive] = []
    declared: dict[str, set[str]] = {ns: set() for ns in set(_DECLARING_VERBS.values())}
    saw_header = False

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        verb = tokens[0]
        args: dict[str, str] = {}
        for token in tokens[1:]:
            if "=" not in token:
                raise ParseError(f"expected key=value, got {token!r}", lineno)
            key, _, value = token.partition("=")
            args[key] = value

        if verb == "scenario":
            if saw_header:
                raise ParseError("duplicate scenario header", lineno)
            saw_header = True
            name = args.get("name", "unnamed")
            seed = int(args.get("seed", "0"))
            if "clock" in args:
                clock = SimDate.parse(args["clock"])
            continue

        if verb not in _REQUIRED_KEYS:
            raise ParseError(f"unknown directive {verb!r}", lineno)
        if not saw_header:
            raise ParseError("scenario header must come first", lineno)
        for key in _REQUIRED_KEYS[verb]:
            if key not in args:
                raise ParseError(f"{verb}: missing required key {key}=", lineno)

        for key, namespace in _REFERENCE_KEYS.get(verb, {}).items():
            value = args.get(key)
            if value is not None and value not in declared[namespace]:
                raise ForwardReference(f"{verb}: {key}={value} is not declared yet", lineno)
        if verb == "donate" and ":" in args["consent"]:
            sig_id, _, device_id = args["consent"].partition(":")
            if sig_id not in declared["sigs"]:
                raise ForwardReference(f"donate: consent signature {sig_id} not declared", lineno)
            if device_id not in declared["devices"]:
                raise ForwardReference(f"donate: consent device {device_id} not declared", lineno)
        if verb == "assert" and args.get("batch") is not None:
            if args["batch"] not in declared["batches"]:
                raise ForwardReference(f"assert: batch={args['batch']} is not declared yet", lineno)
        if verb in _NEEDS_PLATFORM and not declared["platforms"]:
            raise ForwardReference(f"{verb}: no platform declared yet", lineno)

        if verb in _DECLARING_VERBS:
            key = "state" if verb == "node" else "id"
            declared[_DECLARING_VERBS[verb]].add(args[key])
        directives.append(Directive(verb, args, lineno, len(directives)))

    return Scenario(name, seed, clock, tuple(directives))


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


@dataclass
class DirectiveOutcome:
    index: int
    verb: str
    ok: bool
    detail: str


@dataclass
class RunReport:
    scenario: str
    seed: int
    outcomes: list[DirectiveOutcome] = field(default_factory=list)
    checks: list[CheckResult] = field(default_factory=list)
    evidence_counts: dict[str, int] = field(default_factory=dict)
    log: list[str] = field(default_factory=list)
    log_digest: str = ""

    @property
    def passed(self) -> bool:
        return all(o.ok for o in self.outcomes) and all(c.passed for c in self.checks)

    def to_json(self) -> str:
        return json.dumps(
            {
                "scenario": self.scenario,
                "seed": self.seed,
                "passed": self.passed,
                "outcomes": [
                    {"index": o.index, "verb": o.verb, "ok": o.ok, "detail": o.detail}
                    for o in self.outcomes
                ],
                "checks": [
                    {"name": c.name, "passed": c.passed, "detail": c.detail} for c in self.checks
                ],
                "evidence_counts": self.evidence_counts,
                "log_digest": self.log_digest,
            },
            indent=2,
        )

    def summary_lines(self) -> list[str]:
        lines = [f"scenario {self.scenario} (seed {self.seed})"]
        for o in self.outcomes:
            mark = "ok " if o.ok else "FAIL"
            lines.append(f"  [{mark}] #{o.index} {o.verb}: {o.detail}")
        for c in self.checks:
            mark = "ok " if c.passed else "FAIL"
            lines.append(f"  [{mark}] check {c.name}: {c.detail}")
        lines.append(f"  digest {self.log_digest}")
        lines.append(f"  result {'PASS' if self.passed else 'FAIL'}")
        return lines


_GIVEN_NAMES = ("ana", "piet", "carla", "timo", "lena", "marco", "sofia", "jonas")
_FAMILY_NAMES = ("weber", "rossi", "peeters", "silva", "devries", "muller", "dube", "klein")


class ScenarioRunner:
    """Executes one parsed scenario against a registry; collects a RunReport."""

    def __init__(
        self,
        scenario: Scenario,
        registry: Optional[FederationRegistry] = None,
        *,
        seed: Optional[int] = None,
        strict_recognition: bool = False,
    ) -> None:
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else seed
        self.registry = (registry if registry is not None else bundled_registry()).with_clock(
            scenario.clock
        )
        self.clock = scenario.clock
        self.strict = strict_recognition
        self.rng = random.Random(self.seed)
        self.provider = trust.Ed25519Provider(entropy=self.rng.randbytes)
        self.trusted_list = trust.TrustedList()
        self.report = RunReport(scenario.name, self.seed)

        self.nodes: dict[str, network.EidasNode] = {}
        self.sps: dict[str, network.ServiceProvider] = {}
        self.citizens: dict[str, network.Citizen] = {}
        self.devices: dict[str, trust.CreationDevice] = {}
        self.certs: dict[str, trust.Certificate] = {}
        self.keys: dict[str, trust.KeyPair] = {}
        self.tsas: dict[str, trust.TimestampAuthority] = {}
        self.docs: dict[str, bytes] = {}
        self.sigs: dict[str, trust.Signature] = {}
        self.flows: dict[str, network.AuthResult] = {}
        self.accounts: dict[str, health.CitizenAccount] = {}
        self.records: dict[str, tuple[str, health.HealthRecord]] = {}  # id -> (account, record)
        self.jobs: dict[str, health.IngestionJob] = {}
        self.batches: dict[str, list[str]] = {}
        self.markers: list[bytes] = []
        self.donors: dict[int, str] = {}  # research-store index -> account id

        self.platform: Optional[health.HealthPlatform] = None
        self.network: Optional[delivery.DeliveryNetwork] = None
        self._pending_transport: Optional[delivery.TransportConfig] = None
        self._net_log_mark = 0
        self._platform_log_mark = 0

    # -- helpers ---------------------------------------------------------------

    def _emit(self, line: str) -> None:
        self.report.log.append(line)

    def _drain_component_logs(self) -> None:
        if self.network is not None:
            self.report.log.extend(self.network.log[self._net_log_mark :])
            self._net_log_mark = len(self.network.log)
        if self.platform is not None:
            self.report.log.extend(self.platform.events[self._platform_log_mark :])
            self._platform_log_mark = len(self.platform.events)

    def _outcome(self, d: Directive, ok: bool, detail: str) -> None:
        self.report.outcomes.append(DirectiveOutcome(d.index, d.verb, ok, detail))
        self._emit(f"directive;{d.index};{d.verb};{'ok' if ok else 'fail'};{detail}")

    def _expected(self, d: Directive, got: str, default_expect: str) -> None:
        want = d.get("expect", default_expect)
        assert want is not None
        ok = got == want or got.startswith(want + ":")
        self._outcome(d, ok, f"expected {want}, got {got}")

    def _require_network(self) -> delivery.DeliveryNetwork:
        if self.network is None:
            config = self._pending_transport or delivery.TransportConfig(seed=self.seed)
            self.network = delivery.DeliveryNetwork(
                self.trusted_list,
                config,
                qualified=True,
                provider=self.provider,
                sim_date=self.clock,
            )
        return self.network

    def _require_platform(self) -> health.HealthPlatform:
        if self.platform is None:
            raise SimulationError("no platform declared")
        return self.platform

    def _make_identity(self, state: str) -> network.PersonIdentity:
        rng = self.rng
        fam = f"{rng.choice(_FAMILY_NAMES)}-{rng.randrange(16**6):06x}"
        giv = f"{rng.choice(_GIVEN_NAMES)}-{rng.randrange(16**6):06x}"
        dob = SimDate(1950 + rng.randrange(50), 1 + rng.randrange(12), 1 + rng.randrange(28))
        return network.PersonIdentity(
            family_name=fam,
            first_name=giv,
            date_of_birth=dob,
            unique_identifier=f"{state}-uid-{rng.randrange(16**10):010x}",
            birth_name=f"birth-{fam}",
            place_of_birth=f"city-{rng.randrange(16**4):04x}",
            current_address=f"street-{rng.randrange(16**4):04x}-{state}",
            gender=rng.choice(("f", "m", "x")),
        )

    @staticmethod
    def _parse_attr_list(value: Optional[str]) -> frozenset[AttributeKind]:
        if not value:
            return frozenset()
        return frozenset(AttributeKind.from_code(code) for code in value.split(","))

    # -- execution ----------------------------------------------------------------

    def run(self, *, raise_on_failure: bool = False) -> RunReport:
        for directive in self.scenario.directives:
            handler = getattr(self, "_run_" + directive.verb.replace("-", "_"))
            handler(directive)
            self._drain_component_logs()
        if self.network is not None:
            counts: dict[str, int] = {}
            for ev in self.network.evidence:
                counts[ev.kind.value] = counts.get(ev.kind.value, 0) + 1
            self.report.evidence_counts = counts
        self.report.log_digest = hashlib.sha256("\n".join(self.report.log).encode()).hexdigest()
        if raise_on_failure and not self.report.passed:
            first = next(
                (o.index for o in self.report.outcomes if not o.ok),
                next((i for i, c in enumerate(self.report.checks) if not c.passed), -1),
            )
            raise AssertionFailure("expectation failed", first)
        return self.report

    # -- declarations ---------------------------------------------------------------

    def _run_node(self, d: Directive) -> None:
        state = d.require("state")
        kind = (
            network.NodeKind.MIDDLEWARE_BASED
            if d.get("kind", "proxy") == "middleware"
            else network.NodeKind.PROXY_BASED
        )
        self.nodes[state] = network.EidasNode(state, kind)
        self._emit(f"declare;node;{state};{kind.value}")

    def _run_sp(self, d: Directive) -> None:
        sp = network.ServiceProvider(
            sp_id=d.require("id"),
            home_state=d.require("state"),
            requested_attributes=self._parse_attr_list(d.get("request")),
            required_loa=AssuranceLevel.parse(d.get("loa", "substantial")),
            sector=network.Sector(d.get("sector", "non-public")),
            hard_required=self._parse_attr_list(d.get("require")),
        )
        self.sps[sp.sp_id] = sp
        self._emit(f"declare;sp;{sp.sp_id};{sp.home_state}")

    def _run_citizen(self, d: Directive) -> None:
        cid = d.require("id")
        state = d.require("state")
        self.citizens[cid] = network.Citizen(
            citizen_id=cid,
            origin=state,
            identity=self._make_identity(state),
            credential=f"cred-{self.rng.randrange(16**8):08x}",
        )
        self._emit(f"declare;citizen;{cid};{state}")

    def _run_tsp(self, d: Directive) -> None:
        tsp_id = d.require("id")
        self.trusted_list.register_tsp(tsp_id, d.require("state"), d.get("qualified", "true") == "true")
        self._emit(f"declare;tsp;{tsp_id};qualified={d.get('qualified', 'true')}")

    def _run_device(self, d: Directive) -> None:
        device_id = d.require("id")
        self.devices[device_id] = trust.CreationDevice(
            device_id, d.get("qualified", "false") == "true"
        )
        self._emit(f"declare;device;{device_id};")

    def _run_certificate(self, d: Directive) -> None:
        cert_id = d.require("id")
        keypair = self.provider.generate_keypair()
        subject_kind = (
            trust.SubjectKind.LEGAL_PERSON
            if d.get("subject-kind", "natural") == "legal"
            else trust.SubjectKind.NATURAL_PERSON
        )
        kind = (
            trust.CertificateKind.FOR_SEAL
            if d.get("kind", "signature") == "seal"
            else trust.CertificateKind.FOR_SIGNATURE
        )
        certificate = trust.issue_certificate(
            self.trusted_list,
            d.require("tsp"),
            trust.Subject(subject_kind, d.require("subject")),
            kind,
            (SimDate.parse(d.require("from")), SimDate.parse(d.require("to"))),
            qualified_requested=d.get("qualified", "false") == "true",
            keypair=keypair,
        )
        self.certs[cert_id] = certificate
        self.keys[cert_id] = keypair
        self._emit(f"declare;certificate;{cert_id};{certificate.serial}")

    def _run_tsa(self, d: Directive) -> None:
        tsa_id = d.require("id")
        self.tsas[tsa_id] = trust.TimestampAuthority(
            tsa_id,
            d.get("qualified", "true") == "true",
            int(d.get("lifetime-months", "60")),
        )
        self._emit(f"declare;tsa;{tsa_id};")

    def _run_document(self, d: Directive) -> None:
        doc_id = d.require("id")
        if "text" in d.args:
            payload = d.args["text"].encode()
        else:
            payload = self.rng.randbytes(int(d.get("size", "64")) // 2).hex().encode()
        self.docs[doc_id] = payload
        self._emit(f"declare;document;{doc_id};bytes={len(payload)}")

    def _run_tamper(self, d: Directive) -> None:
        source = self.docs[d.require("document")]
        mutated = bytearray(source)
        mutated[len(mutated) // 2] ^= 0x01
        self.docs[d.require("id")] = bytes(mutated)
        self._emit(f"declare;tamper;{d.require('id')};from={d.require('document')}")

    def _run_participant(self, d: Directive) -> None:
        pid = d.require("id")
        self._require_network().register_participant(pid, d.require("tsp"))
        self._emit(f"declare;participant;{pid};")

    def _run_platform(self, d: Directive) -> None:
        self.platform = health.HealthPlatform(
            trusted_list=self.trusted_list,
            provider=self.provider,
            rng=self.rng,
            clock=self.clock,
            seal_policy=health.SealPolicy(d.get("seal-policy", "store-with-warning")),
            async_requires_validated_grantee=d.get("async-validation", "true") == "true",
            age_gate=d.get("age-gate", "false") == "true",
        )
        self._emit(f"declare;platform;{d.require('id')};")

    def _run_hcp(self, d: Directive) -> None:
        self._require_platform().register_source(d.require("id"), "hcp")
        self._emit(f"declare;hcp;{d.require('id')};")

    def _run_ncp(self, d: Directive) -> None:
        self._require_platform().register_source(d.require("id"), "ncp")
        self._emit(f"declare;ncp;{d.require('id')};participant={d.require('participant')}")

    # -- actions -------------------------------------------------------------------

    def _run_authenticate(self, d: Directive) -> None:
        sp = self.sps[d.require("sp")]
        citizen = self.citizens[d.require("citizen")]
        policy = (
            network.RecognitionPolicy.STRICT
            if d.get("policy", "strict" if self.strict else "lenient") == "strict"
            else network.RecognitionPolicy.LENIENT
        )
        presented = None
        if d.get("credential") == "wrong":
            presented = "not-" + citizen.credential
        result = network.run_full_flow(
            self.registry,
            self.nodes,
            sp,
            citizen,
            self.clock,
            policy=policy,
            presented_credential=presented,
            correlation_id=f"corr-{d.require('id')}",
        )
        self.flows[d.require("id")] = result
        for entry in result.trace:
            self._emit(entry.line())
        got = "success" if result.success else (result.failure_reason or "failure")
        steps = d.get("expect-steps")
        if steps is not None and len(result.trace) != int(steps):
            self._outcome(d, False, f"expected {steps} trace steps, got {len(result.trace)}")
            return
        self._expected(d, got, "success")

    def _run_sign(self, d: Directive) -> None:
        sig_id = d.require("id")
        kind = (
            trust.CertificateKind.FOR_SEAL
            if d.get("kind", "signature") == "seal"
            else trust.CertificateKind.FOR_SIGNATURE
        )
        cert_ref = d.require("certificate")
        try:
            signature = trust.sign(
                self.docs[d.require("document")],
                self.keys[cert_ref],
                self.certs[cert_ref],
                self.devices[d.require("device")],
                SimDate.parse(d.require("on")),
                self.provider,
                kind=kind,
            )
            self.sigs[sig_id] = signature
            self._expected(d, "ok", "ok")
        except SimulationError as exc:
            self._expected(d, type(exc).__name__, "ok")

    def _run_extend(self, d: Directive) -> None:
        sig_ref = d.require("signature")
        try:
            self.sigs[sig_ref] = trust.extend(
                self.sigs[sig_ref],
                self.tsas[d.require("tsa")],
                SimDate.parse(d.require("on")),
                self.trusted_list,
            )
            self._expected(d, "ok", "ok")
        except SimulationError as exc:
            self._expected(d, type(exc).__name__, "ok")

    def _run_validate(self, d: Directive) -> None:
        verdict = trust.validate(
            self.docs[d.require("document")],
            self.sigs[d.require("signature")],
            self.trusted_list,
            SimDate.parse(d.require("at")),
            self.provider,
        )
        detail = verdict.status.value + (f":{verdict.reason}" if verdict.reason else "")
        self._emit(f"validate;{d.require('signature')};{detail};;")
        self._expected(d, verdict.status.value, d.require("expect"))

    def _run_classify(self, d: Directive) -> None:
        level = trust.classify_level(
            self.sigs[d.require("signature")],
            device=self.devices[d.require("device")] if d.get("device") else None,
            trusted_list=self.trusted_list,
        )
        self._expected(d, level.value, d.require("expect"))

    def _run_transport(self, d: Directive) -> None:
        delay = d.get("delay", "1:20")
        delay_min, _, delay_max = delay.partition(":")
        windows: list[tuple[int, int]] = []
        if d.get("downtime"):
            for span in d.args["downtime"].split(","):
                start, _, end = span.partition(":")
                windows.append((int(start), int(end)))
        config = delivery.TransportConfig(
            loss_probability=float(d.get("loss", "0")),
            duplication_probability=float(d.get("dup", "0")),
            tamper_probability=float(d.get("tamper", "0")),
            delay_min_ms=int(delay_min),
            delay_max_ms=int(delay_max or delay_min),
            seed=int(d.get("seed", str(self.seed))),
            downtime_windows=tuple(windows),
            max_retries=int(d.get("max-retries", "16")),
        )
        if self.network is None:
            self._pending_transport = config
        else:
            self.network.set_transport(config)
        self._emit(f"declare;transport;loss={config.loss_probability};dup={config.duplication_probability}")

    def _run_send(self, d: Directive) -> None:
        net = self._require_network()
        count = int(d.require("count"))
        size = int(d.get("size", "64"))
        ids = []
        for i in range(count):
            payload = self.rng.randbytes(size // 2).hex().encode()
            message_id, _ = net.submit(d.require("from"), d.require("to"), payload, at_ms=i)
            ids.append(message_id)
        net.run_transport()
        self.batches[d.require("id")] = ids
        delivered = sum(
            1 for mid in ids if net.status(mid).status == delivery.DeliveryStatus.DELIVERED
        )
        self._outcome(d, True, f"submitted {count}, delivered {delivered}")

    def _run_share(self, d: Directive) -> None:
        platform = self._require_platform()
        owner = self.accounts[d.require("owner")]
        grantee = self.accounts[d.require("grantee")]
        mode = {
            "in-person": health.ShareMode.IN_PERSON,
            "remote-live": health.ShareMode.REMOTE_LIVE,
            "async": health.ShareMode.ASYNCHRONOUS,
        }[d.get("mode", "in-person")]
        records = frozenset(range(platform.record_count(owner.account_id)))
        channel = health.InMemoryPinChannel()
        try:
            handshake = platform.initiate_share(owner, grantee.account_id, mode, records, channel)
            pin = channel.collect()
            if d.get("pin") == "wrong":
                pin = str((int(pin[0]) + 1) % 10) + pin[1:]
            at = platform.now_ms + int(d.get("delay-ms", "0"))
            platform.confirm_share(handshake, pin, at_ms=at)
            grantee.shared_keys[owner.account_id] = owner.client_key
            self._expected(d, "granted", "granted")
        except SimulationError as exc:
            self._expected(d, type(exc).__name__, "granted")

    def _run_account(self, d: Directive) -> None:
        platform = self._require_platform()
        eid_ref = d.get("eid")
        try:
            account = platform.register_citizen(
                d.require("email"),
                d.require("phone"),
                self.flows[eid_ref] if eid_ref else None,
            )
            self.accounts[d.require("id")] = account
            self._expected(d, "ok", "ok")
        except SimulationError as exc:
            self._expected(d, type(exc).__name__, "ok")

    def _run_record(self, d: Directive) -> None:
        platform = self._require_platform()
        account = self.accounts[d.require("account")]
        payload = self.rng.randbytes(int(d.get("size", "64")) // 2).hex().encode()
        marker_count = int(d.get("markers", "0"))
        for _ in range(marker_count):
            marker = self.rng.randbytes(32)
            self.markers.append(marker)
            position = self.rng.randrange(len(payload) + 1)
            payload = payload[:position] + marker + payload[position:]
        if d.get("embed") == "identity" and account.identity is not None:
            values = ";".join(sorted(account.identity.mds_values().values()))
            payload += b";" + values.encode() + b";" + account.email.encode()
        record = health.HealthRecord(d.get("type", "note"), payload)
        platform.upload_record(account, record)
        self.records[d.require("id")] = (account.account_id, record)
        self._outcome(d, True, f"stored for {account.account_id}")

    def _run_ingest(self, d: Directive) -> None:
        platform = self._require_platform()
        account = self.accounts[d.require("account")]
        job_ref = d.get("job")
        if job_ref is not None:
            job = self.jobs[job_ref]
        else:
            job = platform.create_job(
                d.require("source"),
                account.account_id,
                d.get("type", "report"),
                self.docs[d.require("document")],
                seal=self.sigs[d.args["seal"]] if d.get("seal") else None,
            )
        try:
            job = platform.ingest(job, account)
            self.jobs[d.require("id")] = job
            got = "stored" if job.stage == health.IngestionStage.STORED else "rejected"
            self._expected(d, got, "stored")
        except SimulationError as exc:
            self._expected(d, type(exc).__name__, "stored")

    def _run_donate(self, d: Directive) -> None:
        platform = self._require_platform()
        account = self.accounts[d.require("account")]
        _, record = self.records[d.require("record")]
        consent_ref = d.require("consent")
        consent: Optional[health.DonationConsent]
        if consent_ref == "none":
            consent = None
        elif consent_ref == "assent":
            consent = health.DonationConsent(
                assent=trust.AssentRecord("checkbox", "donation-consent", account.account_id, self.clock)
            )
        else:
            sig_id, _, device_id = consent_ref.partition(":")
            consent = health.DonationConsent(
                signature=self.sigs[sig_id],
                device=self.devices[device_id] if device_id else None,
            )
        try:
            platform.donate(account, record, consent)
            self.donors[len(platform.research_store) - 1] = account.account_id
            self._expected(d, "ok", "ok")
        except SimulationError as exc:
            self._expected(d, type(exc).__name__, "ok")

    def _run_ncp_fetch(self, d: Directive) -> None:
        platform = self._require_platform()
        account = self.accounts[d.require("account")]
        try:
            job = platform.ncp_fetch(d.require("ncp"), account, self._require_network())
            self.jobs[d.require("id")] = job
            self._expected(d, "ok", "ok")
        except SimulationError as exc:
            self._expected(d, type(exc).__name__, "ok")

    # -- assertions -------------------------------------------------------------

    def _run_assert(self, d: Directive) -> None:
        kind = d.require("kind")
        if kind == "exactly-once":
            problems = delivery.audit_delivery(self._require_network())
            self.report.checks.append(
                CheckResult("exactly-once", not problems, problems[0] if problems else "clean audit")
            )
        elif kind == "evidence":
            net = self._require_network()
            ids = self.batches.get(d.get("batch", ""), net.message_ids())
            bad = []
            for mid in ids:
                if net.status(mid).status != delivery.DeliveryStatus.DELIVERED:
                    continue
                kinds = sorted(e.kind.value for e in net.evidence_for(mid))
                if kinds != ["proof-of-receiving", "proof-of-sending"]:
                    bad.append(mid)
            self.report.checks.append(
                CheckResult(
                    "evidence",
                    not bad,
                    f"{len(ids)} messages" if not bad else f"incomplete pair for {bad[0]}",
                )
            )
        elif kind == "zero-leakage":
            dump = self._require_platform().dump_store()
            found = health.scan_for_markers(dump, self.markers)
            self.report.checks.append(
                CheckResult(
                    "zero-leakage",
                    not found,
                    f"{len(self.markers)} markers scanned, {len(found)} leaked",
                )
            )
        elif kind == "donation-hygiene":
            problems = []
            platform = self._require_platform()
            for index, donation in enumerate(platform.research_store):
                donor_id = self.donors.get(index)
                if donor_id is None:
                    continue
                account = next(
                    a for a in self.accounts.values() if a.account_id == donor_id
                )
                values = list(account.identity.mds_values().values()) if account.identity else []
                values += [account.email, account.phone]
                for value in values:
                    if value and value.encode() in donation.document.payload:
                        problems.append(f"donation {index} leaks a donor value")
            self.report.checks.append(
                CheckResult(
                    "donation-hygiene",
                    not problems,
                    problems[0] if problems else f"{len(platform.research_store)} donations clean",
                )
            )
        else:
            raise SimulationError(f"unknown assert kind {kind!r}")
        self._emit(f"assert;{kind};{'pass' if self.report.checks[-1].passed else 'fail'};;")


def run_scenario(
    scenario: Scenario,
    registry: Optional[FederationRegistry] = None,
    *,
    seed: Optional[int] = None,
    strict_recognition: bool = False,
    raise_on_failure: bool = False,
) -> RunReport:
    runner = ScenarioRunner(
        scenario, registry, seed=seed, strict_recognition=strict_recognition
    )
    return runner.run(raise_on_failure=raise_on_failure)


def bundled_scenario_names() -> list[str]:
    root = resources.files("trustfed.data").joinpath("scenarios")
    return sorted(p.name[: -len(".scn")] for p in root.iterdir() if p.name.endswith(".scn"))


def load_bundled_scenario(name: str) -> Scenario:
    path = resources.files("trustfed.data").joinpath("scenarios").joinpath(f"{name}.scn")
    return parse_scenario(path.read_text("utf-8"))
