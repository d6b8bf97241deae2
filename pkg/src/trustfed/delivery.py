"""Registered delivery over a four-corner topology with dynamic discovery.

Backends hand messages to their access point; access points locate each
other through the metadata locator/publisher pair, exchange signed
envelopes over an adversarial transport (loss, duplication, corruption,
receiver downtime), and issue proof-of-sending / proof-of-receiving
evidence. The receiving side deduplicates by message id, so every message
reaches the addressee's inbox at most once, and exactly once when delivery
succeeds; corrupted envelopes are rejected with a change-indication record.

The transport is a single-threaded discrete-event engine on a logical
millisecond clock. All randomness flows through one seeded generator, so a
(config, scenario) pair always produces a bitwise-identical event log.
"""

from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Optional

from . import trust
from .dates import SimDate
from .errors import InvariantViolation, SimulationError


class DuplicateParticipant(SimulationError):
    """Participant id already registered with the locator."""


class ParticipantNotFound(SimulationError):
    """No metadata record for the requested participant."""


class AddresseeUnknown(SimulationError):
    """Submission addressed to a participant the locator cannot resolve."""


MAX_RETRIES_EXCEEDED = "MaxRetriesExceeded"


class EvidenceKind(Enum):
    PROOF_OF_SENDING = "proof-of-sending"
    PROOF_OF_RECEIVING = "proof-of-receiving"
    CHANGE_INDICATION = "change-indication"


@dataclass(frozen=True)
class Evidence:
    kind: EvidenceKind
    message_id: str
    timestamp_ms: int
    qualified: bool
    issuing_access_point: str


@dataclass(frozen=True)
class Message:
    message_id: str
    sender: str
    addressee: str
    payload: bytes
    envelope: trust.Signature
    encrypted: bool
    submitted_at_ms: int


@dataclass
class Participant:
    participant_id: str
    access_point_id: str
    inbox: list[Message] = field(default_factory=list)
    outbox: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class SmpRecord:
    """Metadata publisher entry for one participant."""

    participant_id: str
    access_point_address: str
    protocols: tuple[str, ...]
    certificate_serial: str


class DiscoveryService:
    """Locator plus publishers: participant id -> publisher -> metadata record."""

    def __init__(self) -> None:
        self.locator: dict[str, str] = {}  # participant id -> publisher address
        self.publishers: dict[str, dict[str, SmpRecord]] = {}

    def resolve(self, participant_id: str) -> SmpRecord:
        try:
            publisher = self.locator[participant_id]
            return self.publishers[publisher][participant_id]
        except KeyError:
            raise ParticipantNotFound(f"participant {participant_id!r} not registered") from None


def register_participant(
    discovery: DiscoveryService,
    record: SmpRecord,
    *,
    publisher_address: str = "smp.default",
    trusted_list: Optional[trust.TrustedList] = None,
) -> DiscoveryService:
    """Register a fresh participant; the id must be unused.

    When a trusted list is supplied, the record's envelope-signing
    certificate must already be on it.
    """
    if record.participant_id in discovery.locator:
        raise DuplicateParticipant(f"participant {record.participant_id!r} already registered")
    if trusted_list is not None and trusted_list.certificate(record.certificate_serial) is None:
        raise InvariantViolation(
            f"participant {record.participant_id}: certificate "
            f"{record.certificate_serial} not in the trusted list"
        )
    discovery.locator[record.participant_id] = publisher_address
    discovery.publishers.setdefault(publisher_address, {})[record.participant_id] = record
    return discovery


def update_participant(
    discovery: DiscoveryService,
    record: SmpRecord,
    *,
    publisher_address: str = "smp.default",
    trusted_list: Optional[trust.TrustedList] = None,
) -> DiscoveryService:
    """Re-register an existing participant; last write wins."""
    if record.participant_id not in discovery.locator:
        raise ParticipantNotFound(f"participant {record.participant_id!r} not registered")
    if trusted_list is not None and trusted_list.certificate(record.certificate_serial) is None:
        raise InvariantViolation(
            f"participant {record.participant_id}: certificate "
            f"{record.certificate_serial} not in the trusted list"
        )
    old_publisher = discovery.locator[record.participant_id]
    discovery.publishers[old_publisher].pop(record.participant_id, None)
    discovery.locator[record.participant_id] = publisher_address
    discovery.publishers.setdefault(publisher_address, {})[record.participant_id] = record
    return discovery


def lookup(discovery: DiscoveryService, participant_id: str) -> SmpRecord:
    return discovery.resolve(participant_id)


@dataclass(frozen=True)
class TransportConfig:
    """Adversarial transport knobs; probabilities are per frame."""

    loss_probability: float = 0.0
    duplication_probability: float = 0.0
    tamper_probability: float = 0.0
    delay_min_ms: int = 1
    delay_max_ms: int = 20
    seed: int = 0
    downtime_windows: tuple[tuple[int, int], ...] = ()
    max_retries: int = 16
    retry_base_ms: int = 50
    retry_cap_ms: int = 5000

    def __post_init__(self) -> None:
        for name in ("loss_probability", "duplication_probability", "tamper_probability"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise InvariantViolation(f"{name} must be within [0, 1], got {p}")
        if self.delay_min_ms > self.delay_max_ms or self.delay_min_ms < 0:
            raise InvariantViolation("delay window must satisfy 0 <= min <= max")
        for start, end in self.downtime_windows:
            if start >= end:
                raise InvariantViolation("downtime window must have start < end")


class DeliveryStatus(Enum):
    PENDING = "pending"
    DELIVERED = "delivered"
    UNDELIVERED = "undelivered"


class MessageStatus(NamedTuple):
    status: DeliveryStatus
    reason: Optional[str]


@dataclass
class AccessPoint:
    ap_id: str
    certificate_serial: str
    keypair: trust.KeyPair
    device: trust.CreationDevice
    dedup_seen: set[str] = field(default_factory=set)


@dataclass
class _MessageState:
    message: Message
    sending_ap: str
    receiving_ap: str
    acked: bool = False
    status: DeliveryStatus = DeliveryStatus.PENDING
    reason: Optional[str] = None


# Event kinds, dispatched by the engine loop.
_SEND = 0
_ARRIVE = 1
_ACK_ARRIVE = 2
_RETRY = 3


class DeliveryNetwork:
    """Four-corner exchange network plus its deterministic transport engine."""

    def __init__(
        self,
        trusted_list: trust.TrustedList,
        config: TransportConfig = TransportConfig(),
        *,
        qualified: bool = True,
        provider: trust.CryptoProvider = trust.DEFAULT_PROVIDER,
        sim_date: SimDate = SimDate(2019, 6, 1),
    ) -> None:
        self.trusted_list = trusted_list
        self.qualified = qualified
        self.provider = provider
        self.sim_date = sim_date
        self.discovery = DiscoveryService()
        self.participants: dict[str, Participant] = {}
        self.access_points: dict[str, AccessPoint] = {}
        self.evidence: list[Evidence] = []
        self._evidence_index: dict[str, list[Evidence]] = {}
        self.log: list[str] = []
        self._states: dict[str, _MessageState] = {}
        self._heap: list[tuple[int, int, int, str, int]] = []
        self._event_seq = 0
        self._log_seq = 0
        self._message_counter = 0
        self._now = 0
        self._verify_cache: dict[tuple[str, bytes, bytes], bool] = {}
        self.config = config
        self._rng = random.Random(config.seed)

    # -- setup ---------------------------------------------------------------

    def set_transport(self, config: TransportConfig) -> None:
        """Swap the transport knobs; re-seeds the generator."""
        self.config = config
        self._rng = random.Random(config.seed)

    def register_participant(
        self,
        participant_id: str,
        tsp_id: str,
        *,
        publisher_address: str = "smp.default",
        protocols: tuple[str, ...] = ("as4",),
    ) -> Participant:
        """Create backend, access point, and metadata record for a participant.

        Issues the access point's envelope-signing certificate from the named
        trust service provider; in qualified mode the provider must itself be
        qualified.
        """
        if participant_id in self.participants:
            raise DuplicateParticipant(f"participant {participant_id!r} already registered")
        issuer = self.trusted_list.tsp(tsp_id)
        if self.qualified and not issuer.qualified:
            raise InvariantViolation(
                f"qualified delivery requires a qualified tsp, {tsp_id} is not"
            )
        ap_id = f"ap-{participant_id}"
        keypair = self.provider.generate_keypair()
        certificate = trust.issue_certificate(
            self.trusted_list,
            tsp_id,
            trust.Subject(trust.SubjectKind.LEGAL_PERSON, ap_id),
            trust.CertificateKind.FOR_SEAL,
            (self.sim_date.add_months(-12), self.sim_date.add_months(60)),
            qualified_requested=self.qualified,
            keypair=keypair,
        )
        device = trust.CreationDevice(f"hsm-{ap_id}", qualified=self.qualified)
        self.access_points[ap_id] = AccessPoint(ap_id, certificate.serial, keypair, device)
        record = SmpRecord(participant_id, ap_id, protocols, certificate.serial)
        register_participant(
            self.discovery,
            record,
            publisher_address=publisher_address,
            trusted_list=self.trusted_list,
        )
        participant = Participant(participant_id, ap_id)
        self.participants[participant_id] = participant
        return participant

    # -- submission and exchange ----------------------------------------------

    def submit(
        self, sender_id: str, addressee_id: str, payload: bytes, at_ms: Optional[int] = None
    ) -> tuple[str, Evidence]:
        """Corner 1 to 2: backend hands the payload to its access point.

        Resolves the addressee, signs the envelope with the sender access
        point's certificate, issues proof of sending, and schedules the first
        transmission.
        """
        sender = self.participants.get(sender_id)
        if sender is None:
            raise ParticipantNotFound(f"sender {sender_id!r} not registered")
        try:
            addressee_record = self.discovery.resolve(addressee_id)
        except ParticipantNotFound:
            raise AddresseeUnknown(f"addressee {addressee_id!r} cannot be resolved") from None

        at = self._now if at_ms is None else max(at_ms, 0)
        ap = self.access_points[sender.access_point_id]
        certificate = self.trusted_list.certificate(ap.certificate_serial)
        assert certificate is not None
        envelope = trust.seal(
            payload, ap.keypair, certificate, ap.device, self.sim_date, self.provider
        )
        self._message_counter += 1
        message_id = f"msg-{self._message_counter:06d}"
        message = Message(
            message_id=message_id,
            sender=sender_id,
            addressee=addressee_id,
            payload=payload,
            envelope=envelope,
            encrypted=True,
            submitted_at_ms=at,
        )
        sender.outbox.append(message_id)
        self._states[message_id] = _MessageState(
            message=message,
            sending_ap=sender.access_point_id,
            receiving_ap=addressee_record.access_point_address,
        )
        proof = self._issue_evidence(EvidenceKind.PROOF_OF_SENDING, message_id, at, ap.ap_id)
        self._log(at, f"backend:{sender_id}", "SUBMIT", message_id, f"to={addressee_id}")
        self._schedule(at, _SEND, message_id, 0)
        return message_id, proof

    def exchange(self, message_id: str) -> MessageStatus:
        """Drive the transport until the given message reaches a terminal state."""
        if message_id not in self._states:
            raise ParticipantNotFound(f"unknown message {message_id!r}")
        while self._heap and self._states[message_id].status == DeliveryStatus.PENDING:
            self._step()
        return self.status(message_id)

    def run_transport(self) -> list[str]:
        """Process every pending event; returns the full event log."""
        while self._heap:
            self._step()
        return self.log

    run = run_transport

    # -- inspection ------------------------------------------------------------

    def status(self, message_id: str) -> MessageStatus:
        state = self._states[message_id]
        return MessageStatus(state.status, state.reason)

    def inbox(self, participant_id: str) -> list[Message]:
        return self.participants[participant_id].inbox

    def evidence_for(self, message_id: str) -> list[Evidence]:
        return list(self._evidence_index.get(message_id, ()))

    def message_ids(self) -> list[str]:
        return list(self._states)

    def log_digest(self) -> str:
        return hashlib.sha256("\n".join(self.log).encode()).hexdigest()

    # -- engine ------------------------------------------------------------------

    def _schedule(self, at: int, kind: int, message_id: str, arg: int) -> None:
        self._event_seq += 1
        heapq.heappush(self._heap, (at, self._event_seq, kind, message_id, arg))

    def _step(self) -> None:
        at, _, kind, message_id, arg = heapq.heappop(self._heap)
        self._now = max(self._now, at)
        if kind == _SEND or kind == _RETRY:
            self._handle_send(at, message_id, arg)
        elif kind == _ARRIVE:
            self._handle_arrival(at, message_id, corrupted=bool(arg))
        else:
            self._handle_ack(at, message_id)

    def _handle_send(self, at: int, message_id: str, attempt: int) -> None:
        state = self._states[message_id]
        if state.acked:
            return
        cfg = self.config
        if attempt > cfg.max_retries:
            state.status = DeliveryStatus.UNDELIVERED
            state.reason = MAX_RETRIES_EXCEEDED
            self._log(at, f"ap:{state.sending_ap}", "GIVE_UP", message_id, f"attempts={attempt}")
            return
        self._log(at, f"ap:{state.sending_ap}", "SEND", message_id, f"attempt={attempt}")
        if self._rng.random() < cfg.loss_probability:
            self._log(at, "transport", "LOSS", message_id, f"attempt={attempt}")
        else:
            delay = self._rng.randint(cfg.delay_min_ms, cfg.delay_max_ms)
            corrupted = self._rng.random() < cfg.tamper_probability
            self._schedule(at + delay, _ARRIVE, message_id, int(corrupted))
            if self._rng.random() < cfg.duplication_probability:
                extra = self._rng.randint(cfg.delay_min_ms, cfg.delay_max_ms)
                self._log(at, "transport", "DUP", message_id, f"attempt={attempt}")
                self._schedule(at + extra, _ARRIVE, message_id, int(corrupted))
        backoff = min(cfg.retry_base_ms * (2**attempt), cfg.retry_cap_ms)
        self._schedule(at + backoff, _RETRY, message_id, attempt + 1)

    def _receiver_down(self, at: int) -> bool:
        return any(start <= at < end for start, end in self.config.downtime_windows)

    def _handle_arrival(self, at: int, message_id: str, corrupted: bool) -> None:
        state = self._states[message_id]
        message = state.message
        ap = self.access_points[state.receiving_ap]
        if self._receiver_down(at):
            self._log(at, f"ap:{ap.ap_id}", "DOWN", message_id, "receiver unavailable")
            return
        payload = message.payload
        if corrupted:
            payload = self._flip_byte(payload)
            self._log(at, "transport", "TAMPER", message_id, "")
        if not self._envelope_ok(payload, message.envelope):
            self._issue_evidence(EvidenceKind.CHANGE_INDICATION, message_id, at, ap.ap_id)
            self._log(at, f"ap:{ap.ap_id}", "REJECT", message_id, "envelope check failed")
            return
        if message_id in ap.dedup_seen:
            self._log(at, f"ap:{ap.ap_id}", "DUPLICATE", message_id, "already accepted")
        else:
            ap.dedup_seen.add(message_id)
            self.deliver(ap, message, at)
        # Acknowledge accepted and duplicate frames alike; the ack crosses the
        # same lossy transport.
        if self._rng.random() < self.config.loss_probability:
            self._log(at, "transport", "ACK_LOSS", message_id, "")
        else:
            delay = self._rng.randint(self.config.delay_min_ms, self.config.delay_max_ms)
            self._schedule(at + delay, _ACK_ARRIVE, message_id, 0)

    def deliver(self, ap: AccessPoint, message: Message, at: int) -> Evidence:
        """Corner 3 to 4: acknowledged message moves to the addressee backend."""
        backend = self.participants[message.addressee]
        backend.inbox.append(message)
        proof = self._issue_evidence(EvidenceKind.PROOF_OF_RECEIVING, message.message_id, at, ap.ap_id)
        self._log(at, f"backend:{message.addressee}", "DELIVER", message.message_id, "")
        return proof

    def _handle_ack(self, at: int, message_id: str) -> None:
        state = self._states[message_id]
        if state.acked:
            return
        state.acked = True
        state.status = DeliveryStatus.DELIVERED
        self._log(at, f"ap:{state.sending_ap}", "ACK", message_id, "")

    def _envelope_ok(self, payload: bytes, envelope: trust.Signature) -> bool:
        if trust.content_digest(payload) != envelope.digest:
            return False
        key = (envelope.certificate_serial, envelope.digest, envelope.value)
        cached = self._verify_cache.get(key)
        if cached is None:
            verdict = trust.validate(
                payload, envelope, self.trusted_list, self.sim_date, self.provider
            )
            cached = verdict.is_valid
            self._verify_cache[key] = cached
        return cached

    @staticmethod
    def _flip_byte(payload: bytes) -> bytes:
        if not payload:
            return b"\x01"
        mutated = bytearray(payload)
        mutated[len(mutated) // 2] ^= 0x01
        return bytes(mutated)

    def _issue_evidence(self, kind: EvidenceKind, message_id: str, at: int, ap_id: str) -> Evidence:
        evidence = Evidence(kind, message_id, at, self.qualified, ap_id)
        self.evidence.append(evidence)
        self._evidence_index.setdefault(message_id, []).append(evidence)
        return evidence

    def _log(self, at: int, component: str, event: str, message_id: str, detail: str) -> None:
        self._log_seq += 1
        self.log.append(f"{self._log_seq};{at};{component};{event};{message_id};{detail}")


def audit_delivery(network: DeliveryNetwork) -> list[str]:
    """Audit exactly-once and evidence invariants over a finished run.

    Returns a list of problems; an empty list means the audit passed.
    """
    problems: list[str] = []
    inbox_counts: dict[str, int] = {}
    for participant in network.participants.values():
        for message in participant.inbox:
            inbox_counts[message.message_id] = inbox_counts.get(message.message_id, 0) + 1
            if message.message_id not in network._states:
                problems.append(f"phantom delivery: {message.message_id} was never submitted")

    for message_id in network.message_ids():
        status = network.status(message_id)
        count = inbox_counts.get(message_id, 0)
        if count > 1:
            problems.append(f"{message_id}: delivered {count} times")
        if status.status == DeliveryStatus.DELIVERED:
            if count != 1:
                problems.append(f"{message_id}: delivered status but {count} inbox entries")
            evidence = network.evidence_for(message_id)
            sending = [e for e in evidence if e.kind == EvidenceKind.PROOF_OF_SENDING]
            receiving = [e for e in evidence if e.kind == EvidenceKind.PROOF_OF_RECEIVING]
            if len(sending) != 1 or len(receiving) != 1:
                problems.append(
                    f"{message_id}: evidence pair incomplete "
                    f"({len(sending)} sending, {len(receiving)} receiving)"
                )
            elif sending[0].timestamp_ms > receiving[0].timestamp_ms:
                problems.append(f"{message_id}: sending evidence timestamped after receiving")
    return problems
