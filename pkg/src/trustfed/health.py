"""Citizen health-data platform with zero-knowledge storage.

The platform stores only ciphertext; record keys live exclusively with the
citizen's client. Sharing is established through an out-of-band PIN
handshake, sealed documents enter through a staged ingestion pipeline, and
research donations are de-identified copies stripped of every person
attribute value. National contact points feed documents in over registered
delivery.
"""

from __future__ import annotations

import hashlib
import random
import struct
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Protocol, Union

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from . import trust
from .dates import SimDate
from .delivery import DeliveryNetwork, DeliveryStatus, Evidence
from .errors import InvariantViolation, SimulationError
from .network import AuthResult, PersonIdentity

PIN_DIGITS = 6
PIN_TTL_MS = 10 * 60 * 1000
PIN_ATTEMPTS = 3
ADULT_AGE_YEARS = 18
REDACTED = b"[redacted]"


class DuplicateAccount(SimulationError):
    """A citizen account already exists for these contact handles."""


class UnknownAccount(SimulationError):
    """Referenced account id is not registered."""


class PinMismatch(SimulationError):
    """Presented PIN does not match the handshake."""


class PinExpired(SimulationError):
    """The handshake expired or ran out of attempts."""


class ValidationRequired(SimulationError):
    """Asynchronous sharing requires an eID-validated grantee."""


class AgeRestriction(SimulationError):
    """Age gate enabled and the validated date of birth is under age."""


class UnknownSource(SimulationError):
    """Ingestion from a source that is not registered."""


class ConsentMissing(SimulationError):
    """Donation attempted without any consent artifact."""


class AccessDenied(SimulationError):
    """Requester is neither the owner nor a grantee with a live grant."""


class DecryptionFailed(SimulationError):
    """Ciphertext integrity check failed; no plaintext was released."""


class FetchFailed(SimulationError):
    """A contact-point transfer ended undelivered."""


@dataclass(frozen=True)
class HealthRecord:
    """Canonical document envelope: a type tag, opaque bytes, optional seal."""

    type_tag: str
    payload: bytes
    seal: Optional[trust.Signature] = None


@dataclass(frozen=True)
class EncryptedRecord:
    """Ciphertext-only form as held by the platform."""

    ciphertext: bytes
    integrity_tag: bytes
    nonce: bytes
    key_id: str


def _encode_record(record: HealthRecord) -> bytes:
    seal_line = trust.serialize_signature(record.seal).encode() if record.seal else b""
    parts = (record.type_tag.encode(), record.payload, seal_line)
    return b"".join(struct.pack("<I", len(p)) + p for p in parts)


def _decode_record(blob: bytes) -> HealthRecord:
    parts = []
    offset = 0
    for _ in range(3):
        (length,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        parts.append(blob[offset : offset + length])
        offset += length
    seal = trust.parse_signature(parts[2].decode()) if parts[2] else None
    return HealthRecord(parts[0].decode(), parts[1], seal)


def encrypt_record(record: HealthRecord, key: bytes, nonce: bytes) -> EncryptedRecord:
    sealed = AESGCM(key).encrypt(nonce, _encode_record(record), None)
    return EncryptedRecord(
        ciphertext=sealed[:-16],
        integrity_tag=sealed[-16:],
        nonce=nonce,
        key_id=hashlib.sha256(key).hexdigest()[:16],
    )


def decrypt_record(encrypted: EncryptedRecord, key: bytes) -> HealthRecord:
    try:
        blob = AESGCM(key).decrypt(
            encrypted.nonce, encrypted.ciphertext + encrypted.integrity_tag, None
        )
    except InvalidTag:
        raise DecryptionFailed("record integrity check failed") from None
    return _decode_record(blob)


@dataclass
class CitizenAccount:
    """Client-side account state; the encryption key never reaches the platform."""

    account_id: str
    client_key: bytes
    email: str
    phone: str
    identity: Optional[PersonIdentity] = None
    validated: bool = False
    shared_keys: dict[str, bytes] = field(default_factory=dict)


class ShareMode(Enum):
    IN_PERSON = "in-person"
    REMOTE_LIVE = "remote-live"
    ASYNCHRONOUS = "asynchronous"


@dataclass(frozen=True)
class ShareGrant:
    owner: str
    grantee: str
    mode: ShareMode
    records: frozenset[int]
    created_at_ms: int


@dataclass
class PinHandshake:
    handshake_id: str
    owner: str
    grantee: str
    mode: ShareMode
    pin_hash: str
    records: frozenset[int]
    expires_at_ms: int
    attempts_left: int = PIN_ATTEMPTS
    cancelled: bool = False


class PinChannel(Protocol):
    """Out-of-band carrier for the handshake PIN."""

    def deliver(self, pin: str) -> None: ...

    def collect(self) -> str: ...


class InMemoryPinChannel:
    def __init__(self) -> None:
        self._pin = ""

    def deliver(self, pin: str) -> None:
        self._pin = pin

    def collect(self) -> str:
        return self._pin


class IngestionStage(Enum):
    RECEIVED = "received"
    TRANSFORMED = "transformed"
    SEAL_CHECKED = "seal-checked"
    STORED = "stored"
    REJECTED = "rejected"


_STAGE_ORDER = {
    IngestionStage.RECEIVED: 0,
    IngestionStage.TRANSFORMED: 1,
    IngestionStage.SEAL_CHECKED: 2,
    IngestionStage.STORED: 3,
    IngestionStage.REJECTED: 3,
}


class SealPolicy(Enum):
    """What to do with seals whose trust anchoring cannot be established."""

    STORE_WITH_WARNING = "store-with-warning"
    REJECT = "reject"


@dataclass
class IngestionJob:
    job_id: str
    source: str
    target_account: str
    type_tag: str
    payload: bytes
    seal: Optional[trust.Signature] = None
    stage: IngestionStage = IngestionStage.RECEIVED
    rejected_reason: Optional[str] = None
    warnings: list[str] = field(default_factory=list)
    provenance: list[str] = field(default_factory=list)
    evidence: list[Evidence] = field(default_factory=list)
    stored: Optional[EncryptedRecord] = None
    stage_history: list[IngestionStage] = field(default_factory=list)

    def advance_stage(self, stage: IngestionStage) -> None:
        if _STAGE_ORDER[stage] < _STAGE_ORDER[self.stage]:
            raise InvariantViolation(
                f"job {self.job_id}: stage cannot regress from {self.stage.value} to {stage.value}"
            )
        self.stage = stage
        self.stage_history.append(stage)


@dataclass(frozen=True)
class ResearchDonation:
    """De-identified document copy plus the consent it was donated under."""

    document: HealthRecord
    consent_level: trust.SignatureLevel
    consent_ref: str
    donated_at_ms: int


@dataclass(frozen=True)
class DonationConsent:
    """Either a plain assent record or a cryptographic signature."""

    assent: Optional[trust.AssentRecord] = None
    signature: Optional[trust.Signature] = None
    device: Optional[trust.CreationDevice] = None


class TranslationService(Protocol):
    """Pluggable document translation; real machine translation is out of scope."""

    def translate(self, record: HealthRecord, target_language: str) -> HealthRecord: ...


class IdentityTranslation:
    """Stub translation: returns the document unchanged."""

    def translate(self, record: HealthRecord, target_language: str) -> HealthRecord:
        return record


@dataclass
class _AccountMeta:
    """What the platform itself retains about an account: no key, no identity."""

    account_id: str
    email: str
    phone: str
    key_id: str
    validated: bool


class HealthPlatform:
    """The platform side: ciphertext store, grants, ingestion, research store."""

    def __init__(
        self,
        *,
        trusted_list: Optional[trust.TrustedList] = None,
        provider: trust.CryptoProvider = trust.DEFAULT_PROVIDER,
        rng: Optional[random.Random] = None,
        clock: SimDate = SimDate(2019, 6, 1),
        seal_policy: SealPolicy = SealPolicy.STORE_WITH_WARNING,
        async_requires_validated_grantee: bool = True,
        age_gate: bool = False,
        translation: Optional[TranslationService] = None,
    ) -> None:
        self.trusted_list = trusted_list if trusted_list is not None else trust.TrustedList()
        self.provider = provider
        self.rng = rng or random.Random(0)
        self.clock = clock
        self.seal_policy = seal_policy
        self.async_requires_validated_grantee = async_requires_validated_grantee
        self.age_gate = age_gate
        self.translation = translation or IdentityTranslation()
        self.events: list[str] = []
        self.research_store: list[ResearchDonation] = []
        self._accounts: dict[str, _AccountMeta] = {}
        self._emails: set[str] = set()
        self._store: dict[str, list[EncryptedRecord]] = {}
        self._grants: dict[tuple[str, str], ShareGrant] = {}
        self._handshakes: dict[str, PinHandshake] = {}
        self._sources: dict[str, str] = {}
        self._jobs: list[IngestionJob] = []
        self._account_counter = 0
        self._handshake_counter = 0
        self._job_counter = 0
        self._now_ms = 0
        self._log_seq = 0

    # -- clock and logging -----------------------------------------------------

    @property
    def now_ms(self) -> int:
        return self._now_ms

    def advance_clock(self, ms: int) -> None:
        self._now_ms += ms

    def _log(self, event: str, subject: str, detail: str, at_ms: Optional[int] = None) -> None:
        at = self._now_ms if at_ms is None else at_ms
        self._log_seq += 1
        self.events.append(f"{self._log_seq};{at};platform;{event};{subject};{detail}")

    # -- accounts ----------------------------------------------------------------

    def register_citizen(
        self,
        email: str,
        phone: str,
        eid_result: Optional[AuthResult] = None,
        at_ms: Optional[int] = None,
    ) -> CitizenAccount:
        """Open an account; an eID result prefills and validates it.

        A failed eID result is not an error: registration proceeds
        unvalidated, since validation is the citizen's choice.
        """
        if not email or not phone:
            raise InvariantViolation("contact handles must be non-empty")
        if email in self._emails:
            raise DuplicateAccount(f"an account already exists for {email}")

        identity: Optional[PersonIdentity] = None
        validated = False
        if eid_result is not None and eid_result.success and eid_result.identity is not None:
            identity = eid_result.identity
            validated = True
            if self.age_gate:
                adult_on = identity.date_of_birth.add_months(12 * ADULT_AGE_YEARS)
                if adult_on > self.clock:
                    raise AgeRestriction(f"account holder is under {ADULT_AGE_YEARS}")

        self._account_counter += 1
        account_id = f"acct-{self._account_counter:04d}"
        client_key = self.rng.randbytes(32)
        key_id = hashlib.sha256(client_key).hexdigest()[:16]
        self._accounts[account_id] = _AccountMeta(account_id, email, phone, key_id, validated)
        self._emails.add(email)
        self._store[account_id] = []
        self._log("REGISTER", account_id, f"validated={validated}", at_ms)
        return CitizenAccount(
            account_id=account_id,
            client_key=client_key,
            email=email,
            phone=phone,
            identity=identity,
            validated=validated,
        )

    def _require_account(self, account_id: str) -> _AccountMeta:
        try:
            return self._accounts[account_id]
        except KeyError:
            raise UnknownAccount(f"account {account_id!r} not registered") from None

    # -- zero-knowledge record store -----------------------------------------------

    def upload_record(
        self, account: CitizenAccount, record: HealthRecord, at_ms: Optional[int] = None
    ) -> EncryptedRecord:
        """Encrypt client-side and store; the platform sees ciphertext only."""
        self._require_account(account.account_id)
        nonce = self.rng.randbytes(12)
        encrypted = encrypt_record(record, account.client_key, nonce)
        self._store[account.account_id].append(encrypted)
        self._log(
            "STORE",
            account.account_id,
            f"record={len(self._store[account.account_id]) - 1};bytes={len(encrypted.ciphertext)}",
            at_ms,
        )
        return encrypted

    def record_count(self, account_id: str) -> int:
        return len(self._store[self._require_account(account_id).account_id])

    def fetch_record(self, requester_id: str, owner_id: str, index: int) -> EncryptedRecord:
        """Release ciphertext to the owner or to a grantee with a live grant."""
        self._require_account(requester_id)
        self._require_account(owner_id)
        if requester_id != owner_id:
            grant = self._grants.get((owner_id, requester_id))
            if grant is None or index not in grant.records:
                raise AccessDenied(
                    f"{requester_id} has no live grant for record {index} of {owner_id}"
                )
        try:
            return self._store[owner_id][index]
        except IndexError:
            raise UnknownAccount(f"account {owner_id} has no record {index}") from None

    def read_record(
        self, requester: CitizenAccount, owner_id: str, index: int
    ) -> HealthRecord:
        """Fetch and decrypt: own records with the own key, shared ones with the
        key received during the handshake."""
        encrypted = self.fetch_record(requester.account_id, owner_id, index)
        if requester.account_id == owner_id:
            key = requester.client_key
        else:
            key = requester.shared_keys.get(owner_id)
            if key is None:
                raise AccessDenied(f"{requester.account_id} holds no key for {owner_id}")
        return decrypt_record(encrypted, key)

    # -- sharing -------------------------------------------------------------------

    def initiate_share(
        self,
        owner: CitizenAccount,
        grantee_id: str,
        mode: ShareMode,
        records: frozenset[int],
        channel: PinChannel,
        at_ms: Optional[int] = None,
    ) -> str:
        """Start a PIN handshake; the PIN leaves through the out-of-band channel.

        The platform keeps only the PIN hash. Asynchronous sharing demands an
        eID-validated grantee up front when the policy requires it.
        """
        self._require_account(owner.account_id)
        grantee_meta = self._require_account(grantee_id)
        if (
            mode == ShareMode.ASYNCHRONOUS
            and self.async_requires_validated_grantee
            and not grantee_meta.validated
        ):
            raise ValidationRequired(
                f"asynchronous sharing with {grantee_id} requires eID validation"
            )
        at = self._now_ms if at_ms is None else at_ms
        pin = f"{self.rng.randrange(10**PIN_DIGITS):0{PIN_DIGITS}d}"
        self._handshake_counter += 1
        handshake_id = f"hs-{self._handshake_counter:04d}"
        self._handshakes[handshake_id] = PinHandshake(
            handshake_id=handshake_id,
            owner=owner.account_id,
            grantee=grantee_id,
            mode=mode,
            pin_hash=hashlib.sha256(pin.encode()).hexdigest(),
            records=records,
            expires_at_ms=at + PIN_TTL_MS,
        )
        channel.deliver(pin)
        self._log("SHARE_INIT", handshake_id, f"{owner.account_id}->{grantee_id};mode={mode.value}", at)
        return handshake_id

    def confirm_share(
        self, handshake_id: str, presented_pin: str, at_ms: Optional[int] = None
    ) -> ShareGrant:
        """Finish the handshake; a grant exists only after the PIN matched."""
        handshake = self._handshakes.get(handshake_id)
        if handshake is None:
            raise PinExpired(f"handshake {handshake_id!r} unknown or already closed")
        at = self._now_ms if at_ms is None else at_ms
        if handshake.cancelled or at > handshake.expires_at_ms:
            raise PinExpired(f"handshake {handshake_id} expired")
        grantee_meta = self._require_account(handshake.grantee)
        if (
            handshake.mode == ShareMode.ASYNCHRONOUS
            and self.async_requires_validated_grantee
            and not grantee_meta.validated
        ):
            raise ValidationRequired(
                f"asynchronous sharing with {handshake.grantee} requires eID validation"
            )
        if hashlib.sha256(presented_pin.encode()).hexdigest() != handshake.pin_hash:
            handshake.attempts_left -= 1
            if handshake.attempts_left <= 0:
                handshake.cancelled = True
            raise PinMismatch(f"wrong PIN ({handshake.attempts_left} attempts left)")
        del self._handshakes[handshake_id]
        grant = ShareGrant(
            owner=handshake.owner,
            grantee=handshake.grantee,
            mode=handshake.mode,
            records=handshake.records,
            created_at_ms=at,
        )
        self._grants[(grant.owner, grant.grantee)] = grant
        self._log("SHARE_GRANT", handshake_id, f"{grant.owner}->{grant.grantee}", at)
        return grant

    def revoke_share(self, owner_id: str, grantee_id: str) -> None:
        self._grants.pop((owner_id, grantee_id), None)
        self._log("SHARE_REVOKE", f"{owner_id}->{grantee_id}", "")

    def grant_for(self, owner_id: str, grantee_id: str) -> Optional[ShareGrant]:
        return self._grants.get((owner_id, grantee_id))

    # -- ingestion -------------------------------------------------------------------

    def register_source(self, source_id: str, kind: str = "hcp") -> None:
        self._sources[source_id] = kind

    def create_job(
        self,
        source: str,
        target_account: str,
        type_tag: str,
        payload: bytes,
        seal: Optional[trust.Signature] = None,
    ) -> IngestionJob:
        self._job_counter += 1
        job = IngestionJob(
            job_id=f"job-{self._job_counter:04d}",
            source=source,
            target_account=target_account,
            type_tag=type_tag,
            payload=payload,
            seal=seal,
        )
        job.stage_history.append(IngestionStage.RECEIVED)
        self._jobs.append(job)
        return job

    def ingest(
        self, job: IngestionJob, target: CitizenAccount, at_ms: Optional[int] = None
    ) -> IngestionJob:
        """Run a received job through transform, seal check, and storage.

        An attached seal is validated: a failed digest or key check rejects
        the document, while a lapsed trust anchor follows the platform's seal
        policy. Documents without seals pass; the transfer path already
        guards integrity.
        """
        if job.stage != IngestionStage.RECEIVED:
            raise InvariantViolation(f"job {job.job_id} is at {job.stage.value}, not received")
        if job.source not in self._sources:
            raise UnknownSource(f"source {job.source!r} is not registered")
        if job.target_account != target.account_id:
            raise InvariantViolation("target account does not match the job")

        record = HealthRecord(job.type_tag, job.payload, job.seal)
        record = self.translation.translate(record, "")
        job.advance_stage(IngestionStage.TRANSFORMED)

        job.advance_stage(IngestionStage.SEAL_CHECKED)
        if job.seal is not None:
            verdict = trust.validate(
                job.payload, job.seal, self.trusted_list, self.clock, self.provider
            )
            if verdict.status == trust.VerdictStatus.INVALID:
                job.rejected_reason = "SealInvalid"
                job.advance_stage(IngestionStage.REJECTED)
                self._log("INGEST_REJECT", job.job_id, f"reason={verdict.reason}", at_ms)
                return job
            if verdict.status == trust.VerdictStatus.INDETERMINATE:
                if self.seal_policy == SealPolicy.REJECT:
                    job.rejected_reason = "SealIndeterminate"
                    job.advance_stage(IngestionStage.REJECTED)
                    self._log("INGEST_REJECT", job.job_id, f"reason={verdict.reason}", at_ms)
                    return job
                job.warnings.append(f"seal indeterminate: {verdict.reason}")

        job.provenance.append(f"source={job.source}")
        job.stored = self.upload_record(target, record, at_ms)
        job.advance_stage(IngestionStage.STORED)
        self._log("INGEST_STORE", job.job_id, f"source={job.source}", at_ms)
        return job

    # -- research donations --------------------------------------------------------------

    def donate(
        self,
        account: CitizenAccount,
        record: HealthRecord,
        consent: Optional[DonationConsent],
        at_ms: Optional[int] = None,
    ) -> ResearchDonation:
        """Store a de-identified copy in the research store.

        De-identification strips every person attribute value and both
        contact handles from the document payload.
        """
        self._require_account(account.account_id)
        if consent is None or (consent.assent is None and consent.signature is None):
            raise ConsentMissing("donation requires an assent record or a signature")

        if consent.signature is not None:
            level = trust.classify_level(
                consent.signature, device=consent.device, trusted_list=self.trusted_list
            )
            ref = hashlib.sha256(consent.signature.value).hexdigest()[:16]
        else:
            assert consent.assent is not None
            level = trust.classify_level(consent.assent)
            ref = hashlib.sha256(consent.assent.text.encode()).hexdigest()[:16]

        donation = ResearchDonation(
            document=self._deidentify(account, record),
            consent_level=level,
            consent_ref=ref,
            donated_at_ms=self._now_ms if at_ms is None else at_ms,
        )
        self.research_store.append(donation)
        self._log("DONATE", account.account_id, f"level={level.value}", at_ms)
        return donation

    @staticmethod
    def _deidentify(account: CitizenAccount, record: HealthRecord) -> HealthRecord:
        payload = record.payload
        values = []
        if account.identity is not None:
            values.extend(account.identity.mds_values().values())
        values.extend([account.email, account.phone])
        # Longest first, so contained substrings cannot resurface a fragment.
        for value in sorted(values, key=len, reverse=True):
            if value:
                payload = payload.replace(value.encode(), REDACTED)
        return HealthRecord(record.type_tag, payload, seal=None)

    # -- contact-point fetch ----------------------------------------------------------------

    def ncp_fetch(
        self,
        ncp_id: str,
        account: CitizenAccount,
        network: DeliveryNetwork,
        *,
        platform_participant: str = "platform",
    ) -> IngestionJob:
        """Pull a patient summary from a national contact point over delivery.

        Two legs: a fetch request out to the contact point, then the document
        back in. The returned job sits at the received stage with the
        document leg's evidence attached.
        """
        self._require_account(account.account_id)
        request = f"fetch:{account.account_id}".encode()
        request_id, _ = network.submit(platform_participant, ncp_id, request)
        network.exchange(request_id)

        summary = (
            f"patient-summary;account={account.account_id};".encode()
            + self.rng.randbytes(48).hex().encode()
        )
        document_id, _ = network.submit(ncp_id, platform_participant, summary)
        status = network.exchange(document_id)
        if status.status != DeliveryStatus.DELIVERED:
            raise FetchFailed(f"document transfer ended {status.status.value} ({status.reason})")

        job = self.create_job(ncp_id, account.account_id, "patient-summary", summary)
        job.evidence.extend(network.evidence_for(document_id))
        job.provenance.append(f"transfer={document_id}")
        self._log("NCP_FETCH", job.job_id, f"ncp={ncp_id};message={document_id}")
        return job

    # -- store dump for the leakage scanner ------------------------------------------------------

    def dump_store(self, include_research: bool = True) -> bytes:
        """Serialize everything the platform can see, for scanning.

        Length-prefixed blobs with account and key-id headers, followed by
        account metadata and (optionally) the research store.
        """
        out = bytearray()
        for account_id, records in self._store.items():
            meta = self._accounts[account_id]
            for encrypted in records:
                header = f"{account_id};{encrypted.key_id};".encode()
                blob = encrypted.nonce + encrypted.ciphertext + encrypted.integrity_tag
                out += header + struct.pack("<I", len(blob)) + blob
            out += f"{account_id};{meta.email};{meta.phone};{meta.validated}\n".encode()
        if include_research:
            for donation in self.research_store:
                doc = donation.document
                out += struct.pack("<I", len(doc.payload)) + doc.type_tag.encode() + doc.payload
        return bytes(out)


def scan_for_markers(blob: bytes, markers: list[bytes]) -> list[bytes]:
    """Return the subset of markers that occur anywhere in the blob."""
    return [marker for marker in markers if marker in blob]
