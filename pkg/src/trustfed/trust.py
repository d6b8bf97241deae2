"""Certificates, trusted lists, signatures, seals, and validity extension.

The cryptographic scheme is hash-then-sign: content is digested, the digest
is signed with the certificate holder's private part, and validation
recomputes the digest and checks the signature against the certified public
part. Certificates expire; a signature's protection window can be extended
past certificate expiry by chaining timestamps, each applied before the
previous protection lapsed.

Crypto is pluggable behind CryptoProvider; the default uses Ed25519, so
forging a signature without the private part is computationally infeasible.
"""

from __future__ import annotations

import hashlib
import secrets
import warnings as _warnings
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional, Protocol, Union

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .dates import SimDate
from .errors import InvariantViolation, ParseError, SimulationError


class UnknownTsp(SimulationError):
    """The named trust service provider is not on the trusted list."""


class CertificateExpired(SimulationError):
    """Signing attempted outside the certificate's validity window."""


class KeyMismatch(SimulationError):
    """The signing key does not match the certificate's public part."""


class WrongCertificateKind(SimulationError):
    """Signature certificate used for sealing, or vice versa."""


class ProtectionAlreadyLapsed(SimulationError):
    """Extension attempted after the protection window already ended."""


class QualificationDowngrade(UserWarning):
    """A qualified certificate was requested from a non-qualified issuer."""


@dataclass(frozen=True)
class KeyPair:
    """Asymmetric key pair; only the private part can produce signatures."""

    private_part: bytes
    public_part: bytes
    algorithm: str


class CryptoProvider(Protocol):
    algorithm: str

    def generate_keypair(self) -> KeyPair: ...

    def sign(self, private_part: bytes, data: bytes) -> bytes: ...

    def verify(self, public_part: bytes, data: bytes, signature: bytes) -> bool: ...


class Ed25519Provider:
    """Default provider. An entropy source can be injected for deterministic runs."""

    algorithm = "ed25519"

    def __init__(self, entropy: Optional[Callable[[int], bytes]] = None):
        self._entropy = entropy or secrets.token_bytes

    def generate_keypair(self) -> KeyPair:
        private = Ed25519PrivateKey.from_private_bytes(self._entropy(32))
        public = private.public_key().public_bytes_raw()
        return KeyPair(private.private_bytes_raw(), public, self.algorithm)

    def sign(self, private_part: bytes, data: bytes) -> bytes:
        return Ed25519PrivateKey.from_private_bytes(private_part).sign(data)

    def verify(self, public_part: bytes, data: bytes, signature: bytes) -> bool:
        try:
            Ed25519PublicKey.from_public_bytes(public_part).verify(signature, data)
            return True
        except InvalidSignature:
            return False


DEFAULT_PROVIDER = Ed25519Provider()


def content_digest(content: bytes) -> bytes:
    return hashlib.sha256(content).digest()


class SubjectKind(Enum):
    NATURAL_PERSON = "natural"
    LEGAL_PERSON = "legal"


@dataclass(frozen=True)
class Subject:
    """Certificate subject: a natural person's name-or-pseudonym, or a legal person."""

    kind: SubjectKind
    name: str


class CertificateKind(Enum):
    FOR_SIGNATURE = "signature"
    FOR_SEAL = "seal"


# Signatures attest natural persons, seals legal persons.
_SUBJECT_FOR_KIND = {
    CertificateKind.FOR_SIGNATURE: SubjectKind.NATURAL_PERSON,
    CertificateKind.FOR_SEAL: SubjectKind.LEGAL_PERSON,
}


@dataclass(frozen=True)
class Certificate:
    serial: str
    subject: Subject
    issuer: str
    public_part: bytes
    algorithm: str
    kind: CertificateKind
    qualified: bool
    not_before: SimDate
    not_after: SimDate

    def __post_init__(self) -> None:
        if not self.not_before < self.not_after:
            raise InvariantViolation(
                f"certificate {self.serial}: validity window is empty"
            )
        if self.subject.kind != _SUBJECT_FOR_KIND[self.kind]:
            raise InvariantViolation(
                f"certificate {self.serial}: {self.kind.value} certificates require a "
                f"{_SUBJECT_FOR_KIND[self.kind].value} subject"
            )

    def covers(self, on: SimDate) -> bool:
        return self.not_before <= on <= self.not_after


@dataclass
class TspEntry:
    tsp_id: str
    state: str
    qualified: bool
    issued: list[str] = field(default_factory=list)


class TrustedList:
    """Per-state register of trust service providers and the certificates they issued.

    Mutations return nothing but keep the qualification invariant: a
    certificate is qualified only if its issuer entry is qualified.
    """

    def __init__(self) -> None:
        self._tsps: dict[str, TspEntry] = {}
        self._certificates: dict[str, Certificate] = {}
        self._serial_counter = 0

    def register_tsp(self, tsp_id: str, state: str, qualified: bool) -> TspEntry:
        if tsp_id in self._tsps:
            raise InvariantViolation(f"tsp {tsp_id} already registered")
        entry = TspEntry(tsp_id, state, qualified)
        self._tsps[tsp_id] = entry
        return entry

    def tsp(self, tsp_id: str) -> TspEntry:
        try:
            return self._tsps[tsp_id]
        except KeyError:
            raise UnknownTsp(f"trust service provider {tsp_id!r} not on the list") from None

    @property
    def tsps(self) -> dict[str, TspEntry]:
        return dict(self._tsps)

    def certificate(self, serial: str) -> Optional[Certificate]:
        return self._certificates.get(serial)

    @property
    def certificates(self) -> dict[str, Certificate]:
        return dict(self._certificates)

    def next_serial(self) -> str:
        self._serial_counter += 1
        return f"cert-{self._serial_counter:06d}"

    def add_certificate(self, certificate: Certificate) -> None:
        issuer = self.tsp(certificate.issuer)
        if certificate.qualified and not issuer.qualified:
            raise InvariantViolation(
                f"certificate {certificate.serial}: qualified flag from non-qualified issuer"
            )
        if certificate.serial in self._certificates:
            raise InvariantViolation(f"certificate serial {certificate.serial} already present")
        self._certificates[certificate.serial] = certificate
        issuer.issued.append(certificate.serial)


def issue_certificate(
    trusted_list: TrustedList,
    tsp_id: str,
    subject: Subject,
    kind: CertificateKind,
    validity: tuple[SimDate, SimDate],
    qualified_requested: bool,
    keypair: KeyPair,
    serial: Optional[str] = None,
) -> Certificate:
    """Issue a certificate binding the key pair's public part to the subject.

    The qualified flag is granted only when both requested and the issuer is
    itself qualified; a silent downgrade emits a QualificationDowngrade
    warning instead of failing.
    """
    issuer = trusted_list.tsp(tsp_id)
    qualified = qualified_requested and issuer.qualified
    if qualified_requested and not issuer.qualified:
        _warnings.warn(
            f"tsp {tsp_id} is not qualified; issuing a non-qualified certificate",
            QualificationDowngrade,
            stacklevel=2,
        )
    certificate = Certificate(
        serial=serial or trusted_list.next_serial(),
        subject=subject,
        issuer=tsp_id,
        public_part=keypair.public_part,
        algorithm=keypair.algorithm,
        kind=kind,
        qualified=qualified,
        not_before=validity[0],
        not_after=validity[1],
    )
    trusted_list.add_certificate(certificate)
    return certificate


@dataclass(frozen=True)
class CreationDevice:
    device_id: str
    qualified: bool
    certificate_serials: frozenset[str] = frozenset()


@dataclass(frozen=True)
class TimestampAuthority:
    authority_id: str
    qualified: bool
    lifetime_months: int = 60


@dataclass(frozen=True)
class Timestamp:
    authority: str
    applied_on: SimDate
    covers: bytes
    validity_end: SimDate
    qualified: bool

    def __post_init__(self) -> None:
        if not self.applied_on < self.validity_end:
            raise InvariantViolation("timestamp must end after it was applied")


@dataclass(frozen=True)
class Signature:
    """Detached signature: content digest, signed digest, and provenance."""

    digest: bytes
    value: bytes
    certificate_serial: str
    created_on: SimDate
    device_id: str
    timestamps: tuple[Timestamp, ...] = ()


@dataclass(frozen=True)
class AssentRecord:
    """Non-cryptographic assent: a typed name or a ticked checkbox."""

    form: str  # "typed-name" | "checkbox"
    text: str
    author: str
    on: SimDate


class SignatureLevel(Enum):
    SIMPLE = "simple"
    ADVANCED = "advanced"
    QUALIFIED = "qualified"


def sign(
    content: bytes,
    keypair: KeyPair,
    certificate: Certificate,
    device: CreationDevice,
    on: SimDate,
    provider: CryptoProvider = DEFAULT_PROVIDER,
    kind: CertificateKind = CertificateKind.FOR_SIGNATURE,
) -> Signature:
    """Sign content: digest it and sign the digest with the private part."""
    if certificate.kind != kind:
        raise WrongCertificateKind(
            f"certificate {certificate.serial} is for {certificate.kind.value}, "
            f"but the {kind.value} path was used"
        )
    if not certificate.covers(on):
        raise CertificateExpired(
            f"certificate {certificate.serial} not valid on {on} "
            f"(valid {certificate.not_before} to {certificate.not_after})"
        )
    if keypair.public_part != certificate.public_part:
        raise KeyMismatch(f"key pair does not match certificate {certificate.serial}")
    digest = content_digest(content)
    return Signature(
        digest=digest,
        value=provider.sign(keypair.private_part, digest),
        certificate_serial=certificate.serial,
        created_on=on,
        device_id=device.device_id,
    )


def seal(
    content: bytes,
    keypair: KeyPair,
    certificate: Certificate,
    device: CreationDevice,
    on: SimDate,
    provider: CryptoProvider = DEFAULT_PROVIDER,
) -> Signature:
    """Seal content on behalf of a legal person; same pipeline as sign()."""
    return sign(content, keypair, certificate, device, on, provider, kind=CertificateKind.FOR_SEAL)


def classify_level(
    artifact: Union[Signature, AssentRecord],
    certificate: Optional[Certificate] = None,
    device: Optional[CreationDevice] = None,
    trusted_list: Optional[TrustedList] = None,
) -> SignatureLevel:
    """Classify an assent or signature artifact as simple, advanced, or qualified.

    Qualified requires both a qualified certificate and a qualified creation
    device; any other cryptographic signature is advanced; assent records
    carry no cryptography and stay simple.
    """
    if isinstance(artifact, AssentRecord):
        return SignatureLevel.SIMPLE
    if certificate is None and trusted_list is not None:
        certificate = trusted_list.certificate(artifact.certificate_serial)
    cert_qualified = certificate.qualified if certificate is not None else False
    device_qualified = device.qualified if device is not None else False
    if cert_qualified and device_qualified:
        return SignatureLevel.QUALIFIED
    return SignatureLevel.ADVANCED


class VerdictStatus(Enum):
    VALID = "valid"
    INVALID = "invalid"
    INDETERMINATE = "indeterminate"


@dataclass(frozen=True)
class Verdict:
    status: VerdictStatus
    reason: Optional[str] = None

    @property
    def is_valid(self) -> bool:
        return self.status == VerdictStatus.VALID


VALID = Verdict(VerdictStatus.VALID)


def protection_end(signature: Signature, certificate: Certificate) -> SimDate:
    """Date the signature's trust anchoring ends, walking the timestamp chain.

    A timestamp only extends protection if it covers the signature digest and
    was applied while the previous protection still held; anything after a
    gap is ignored.
    """
    end = certificate.not_after
    for ts in signature.timestamps:
        if ts.covers != signature.digest or ts.applied_on > end:
            break
        end = max(end, ts.validity_end)
    return end


def validate(
    content: bytes,
    signature: Signature,
    trusted_list: TrustedList,
    at: SimDate,
    provider: CryptoProvider = DEFAULT_PROVIDER,
) -> Verdict:
    """Validate a signature over content at a point in time.

    Invalid means the cryptography fails (content changed, or wrong key);
    indeterminate means the cryptography checks out but trust anchoring
    cannot be established at ``at`` (unknown certificate, or certificate and
    timestamp chain lapsed).
    """
    if content_digest(content) != signature.digest:
        return Verdict(VerdictStatus.INVALID, "DigestMismatch")
    certificate = trusted_list.certificate(signature.certificate_serial)
    if certificate is None:
        return Verdict(VerdictStatus.INDETERMINATE, "CertificateUnknown")
    if not provider.verify(certificate.public_part, signature.digest, signature.value):
        return Verdict(VerdictStatus.INVALID, "SignatureMismatch")
    if not certificate.covers(signature.created_on):
        return Verdict(VerdictStatus.INDETERMINATE, "CreatedOutsideValidity")
    if at > protection_end(signature, certificate):
        return Verdict(VerdictStatus.INDETERMINATE, "ProtectionLapsed")
    return VALID


def extend(
    signature: Signature,
    authority: TimestampAuthority,
    on: SimDate,
    trusted_list: TrustedList,
) -> Signature:
    """Append a timestamp, extending the protection window.

    Refused once protection has already lapsed: an attacker with an expired
    key could otherwise backfill the chain.
    """
    certificate = trusted_list.certificate(signature.certificate_serial)
    if certificate is None:
        raise UnknownTsp(
            f"certificate {signature.certificate_serial} not in the trusted list"
        )
    end = protection_end(signature, certificate)
    if on > end:
        raise ProtectionAlreadyLapsed(f"protection ended {end}, cannot extend on {on}")
    if signature.timestamps and on <= signature.timestamps[-1].applied_on:
        raise InvariantViolation("timestamp chain must strictly increase in time")
    stamp = Timestamp(
        authority=authority.authority_id,
        applied_on=on,
        covers=signature.digest,
        validity_end=on.add_months(authority.lifetime_months),
        qualified=authority.qualified,
    )
    return replace(signature, timestamps=signature.timestamps + (stamp,))


# --- line-oriented serialization ---------------------------------------------
#
# Detached signature: serial;digest_hex;sigvalue_hex;created;device;ts_chain
# where ts_chain is a comma list of authority:applied_on:validity_end:q|n
# entries (empty for no timestamps). Identifiers must not contain ';' ',' ':'.


def serialize_signature(signature: Signature) -> str:
    chain = ",".join(
        f"{ts.authority}:{ts.applied_on}:{ts.validity_end}:{'q' if ts.qualified else 'n'}"
        for ts in signature.timestamps
    )
    return ";".join(
        [
            signature.certificate_serial,
            signature.digest.hex(),
            signature.value.hex(),
            signature.created_on.isoformat(),
            signature.device_id,
            chain,
        ]
    )


def parse_signature(line: str) -> Signature:
    fields = line.strip().split(";")
    if len(fields) != 6:
        raise ParseError(f"expected 6 fields in signature line, got {len(fields)}", 1)
    serial, digest_hex, value_hex, created, device_id, chain = fields
    digest = bytes.fromhex(digest_hex)
    timestamps = []
    if chain:
        for part in chain.split(","):
            authority, applied, end, flag = part.split(":")
            timestamps.append(
                Timestamp(
                    authority=authority,
                    applied_on=SimDate.parse(applied),
                    covers=digest,
                    validity_end=SimDate.parse(end),
                    qualified=flag == "q",
                )
            )
    return Signature(
        digest=digest,
        value=bytes.fromhex(value_hex),
        certificate_serial=serial,
        created_on=SimDate.parse(created),
        device_id=device_id,
        timestamps=tuple(timestamps),
    )


def serialize_trusted_list(trusted_list: TrustedList) -> str:
    lines = []
    for entry in trusted_list.tsps.values():
        lines.append(f"{entry.state};{entry.tsp_id};{'true' if entry.qualified else 'false'}")
    for cert in trusted_list.certificates.values():
        lines.append(
            ";".join(
                [
                    "cert",
                    cert.serial,
                    cert.subject.kind.value,
                    cert.subject.name,
                    cert.issuer,
                    cert.kind.value,
                    "true" if cert.qualified else "false",
                    cert.not_before.isoformat(),
                    cert.not_after.isoformat(),
                    cert.algorithm,
                    cert.public_part.hex(),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def parse_trusted_list(text: str) -> TrustedList:
    trusted = TrustedList()
    pending: list[tuple[int, list[str]]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split(";")
        if fields[0] == "cert":
            if len(fields) != 11:
                raise ParseError(f"expected 11 fields in cert record, got {len(fields)}", lineno)
            pending.append((lineno, fields))
        else:
            if len(fields) != 3:
                raise ParseError(f"expected state;tsp_id;qualified, got {len(fields)} fields", lineno)
            state, tsp_id, qualified = fields
            trusted.register_tsp(tsp_id, state, qualified == "true")
    # Certificates resolve after all issuer entries are known.
    for lineno, fields in pending:
        try:
            certificate = Certificate(
                serial=fields[1],
                subject=Subject(SubjectKind(fields[2]), fields[3]),
                issuer=fields[4],
                kind=CertificateKind(fields[5]),
                qualified=fields[6] == "true",
                not_before=SimDate.parse(fields[7]),
                not_after=SimDate.parse(fields[8]),
                algorithm=fields[9],
                public_part=bytes.fromhex(fields[10]),
            )
            trusted.add_certificate(certificate)
        except (ValueError, UnknownTsp) as exc:
            raise ParseError(str(exc), lineno) from None
    return trusted
