"""Cross-border authentication between member-state eID nodes.

Models the eight-step flow: a citizen asks a service provider for access,
the provider's connector sends a request to the citizen's home node, the
citizen authenticates against the national eID there, and the response
travels back with the person attributes the scheme can assert. Responses
carry a relying-party-scoped unique identifier derived per the scheme's
strategy.

All operations are pure over immutable inputs; the flow outcome is a
function of (registry, participants, clock).
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Mapping, Optional

from .dates import SimDate
from .errors import InvariantViolation, SimulationError
from .registry import (
    MANDATORY_ATTRIBUTES,
    AssuranceLevel,
    AttributeKind,
    EidScheme,
    FederationRegistry,
    NotificationStatus,
    UidStrategy,
    is_recognition_mandatory,
    recognition_mandatory_from,
)


class NoNodeForState(SimulationError):
    """No eIDAS node is deployed for the state."""


class SchemeNotNotified(SimulationError):
    """The destination scheme has not reached notified status."""


class RecognitionNotYetMandatory(SimulationError):
    """Strict policy: the 12-month recognition date has not arrived yet."""

    def __init__(self, earliest: Optional[SimDate]):
        super().__init__(f"recognition becomes mandatory on {earliest}")
        self.earliest = earliest


class LoaInsufficient(SimulationError):
    """The scheme's assurance level is below what the service provider requires."""


# Failure reason codes carried inside responses (the national leg reports
# outcomes rather than raising across the border).
CREDENTIAL_FAILURE = "CredentialFailure"
ATTRIBUTE_UNAVAILABLE = "AttributeUnavailable"


@dataclass(frozen=True)
class PersonIdentity:
    """The person attribute bundle; one optional value per attribute kind."""

    family_name: str
    first_name: str
    date_of_birth: SimDate
    unique_identifier: str
    birth_name: Optional[str] = None
    place_of_birth: Optional[str] = None
    current_address: Optional[str] = None
    gender: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.unique_identifier:
            raise InvariantViolation("unique identifier must be non-empty")
        if not isinstance(self.date_of_birth, SimDate):
            raise InvariantViolation("date of birth must be a calendar date")

    def value_of(self, kind: AttributeKind) -> Optional[str]:
        if kind == AttributeKind.DATE_OF_BIRTH:
            return self.date_of_birth.isoformat()
        return {
            AttributeKind.FAMILY_NAME: self.family_name,
            AttributeKind.FIRST_NAME: self.first_name,
            AttributeKind.UNIQUE_IDENTIFIER: self.unique_identifier,
            AttributeKind.BIRTH_NAME: self.birth_name,
            AttributeKind.PLACE_OF_BIRTH: self.place_of_birth,
            AttributeKind.CURRENT_ADDRESS: self.current_address,
            AttributeKind.GENDER: self.gender,
        }[kind]

    def present_kinds(self) -> frozenset[AttributeKind]:
        return frozenset(k for k in AttributeKind if self.value_of(k) is not None)

    def mds_values(self) -> dict[AttributeKind, str]:
        """All present attribute values, keyed by kind."""
        return {k: v for k in AttributeKind if (v := self.value_of(k)) is not None}


class Sector(Enum):
    PUBLIC = "public"
    NON_PUBLIC = "non-public"


@dataclass(frozen=True)
class ServiceProvider:
    """A relying service; always requests at least the four mandatory attributes."""

    sp_id: str
    home_state: str
    requested_attributes: frozenset[AttributeKind] = frozenset()
    required_loa: AssuranceLevel = AssuranceLevel.SUBSTANTIAL
    sector: Sector = Sector.NON_PUBLIC
    hard_required: frozenset[AttributeKind] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "requested_attributes", frozenset(self.requested_attributes) | MANDATORY_ATTRIBUTES
        )
        if not self.hard_required <= self.requested_attributes:
            raise InvariantViolation("hard-required attributes must be requested")


class NodeKind(Enum):
    PROXY_BASED = "proxy"
    MIDDLEWARE_BASED = "middleware"


@dataclass(frozen=True)
class EidasNode:
    """Per-state gateway: connector for outbound, proxy/middleware for inbound."""

    state: str
    kind: NodeKind = NodeKind.PROXY_BASED
    connector_address: str = ""
    service_address: str = ""

    def __post_init__(self) -> None:
        if not self.connector_address:
            object.__setattr__(self, "connector_address", f"connector.{self.state.lower()}.sim")
        if not self.service_address:
            tag = "middleware" if self.kind == NodeKind.MIDDLEWARE_BASED else "proxy"
            object.__setattr__(self, "service_address", f"{tag}.{self.state.lower()}.sim")


@dataclass(frozen=True)
class Citizen:
    """An enrolled citizen: identity record plus national credential."""

    citizen_id: str
    origin: str
    identity: PersonIdentity
    credential: str
    uid_secret: str = ""

    def __post_init__(self) -> None:
        if not self.uid_secret:
            object.__setattr__(self, "uid_secret", self.identity.unique_identifier)


@dataclass(frozen=True)
class TraceEntry:
    seq: int
    sim_time: str
    actor: str
    action: str
    correlation_id: str

    def line(self) -> str:
        return f"{self.seq};{self.sim_time};{self.actor};{self.action};{self.correlation_id}"


def format_trace(trace: tuple[TraceEntry, ...]) -> str:
    return "\n".join(entry.line() for entry in trace) + ("\n" if trace else "")


@dataclass
class AuthSession:
    """One in-flight authentication; the step counter tracks the flow stages 1-8."""

    sp: ServiceProvider
    origin_state: str
    destination_state: str
    clock: SimDate
    correlation_id: str
    step: int = 0
    trace: list[TraceEntry] = field(default_factory=list)

    def advance(self, actor: str, action: str, *, to_step: Optional[int] = None) -> None:
        step = self.step + 1 if to_step is None else to_step
        if to_step is not None and to_step <= self.step:
            raise InvariantViolation("session steps must strictly increase")
        self.step = step
        self._record(actor, action)

    def note_hop(self, actor: str, action: str) -> None:
        """Record a routing hop that is not one of the eight flow stages."""
        self._record(actor, action)

    def _record(self, actor: str, action: str) -> None:
        self.trace.append(
            TraceEntry(
                seq=len(self.trace) + 1,
                sim_time=self.clock.isoformat(),
                actor=actor,
                action=action,
                correlation_id=self.correlation_id,
            )
        )


class RecognitionPolicy(Enum):
    """Strict enforces the 12-month mandatory-recognition date; lenient
    accepts any notified scheme (early support is voluntary)."""

    STRICT = "strict"
    LENIENT = "lenient"


@dataclass(frozen=True)
class EidasRequest:
    correlation_id: str
    sp_id: str
    origin_state: str  # the service provider's state
    destination_state: str  # the citizen's home state
    requested_attributes: frozenset[AttributeKind]
    hard_required: frozenset[AttributeKind]
    required_loa: AssuranceLevel
    sector: Sector


@dataclass(frozen=True)
class EidasResponse:
    correlation_id: str
    identity: Optional[PersonIdentity]
    failure: Optional[str]
    asserting_scheme: Optional[str]
    hop_trace: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return self.failure is None and self.identity is not None


@dataclass(frozen=True)
class AuthResult:
    success: bool
    correlation_id: str
    identity: Optional[PersonIdentity] = None
    failure_reason: Optional[str] = None
    failed_step: Optional[int] = None
    trace: tuple[TraceEntry, ...] = ()
    response: Optional[EidasResponse] = None


def _default_correlation_id(sp: ServiceProvider, origin: str, clock: SimDate) -> str:
    seed = f"{sp.sp_id}|{origin}|{clock}".encode()
    return "corr-" + hashlib.sha256(seed).hexdigest()[:12]


def initiate_authentication(
    nodes: Mapping[str, EidasNode],
    sp: ServiceProvider,
    citizen_origin: str,
    clock: SimDate,
    correlation_id: Optional[str] = None,
) -> AuthSession:
    """Stages 1-3: access request, authentication request, origin submission."""
    if sp.home_state not in nodes:
        raise NoNodeForState(f"no node deployed for {sp.home_state}")
    session = AuthSession(
        sp=sp,
        origin_state=citizen_origin,
        destination_state=citizen_origin,
        clock=clock,
        correlation_id=correlation_id or _default_correlation_id(sp, citizen_origin, clock),
    )
    session.advance("citizen", "request-access")
    session.advance(f"service-provider@{sp.home_state}", "request-authentication")
    session.advance(f"service-provider@{sp.home_state}", f"submit-origin:{citizen_origin}")
    return session


def create_eidas_request(
    session: AuthSession,
    registry: FederationRegistry,
    policy: RecognitionPolicy = RecognitionPolicy.LENIENT,
) -> EidasRequest:
    """Stage 4: the connector builds the cross-border request.

    This is the earliest point with full routing knowledge, so recognition
    checks fail here: unnotified destination schemes, a strict-policy date
    check, and assurance-level screening.
    """
    if session.step != 3:
        raise InvariantViolation(f"request creation requires a session at stage 3, not {session.step}")
    scheme = registry.scheme(session.destination_state)
    if scheme.notification.status < NotificationStatus.NOTIFIED:
        raise SchemeNotNotified(
            f"scheme {session.destination_state} is {scheme.notification.status.name}, "
            "recognition requires notified status"
        )
    if policy == RecognitionPolicy.STRICT and not is_recognition_mandatory(
        scheme.notification, session.clock
    ):
        raise RecognitionNotYetMandatory(recognition_mandatory_from(scheme.notification))
    if scheme.assurance < session.sp.required_loa:
        raise LoaInsufficient(
            f"scheme {session.destination_state} asserts {scheme.assurance.name}, "
            f"provider requires {session.sp.required_loa.name}"
        )
    session.advance(f"connector@{session.sp.home_state}", "create-eidas-request")
    return EidasRequest(
        correlation_id=session.correlation_id,
        sp_id=session.sp.sp_id,
        origin_state=session.sp.home_state,
        destination_state=session.destination_state,
        requested_attributes=session.sp.requested_attributes,
        hard_required=session.sp.hard_required,
        required_loa=session.sp.required_loa,
        sector=session.sp.sector,
    )


def derive_unique_identifier(scheme: EidScheme, citizen_secret: str, relying_party: str) -> str:
    """Build the cross-border identifier per the scheme's strategy.

    Static schemes hand out the persistent national code unchanged;
    pseudonym schemes derive a relying-party-specific value with a keyed
    256-bit digest, so different relying parties see unlinkable identifiers.
    """
    if scheme.uid_strategy == UidStrategy.STATIC:
        return citizen_secret
    mac = hmac.new(citizen_secret.encode(), relying_party.encode(), hashlib.sha256)
    return mac.hexdigest()


def _relying_party_scope(request: EidasRequest) -> str:
    # Public-sector bodies share one pseudonym scope per state; everyone else
    # is scoped to the individual relying party.
    if request.sector == Sector.PUBLIC:
        return request.origin_state
    return request.sp_id


def authenticate_national(
    node: EidasNode,
    request: EidasRequest,
    citizen: Citizen,
    presented_credential: str,
    registry: FederationRegistry,
) -> EidasResponse:
    """Stages 5-6: national authentication and response assembly.

    On success the returned identity is filtered to the intersection of the
    requested attributes and what the scheme can assert; requested additional
    attributes the scheme lacks are silently absent unless the provider
    marked them hard-required.
    """
    if node.state != request.destination_state:
        raise InvariantViolation(
            f"request for {request.destination_state} routed to node {node.state}"
        )
    scheme = registry.scheme(node.state)
    hops = (f"national-identity-provider@{node.state}", f"eidas-node@{node.state}")

    if not hmac.compare_digest(presented_credential, citizen.credential):
        return EidasResponse(request.correlation_id, None, CREDENTIAL_FAILURE, node.state, hops)

    unavailable = request.hard_required - scheme.attributes
    if unavailable:
        codes = ",".join(sorted(k.code for k in unavailable))
        return EidasResponse(
            request.correlation_id,
            None,
            f"{ATTRIBUTE_UNAVAILABLE}:{codes}",
            node.state,
            hops,
        )

    released = request.requested_attributes & scheme.attributes
    uid = derive_unique_identifier(scheme, citizen.uid_secret, _relying_party_scope(request))

    def pick(kind: AttributeKind) -> Optional[str]:
        return citizen.identity.value_of(kind) if kind in released else None

    identity = PersonIdentity(
        family_name=citizen.identity.family_name,
        first_name=citizen.identity.first_name,
        date_of_birth=citizen.identity.date_of_birth,
        unique_identifier=uid,
        birth_name=pick(AttributeKind.BIRTH_NAME),
        place_of_birth=pick(AttributeKind.PLACE_OF_BIRTH),
        current_address=pick(AttributeKind.CURRENT_ADDRESS),
        gender=pick(AttributeKind.GENDER),
    )
    return EidasResponse(request.correlation_id, identity, None, node.state, hops)


def run_full_flow(
    registry: FederationRegistry,
    nodes: Mapping[str, EidasNode],
    sp: ServiceProvider,
    citizen: Citizen,
    clock: SimDate,
    *,
    policy: RecognitionPolicy = RecognitionPolicy.LENIENT,
    presented_credential: Optional[str] = None,
    relay_via_idp: bool = False,
    correlation_id: Optional[str] = None,
) -> AuthResult:
    """Run all eight stages and return the outcome with the full hop trace.

    A destination behind a middleware-based node gets an extra routing hop at
    the sending side, where the middleware is deployed. Failures before the
    national leg abort the flow; a failed national authentication still
    travels back as a failure response.
    """
    credential = citizen.credential if presented_credential is None else presented_credential
    try:
        session = initiate_authentication(nodes, sp, citizen.origin, clock, correlation_id)
    except SimulationError as exc:
        return AuthResult(
            success=False,
            correlation_id=correlation_id or _default_correlation_id(sp, citizen.origin, clock),
            failure_reason=type(exc).__name__,
            failed_step=2,
        )

    try:
        request = create_eidas_request(session, registry, policy)
        if session.destination_state not in nodes:
            raise NoNodeForState(f"no node deployed for {session.destination_state}")
    except SimulationError as exc:
        return AuthResult(
            success=False,
            correlation_id=session.correlation_id,
            failure_reason=type(exc).__name__,
            failed_step=4,
            trace=tuple(session.trace),
        )

    destination = nodes[session.destination_state]
    if destination.kind == NodeKind.MIDDLEWARE_BASED:
        session.note_hop(f"middleware@{sp.home_state}", "forward-request")

    response = authenticate_national(destination, request, citizen, credential, registry)
    session.advance(f"national-identity-provider@{destination.state}", "authenticate-citizen")
    session.advance(f"eidas-node@{destination.state}", "send-eidas-response")
    if relay_via_idp:
        session.advance(f"national-identity-provider@{sp.home_state}", "relay-response")
    else:
        session.advance(f"connector@{sp.home_state}", "relay-response")
    verdict = "grant-access" if response.ok else "deny-access"
    session.advance(f"service-provider@{sp.home_state}", verdict)

    if not response.ok:
        return AuthResult(
            success=False,
            correlation_id=session.correlation_id,
            failure_reason=response.failure,
            failed_step=5,
            trace=tuple(session.trace),
            response=response,
        )
    return AuthResult(
        success=True,
        correlation_id=session.correlation_id,
        identity=response.identity,
        trace=tuple(session.trace),
        response=response,
    )
