"""Member-state eID scheme registry and the staged notification lifecycle.

A national eID scheme moves through pre-notification, peer review,
notification, and journal publication; each stage transition is dated and
guarded by month-based deadlines. Twelve months after publication,
recognition by other member states becomes mandatory.

The registry itself is immutable after loading; state transitions are pure
functions returning new records.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from importlib import resources
from typing import Iterable, NamedTuple, Optional

from .dates import SimDate
from .errors import InvariantViolation, ParseError, SimulationError

# Stage deadlines, in calendar months.
REVIEW_DEADLINE_MONTHS = 3      # peer review completes at most 3 months in
NOTIFY_WAIT_MONTHS = 6          # notification at the earliest 6 months after pre-notification
PUBLISH_DEADLINE_MONTHS = 2     # journal publication at the latest 2 months after notification
RECOGNITION_GRACE_MONTHS = 12   # recognition mandatory 12 months after publication


class AttributeKind(Enum):
    """The eight person-identification attributes, keyed by two-letter code."""

    FAMILY_NAME = "LN"
    FIRST_NAME = "FN"
    DATE_OF_BIRTH = "BD"
    UNIQUE_IDENTIFIER = "ID"
    BIRTH_NAME = "BN"
    PLACE_OF_BIRTH = "BP"
    CURRENT_ADDRESS = "A"
    GENDER = "G"

    @classmethod
    def from_code(cls, code: str) -> "AttributeKind":
        for kind in cls:
            if kind.value == code:
                return kind
        raise ValueError(f"unknown attribute code: {code!r}")

    @property
    def code(self) -> str:
        return self.value


MANDATORY_ATTRIBUTES = frozenset(
    {
        AttributeKind.FAMILY_NAME,
        AttributeKind.FIRST_NAME,
        AttributeKind.DATE_OF_BIRTH,
        AttributeKind.UNIQUE_IDENTIFIER,
    }
)

ADDITIONAL_ATTRIBUTES = frozenset(set(AttributeKind) - MANDATORY_ATTRIBUTES)


class AssuranceLevel(IntEnum):
    """Confidence grade of an eID scheme; totally ordered low < substantial < high."""

    LOW = 1
    SUBSTANTIAL = 2
    HIGH = 3

    @classmethod
    def parse(cls, token: str) -> "AssuranceLevel":
        try:
            return cls[token.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown assurance level: {token!r}") from None


class NotificationStatus(IntEnum):
    """Lifecycle position of a scheme; ordering follows the process stages."""

    OTHER = 0
    PRE_NOTIFIED = 1
    PEER_REVIEWED = 2
    NOTIFIED = 3
    PUBLISHED = 4


class NotificationStep(Enum):
    """A single forward transition in the notification process."""

    PRE_NOTIFY = "pre-notify"
    REVIEW = "review"
    NOTIFY = "notify"
    PUBLISH = "publish"


_STEP_TARGET = {
    NotificationStep.PRE_NOTIFY: NotificationStatus.PRE_NOTIFIED,
    NotificationStep.REVIEW: NotificationStatus.PEER_REVIEWED,
    NotificationStep.NOTIFY: NotificationStatus.NOTIFIED,
    NotificationStep.PUBLISH: NotificationStatus.PUBLISHED,
}


class UidStrategy(Enum):
    """How a scheme constructs the cross-border unique identifier."""

    STATIC = "static"
    RELYING_PARTY_PSEUDONYM = "pseudonym"


class OutOfOrderStep(SimulationError):
    """A notification step was attempted out of sequence."""


class TimingViolation(SimulationError):
    """A dated transition breaches one of the month-based deadline guards."""


class UnknownCountry(SimulationError):
    """No scheme is registered for the requested country code."""


@dataclass(frozen=True)
class NotificationRecord:
    """Dated lifecycle state of one scheme's notification process."""

    status: NotificationStatus = NotificationStatus.OTHER
    pre_notified_on: Optional[SimDate] = None
    reviewed_on: Optional[SimDate] = None
    notified_on: Optional[SimDate] = None
    published_on: Optional[SimDate] = None

    def __post_init__(self) -> None:
        stages = (
            (NotificationStatus.PRE_NOTIFIED, self.pre_notified_on, "pre_notified_on"),
            (NotificationStatus.PEER_REVIEWED, self.reviewed_on, "reviewed_on"),
            (NotificationStatus.NOTIFIED, self.notified_on, "notified_on"),
            (NotificationStatus.PUBLISHED, self.published_on, "published_on"),
        )
        for reached, date, name in stages:
            if (self.status >= reached) != (date is not None):
                raise InvariantViolation(
                    f"{name} must be set exactly when status >= {reached.name}"
                )
        dated = [d for _, d, _ in stages if d is not None]
        if any(a > b for a, b in zip(dated, dated[1:])):
            raise InvariantViolation("transition dates must be non-decreasing")
        if self.reviewed_on is not None and self.pre_notified_on is not None:
            if self.reviewed_on > self.pre_notified_on.add_months(REVIEW_DEADLINE_MONTHS):
                raise InvariantViolation("peer review completed later than 3 months in")
        if self.notified_on is not None and self.pre_notified_on is not None:
            if self.notified_on < self.pre_notified_on.add_months(NOTIFY_WAIT_MONTHS):
                raise InvariantViolation("notification earlier than 6 months after pre-notification")
        if self.published_on is not None and self.notified_on is not None:
            if self.published_on > self.notified_on.add_months(PUBLISH_DEADLINE_MONTHS):
                raise InvariantViolation("publication later than 2 months after notification")


def advance_notification(
    record: NotificationRecord, step: NotificationStep, on: SimDate
) -> NotificationRecord:
    """Apply the next notification step, enforcing ordering and deadline guards.

    Raises OutOfOrderStep when ``step`` is not the immediate successor of the
    record's status, and TimingViolation when a deadline guard is breached.
    """
    target = _STEP_TARGET[step]
    if target != record.status + 1:
        raise OutOfOrderStep(
            f"cannot apply {step.value} to a record at status {record.status.name}"
        )

    if step == NotificationStep.PRE_NOTIFY:
        return replace(record, status=target, pre_notified_on=on)

    if step == NotificationStep.REVIEW:
        assert record.pre_notified_on is not None
        if on < record.pre_notified_on:
            raise TimingViolation("review dated before pre-notification")
        deadline = record.pre_notified_on.add_months(REVIEW_DEADLINE_MONTHS)
        if on > deadline:
            raise TimingViolation(f"peer review takes 3 months at the most (deadline {deadline})")
        return replace(record, status=target, reviewed_on=on)

    if step == NotificationStep.NOTIFY:
        assert record.pre_notified_on is not None and record.reviewed_on is not None
        if on < record.reviewed_on:
            raise TimingViolation("notification dated before peer review")
        earliest = record.pre_notified_on.add_months(NOTIFY_WAIT_MONTHS)
        if on < earliest:
            raise TimingViolation(
                f"notification at the earliest 6 months after pre-notification ({earliest})"
            )
        return replace(record, status=target, notified_on=on)

    assert record.notified_on is not None
    if on < record.notified_on:
        raise TimingViolation("publication dated before notification")
    deadline = record.notified_on.add_months(PUBLISH_DEADLINE_MONTHS)
    if on > deadline:
        raise TimingViolation(f"publication at the latest 2 months after notification ({deadline})")
    return replace(record, status=target, published_on=on)


def is_recognition_mandatory(record: NotificationRecord, at: SimDate) -> bool:
    """True once 12 months have passed since journal publication."""
    if record.status != NotificationStatus.PUBLISHED:
        return False
    assert record.published_on is not None
    return at >= record.published_on.add_months(RECOGNITION_GRACE_MONTHS)


def recognition_mandatory_from(record: NotificationRecord) -> Optional[SimDate]:
    """Earliest date at which recognition is mandatory, or None if unpublished."""
    if record.status != NotificationStatus.PUBLISHED or record.published_on is None:
        return None
    return record.published_on.add_months(RECOGNITION_GRACE_MONTHS)


@dataclass(frozen=True)
class EidScheme:
    """One member state's eID scheme as carried in the registry."""

    member_state: str
    assurance: AssuranceLevel
    attributes: frozenset[AttributeKind]
    uid_strategy: UidStrategy
    notification: NotificationRecord
    attributes_known: bool = True

    def __post_init__(self) -> None:
        if self.notification.status >= NotificationStatus.NOTIFIED:
            missing = MANDATORY_ATTRIBUTES - self.attributes
            if missing:
                codes = ",".join(sorted(k.code for k in missing))
                raise InvariantViolation(
                    f"scheme {self.member_state}: notified scheme lacks mandatory attributes {codes}"
                )


class SchemeAttributes(NamedTuple):
    """Attribute set of a scheme plus whether the set is actually known."""

    attributes: frozenset[AttributeKind]
    known: bool


@dataclass(frozen=True)
class FederationRegistry:
    """All registered schemes, one per country, plus the registry's own clock.

    Treat as immutable after construction; derive variants via with_clock().
    """

    schemes: dict[str, EidScheme] = field(default_factory=dict)
    clock: SimDate = SimDate(2019, 6, 1)
    warnings: tuple[str, ...] = ()

    def scheme(self, country: str) -> EidScheme:
        try:
            return self.schemes[country]
        except KeyError:
            raise UnknownCountry(f"no scheme registered for {country!r}") from None

    def with_clock(self, clock: SimDate) -> "FederationRegistry":
        return replace(self, clock=clock)


def scheme_attributes(registry: FederationRegistry, country: str) -> SchemeAttributes:
    """Attribute set for a country's scheme; flags unknown sets explicitly."""
    scheme = registry.scheme(country)
    return SchemeAttributes(scheme.attributes, scheme.attributes_known)


# --- data file handling -----------------------------------------------------
#
# One scheme per line: country;status;date;attributes;uid_strategy
#   status       other | pre-notified | peer-reviewed | notified | published
#   date         ISO-8601 date of the status-defining transition, or ? for other
#   attributes   comma list of two-letter codes, or ? when unknown
#   uid_strategy static | pseudonym | ?
#
# Only the status-defining date is recorded; earlier stage dates are
# back-dated deterministically on load and reported as synthetic.

_STATUS_TOKENS = {
    "other": NotificationStatus.OTHER,
    "pre-notified": NotificationStatus.PRE_NOTIFIED,
    "peer-reviewed": NotificationStatus.PEER_REVIEWED,
    "notified": NotificationStatus.NOTIFIED,
    "published": NotificationStatus.PUBLISHED,
}


def _synthesize_record(status: NotificationStatus, date: Optional[SimDate]) -> NotificationRecord:
    if status == NotificationStatus.OTHER:
        return NotificationRecord()
    assert date is not None
    if status == NotificationStatus.PRE_NOTIFIED:
        return NotificationRecord(status, pre_notified_on=date)
    if status == NotificationStatus.PEER_REVIEWED:
        # Pre-notification date is not carried in the file; back-date by the
        # review deadline so the record sits exactly on the guard boundary.
        pre = date.add_months(-REVIEW_DEADLINE_MONTHS)
        return NotificationRecord(status, pre_notified_on=pre, reviewed_on=date)
    pre = date.add_months(-NOTIFY_WAIT_MONTHS)
    reviewed = pre.add_months(REVIEW_DEADLINE_MONTHS)
    if status == NotificationStatus.NOTIFIED:
        return NotificationRecord(status, pre_notified_on=pre, reviewed_on=reviewed, notified_on=date)
    return NotificationRecord(
        status,
        pre_notified_on=pre,
        reviewed_on=reviewed,
        notified_on=date,
        published_on=date,
    )


def _parse_line(line: str, lineno: int) -> EidScheme:
    fields = [f.strip() for f in line.split(";")]
    if len(fields) != 5:
        raise ParseError(f"expected 5 ';'-separated fields, got {len(fields)}", lineno)
    country, status_token, date_token, attr_token, uid_token = fields
    if not country:
        raise ParseError("empty country code", lineno)

    try:
        status = _STATUS_TOKENS[status_token]
    except KeyError:
        raise ParseError(f"unknown status {status_token!r}", lineno) from None

    if date_token == "?":
        if status != NotificationStatus.OTHER:
            raise ParseError(f"status {status_token} requires a date", lineno)
        date = None
    else:
        try:
            date = SimDate.parse(date_token)
        except ValueError as exc:
            raise ParseError(f"bad date {date_token!r}: {exc}", lineno) from None

    if attr_token == "?":
        attributes: frozenset[AttributeKind] = frozenset()
        known = False
    else:
        try:
            attributes = frozenset(
                AttributeKind.from_code(code.strip()) for code in attr_token.split(",") if code.strip()
            )
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        known = True

    if uid_token == "?":
        uid_strategy = UidStrategy.STATIC
    else:
        try:
            uid_strategy = UidStrategy(uid_token)
        except ValueError:
            raise ParseError(f"unknown uid strategy {uid_token!r}", lineno) from None

    record = _synthesize_record(status, date)
    # Assurance is not part of the data format; notified schemes passed peer
    # review at substantial-or-high, so they default to the top grade.
    assurance = (
        AssuranceLevel.HIGH
        if status >= NotificationStatus.NOTIFIED
        else AssuranceLevel.LOW
    )
    return EidScheme(
        member_state=country,
        assurance=assurance,
        attributes=attributes,
        uid_strategy=uid_strategy,
        notification=record,
        attributes_known=known,
    )


def load_registry(source: Iterable[str] | str, *, lint: bool = True) -> FederationRegistry:
    """Parse a registry data stream into a FederationRegistry.

    ``source`` may be the file content as a single string, an iterable of
    lines, or an open text file. Divergences from the bundled reference data
    are reported as warnings on the registry, never as errors; the loaded
    file is authoritative.
    """
    if isinstance(source, str):
        lines: Iterable[str] = io.StringIO(source)
    else:
        lines = source

    schemes: dict[str, EidScheme] = {}
    warnings: list[str] = []
    latest: Optional[SimDate] = None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        scheme = _parse_line(line, lineno)
        if scheme.member_state in schemes:
            raise InvariantViolation(
                f"scheme {scheme.member_state}: more than one scheme for the country"
            )
        schemes[scheme.member_state] = scheme
        rec = scheme.notification
        if rec.status > NotificationStatus.PRE_NOTIFIED and rec.pre_notified_on is not None:
            warnings.append(
                f"{scheme.member_state}: pre-notification back-dated synthetically to "
                f"{rec.pre_notified_on} (only the {rec.status.name.lower()} date is recorded)"
            )
        for d in (rec.pre_notified_on, rec.reviewed_on, rec.notified_on, rec.published_on):
            if d is not None and (latest is None or d > latest):
                latest = d

    clock = latest if latest is not None else SimDate(2019, 6, 1)
    registry = FederationRegistry(schemes=schemes, clock=clock, warnings=tuple(warnings))
    if lint:
        registry = replace(
            registry, warnings=registry.warnings + tuple(lint_against_reference(registry))
        )
    return registry


def load_registry_path(path: str, *, lint: bool = True) -> FederationRegistry:
    with open(path, "r", encoding="utf-8") as handle:
        return load_registry(handle, lint=lint)


def bundled_registry() -> FederationRegistry:
    """The registry shipped with the package (the consortium member states)."""
    text = resources.files("trustfed.data").joinpath("registry.txt").read_text("utf-8")
    return load_registry(text, lint=False)


def lint_against_reference(registry: FederationRegistry) -> list[str]:
    """Diff a loaded registry against the bundled reference data.

    Returns human-readable warnings for every divergence; an empty list means
    the registry matches the reference exactly.
    """
    reference = bundled_registry()
    notes: list[str] = []
    for country, ref in reference.schemes.items():
        if country not in registry.schemes:
            notes.append(f"{country}: present in reference data but missing here")
            continue
        got = registry.schemes[country]
        if got.notification.status != ref.notification.status:
            notes.append(
                f"{country}: status {got.notification.status.name} differs from reference "
                f"{ref.notification.status.name}"
            )
        if got.attributes != ref.attributes or got.attributes_known != ref.attributes_known:
            notes.append(f"{country}: attribute set diverges from reference data")
        if got.uid_strategy != ref.uid_strategy:
            notes.append(f"{country}: uid strategy diverges from reference data")
    for country in registry.schemes:
        if country not in reference.schemes:
            notes.append(f"{country}: not part of the reference data")
    return notes
