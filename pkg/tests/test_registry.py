"""Notification state machine, recognition timeline, and registry data files."""

import random

import pytest

from trustfed.dates import SimDate
from trustfed.errors import InvariantViolation, ParseError
from trustfed.registry import (
    MANDATORY_ATTRIBUTES,
    AttributeKind,
    NotificationRecord,
    NotificationStatus,
    NotificationStep,
    OutOfOrderStep,
    TimingViolation,
    UnknownCountry,
    advance_notification,
    bundled_registry,
    is_recognition_mandatory,
    lint_against_reference,
    load_registry,
    recognition_mandatory_from,
    scheme_attributes,
)

D = SimDate.parse


def attrs(*codes: str) -> frozenset:
    return frozenset(AttributeKind.from_code(c) for c in codes)


# --- advance_notification ------------------------------------------------------


def test_first_transition_has_no_timing_guard():
    record = advance_notification(NotificationRecord(), NotificationStep.PRE_NOTIFY, D("2017-01-10"))
    assert record.status == NotificationStatus.PRE_NOTIFIED
    assert record.pre_notified_on == D("2017-01-10")


def test_notify_before_six_month_wait_is_a_timing_violation():
    # 2017-01-10 + 6 months = 2017-07-10, so notifying on 2017-04-01 is early.
    record = NotificationRecord(
        NotificationStatus.PEER_REVIEWED,
        pre_notified_on=D("2017-01-10"),
        reviewed_on=D("2017-02-15"),
    )
    with pytest.raises(TimingViolation):
        advance_notification(record, NotificationStep.NOTIFY, D("2017-04-01"))
    # On the boundary itself the transition is allowed.
    ok = advance_notification(record, NotificationStep.NOTIFY, D("2017-07-10"))
    assert ok.notified_on == D("2017-07-10")


def test_skipping_a_stage_is_out_of_order():
    record = NotificationRecord(NotificationStatus.PRE_NOTIFIED, pre_notified_on=D("2017-01-10"))
    with pytest.raises(OutOfOrderStep):
        advance_notification(record, NotificationStep.NOTIFY, D("2017-08-01"))
    with pytest.raises(OutOfOrderStep):
        advance_notification(record, NotificationStep.PRE_NOTIFY, D("2017-08-01"))


def test_review_deadline_is_three_months():
    record = NotificationRecord(NotificationStatus.PRE_NOTIFIED, pre_notified_on=D("2017-01-10"))
    with pytest.raises(TimingViolation):
        advance_notification(record, NotificationStep.REVIEW, D("2017-04-11"))
    assert (
        advance_notification(record, NotificationStep.REVIEW, D("2017-04-10")).status
        == NotificationStatus.PEER_REVIEWED
    )


def test_publication_deadline_is_two_months():
    record = NotificationRecord(
        NotificationStatus.NOTIFIED,
        pre_notified_on=D("2017-01-10"),
        reviewed_on=D("2017-03-01"),
        notified_on=D("2017-07-10"),
    )
    with pytest.raises(TimingViolation):
        advance_notification(record, NotificationStep.PUBLISH, D("2017-09-11"))
    assert (
        advance_notification(record, NotificationStep.PUBLISH, D("2017-09-10")).published_on
        == D("2017-09-10")
    )


def test_replaying_germany_to_publication_is_accepted():
    # Germany published 26 Sep 2017; replay the full chain from the bundled
    # synthetic pre-notification date.
    record = NotificationRecord()
    record = advance_notification(record, NotificationStep.PRE_NOTIFY, D("2017-03-26"))
    record = advance_notification(record, NotificationStep.REVIEW, D("2017-06-26"))
    record = advance_notification(record, NotificationStep.NOTIFY, D("2017-09-26"))
    record = advance_notification(record, NotificationStep.PUBLISH, D("2017-09-26"))
    assert record.status == NotificationStatus.PUBLISHED
    assert record.published_on == D("2017-09-26")
    assert record == bundled_registry().scheme("DE").notification


def test_random_transition_sequences_never_build_an_invalid_record():
    rng = random.Random(77)
    steps = (
        NotificationStep.PRE_NOTIFY,
        NotificationStep.REVIEW,
        NotificationStep.NOTIFY,
        NotificationStep.PUBLISH,
    )
    for _ in range(300):
        record = NotificationRecord()
        base = SimDate(2015 + rng.randrange(4), 1 + rng.randrange(12), 1 + rng.randrange(28))
        for step in steps:
            on = base.add_days(rng.randrange(0, 400))
            try:
                record = advance_notification(record, step, on)
            except TimingViolation:
                break
        # Whatever was reached must re-validate as a record: the constructor
        # re-checks presence, monotonicity, and every deadline guard.
        NotificationRecord(
            record.status,
            record.pre_notified_on,
            record.reviewed_on,
            record.notified_on,
            record.published_on,
        )


# --- recognition timeline ---------------------------------------------------------


def test_recognition_boundary_around_twelve_months():
    germany = bundled_registry().scheme("DE").notification
    assert recognition_mandatory_from(germany) == D("2018-09-26")
    assert not is_recognition_mandatory(germany, D("2018-09-25"))
    assert is_recognition_mandatory(germany, D("2018-09-26"))


def test_unpublished_schemes_are_never_mandatory():
    netherlands = bundled_registry().scheme("NL").notification
    assert netherlands.status == NotificationStatus.PEER_REVIEWED
    for date in ("2019-06-06", "2025-01-01", "2099-12-31"):
        assert not is_recognition_mandatory(netherlands, D(date))


def test_recognition_is_monotone_in_time():
    rng = random.Random(5)
    germany = bundled_registry().scheme("DE").notification
    flipped = False
    day = D("2018-01-01")
    for _ in range(60):
        day = day.add_days(rng.randrange(1, 30))
        now = is_recognition_mandatory(germany, day)
        assert not (flipped and not now), "recognition flipped back to voluntary"
        flipped = flipped or now


# --- scheme attributes ------------------------------------------------------------


def test_scheme_attribute_sets_from_reference_data():
    registry = bundled_registry()
    germany = scheme_attributes(registry, "DE")
    assert germany.known
    assert germany.attributes == attrs("LN", "FN", "BD", "ID", "BN", "BP", "A")
    assert AttributeKind.GENDER not in germany.attributes

    italy = scheme_attributes(registry, "IT")
    assert italy.attributes == attrs("LN", "FN", "BD", "ID", "BN")

    austria = scheme_attributes(registry, "AT")
    assert not austria.known
    assert austria.attributes == frozenset()

    with pytest.raises(UnknownCountry):
        scheme_attributes(registry, "XX")


def test_mandatory_attributes_present_for_all_notified_schemes():
    registry = bundled_registry()
    for country, scheme in registry.schemes.items():
        if scheme.notification.status >= NotificationStatus.NOTIFIED:
            assert MANDATORY_ATTRIBUTES <= scheme.attributes, country


# --- data file loading ----------------------------------------------------------------


def test_bundled_file_loads_eight_schemes_five_published():
    registry = bundled_registry()
    assert len(registry.schemes) == 8
    published = [
        c
        for c, s in registry.schemes.items()
        if s.notification.status == NotificationStatus.PUBLISHED
    ]
    assert sorted(published) == ["BE", "DE", "IT", "LU", "PT"]


def test_empty_file_gives_empty_registry():
    registry = load_registry("", lint=False)
    assert registry.schemes == {}


def test_divergent_attribute_data_loads_with_lint_warning():
    # Gender added to the German row: the file is authoritative, so this
    # loads fine; the lint diff against the reference flags it.
    text = "DE;published;2017-09-26;LN,FN,BD,ID,BN,BP,A,G;pseudonym\n"
    registry = load_registry(text)
    assert AttributeKind.GENDER in registry.scheme("DE").attributes
    assert any("DE" in w and "attribute set diverges" in w for w in registry.warnings)


def test_lint_matches_reference_exactly_for_bundled_data():
    assert lint_against_reference(bundled_registry()) == []


def test_parse_errors_carry_line_numbers():
    with pytest.raises(ParseError) as info:
        load_registry("DE;published;2017-09-26;LN,FN,BD,ID;pseudonym\nIT;published;bad-date;LN;static\n")
    assert info.value.line == 2
    with pytest.raises(ParseError) as info:
        load_registry("DE;published\n")
    assert info.value.line == 1
    with pytest.raises(ParseError):
        load_registry("DE;published;2017-09-26;XX,YY;static\n")
    with pytest.raises(ParseError):
        load_registry("DE;sideways;2017-09-26;LN,FN,BD,ID;static\n")


def test_duplicate_country_violates_one_scheme_per_state():
    text = (
        "DE;published;2017-09-26;LN,FN,BD,ID;pseudonym\n"
        "DE;published;2018-01-01;LN,FN,BD,ID;static\n"
    )
    with pytest.raises(InvariantViolation):
        load_registry(text, lint=False)


def test_notified_scheme_without_mandatory_attributes_is_invalid():
    with pytest.raises(InvariantViolation) as info:
        load_registry("DE;published;2017-09-26;LN,FN;pseudonym\n", lint=False)
    assert "DE" in str(info.value)


def test_synthetic_backdating_is_reported():
    registry = bundled_registry()
    assert any("NL" in w and "synthetic" in w for w in registry.warnings)
