"""Certificates, signature lifecycle, qualification levels, serialization."""

import random

import pytest

from trustfed import trust
from trustfed.dates import SimDate
from trustfed.errors import InvariantViolation

D = SimDate.parse


@pytest.fixture
def trusted():
    tl = trust.TrustedList()
    tl.register_tsp("qtsp", "DE", qualified=True)
    tl.register_tsp("basic", "DE", qualified=False)
    return tl


@pytest.fixture
def alice(trusted):
    """(keypair, certificate) for a natural person at the qualified provider."""
    keypair = trust.DEFAULT_PROVIDER.generate_keypair()
    certificate = trust.issue_certificate(
        trusted,
        "qtsp",
        trust.Subject(trust.SubjectKind.NATURAL_PERSON, "alice"),
        trust.CertificateKind.FOR_SIGNATURE,
        (D("2019-01-01"), D("2021-01-01")),
        qualified_requested=True,
        keypair=keypair,
    )
    return keypair, certificate


CARD = trust.CreationDevice("card", qualified=True)
APP = trust.CreationDevice("app", qualified=False)


# --- issuance -------------------------------------------------------------


def test_qualified_issuer_grants_qualified_certificate(alice):
    _, certificate = alice
    assert certificate.qualified


def test_non_qualified_issuer_downgrades_with_warning(trusted):
    keypair = trust.DEFAULT_PROVIDER.generate_keypair()
    with pytest.warns(trust.QualificationDowngrade):
        certificate = trust.issue_certificate(
            trusted,
            "basic",
            trust.Subject(trust.SubjectKind.NATURAL_PERSON, "bob"),
            trust.CertificateKind.FOR_SIGNATURE,
            (D("2019-01-01"), D("2021-01-01")),
            qualified_requested=True,
            keypair=keypair,
        )
    assert not certificate.qualified


def test_unknown_tsp_and_empty_validity(trusted):
    keypair = trust.DEFAULT_PROVIDER.generate_keypair()
    with pytest.raises(trust.UnknownTsp):
        trust.issue_certificate(
            trusted,
            "nobody",
            trust.Subject(trust.SubjectKind.NATURAL_PERSON, "x"),
            trust.CertificateKind.FOR_SIGNATURE,
            (D("2019-01-01"), D("2021-01-01")),
            qualified_requested=False,
            keypair=keypair,
        )
    with pytest.raises(InvariantViolation):
        trust.issue_certificate(
            trusted,
            "qtsp",
            trust.Subject(trust.SubjectKind.NATURAL_PERSON, "x"),
            trust.CertificateKind.FOR_SIGNATURE,
            (D("2019-01-01"), D("2019-01-01")),
            qualified_requested=False,
            keypair=keypair,
        )


def test_seal_certificates_bind_legal_persons(trusted):
    keypair = trust.DEFAULT_PROVIDER.generate_keypair()
    with pytest.raises(InvariantViolation):
        trust.issue_certificate(
            trusted,
            "qtsp",
            trust.Subject(trust.SubjectKind.NATURAL_PERSON, "alice"),
            trust.CertificateKind.FOR_SEAL,
            (D("2019-01-01"), D("2021-01-01")),
            qualified_requested=True,
            keypair=keypair,
        )


# --- signing ---------------------------------------------------------------


def test_sign_validate_round_trip(trusted, alice):
    keypair, certificate = alice
    content = b"medical report, unchanged"
    signature = trust.sign(content, keypair, certificate, CARD, D("2019-06-01"))
    verdict = trust.validate(content, signature, trusted, D("2019-06-01"))
    assert verdict.is_valid


def test_signing_outside_validity_fails(alice):
    keypair, certificate = alice
    with pytest.raises(trust.CertificateExpired):
        trust.sign(b"x", keypair, certificate, CARD, D("2021-01-02"))
    with pytest.raises(trust.CertificateExpired):
        trust.sign(b"x", keypair, certificate, CARD, D("2018-12-31"))


def test_wrong_certificate_kind_for_seal_path(trusted):
    keypair = trust.DEFAULT_PROVIDER.generate_keypair()
    seal_cert = trust.issue_certificate(
        trusted,
        "qtsp",
        trust.Subject(trust.SubjectKind.LEGAL_PERSON, "hospital"),
        trust.CertificateKind.FOR_SEAL,
        (D("2019-01-01"), D("2021-01-01")),
        qualified_requested=True,
        keypair=keypair,
    )
    with pytest.raises(trust.WrongCertificateKind):
        trust.sign(b"x", keypair, seal_cert, CARD, D("2019-06-01"))
    # The seal path accepts it.
    sealed = trust.seal(b"x", keypair, seal_cert, CARD, D("2019-06-01"))
    assert trust.validate(b"x", sealed, trusted, D("2019-06-01")).is_valid


def test_key_mismatch_is_refused(alice):
    _, certificate = alice
    other = trust.DEFAULT_PROVIDER.generate_keypair()
    with pytest.raises(trust.KeyMismatch):
        trust.sign(b"x", other, certificate, CARD, D("2019-06-01"))


# --- classification ------------------------------------------------------------


def test_qualification_truth_table(trusted):
    # Qualified exactly when certificate and device are both qualified.
    for cert_q in (False, True):
        for dev_q in (False, True):
            keypair = trust.DEFAULT_PROVIDER.generate_keypair()
            certificate = trust.issue_certificate(
                trusted,
                "qtsp",
                trust.Subject(trust.SubjectKind.NATURAL_PERSON, "p"),
                trust.CertificateKind.FOR_SIGNATURE,
                (D("2019-01-01"), D("2021-01-01")),
                qualified_requested=cert_q,
                keypair=keypair,
            )
            device = trust.CreationDevice("d", qualified=dev_q)
            signature = trust.sign(b"data", keypair, certificate, device, D("2019-06-01"))
            level = trust.classify_level(signature, certificate, device)
            expected = (
                trust.SignatureLevel.QUALIFIED
                if (cert_q and dev_q)
                else trust.SignatureLevel.ADVANCED
            )
            assert level == expected, (cert_q, dev_q)


def test_typed_name_assent_is_simple():
    assent = trust.AssentRecord("typed-name", "Alice Example", "alice", D("2019-06-01"))
    assert trust.classify_level(assent) == trust.SignatureLevel.SIMPLE


# --- validation verdicts ------------------------------------------------------------


def test_any_single_byte_flip_invalidates(trusted, alice):
    keypair, certificate = alice
    rng = random.Random(9)
    content = bytes(rng.randrange(256) for _ in range(512))
    signature = trust.sign(content, keypair, certificate, CARD, D("2019-06-01"))
    for _ in range(1000):
        position = rng.randrange(len(content))
        flip = 1 + rng.randrange(255)
        mutated = bytearray(content)
        mutated[position] ^= flip
        verdict = trust.validate(bytes(mutated), signature, trusted, D("2019-06-01"))
        assert verdict.status == trust.VerdictStatus.INVALID
        assert verdict.reason == "DigestMismatch"


def test_signature_never_verifies_under_another_key(trusted, alice):
    keypair, certificate = alice
    content = b"payload"
    signature = trust.sign(content, keypair, certificate, CARD, D("2019-06-01"))
    for _ in range(25):
        other = trust.DEFAULT_PROVIDER.generate_keypair()
        assert not trust.DEFAULT_PROVIDER.verify(other.public_part, signature.digest, signature.value)


def test_validation_after_lapse_is_indeterminate(trusted, alice):
    keypair, certificate = alice
    signature = trust.sign(b"content", keypair, certificate, CARD, D("2019-06-01"))
    # Certificate runs to 2021-01-01; the day after, anchoring is gone but the
    # cryptography still checks out.
    verdict = trust.validate(b"content", signature, trusted, D("2021-01-02"))
    assert verdict.status == trust.VerdictStatus.INDETERMINATE
    assert verdict.reason == "ProtectionLapsed"
    assert trust.validate(b"content", signature, trusted, D("2021-01-01")).is_valid


def test_unknown_certificate_is_indeterminate(trusted, alice):
    keypair, certificate = alice
    signature = trust.sign(b"content", keypair, certificate, CARD, D("2019-06-01"))
    fresh = trust.TrustedList()
    verdict = trust.validate(b"content", signature, fresh, D("2019-06-01"))
    assert verdict.status == trust.VerdictStatus.INDETERMINATE
    assert verdict.reason == "CertificateUnknown"


# --- timestamp extension ----------------------------------------------------------------


TSA = trust.TimestampAuthority("tsa-eu", qualified=True, lifetime_months=36)


def test_extension_before_expiry_keeps_validity(trusted, alice):
    keypair, certificate = alice
    signature = trust.sign(b"content", keypair, certificate, CARD, D("2019-06-01"))
    extended = trust.extend(signature, TSA, D("2020-12-31"), trusted)
    assert len(extended.timestamps) == 1
    # Past the old certificate expiry the extended signature stays valid,
    # while the unextended one has lapsed.
    assert trust.validate(b"content", extended, trusted, D("2021-06-01")).is_valid
    assert (
        trust.validate(b"content", signature, trusted, D("2021-06-01")).status
        == trust.VerdictStatus.INDETERMINATE
    )
    # 2020-12-31 + 36 months: protection now ends 2023-12-31.
    assert trust.protection_end(extended, certificate) == D("2023-12-31")
    assert (
        trust.validate(b"content", extended, trusted, D("2024-01-01")).status
        == trust.VerdictStatus.INDETERMINATE
    )


def test_extension_after_lapse_is_refused(trusted, alice):
    keypair, certificate = alice
    signature = trust.sign(b"content", keypair, certificate, CARD, D("2019-06-01"))
    with pytest.raises(trust.ProtectionAlreadyLapsed):
        trust.extend(signature, TSA, D("2021-02-01"), trusted)


def test_two_extensions_build_an_increasing_chain(trusted, alice):
    keypair, certificate = alice
    signature = trust.sign(b"content", keypair, certificate, CARD, D("2019-06-01"))
    once = trust.extend(signature, TSA, D("2020-12-01"), trusted)
    twice = trust.extend(once, TSA, D("2023-11-01"), trusted)
    assert len(twice.timestamps) == 2
    assert twice.timestamps[0].applied_on < twice.timestamps[1].applied_on
    with pytest.raises(InvariantViolation):
        trust.extend(twice, TSA, D("2023-11-01"), trusted)


def test_chain_gap_does_not_extend_protection(trusted, alice):
    keypair, certificate = alice
    signature = trust.sign(b"content", keypair, certificate, CARD, D("2019-06-01"))
    # A stamp applied in 2022 after the 2021 expiry must not count, even if
    # smuggled into the chain directly.
    gap = trust.Timestamp("tsa-eu", D("2022-01-01"), signature.digest, D("2025-01-01"), True)
    forged = trust.Signature(
        signature.digest,
        signature.value,
        signature.certificate_serial,
        signature.created_on,
        signature.device_id,
        (gap,),
    )
    assert trust.protection_end(forged, certificate) == certificate.not_after


# --- serialization ------------------------------------------------------------------------


def test_signature_line_round_trip(trusted, alice):
    keypair, certificate = alice
    signature = trust.sign(b"content", keypair, certificate, CARD, D("2019-06-01"))
    extended = trust.extend(signature, TSA, D("2020-12-01"), trusted)
    for sig in (signature, extended):
        line = trust.serialize_signature(sig)
        assert trust.parse_signature(line) == sig


def test_trusted_list_file_round_trip(trusted, alice):
    _, certificate = alice
    text = trust.serialize_trusted_list(trusted)
    parsed = trust.parse_trusted_list(text)
    assert set(parsed.tsps) == set(trusted.tsps)
    assert parsed.certificate(certificate.serial) == certificate
    assert parsed.tsp("qtsp").issued == [certificate.serial]
