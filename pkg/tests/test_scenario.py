"""Scenario parsing, execution, and the command-line interface."""

import json

import pytest

from trustfed.cli import main
from trustfed.errors import ParseError
from trustfed.scenario import (
    ForwardReference,
    bundled_scenario_names,
    load_bundled_scenario,
    parse_scenario,
    run_scenario,
)


# --- parsing ---------------------------------------------------------------


def test_bundled_crossborder_scenario_parses():
    scenario = load_bundled_scenario("crossborder_auth")
    assert scenario.name == "crossborder_auth"
    assert scenario.clock.isoformat() == "2019-06-01"
    flows = [d for d in scenario.directives if d.verb == "authenticate"]
    assert len(flows) == 8


def test_empty_input_is_a_runnable_noop():
    scenario = parse_scenario("")
    assert scenario.directives == ()
    report = run_scenario(scenario)
    assert report.passed
    assert report.outcomes == []


def test_forward_reference_is_flagged_with_line_number():
    text = "scenario name=t seed=1\nauthenticate id=f sp=missing citizen=also-missing\n"
    with pytest.raises(ForwardReference) as info:
        parse_scenario(text)
    assert info.value.line == 2


def test_unknown_directive_and_missing_keys():
    with pytest.raises(ParseError):
        parse_scenario("scenario name=t\nfrobnicate id=x\n")
    with pytest.raises(ParseError):
        parse_scenario("scenario name=t\nnode kind=proxy\n")  # no state=
    with pytest.raises(ParseError):
        parse_scenario("node state=DE\n")  # header must come first


def test_health_directives_need_a_platform():
    with pytest.raises(ForwardReference):
        parse_scenario("scenario name=t\naccount id=a email=e phone=p\n")


# --- execution ----------------------------------------------------------------


def test_run_is_deterministic_per_seed():
    scenario = load_bundled_scenario("edelivery_lossy")
    first = run_scenario(scenario)
    second = run_scenario(scenario)
    assert first.log_digest == second.log_digest
    assert run_scenario(scenario, seed=99).log_digest != first.log_digest


def test_failed_expectation_is_reported_not_raised():
    text = (
        "scenario name=t seed=1 clock=2019-06-01\n"
        "node state=PT kind=proxy\n"
        "node state=NL kind=proxy\n"
        "sp id=s state=PT\n"
        "citizen id=c state=NL\n"
        "authenticate id=f sp=s citizen=c expect=success\n"
    )
    report = run_scenario(parse_scenario(text))
    assert not report.passed
    assert any(not o.ok for o in report.outcomes)


def test_report_json_shape():
    report = run_scenario(load_bundled_scenario("signature_lifecycle"))
    payload = json.loads(report.to_json())
    assert payload["scenario"] == "signature_lifecycle"
    assert payload["passed"] is True
    assert payload["log_digest"] == report.log_digest


# --- command-line interface ---------------------------------------------------------


def test_cli_runs_a_bundled_scenario(capsys):
    assert main(["run", "crossborder_auth"]) == 0
    out = capsys.readouterr().out
    assert "result PASS" in out


def test_cli_exit_one_on_failed_assertion(tmp_path, capsys):
    bad = tmp_path / "bad.scn"
    bad.write_text(
        "scenario name=bad seed=1 clock=2019-06-01\n"
        "node state=PT kind=proxy\n"
        "node state=NL kind=proxy\n"
        "sp id=s state=PT\n"
        "citizen id=c state=NL\n"
        "authenticate id=f sp=s citizen=c expect=success\n"
    )
    assert main(["run", str(bad)]) == 1


def test_cli_exit_two_on_unknown_scenario(capsys):
    assert main(["run", "no-such-scenario"]) == 2


def test_cli_exit_two_on_parse_error(tmp_path, capsys):
    broken = tmp_path / "broken.scn"
    broken.write_text("scenario name=x\nfrobnicate\n")
    assert main(["run", str(broken)]) == 2


def test_cli_report_and_log_files(tmp_path):
    report_file = tmp_path / "report.json"
    log_file = tmp_path / "events.log"
    code = main(
        [
            "run",
            "signature_lifecycle",
            "--report",
            str(report_file),
            "--log",
            str(log_file),
        ]
    )
    assert code == 0
    payload = json.loads(report_file.read_text())
    assert payload["passed"] is True
    assert log_file.read_text().strip()


def test_cli_seed_override_changes_digest(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    main(["run", "edelivery_lossy", "--report", str(a)])
    main(["run", "edelivery_lossy", "--seed", "123", "--report", str(b)])
    assert json.loads(a.read_text())["log_digest"] != json.loads(b.read_text())["log_digest"]


def test_cli_list_scenarios(capsys):
    assert main(["list-scenarios"]) == 0
    out = capsys.readouterr().out.split()
    assert out == sorted(bundled_scenario_names())
    assert "crossborder_auth" in out
    assert len(out) == 5


def test_cli_validate_registry(tmp_path, capsys):
    good = tmp_path / "reg.txt"
    good.write_text("DE;published;2017-09-26;LN,FN,BD,ID;pseudonym\n")
    assert main(["validate-registry", str(good)]) == 0

    bad = tmp_path / "bad.txt"
    bad.write_text("DE;published\n")
    assert main(["validate-registry", str(bad)]) == 2


def test_cli_strict_recognition_flag(tmp_path):
    # At a 2018-01-01 clock only Germany is published, but its recognition
    # date (2018-09-26) has not arrived; strict mode must therefore refuse.
    scn = tmp_path / "strict.scn"
    scn.write_text(
        "scenario name=strict seed=1 clock=2018-01-01\n"
        "node state=PT kind=proxy\n"
        "node state=DE kind=proxy\n"
        "sp id=s state=PT\n"
        "citizen id=c state=DE\n"
        "authenticate id=f sp=s citizen=c expect=RecognitionNotYetMandatory\n"
    )
    assert main(["run", str(scn), "--strict-recognition"]) == 0
    assert main(["run", str(scn)]) == 1  # lenient succeeds, so the expect fails
