//! Report parsing against a frozen 30-case corpus.
//!
//! `tests/data/junit/mixed_30.xml` mixes three suites, every outcome class,
//! empty classnames/names, CDATA, entities, both quote styles, and messages
//! salted with the volatile junk signature normalization must scrub. The
//! expected decoding below was enumerated by hand from that document; the
//! test asserts full equality, so any parser drift shows up as a concrete
//! case-by-case diff.

mod common;

use tdd_governor::testrun::{
    compute_signature, normalize_message, parse_report, CaseOutcome, ReportFormat, TestCase,
    TestReport,
};

fn fixture(name: &str) -> Vec<u8> {
    std::fs::read(common::data_dir().join("junit").join(name)).expect("fixture readable")
}

/// (test_id, outcome, message) for all 30 cases, in document order.
fn expected_cases() -> Vec<(&'static str, CaseOutcome, &'static str)> {
    use CaseOutcome::{Error, Fail, Pass};
    vec![
        ("app.core::test_parse_empty", Pass, ""),
        ("app.core::test_parse_basic", Pass, ""),
        ("app.core::test_parse_unicode", Pass, ""),
        ("app.core::test_roundtrip", Fail, "AssertionError: assert 41 == 42\nexpected 42\ngot 41"),
        (
            "app.core::test_overflow_guard",
            Fail,
            "OverflowError: value 9999999999 at 0x7fffdead0123 too large",
        ),
        ("app.core::test_timezone", Pass, ""),
        ("app.core::test_entities", Fail, "expected <ok> but got \"fail & burn\""),
        // A skip is not evidence of failure: outcome pass, message kept.
        ("app.core::test_skip_slow", Pass, "requires network"),
        ("app.core::test_large_input", Pass, ""),
        ("app.core::test_cache_hit", Pass, ""),
        ("app.io::test_read_file", Pass, ""),
        (
            "app.io::test_write_file",
            Fail,
            "IOError: disk quota exceeded at /var/data/cell-7/segment\nraw trace: open(/var/data/cell-7/segment) -> EDQUOT",
        ),
        ("app.io::test_mmap", Error, "OSError: mmap failed at 0xDEADBEEF after 15ms"),
        ("app.io::test_fsync", Pass, ""),
        (
            "tests/test_collect_a.py",
            Error,
            "collection failure\nImportError: no module named helpers",
        ),
        // Neither classname nor name: synthetic id from the ordinal.
        ("collection::15", Error, "interrupted"),
        ("app.io::test_seek", Pass, ""),
        ("app.io::test_tell", Pass, ""),
        ("app.io::test_truncate", Fail, "AssertionError: assert size == 0"),
        ("app.io::test_flock", Pass, ""),
        ("e2e.flows::test_signup", Pass, ""),
        (
            "e2e.flows::test_login",
            Fail,
            "TimeoutError: page load exceeded 30 seconds at 2026-03-01T10:15:30Z",
        ),
        ("e2e.flows::test_logout", Pass, ""),
        ("e2e.flows::test_checkout", Error, "RuntimeError: backend 500 at /srv/app/handlers/pay.go:217"),
        ("e2e.flows::test_profile", Pass, ""),
        ("e2e.flows::test_search", Pass, ""),
        ("e2e.flows::test_export", Fail, "Traceback (most recent call last):\n  boom"),
        ("e2e.flows::test_import", Pass, ""),
        // Classname without a name: the classname is the id.
        ("e2e.flows", Pass, ""),
        ("e2e.flows::test_cleanup", Pass, ""),
    ]
}

fn mixed_report() -> TestReport {
    let (cases, suspicious_empty) =
        parse_report(&fixture("mixed_30.xml"), ReportFormat::JunitXml).expect("corpus parses");
    TestReport {
        run_id: "corpus".to_string(),
        command: "n/a".to_string(),
        exit_status: 1,
        cases,
        raw_output: String::new(),
        suspicious_empty,
    }
}

#[test]
fn decodes_all_thirty_cases_exactly() {
    let report = mixed_report();
    assert!(!report.suspicious_empty);

    let expected = expected_cases();
    assert_eq!(report.cases.len(), expected.len());
    for (i, ((id, outcome, message), case)) in
        expected.iter().zip(report.cases.iter()).enumerate()
    {
        assert_eq!(case.test_id, *id, "case {i}: id");
        assert_eq!(case.outcome, *outcome, "case {i} ({id}): outcome");
        assert_eq!(case.message, *message, "case {i} ({id}): message");
    }

    assert_eq!(report.counts(), (19, 7, 4));
    assert!(!report.overall_pass());
}

#[test]
fn durations_come_from_the_time_attribute_in_milliseconds() {
    let report = mixed_report();
    let by_id = |id: &str| -> &TestCase {
        report.cases.iter().find(|c| c.test_id == id).unwrap_or_else(|| panic!("{id} present"))
    };
    assert_eq!(by_id("app.core::test_parse_empty").duration_ms, 11);
    assert_eq!(by_id("app.core::test_large_input").duration_ms, 2500);
    assert_eq!(by_id("app.io::test_mmap").duration_ms, 15);
    assert_eq!(by_id("app.io::test_flock").duration_ms, 33);
    assert_eq!(by_id("e2e.flows::test_cleanup").duration_ms, 40);
    assert_eq!(by_id("app.core::test_parse_basic").duration_ms, 0, "no time attribute");
}

#[test]
fn failing_ids_are_sorted_and_complete() {
    let report = mixed_report();
    assert_eq!(
        report.failing_ids(),
        [
            "app.core::test_entities",
            "app.core::test_overflow_guard",
            "app.core::test_roundtrip",
            "app.io::test_mmap",
            "app.io::test_truncate",
            "app.io::test_write_file",
            "collection::15",
            "e2e.flows::test_checkout",
            "e2e.flows::test_export",
            "e2e.flows::test_login",
            "tests/test_collect_a.py",
        ]
    );
}

#[test]
fn signature_of_the_corpus_uses_the_first_failing_case() {
    let report = mixed_report();
    let sig = compute_signature(&report, None).unwrap();
    // The lexicographically-first failure has no runner-supplied class, so
    // the first message token stands in for it.
    assert_eq!(sig.exception_type, "expected");
    assert_eq!(sig.failing_tests.len(), 11);
    assert_eq!(sig.normalized_message, "expected <ok> but got \"fail & burn\"");
}

#[test]
fn corpus_messages_normalize_to_stable_text() {
    let report = mixed_report();
    let msg = |id: &str| -> &str {
        &report.cases.iter().find(|c| c.test_id == id).unwrap().message
    };
    // Hex address scrubbed, the count kept.
    assert_eq!(
        normalize_message(msg("app.core::test_overflow_guard"), None),
        "OverflowError: value 9999999999 at <ADDR> too large"
    );
    // Foreign absolute paths collapse, in the attribute and the CDATA body.
    assert_eq!(
        normalize_message(msg("app.io::test_write_file"), None),
        "IOError: disk quota exceeded at <PATH> raw trace: open(<PATH>) -> EDQUOT"
    );
    // Line suffix dies with the path; the status code survives.
    assert_eq!(
        normalize_message(msg("e2e.flows::test_checkout"), None),
        "RuntimeError: backend 500 at <PATH>"
    );
    // Timestamp and duration both scrubbed.
    assert_eq!(
        normalize_message(msg("e2e.flows::test_login"), None),
        "TimeoutError: page load exceeded at"
    );
    // Address and duration scrubbed together.
    assert_eq!(
        normalize_message(msg("app.io::test_mmap"), None),
        "OSError: mmap failed at <ADDR> after"
    );
}

#[test]
fn jsonl_fixture_parses_and_dedupes_failing_ids() {
    let (cases, suspicious_empty) =
        parse_report(&fixture("cases.jsonl"), ReportFormat::JsonlCases).expect("jsonl parses");
    assert!(!suspicious_empty);
    assert_eq!(cases.len(), 5);
    assert_eq!(cases[0].test_id, "pkg::alpha");
    assert_eq!(cases[1].duration_ms, 12);

    let report = TestReport {
        run_id: "jsonl".to_string(),
        command: "n/a".to_string(),
        exit_status: 1,
        cases,
        raw_output: String::new(),
        suspicious_empty,
    };
    // pkg::beta fails twice; the id appears once.
    assert_eq!(report.failing_ids(), ["pkg::beta", "pkg::gamma"]);
    assert_eq!(report.counts(), (2, 2, 1));

    let sig = compute_signature(&report, None).unwrap();
    assert_eq!(sig.exception_type, "AssertionError");
    assert_eq!(sig.failing_tests, ["pkg::beta", "pkg::gamma"]);
}
