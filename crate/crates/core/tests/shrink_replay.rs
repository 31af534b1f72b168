mod common;

use std::fs;

use angleshrink::shrink::{read_log, LogLine, StopReason};

// Set ANGLESHRINK_BLESS=1 to re-record the golden log after an intended change.
#[test]
fn replays_golden_log_bit_exactly() {
    let bytes = common::log_bytes(&common::golden_run());
    if std::env::var_os("ANGLESHRINK_BLESS").is_some() {
        fs::write(common::GOLDEN_LOG, &bytes).unwrap();
    }
    let golden = fs::read(common::GOLDEN_LOG).expect("golden log is checked in");
    assert!(bytes == golden, "shrink log differs from {}", common::GOLDEN_LOG);
}

#[test]
fn golden_log_is_well_formed() {
    let lines = read_log(common::GOLDEN_LOG.as_ref()).unwrap();
    let LogLine::Start { initial_size, .. } = &lines[0] else { panic!("first line is not a start record") };
    assert_eq!(*initial_size, 729);
    let mut size = *initial_size;
    for line in &lines[1..lines.len() - 1] {
        let LogLine::Iteration(r) = line else { panic!("expected iteration record") };
        assert_eq!(r.size_before, size);
        assert!(r.size_after < r.size_before);
        assert_eq!(r.removed.len() + r.shortfall, 2);
        size = r.size_after;
    }
    let LogLine::End { final_size, stop_reason, .. } = lines.last().unwrap() else { panic!("missing end record") };
    assert_eq!(*final_size, size);
    assert!(size <= 100);
    assert_eq!(*stop_reason, Some(StopReason::BelowThreshold));
}
