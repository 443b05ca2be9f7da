use roadspeed_core::ingest::{parse_detection_stream, write_detection_stream};

const GOLDEN: &str = include_str!("../../../fixtures/golden_detections.jsonl");

#[test]
fn golden_stream_round_trips_byte_for_byte() {
    let batches = parse_detection_stream(GOLDEN.as_bytes(), 0.0).unwrap();
    assert_eq!(batches.iter().map(|b| b.frame).collect::<Vec<_>>(), vec![0, 1, 3]);
    let mut out = Vec::new();
    write_detection_stream(&mut out, &batches).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), GOLDEN);
}

#[test]
fn golden_stream_respects_threshold() {
    let total: usize = parse_detection_stream(GOLDEN.as_bytes(), 0.3)
        .unwrap()
        .iter()
        .map(|b| b.detections.len())
        .sum();
    assert_eq!(total, 5);
    let total: usize = parse_detection_stream(GOLDEN.as_bytes(), 0.65)
        .unwrap()
        .iter()
        .map(|b| b.detections.len())
        .sum();
    assert_eq!(total, 3);
}
