use scoreseg_core::score::{
    default_instrument_map, parse_score_json, parse_smf, timeline_from_score, Unit,
};

/// Hand-assembled format-1 SMF: conductor (tempo 480000), "piano" and "bass" tracks.
/// Piano: C4 ticks 0..600 (running status, vel-0 off). Bass: E1 ticks 400..1000.
fn crafted_smf() -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(b"MThd\0\0\0\x06\0\x01\0\x03\x01\xE0");
    let conductor: &[u8] = &[0x00, 0xFF, 0x51, 0x03, 0x07, 0x53, 0x00, 0x00, 0xFF, 0x2F, 0x00];
    let piano: &[u8] = &[
        0x00, 0xFF, 0x03, 0x05, b'p', b'i', b'a', b'n', b'o', 0x00, 0x90, 60, 90, 0x84, 0x58, 60,
        0, 0x00, 0xFF, 0x2F, 0x00,
    ];
    let bass: &[u8] = &[
        0x00, 0xFF, 0x03, 0x04, b'b', b'a', b's', b's', 0x83, 0x10, 0x91, 28, 70, 0x84, 0x58, 0x81,
        28, 0, 0x00, 0xFF, 0x2F, 0x00,
    ];
    for t in [conductor, piano, bass] {
        out.extend_from_slice(b"MTrk");
        out.extend_from_slice(&(t.len() as u32).to_be_bytes());
        out.extend_from_slice(t);
    }
    out
}

const CRAFTED_JSON: &str =
    r#"{"tpq":480,"tempo":[[0,480000]],"tracks":{"piano":[[0,600,60,90]],"bass":[[400,1000,28,70]]}}"#;

#[test]
fn smf_fixture_parses_to_expected_notes() {
    let s = parse_smf(&crafted_smf()).unwrap();
    assert_eq!(s.ticks_per_quarter, 480);
    assert_eq!(s.tempo_map[0].us_per_quarter, 480_000);
    let piano = s.track("piano").unwrap();
    assert_eq!(piano.notes.len(), 1);
    assert_eq!((piano.notes[0].onset_ticks, piano.notes[0].offset_ticks), (0, 600));
    let bass = s.track("bass").unwrap();
    assert_eq!((bass.notes[0].onset_ticks, bass.notes[0].offset_ticks), (400, 1000));
}

#[test]
fn json_and_smf_agree() {
    let a = parse_smf(&crafted_smf()).unwrap();
    let b = parse_score_json(CRAFTED_JSON).unwrap();
    assert_eq!(a.canonical(), b.canonical());
    let map = default_instrument_map();
    let ta = timeline_from_score(&a, &map, 10.0, 100).unwrap();
    let tb = timeline_from_score(&b, &map, 10.0, 100).unwrap();
    assert_eq!(ta, tb);
    // 1 tick = 1 ms at 480 tpq and 480000 us/quarter.
    let got: Vec<(Unit, usize, usize)> = ta.segments().iter().map(|&s| s.into()).collect();
    assert_eq!(
        got,
        vec![(Unit::Piano, 0, 40), (Unit::Mixture, 40, 60), (Unit::Bass, 60, 100)]
    );
}
