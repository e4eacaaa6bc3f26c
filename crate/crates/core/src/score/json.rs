//! Human-editable JSON scores:
//!
//! ```json
//! {"tpq": 480, "tempo": [[0, 500000]], "tracks": {"piano": [[0, 480, 60, 90]]}}
//! ```
//!
//! `tempo` is optional. Each note is `[on_tick, off_tick, pitch, velocity]`.

use serde_json::{json, Map, Value};

use super::{Note, Score, ScoreError, TempoChange, Track};

fn schema(path: impl Into<String>, msg: impl Into<String>) -> ScoreError {
    ScoreError::Schema {
        path: path.into(),
        msg: msg.into(),
    }
}

fn uint(v: &Value, path: &str, max: u64) -> Result<u64, ScoreError> {
    let n = v
        .as_u64()
        .ok_or_else(|| schema(path, format!("expected a non-negative integer, got {v}")))?;
    if n > max {
        return Err(schema(path, format!("{n} exceeds maximum {max}")));
    }
    Ok(n)
}

fn array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>, ScoreError> {
    v.as_array()
        .ok_or_else(|| schema(path, format!("expected an array, got {v}")))
}

pub fn parse_score_json(text: &str) -> Result<Score, ScoreError> {
    let root: Value =
        serde_json::from_str(text).map_err(|e| schema("$", format!("invalid JSON: {e}")))?;
    let obj = root
        .as_object()
        .ok_or_else(|| schema("$", "expected an object"))?;
    for key in obj.keys() {
        if !matches!(key.as_str(), "tpq" | "tempo" | "tracks") {
            return Err(schema(format!("$.{key}"), "unknown field"));
        }
    }
    let tpq = uint(
        obj.get("tpq").ok_or_else(|| schema("$.tpq", "missing"))?,
        "$.tpq",
        u64::from(u16::MAX),
    )? as u16;
    if tpq == 0 {
        return Err(schema("$.tpq", "must be positive"));
    }

    let mut tempo_map = Vec::new();
    if let Some(tempo) = obj.get("tempo") {
        for (i, entry) in array(tempo, "$.tempo")?.iter().enumerate() {
            let path = format!("$.tempo[{i}]");
            let pair = array(entry, &path)?;
            if pair.len() != 2 {
                return Err(schema(&path, "expected [tick, us_per_quarter]"));
            }
            let tick = uint(&pair[0], &format!("{path}[0]"), u64::MAX)?;
            let us = uint(&pair[1], &format!("{path}[1]"), 0xFF_FFFF)? as u32;
            if us == 0 {
                return Err(schema(format!("{path}[1]"), "tempo must be positive"));
            }
            tempo_map.push(TempoChange {
                tick,
                us_per_quarter: us,
            });
        }
    }

    let tracks_val = obj
        .get("tracks")
        .ok_or_else(|| schema("$.tracks", "missing"))?;
    let tracks_obj = tracks_val
        .as_object()
        .ok_or_else(|| schema("$.tracks", "expected an object of track name -> notes"))?;
    let mut tracks = Vec::with_capacity(tracks_obj.len());
    for (name, notes_val) in tracks_obj {
        let tpath = format!("$.tracks.{name}");
        let mut notes = Vec::new();
        for (i, nv) in array(notes_val, &tpath)?.iter().enumerate() {
            let path = format!("{tpath}[{i}]");
            let fields = array(nv, &path)?;
            if fields.len() != 4 {
                return Err(schema(&path, "expected [on_tick, off_tick, pitch, velocity]"));
            }
            let on = uint(&fields[0], &format!("{path}[0]"), u64::MAX)?;
            let off = uint(&fields[1], &format!("{path}[1]"), u64::MAX)?;
            let pitch = uint(&fields[2], &format!("{path}[2]"), 127)? as u8;
            let velocity = uint(&fields[3], &format!("{path}[3]"), 127)? as u8;
            if off <= on {
                return Err(schema(
                    format!("{path}[1]"),
                    format!("offset {off} must exceed onset {on}"),
                ));
            }
            notes.push(Note {
                onset_ticks: on,
                offset_ticks: off,
                pitch,
                velocity,
            });
        }
        tracks.push(Track {
            name: name.clone(),
            notes,
        });
    }
    Score::new(tpq, tempo_map, tracks)
}

pub fn score_to_json(score: &Score) -> String {
    let mut tracks = Map::new();
    for t in &score.tracks {
        let notes: Vec<Value> = t
            .notes
            .iter()
            .map(|n| json!([n.onset_ticks, n.offset_ticks, n.pitch, n.velocity]))
            .collect();
        tracks.insert(t.name.clone(), Value::Array(notes));
    }
    let tempo: Vec<Value> = score
        .tempo_map
        .iter()
        .map(|c| json!([c.tick, c.us_per_quarter]))
        .collect();
    json!({"tpq": score.ticks_per_quarter, "tempo": tempo, "tracks": tracks}).to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document() {
        let s = parse_score_json(r#"{"tpq":480,"tracks":{"piano":[[0,480,60,90]]}}"#).unwrap();
        assert_eq!(s.n_notes(), 1);
        assert_eq!(s.tracks[0].name, "piano");
        assert_eq!(s.tempo_map.len(), 1);
    }

    #[test]
    fn negative_duration_is_schema_error_with_path() {
        let err = parse_score_json(r#"{"tpq":480,"tracks":{"bass":[[0,10,40,90],[500,480,40,90]]}}"#)
            .unwrap_err();
        match err {
            ScoreError::Schema { path, .. } => assert_eq!(path, "$.tracks.bass[1][1]"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schema_paths_for_bad_fields() {
        let cases = [
            (r#"[]"#, "$"),
            (r#"{"tracks":{}}"#, "$.tpq"),
            (r#"{"tpq":0,"tracks":{}}"#, "$.tpq"),
            (r#"{"tpq":96,"tracks":{"p":[[0,1,200,9]]}}"#, "$.tracks.p[0][2]"),
            (r#"{"tpq":96,"tempo":[[0]],"tracks":{}}"#, "$.tempo[0]"),
            (r#"{"tpq":96,"tracks":{"p":[[0,-1,60,9]]}}"#, "$.tracks.p[0][1]"),
            (r#"{"tpq":96,"tracks":{},"extra":1}"#, "$.extra"),
            (r#"{"tpq":96"#, "$"),
        ];
        for (text, want) in cases {
            match parse_score_json(text) {
                Err(ScoreError::Schema { path, .. }) => assert_eq!(path, want, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn writer_round_trips() {
        let text = r#"{"tpq":96,"tempo":[[0,600000],[96,300000]],"tracks":{"bass":[[0,96,40,70]],"piano":[[10,50,60,90]]}}"#;
        let s = parse_score_json(text).unwrap();
        assert_eq!(parse_score_json(&score_to_json(&s)).unwrap(), s);
    }
}
