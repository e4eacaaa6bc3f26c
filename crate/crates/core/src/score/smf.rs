//! Standard MIDI File (format 0/1, metrical division) reading and writing.

use std::collections::{HashMap, VecDeque};

use super::{Note, Score, ScoreError, TempoChange, Track};

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    end: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, offset: usize, msg: impl Into<String>) -> ScoreError {
        ScoreError::Smf {
            offset,
            msg: msg.into(),
        }
    }

    fn byte(&mut self, what: &str) -> Result<u8, ScoreError> {
        if self.pos >= self.end {
            return Err(self.err(self.pos, format!("unexpected end of chunk reading {what}")));
        }
        let b = self.bytes[self.pos];
        self.pos += 1;
        Ok(b)
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ScoreError> {
        if self.end - self.pos < n {
            return Err(self.err(
                self.pos,
                format!("truncated {what}: need {n} bytes, {} left", self.end - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16, ScoreError> {
        let b = self.take(2, what)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32, ScoreError> {
        let b = self.take(4, what)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    /// Variable-length quantity, at most four bytes.
    fn vlq(&mut self, what: &str) -> Result<u64, ScoreError> {
        let start = self.pos;
        let mut v: u64 = 0;
        for _ in 0..4 {
            let b = self.byte(what)?;
            v = (v << 7) | u64::from(b & 0x7F);
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(self.err(start, format!("{what} variable-length quantity exceeds 4 bytes")))
    }

    fn data_byte(&mut self, what: &str) -> Result<u8, ScoreError> {
        let at = self.pos;
        let b = self.byte(what)?;
        if b & 0x80 != 0 {
            return Err(self.err(at, format!("expected data byte for {what}, got status 0x{b:02X}")));
        }
        Ok(b)
    }
}

pub fn parse_smf(bytes: &[u8]) -> Result<Score, ScoreError> {
    let mut r = Reader {
        bytes,
        pos: 0,
        end: bytes.len(),
    };
    if r.take(4, "header magic").map_err(|_| r.err(0, "file shorter than a header"))? != b"MThd" {
        return Err(r.err(0, "bad magic: expected 'MThd'"));
    }
    let header_len = r.u32("header length")? as usize;
    if header_len < 6 {
        return Err(r.err(4, format!("header length {header_len} < 6")));
    }
    let header_body = r.pos;
    let format = r.u16("format")?;
    let ntrks = r.u16("track count")?;
    let division = r.u16("division")?;
    if format > 1 {
        return Err(ScoreError::UnsupportedSmf {
            offset: header_body,
            msg: format!("format {format} (only 0 and 1 are supported)"),
        });
    }
    if division & 0x8000 != 0 {
        return Err(ScoreError::UnsupportedSmf {
            offset: header_body + 4,
            msg: "SMPTE time division is not supported".into(),
        });
    }
    if division == 0 {
        return Err(r.err(header_body + 4, "zero ticks per quarter"));
    }
    r.take(header_len - 6, "header extension")?;

    let mut tempo_map = Vec::new();
    let mut tracks = Vec::new();
    let mut found = 0usize;
    while r.pos < bytes.len() && found < usize::from(ntrks) {
        let chunk_at = r.pos;
        let id = r.take(4, "chunk id")?;
        let len = r.u32("chunk length")? as usize;
        if len > bytes.len() - r.pos {
            return Err(r.err(
                chunk_at,
                format!(
                    "chunk '{}' declares {len} bytes but only {} remain",
                    String::from_utf8_lossy(id),
                    bytes.len() - r.pos
                ),
            ));
        }
        let body_start = r.pos;
        r.pos += len;
        if id != b"MTrk" {
            continue;
        }
        let (track, tempos) = parse_track(bytes, body_start, body_start + len, found)?;
        tempo_map.extend(tempos);
        if !track.notes.is_empty() || !track.name.is_empty() {
            tracks.push(Track {
                name: if track.name.is_empty() {
                    format!("track{found}")
                } else {
                    track.name
                },
                notes: track.notes,
            });
        }
        found += 1;
    }
    if found < usize::from(ntrks) {
        return Err(r.err(
            r.pos,
            format!("header declares {ntrks} tracks but only {found} present"),
        ));
    }
    Score::new(division, tempo_map, tracks)
}

fn parse_track(
    bytes: &[u8],
    start: usize,
    end: usize,
    index: usize,
) -> Result<(Track, Vec<TempoChange>), ScoreError> {
    let mut r = Reader {
        bytes,
        pos: start,
        end,
    };
    let mut tick: u64 = 0;
    let mut running: Option<u8> = None;
    let mut name = String::new();
    let mut notes = Vec::new();
    let mut tempos = Vec::new();
    let mut open: HashMap<(u8, u8), VecDeque<(u64, u8)>> = HashMap::new();

    while r.pos < end {
        tick += r.vlq("delta time")?;
        let status_at = r.pos;
        let first = r.byte("event status")?;
        let (status, first_data) = if first & 0x80 != 0 {
            (first, None)
        } else {
            let s = running.ok_or_else(|| {
                r.err(status_at, format!("data byte 0x{first:02X} with no running status"))
            })?;
            (s, Some(first))
        };
        match status {
            0xFF => {
                running = None;
                let kind = r.byte("meta type")?;
                let len = r.vlq("meta length")? as usize;
                let data = r.take(len, "meta data")?;
                match kind {
                    0x2F => break,
                    0x51 => {
                        if len != 3 {
                            return Err(r.err(status_at, format!("tempo meta with length {len}")));
                        }
                        let us = u32::from_be_bytes([0, data[0], data[1], data[2]]);
                        if us == 0 {
                            return Err(r.err(status_at, "zero tempo"));
                        }
                        tempos.push(TempoChange {
                            tick,
                            us_per_quarter: us,
                        });
                    }
                    0x03 if name.is_empty() => name = String::from_utf8_lossy(data).into_owned(),
                    _ => {}
                }
            }
            0xF0 | 0xF7 => {
                running = None;
                let len = r.vlq("sysex length")? as usize;
                r.take(len, "sysex data")?;
            }
            0x80..=0xEF => {
                running = Some(status);
                let kind = status & 0xF0;
                let channel = status & 0x0F;
                let d1 = match first_data {
                    Some(b) => b,
                    None => r.data_byte("channel message")?,
                };
                let d2 = if matches!(kind, 0xC0 | 0xD0) {
                    0
                } else {
                    r.data_byte("channel message")?
                };
                match (kind, d2) {
                    (0x90, v) if v > 0 => open.entry((channel, d1)).or_default().push_back((tick, v)),
                    (0x80, _) | (0x90, _) => {
                        if let Some((on, vel)) = open.get_mut(&(channel, d1)).and_then(|q| q.pop_front()) {
                            if tick > on {
                                notes.push(Note {
                                    onset_ticks: on,
                                    offset_ticks: tick,
                                    pitch: d1,
                                    velocity: vel,
                                });
                            } else {
                                log::debug!("track {index}: dropping zero-length note {d1} at tick {tick}");
                            }
                        }
                    }
                    _ => {}
                }
            }
            _ => {
                return Err(r.err(status_at, format!("unsupported status byte 0x{status:02X}")));
            }
        }
    }
    // Notes still sounding at end of track are closed there.
    let mut keys: Vec<_> = open.keys().copied().collect();
    keys.sort_unstable();
    for key in keys {
        for (on, vel) in open.remove(&key).unwrap_or_default() {
            if tick > on {
                notes.push(Note {
                    onset_ticks: on,
                    offset_ticks: tick,
                    pitch: key.1,
                    velocity: vel,
                });
            }
        }
    }
    notes.sort();
    Ok((Track { name, notes }, tempos))
}

fn push_vlq(out: &mut Vec<u8>, mut v: u64) {
    let mut stack = [0u8; 10];
    let mut n = 0;
    loop {
        stack[n] = (v & 0x7F) as u8;
        n += 1;
        v >>= 7;
        if v == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        out.push(if i > 0 { stack[i] | 0x80 } else { stack[i] });
    }
}

fn chunk(out: &mut Vec<u8>, id: &[u8; 4], body: &[u8]) {
    out.extend_from_slice(id);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(body);
}

/// Format-1 file: a conductor track with the tempo map, then one named track
/// per score track. Note-offs are written as velocity-0 note-ons under running status.
pub fn write_smf(score: &Score) -> Vec<u8> {
    let mut out = Vec::new();
    let mut header = Vec::new();
    header.extend_from_slice(&1u16.to_be_bytes());
    header.extend_from_slice(&((score.tracks.len() + 1) as u16).to_be_bytes());
    header.extend_from_slice(&score.ticks_per_quarter.to_be_bytes());
    chunk(&mut out, b"MThd", &header);

    let mut conductor = Vec::new();
    let mut last = 0;
    for t in &score.tempo_map {
        push_vlq(&mut conductor, t.tick - last);
        last = t.tick;
        conductor.extend_from_slice(&[0xFF, 0x51, 0x03]);
        conductor.extend_from_slice(&t.us_per_quarter.to_be_bytes()[1..]);
    }
    conductor.extend_from_slice(&[0x00, 0xFF, 0x2F, 0x00]);
    chunk(&mut out, b"MTrk", &conductor);

    for (i, track) in score.tracks.iter().enumerate() {
        let channel = (i % 16) as u8;
        let mut events: Vec<(u64, bool, u8, u8)> = Vec::new();
        for n in &track.notes {
            events.push((n.onset_ticks, true, n.pitch, n.velocity.max(1)));
            events.push((n.offset_ticks, false, n.pitch, 0));
        }
        // Offs sort before ons at the same tick so back-to-back notes pair correctly.
        events.sort_by_key(|&(tick, on, pitch, _)| (tick, on, pitch));
        let mut body = Vec::new();
        push_vlq(&mut body, 0);
        body.extend_from_slice(&[0xFF, 0x03]);
        push_vlq(&mut body, track.name.len() as u64);
        body.extend_from_slice(track.name.as_bytes());
        let mut last = 0;
        let mut running = None;
        for (tick, _, pitch, vel) in events {
            push_vlq(&mut body, tick - last);
            last = tick;
            let status = 0x90 | channel;
            if running != Some(status) {
                body.push(status);
                running = Some(status);
            }
            body.extend_from_slice(&[pitch, vel]);
        }
        body.extend_from_slice(&[0x00, 0xFF, 0x2F, 0x00]);
        chunk(&mut out, b"MTrk", &body);
    }
    out
}
