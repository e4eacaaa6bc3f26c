//! RIFF/WAVE reading and writing: 16-bit PCM and 32-bit float, little-endian.
//!
//! Errors carry the byte offset at which the problem was detected.

use std::path::Path;

use thiserror::Error;

use crate::dsp::{DspError, Waveform};

#[derive(Debug, Error)]
pub enum WavError {
    #[error("malformed WAV at byte {offset}: {msg}")]
    Malformed { offset: usize, msg: String },
    #[error("unsupported WAV at byte {offset}: {msg}")]
    Unsupported { offset: usize, msg: String },
    #[error(transparent)]
    Signal(#[from] DspError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    Pcm16,
    Float32,
}

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], WavError> {
        if self.bytes.len() - self.pos < n {
            return Err(WavError::Malformed {
                offset: self.pos,
                msg: format!(
                    "truncated {what}: need {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16, WavError> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32, WavError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

struct Format {
    tag: u16,
    channels: u16,
    sample_rate: u32,
    block_align: u16,
    bits: u16,
}

pub fn read_wav(bytes: &[u8]) -> Result<Waveform, WavError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "RIFF magic")? != b"RIFF" {
        return Err(WavError::Malformed {
            offset: 0,
            msg: "missing RIFF magic".into(),
        });
    }
    let riff_len = cur.u32("RIFF size")? as usize;
    if cur.take(4, "WAVE tag")? != b"WAVE" {
        return Err(WavError::Malformed {
            offset: 8,
            msg: "RIFF form type is not WAVE".into(),
        });
    }
    let end = (8 + riff_len).min(bytes.len());
    let mut format: Option<Format> = None;
    let mut data: Option<(usize, &[u8])> = None;

    while cur.pos + 8 <= end {
        let chunk_at = cur.pos;
        let id = cur.take(4, "chunk id")?;
        let size = cur.u32("chunk size")? as usize;
        let body_at = cur.pos;
        if size > bytes.len() - body_at {
            return Err(WavError::Malformed {
                offset: chunk_at,
                msg: format!(
                    "chunk '{}' declares {size} bytes but only {} remain",
                    String::from_utf8_lossy(id),
                    bytes.len() - body_at
                ),
            });
        }
        let body = cur.take(size, "chunk body")?;
        match id {
            b"fmt " => format = Some(parse_fmt(body, body_at)?),
            b"data" => data = Some((body_at, body)),
            _ => {}
        }
        if size % 2 == 1 && cur.pos < bytes.len() {
            cur.pos += 1;
        }
    }

    let fmt = format.ok_or(WavError::Malformed {
        offset: cur.pos,
        msg: "no fmt chunk".into(),
    })?;
    let (data_at, body) = data.ok_or(WavError::Malformed {
        offset: cur.pos,
        msg: "no data chunk".into(),
    })?;
    decode_samples(&fmt, body, data_at)
}

fn parse_fmt(body: &[u8], at: usize) -> Result<Format, WavError> {
    let mut c = Cursor { bytes: body, pos: 0 };
    let offset_err = |e: WavError| match e {
        WavError::Malformed { offset, msg } => WavError::Malformed {
            offset: offset + at,
            msg,
        },
        other => other,
    };
    let mut tag = c.u16("format tag").map_err(offset_err)?;
    let channels = c.u16("channel count").map_err(offset_err)?;
    let sample_rate = c.u32("sample rate").map_err(offset_err)?;
    let _byte_rate = c.u32("byte rate").map_err(offset_err)?;
    let block_align = c.u16("block align").map_err(offset_err)?;
    let bits = c.u16("bits per sample").map_err(offset_err)?;
    if tag == FORMAT_EXTENSIBLE {
        // cbSize, valid bits, channel mask, then the sub-format GUID whose first two bytes are the tag.
        let _cb = c.u16("extension size").map_err(offset_err)?;
        let _valid = c.u16("valid bits").map_err(offset_err)?;
        let _mask = c.u32("channel mask").map_err(offset_err)?;
        tag = c.u16("sub-format").map_err(offset_err)?;
    }
    if channels == 0 {
        return Err(WavError::Malformed {
            offset: at + 2,
            msg: "zero channels".into(),
        });
    }
    if sample_rate == 0 {
        return Err(WavError::Malformed {
            offset: at + 4,
            msg: "zero sample rate".into(),
        });
    }
    match (tag, bits) {
        (FORMAT_PCM, 16) | (FORMAT_FLOAT, 32) => {}
        _ => {
            return Err(WavError::Unsupported {
                offset: at,
                msg: format!("format tag {tag} with {bits} bits per sample"),
            })
        }
    }
    if usize::from(block_align) != usize::from(channels) * usize::from(bits / 8) {
        return Err(WavError::Malformed {
            offset: at + 12,
            msg: format!("block align {block_align} inconsistent with {channels} x {bits} bits"),
        });
    }
    Ok(Format {
        tag,
        channels,
        sample_rate,
        block_align,
        bits,
    })
}

fn decode_samples(fmt: &Format, body: &[u8], at: usize) -> Result<Waveform, WavError> {
    let block = usize::from(fmt.block_align);
    if body.len() % block != 0 {
        return Err(WavError::Malformed {
            offset: at + body.len() - body.len() % block,
            msg: format!("data length {} is not a multiple of block size {block}", body.len()),
        });
    }
    let n_ch = usize::from(fmt.channels);
    let n = body.len() / block;
    let mut channels = vec![Vec::with_capacity(n); n_ch];
    let width = usize::from(fmt.bits / 8);
    for frame in body.chunks_exact(block) {
        for (ch, s) in frame.chunks_exact(width).enumerate() {
            let v = if fmt.tag == FORMAT_PCM {
                f64::from(i16::from_le_bytes([s[0], s[1]])) / 32768.0
            } else {
                f64::from(f32::from_le_bytes([s[0], s[1], s[2], s[3]]))
            };
            channels[ch].push(v);
        }
    }
    Ok(Waveform::new(channels, fmt.sample_rate)?)
}

pub fn write_wav(w: &Waveform, format: SampleFormat) -> Vec<u8> {
    let n_ch = w.n_channels() as u16;
    let (tag, bits) = match format {
        SampleFormat::Pcm16 => (FORMAT_PCM, 16u16),
        SampleFormat::Float32 => (FORMAT_FLOAT, 32u16),
    };
    let block_align = n_ch * bits / 8;
    let data_len = w.n_samples() * usize::from(block_align);
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&n_ch.to_le_bytes());
    out.extend_from_slice(&w.sample_rate().to_le_bytes());
    out.extend_from_slice(&(w.sample_rate() * u32::from(block_align)).to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for i in 0..w.n_samples() {
        for c in w.channels() {
            match format {
                SampleFormat::Pcm16 => {
                    let v = (c[i].clamp(-1.0, 1.0) * 32767.0).round() as i16;
                    out.extend_from_slice(&v.to_le_bytes());
                }
                SampleFormat::Float32 => out.extend_from_slice(&(c[i] as f32).to_le_bytes()),
            }
        }
    }
    if data_len % 2 == 1 {
        out.push(0);
    }
    out
}

pub fn read_wav_file(path: &Path) -> Result<Waveform, WavError> {
    let bytes = std::fs::read(path).map_err(|source| WavError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_wav(&bytes)
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "path has no file name"))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".{}.tmp", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })
}

pub fn write_wav_file(path: &Path, w: &Waveform, format: SampleFormat) -> Result<(), WavError> {
    write_atomic(path, &write_wav(w, format)).map_err(|source| WavError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stereo() -> Waveform {
        Waveform::new(vec![vec![0.0, 0.5, -0.25], vec![1.0, -1.0, 0.125]], 44_100).unwrap()
    }

    #[test]
    fn float_round_trip_is_exact_for_f32_values() {
        let w = stereo();
        let back = read_wav(&write_wav(&w, SampleFormat::Float32)).unwrap();
        assert_eq!(back, w);
    }

    #[test]
    fn pcm16_round_trip_within_quantization() {
        let w = stereo();
        let back = read_wav(&write_wav(&w, SampleFormat::Pcm16)).unwrap();
        assert_eq!(back.n_channels(), 2);
        for (a, b) in w.channels().iter().flatten().zip(back.channels().iter().flatten()) {
            assert!((a - b).abs() < 1.0 / 16384.0);
        }
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let mut b = write_wav(&stereo(), SampleFormat::Pcm16);
        b[0] = b'X';
        match read_wav(&b) {
            Err(WavError::Malformed { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn oversized_chunk_reports_chunk_offset() {
        let mut b = write_wav(&stereo(), SampleFormat::Pcm16);
        // data chunk header starts at byte 36
        b[40..44].copy_from_slice(&1000u32.to_le_bytes());
        match read_wav(&b) {
            Err(WavError::Malformed { offset, msg }) => {
                assert_eq!(offset, 36, "{msg}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unsupported_bit_depth() {
        let mut b = write_wav(&stereo(), SampleFormat::Pcm16);
        b[34..36].copy_from_slice(&24u16.to_le_bytes());
        assert!(matches!(read_wav(&b), Err(WavError::Unsupported { offset: 20, .. })));
    }

    #[test]
    fn unknown_chunks_are_skipped() {
        let w = stereo();
        let b = write_wav(&w, SampleFormat::Float32);
        let mut with_list = b[..36].to_vec();
        with_list.extend_from_slice(b"LIST");
        with_list.extend_from_slice(&3u32.to_le_bytes());
        with_list.extend_from_slice(&[1, 2, 3, 0]);
        with_list.extend_from_slice(&b[36..]);
        let riff = (with_list.len() - 8) as u32;
        with_list[4..8].copy_from_slice(&riff.to_le_bytes());
        assert_eq!(read_wav(&with_list).unwrap(), w);
    }

    proptest! {
        #[test]
        fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..128)) {
            let _ = read_wav(&bytes);
        }

        #[test]
        fn truncation_is_an_error_not_a_panic(cut in 0usize..60) {
            let b = write_wav(&stereo(), SampleFormat::Pcm16);
            let cut = cut.min(b.len() - 1);
            prop_assert!(read_wav(&b[..cut]).is_err());
        }
    }
}
