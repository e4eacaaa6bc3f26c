//! On-disk corpora: one directory of WAV/MIDI/JSON files plus a JSON-lines
//! manifest with one [`CorpusRecord`] per clip. Paths in the manifest are
//! relative to the manifest's directory.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CinematicClip, LabeledClip};
use crate::knowledge::ActivityVector;
use crate::score::{write_smf, UnitTimeline};
use crate::wav::{write_atomic, read_wav_file, write_wav_file, SampleFormat, WavError};
use crate::dsp::Waveform;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Wav(#[from] WavError),
    #[error("{path}, line {line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub seed: u64,
    pub mixture: PathBuf,
    pub stems: BTreeMap<String, PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeline: Option<UnitTimeline>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activity: Option<PathBuf>,
}

impl CorpusRecord {
    pub fn load_mixture(&self, root: &Path) -> Result<Waveform, CorpusError> {
        Ok(read_wav_file(&root.join(&self.mixture))?)
    }

    pub fn load_stems(&self, root: &Path) -> Result<BTreeMap<String, Waveform>, CorpusError> {
        self.stems
            .iter()
            .map(|(k, p)| Ok((k.clone(), read_wav_file(&root.join(p))?)))
            .collect()
    }

    pub fn load_activity(&self, root: &Path) -> Result<Option<Vec<ActivityVector>>, CorpusError> {
        let Some(rel) = &self.activity else {
            return Ok(None);
        };
        let path = root.join(rel);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|source| CorpusError::Json { path, line: 1, source })
    }
}

fn write_stems(
    dir: &Path,
    id: &str,
    mixture: &Waveform,
    stems: &BTreeMap<String, Waveform>,
) -> Result<(PathBuf, BTreeMap<String, PathBuf>), CorpusError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mix = PathBuf::from(format!("{id}.mix.wav"));
    write_wav_file(&dir.join(&mix), mixture, SampleFormat::Float32)?;
    let mut paths = BTreeMap::new();
    for (name, w) in stems {
        let p = PathBuf::from(format!("{id}.{name}.wav"));
        write_wav_file(&dir.join(&p), w, SampleFormat::Float32)?;
        paths.insert(name.clone(), p);
    }
    Ok((mix, paths))
}

pub fn write_music_clip(dir: &Path, id: &str, seed: u64, clip: &LabeledClip) -> Result<CorpusRecord, CorpusError> {
    let (mixture, stems) = write_stems(dir, id, &clip.mixture, &clip.stems)?;
    let score = PathBuf::from(format!("{id}.mid"));
    let path = dir.join(&score);
    write_atomic(&path, &write_smf(&clip.score)).map_err(io_err(&path))?;
    Ok(CorpusRecord {
        id: id.to_string(),
        seed,
        mixture,
        stems,
        timeline: Some(clip.timeline.clone()),
        score: Some(score),
        activity: None,
    })
}

pub fn write_cinematic_clip(
    dir: &Path,
    id: &str,
    seed: u64,
    clip: &CinematicClip,
) -> Result<CorpusRecord, CorpusError> {
    let (mixture, stems) = write_stems(dir, id, &clip.mixture, &clip.stems)?;
    let activity = PathBuf::from(format!("{id}.activity.json"));
    let path = dir.join(&activity);
    let text = serde_json::to_string(&clip.activity).expect("activity vectors serialize");
    write_atomic(&path, text.as_bytes()).map_err(io_err(&path))?;
    Ok(CorpusRecord {
        id: id.to_string(),
        seed,
        mixture,
        stems,
        timeline: None,
        score: None,
        activity: Some(activity),
    })
}

pub fn manifest_to_string(records: &[CorpusRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
        .collect()
}

pub fn read_manifest(path: &Path) -> Result<Vec<CorpusRecord>, CorpusError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|source| CorpusError::Json {
                path: path.to_path_buf(),
                line: i + 1,
                source,
            })
        })
        .collect()
}
