//! The persisted reference index: every corpus phrase in all 12
//! transpositions, grouped into layers by bar length, with the features the
//! scoring models need precomputed.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    parse_midi, parse_sidecar, quantize, segment_phrases, LeadSheetQuery, Meter, Phrase,
};
use crate::features::{
    melody_one_hot, rhythm_density, rhythm_feature, texture_sketch, tiv, voice_number, ChromaSeq,
    FeatureError, MelodyFeature, RhythmFeature, TextureSketch, TivSeq, DEFAULT_BOUNDARY_BEATS,
    TIV_WEIGHTS,
};

pub const INDEX_FORMAT: &str = "phrase-reference-index";
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("corpus contains no usable phrases")]
    EmptyCorpus,
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("{path}: expected format {expected:?}, found {found:?}")]
    WrongFormat { path: PathBuf, expected: &'static str, found: String },
    #[error("{path}: format version {found} is not supported (expected {expected})")]
    VersionMismatch { path: PathBuf, found: u32, expected: u32 },
}

/// A per-file problem collected during index construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileError {
    pub path: PathBuf,
    pub message: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct BuildReport {
    pub songs_read: usize,
    pub file_errors: Vec<FileError>,
    /// `(source_id, phrase position, reason)` for phrases left out.
    pub dropped: Vec<(String, usize, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCache {
    pub melody: MelodyFeature,
    pub rhythm: RhythmFeature,
    pub tiv: TivSeq,
    pub texture: TextureSketch,
    pub rhythm_density: f64,
    pub voice_number: f64,
}

impl FeatureCache {
    pub fn compute(phrase: &Phrase, tiv_weights: &[f64; 6], boundary_beats: usize) -> Result<Self, FeatureError> {
        let steps = phrase.steps();
        let melody = melody_one_hot(&phrase.melody, steps)?;
        let rhythm = rhythm_feature(&melody);
        let tiv = tiv(&ChromaSeq(phrase.chroma()), tiv_weights);
        let roll = phrase
            .accompaniment
            .clone()
            .unwrap_or_else(|| super::PianoRoll::new(steps));
        Ok(Self {
            melody,
            rhythm,
            tiv,
            texture: texture_sketch(&roll, boundary_beats),
            rhythm_density: rhythm_density(&roll),
            voice_number: voice_number(&roll),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEntry {
    /// Position in `ReferenceIndex::entries`.
    pub id: usize,
    /// Position in `ReferenceIndex::songs`.
    pub song: usize,
    /// Position of the phrase within its source song.
    pub phrase_index: usize,
    pub phrase: Phrase,
    pub features: FeatureCache,
}

impl ReferenceEntry {
    pub fn transposition(&self) -> u8 {
        self.phrase.transposition
    }

    pub fn bars(&self) -> u32 {
        self.phrase.label.length_bars
    }
}

/// Tercile boundaries of rhythm density and voice number over the index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub rhythm_density: [f64; 2],
    pub voice_number: [f64; 2],
}

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn terciles(values: impl Iterator<Item = f64>) -> [f64; 2] {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    [quantile(&v, 1.0 / 3.0), quantile(&v, 2.0 / 3.0)]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceIndex {
    pub format: String,
    pub version: u32,
    pub tiv_weights: [f64; 6],
    pub boundary_beats: usize,
    pub songs: Vec<String>,
    pub quantiles: Quantiles,
    pub entries: Vec<ReferenceEntry>,
    #[serde(skip)]
    layers: BTreeMap<u32, Vec<usize>>,
}

/// One annotated source song, already cut into phrases.
#[derive(Debug, Clone)]
pub struct SourceSong {
    pub source_id: String,
    pub tempo_us_per_beat: u32,
    pub meter: Meter,
    pub phrases: Vec<Phrase>,
}

impl SourceSong {
    /// The song as a lead sheet (accompaniment stripped).
    pub fn to_query(&self) -> LeadSheetQuery {
        LeadSheetQuery::from_phrases(self.source_id.clone(), self.tempo_us_per_beat, self.phrases.clone())
            .expect("a segmented song has at least one phrase and a single meter")
    }
}

/// Reads `<stem>.mid` plus its `<stem>.txt` sidecar and segments it.
pub fn read_song(midi_path: &Path) -> Result<SourceSong, FileError> {
    let err = |message: String| FileError { path: midi_path.to_path_buf(), message };
    let bytes = fs::read(midi_path).map_err(|e| err(e.to_string()))?;
    let sidecar_path = midi_path.with_extension("txt");
    let text = fs::read_to_string(&sidecar_path)
        .map_err(|e| err(format!("sidecar {}: {e}", sidecar_path.display())))?;
    let source_id = midi_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    song_from_bytes(&source_id, &bytes, &text).map_err(err)
}

/// Parses, quantizes and segments one song from MIDI bytes and sidecar
/// text. Sidecar chords, when present, replace the chord track.
pub fn song_from_bytes(source_id: &str, midi: &[u8], sidecar: &str) -> Result<SourceSong, String> {
    let doc = parse_midi(midi).map_err(|e| e.to_string())?;
    let sidecar = parse_sidecar(sidecar).map_err(|e| format!("sidecar: {e}"))?;
    let mut song = quantize(&doc);
    song.source_id = source_id.to_string();
    if !sidecar.chords.is_empty() {
        let chords = sidecar.beat_chords(song.meter, song.beats()).map_err(|e| format!("sidecar: {e}"))?;
        song = song.with_chords(chords);
    }
    let phrases = segment_phrases(&song, &sidecar.annotation).map_err(|e| e.to_string())?;
    Ok(SourceSong { source_id: song.source_id, tempo_us_per_beat: song.tempo_us_per_beat, meter: song.meter, phrases })
}

fn is_midi(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("mid") || e.eq_ignore_ascii_case("midi"))
}

/// Scans `corpus_dir` for MIDI files with sidecars and indexes them.
/// Unreadable songs are reported in the `BuildReport`, not fatal.
pub fn build_reference_index(corpus_dir: &Path) -> Result<(ReferenceIndex, BuildReport), IndexError> {
    let listing = fs::read_dir(corpus_dir).map_err(|source| IndexError::Io { path: corpus_dir.into(), source })?;
    let mut files: Vec<PathBuf> = listing
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_midi(p))
        .collect();
    files.sort();

    let read: Vec<Result<SourceSong, FileError>> = files.par_iter().map(|p| read_song(p)).collect();
    let mut report = BuildReport::default();
    let mut songs = Vec::new();
    for r in read {
        match r {
            Ok(s) => songs.push(s),
            Err(e) => {
                log::warn!("skipping {}: {}", e.path.display(), e.message);
                report.file_errors.push(e);
            }
        }
    }
    report.songs_read = songs.len();
    let (index, build) = ReferenceIndex::from_songs(songs)?;
    report.dropped = build.dropped;
    Ok((index, report))
}

impl ReferenceIndex {
    /// Augments every usable phrase to 12 keys and computes its features.
    pub fn from_songs(songs: Vec<SourceSong>) -> Result<(Self, BuildReport), IndexError> {
        Self::from_songs_with(songs, TIV_WEIGHTS, DEFAULT_BOUNDARY_BEATS)
    }

    pub fn from_songs_with(
        songs: Vec<SourceSong>,
        tiv_weights: [f64; 6],
        boundary_beats: usize,
    ) -> Result<(Self, BuildReport), IndexError> {
        type Augmented = (Vec<(usize, Phrase, FeatureCache)>, Vec<(String, usize, String)>);
        let per_song: Vec<Augmented> = songs
            .par_iter()
            .map(|song| {
                let mut kept = Vec::new();
                let mut dropped = Vec::new();
                for (pos, phrase) in song.phrases.iter().enumerate() {
                    let reason = if phrase.steps() < phrase.meter.steps_per_bar() {
                        Some("shorter than one bar".to_string())
                    } else if phrase.accompaniment.as_ref().is_none_or(|r| r.is_silent()) {
                        Some("empty accompaniment".to_string())
                    } else {
                        None
                    };
                    if let Some(reason) = reason {
                        log::warn!("{}: dropping phrase {pos} ({}): {reason}", song.source_id, phrase.label);
                        dropped.push((song.source_id.clone(), pos, reason));
                        continue;
                    }
                    let mut variants = Vec::with_capacity(12);
                    let mut failed = None;
                    for t in 0..12u8 {
                        let p = phrase.transposed(t);
                        match FeatureCache::compute(&p, &tiv_weights, boundary_beats) {
                            Ok(f) => variants.push((pos, p, f)),
                            Err(e) => {
                                failed = Some(e.to_string());
                                break;
                            }
                        }
                    }
                    match failed {
                        None => kept.extend(variants),
                        Some(reason) => {
                            log::warn!("{}: dropping phrase {pos}: {reason}", song.source_id);
                            dropped.push((song.source_id.clone(), pos, reason));
                        }
                    }
                }
                (kept, dropped)
            })
            .collect();

        let mut report = BuildReport { songs_read: songs.len(), ..Default::default() };
        let mut entries = Vec::new();
        let mut song_ids = Vec::new();
        for (song, (kept, dropped)) in songs.iter().zip(per_song) {
            report.dropped.extend(dropped);
            if kept.is_empty() {
                continue;
            }
            let song_pos = song_ids.len();
            song_ids.push(song.source_id.clone());
            for (phrase_index, phrase, features) in kept {
                entries.push(ReferenceEntry { id: entries.len(), song: song_pos, phrase_index, phrase, features });
            }
        }
        if entries.is_empty() {
            return Err(IndexError::EmptyCorpus);
        }
        let quantiles = Quantiles {
            rhythm_density: terciles(entries.iter().map(|e| e.features.rhythm_density)),
            voice_number: terciles(entries.iter().map(|e| e.features.voice_number)),
        };
        let mut index = ReferenceIndex {
            format: INDEX_FORMAT.to_string(),
            version: INDEX_VERSION,
            tiv_weights,
            boundary_beats,
            songs: song_ids,
            quantiles,
            entries,
            layers: BTreeMap::new(),
        };
        index.rebuild_layers();
        Ok((index, report))
    }

    fn rebuild_layers(&mut self) {
        self.layers.clear();
        for e in &self.entries {
            self.layers.entry(e.bars()).or_default().push(e.id);
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: usize) -> &ReferenceEntry {
        &self.entries[id]
    }

    /// Entry ids of all phrases `bars` long, in id order.
    pub fn layer(&self, bars: u32) -> &[usize] {
        self.layers.get(&bars).map_or(&[], Vec::as_slice)
    }

    pub fn layer_lengths(&self) -> impl Iterator<Item = u32> + '_ {
        self.layers.keys().copied()
    }

    /// Number of source (untransposed) phrases.
    pub fn source_phrase_count(&self) -> usize {
        self.entries.iter().filter(|e| e.transposition() == 0).count()
    }

    /// The entry for `(song, phrase_index, transposition)`, if indexed.
    pub fn find(&self, song: usize, phrase_index: usize, transposition: u8) -> Option<&ReferenceEntry> {
        self.entries
            .iter()
            .find(|e| e.song == song && e.phrase_index == phrase_index && e.transposition() == transposition)
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("index serializes")
    }

    pub fn from_json(bytes: &[u8], path: &Path) -> Result<Self, IndexError> {
        let header: serde_json::Value = serde_json::from_slice(bytes)
            .map_err(|e| IndexError::Decode { path: path.into(), message: e.to_string() })?;
        check_header(&header, path, INDEX_FORMAT, INDEX_VERSION)?;
        let mut index: ReferenceIndex = serde_json::from_value(header)
            .map_err(|e| IndexError::Decode { path: path.into(), message: e.to_string() })?;
        index.rebuild_layers();
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        write_atomic(path, &self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let bytes = fs::read(path).map_err(|source| IndexError::Io { path: path.into(), source })?;
        Self::from_json(&bytes, path)
    }
}

/// Verifies the `format` and `version` fields of a versioned JSON document.
pub fn check_header(doc: &serde_json::Value, path: &Path, format: &'static str, version: u32) -> Result<(), IndexError> {
    let found = doc.get("format").and_then(|v| v.as_str()).unwrap_or_default();
    if found != format {
        return Err(IndexError::WrongFormat { path: path.into(), expected: format, found: found.to_string() });
    }
    let found_version = doc.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found_version != version {
        return Err(IndexError::VersionMismatch { path: path.into(), found: found_version, expected: version });
    }
    Ok(())
}

/// Writes via a temporary file in the destination directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IndexError> {
    let io = |source| IndexError::Io { path: path.into(), source };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// Source-phrase counts per bar length.
pub fn layer_histogram(index: &ReferenceIndex) -> BTreeMap<u32, usize> {
    let mut h = BTreeMap::new();
    for e in index.entries.iter().filter(|e| e.transposition() == 0) {
        *h.entry(e.bars()).or_insert(0) += 1;
    }
    h
}
