//! Symbolic music data model: notes on a 16th-note grid, piano-rolls,
//! per-beat chords, labelled phrases, plus MIDI/sidecar I/O and the
//! persisted reference index.

mod index;
mod midi;
mod quantize;
mod segment;
mod sidecar;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use index::{
    build_reference_index, check_header, layer_histogram, quantile, read_song, song_from_bytes, terciles,
    write_atomic,
    BuildReport, FeatureCache, FileError, IndexError, Quantiles, ReferenceEntry, ReferenceIndex,
    SourceSong, INDEX_FORMAT, INDEX_VERSION,
};
pub use midi::{parse_midi, write_midi, MidiError, MidiTrack, SongDocument, TickNote};
pub use quantize::{chords_from_track, quantize, QuantizedSong};
pub use segment::{parse_annotation, segment_phrases, SegmentError};
pub use sidecar::{parse_sidecar, Sidecar, SidecarError};

/// Sixteenth-note steps per quarter-note beat.
pub const STEPS_PER_BEAT: usize = 4;
/// Number of MIDI pitches.
pub const PITCHES: usize = 128;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DataError {
    #[error("pitch {0} outside 0..=127")]
    Pitch(u32),
    #[error("note duration must be at least one step")]
    ZeroDuration,
    #[error("invalid phrase label {0:?}")]
    Label(String),
    #[error("chord root {root} is not in its chroma {chroma}")]
    RootNotInChroma { root: u8, chroma: PitchClassSet },
    #[error("invalid chord {0:?}")]
    Chord(String),
    #[error("hold without a preceding onset at step {step}, pitch {pitch}")]
    DanglingHold { step: usize, pitch: usize },
    #[error("unsupported meter {0}")]
    Meter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Track {
    Melody,
    Chord,
    Accompaniment,
}

/// A note quantized to the 16th-note grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NoteEvent {
    pub pitch: u8,
    pub onset: u32,
    pub duration: u32,
    pub track: Track,
}

impl NoteEvent {
    pub fn new(pitch: u8, onset: u32, duration: u32, track: Track) -> Result<Self, DataError> {
        if pitch > 127 {
            return Err(DataError::Pitch(pitch as u32));
        }
        if duration == 0 {
            return Err(DataError::ZeroDuration);
        }
        Ok(Self { pitch, onset, duration, track })
    }

    pub fn end(&self) -> u32 {
        self.onset + self.duration
    }
}

/// Supported meters. Beats are quarter notes in both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Meter {
    #[serde(rename = "2/4")]
    TwoFour,
    #[serde(rename = "4/4")]
    FourFour,
}

impl Meter {
    pub fn from_signature(numerator: u8, denominator: u8) -> Option<Self> {
        match (numerator, denominator) {
            (2, 4) => Some(Meter::TwoFour),
            (4, 4) => Some(Meter::FourFour),
            _ => None,
        }
    }

    pub fn numerator(self) -> u8 {
        match self {
            Meter::TwoFour => 2,
            Meter::FourFour => 4,
        }
    }

    pub fn beats_per_bar(self) -> usize {
        self.numerator() as usize
    }

    pub fn steps_per_bar(self) -> usize {
        self.beats_per_bar() * STEPS_PER_BEAT
    }
}

impl fmt::Display for Meter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/4", self.numerator())
    }
}

impl FromStr for Meter {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "2/4" => Ok(Meter::TwoFour),
            "4/4" => Ok(Meter::FourFour),
            other => Err(DataError::Meter(other.to_string())),
        }
    }
}

/// 12-bit pitch-class set; bit `n` is pitch class `n` (C = 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PitchClassSet(u16);

impl PitchClassSet {
    pub const EMPTY: PitchClassSet = PitchClassSet(0);

    pub fn from_bits(bits: u16) -> Self {
        PitchClassSet(bits & 0x0fff)
    }

    pub fn from_classes<I: IntoIterator<Item = u8>>(classes: I) -> Self {
        let mut bits = 0u16;
        for c in classes {
            bits |= 1 << (c % 12);
        }
        PitchClassSet(bits)
    }

    pub fn bits(self) -> u16 {
        self.0
    }

    pub fn contains(self, class: u8) -> bool {
        self.0 & (1 << (class % 12)) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    /// Transpose every class up by `shift` semitones.
    pub fn rotate(self, shift: u8) -> Self {
        let s = (shift % 12) as u32;
        let b = self.0 as u32;
        PitchClassSet((((b << s) | (b >> (12 - s))) & 0x0fff) as u16)
    }

    pub fn classes(self) -> impl Iterator<Item = u8> {
        (0..12u8).filter(move |&c| self.contains(c))
    }

    pub fn to_chroma(self) -> [f64; 12] {
        let mut row = [0.0; 12];
        for c in self.classes() {
            row[c as usize] = 1.0;
        }
        row
    }
}

impl fmt::Display for PitchClassSet {
    /// Twelve `0`/`1` characters, pitch class 0 first.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in 0..12u8 {
            f.write_str(if self.contains(c) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for PitchClassSet {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.len() != 12 {
            return Err(DataError::Chord(s.to_string()));
        }
        let mut bits = 0u16;
        for (i, ch) in s.chars().enumerate() {
            match ch {
                '1' => bits |= 1 << i,
                '0' => {}
                _ => return Err(DataError::Chord(s.to_string())),
            }
        }
        Ok(PitchClassSet(bits))
    }
}

/// The chord governing one beat. An empty chroma means "no chord".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Chord {
    pub root: u8,
    pub chroma: PitchClassSet,
}

impl Chord {
    pub const NONE: Chord = Chord { root: 0, chroma: PitchClassSet::EMPTY };

    pub fn new(root: u8, chroma: PitchClassSet) -> Result<Self, DataError> {
        let root = root % 12;
        if !chroma.is_empty() && !chroma.contains(root) {
            return Err(DataError::RootNotInChroma { root, chroma });
        }
        Ok(Self { root, chroma })
    }

    pub fn is_none(&self) -> bool {
        self.chroma.is_empty()
    }

    pub fn transposed(&self, shift: u8) -> Chord {
        if self.is_none() {
            return *self;
        }
        Chord { root: (self.root + shift) % 12, chroma: self.chroma.rotate(shift) }
    }

    /// Chord tones sorted ascending from the root.
    pub fn tones_from_root(&self) -> Vec<u8> {
        let mut tones: Vec<u8> = self.chroma.classes().collect();
        tones.sort_by_key(|&c| (c + 12 - self.root) % 12);
        tones
    }
}

/// A phrase label such as `A8`: repetition letter plus length in bars.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PhraseLabel {
    pub letter: char,
    pub length_bars: u32,
}

impl PhraseLabel {
    pub fn new(letter: char, length_bars: u32) -> Result<Self, DataError> {
        if !letter.is_ascii_uppercase() || length_bars == 0 {
            return Err(DataError::Label(format!("{letter}{length_bars}")));
        }
        Ok(Self { letter, length_bars })
    }
}

impl fmt::Display for PhraseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.letter, self.length_bars)
    }
}

impl FromStr for PhraseLabel {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.chars();
        let letter = chars.next().ok_or_else(|| DataError::Label(s.to_string()))?;
        let digits = chars.as_str();
        if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_digit()) {
            return Err(DataError::Label(s.to_string()));
        }
        let bars = digits.parse().map_err(|_| DataError::Label(s.to_string()))?;
        PhraseLabel::new(letter, bars)
    }
}

impl Serialize for PhraseLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PhraseLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub const CELL_OFF: u8 = 0;
pub const CELL_ONSET: u8 = 1;
pub const CELL_HOLD: u8 = 2;

/// A step x 128 grid of note states (off / onset / hold).
///
/// Serialized sparsely as a note list, which is lossless because every
/// valid roll decomposes uniquely into onset-led runs.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PianoRoll {
    steps: usize,
    cells: Vec<u8>,
}

/// A note recovered from a piano-roll: `(onset, pitch, duration)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RollNote {
    pub onset: usize,
    pub pitch: u8,
    pub duration: usize,
}

impl PianoRoll {
    pub fn new(steps: usize) -> Self {
        Self { steps, cells: vec![CELL_OFF; steps * PITCHES] }
    }

    /// Builds a roll from notes, clipping at `steps`. A later onset on an
    /// already sounding pitch re-strikes it.
    pub fn from_notes<I: IntoIterator<Item = RollNote>>(steps: usize, notes: I) -> Self {
        let mut notes: Vec<RollNote> = notes.into_iter().collect();
        notes.sort();
        let mut roll = Self::new(steps);
        for n in notes {
            if n.onset >= steps || n.duration == 0 {
                continue;
            }
            let p = n.pitch as usize;
            roll.cells[n.onset * PITCHES + p] = CELL_ONSET;
            for t in n.onset + 1..(n.onset + n.duration).min(steps) {
                let cell = &mut roll.cells[t * PITCHES + p];
                if *cell == CELL_ONSET {
                    break;
                }
                *cell = CELL_HOLD;
            }
        }
        roll
    }

    /// Builds a roll from raw cells, checking the hold-follows-onset rule.
    pub fn from_cells(steps: usize, cells: Vec<u8>) -> Result<Self, DataError> {
        assert_eq!(cells.len(), steps * PITCHES, "cell buffer does not match step count");
        let roll = Self { steps, cells };
        roll.validate()?;
        Ok(roll)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn get(&self, step: usize, pitch: usize) -> u8 {
        self.cells[step * PITCHES + pitch]
    }

    pub fn row(&self, step: usize) -> &[u8] {
        &self.cells[step * PITCHES..(step + 1) * PITCHES]
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn validate(&self) -> Result<(), DataError> {
        for t in 0..self.steps {
            for p in 0..PITCHES {
                if self.get(t, p) == CELL_HOLD && (t == 0 || self.get(t - 1, p) == CELL_OFF) {
                    return Err(DataError::DanglingHold { step: t, pitch: p });
                }
            }
        }
        Ok(())
    }

    pub fn is_silent(&self) -> bool {
        self.cells.iter().all(|&c| c == CELL_OFF)
    }

    pub fn has_onset(&self, step: usize) -> bool {
        self.row(step).contains(&CELL_ONSET)
    }

    pub fn onset_count(&self, step: usize) -> usize {
        self.row(step).iter().filter(|&&c| c == CELL_ONSET).count()
    }

    pub fn active_count(&self, step: usize) -> usize {
        self.row(step).iter().filter(|&&c| c != CELL_OFF).count()
    }

    pub fn notes(&self) -> Vec<RollNote> {
        let mut out = Vec::new();
        for p in 0..PITCHES {
            let mut t = 0;
            while t < self.steps {
                if self.get(t, p) == CELL_ONSET {
                    let mut end = t + 1;
                    while end < self.steps && self.get(end, p) == CELL_HOLD {
                        end += 1;
                    }
                    out.push(RollNote { onset: t, pitch: p as u8, duration: end - t });
                    t = end;
                } else {
                    t += 1;
                }
            }
        }
        out.sort();
        out
    }

    /// Shifts every note by `semitones`; notes pushed outside 0..=127 move
    /// back by whole octaves.
    pub fn transposed(&self, semitones: i32) -> PianoRoll {
        let notes = self.notes().into_iter().map(|n| RollNote {
            pitch: shift_pitch(n.pitch, semitones),
            ..n
        });
        PianoRoll::from_notes(self.steps, notes)
    }

    /// Copy of steps `start..start + len`, padded with silence past the end.
    pub fn slice(&self, start: usize, len: usize) -> PianoRoll {
        let notes = self.notes().into_iter().filter_map(|n| {
            let end = n.onset + n.duration;
            if n.onset < start || n.onset >= start + len {
                return None;
            }
            Some(RollNote { onset: n.onset - start, pitch: n.pitch, duration: end.min(start + len) - n.onset })
        });
        PianoRoll::from_notes(len, notes)
    }
}

#[derive(Serialize, Deserialize)]
struct RollRepr {
    steps: usize,
    notes: Vec<[u32; 3]>,
}

impl Serialize for PianoRoll {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        RollRepr {
            steps: self.steps,
            notes: self
                .notes()
                .into_iter()
                .map(|n| [n.onset as u32, n.pitch as u32, n.duration as u32])
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PianoRoll {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = RollRepr::deserialize(d)?;
        let mut notes = Vec::with_capacity(repr.notes.len());
        for [onset, pitch, duration] in repr.notes {
            if pitch > 127 || duration == 0 {
                return Err(serde::de::Error::custom("invalid piano-roll note"));
            }
            notes.push(RollNote { onset: onset as usize, pitch: pitch as u8, duration: duration as usize });
        }
        Ok(PianoRoll::from_notes(repr.steps, notes))
    }
}

/// Shifts a pitch, folding by octaves into the MIDI range.
pub fn shift_pitch(pitch: u8, semitones: i32) -> u8 {
    let mut p = pitch as i32 + semitones;
    while p > 127 {
        p -= 12;
    }
    while p < 0 {
        p += 12;
    }
    p as u8
}

/// Semitone shift used to realize a pitch-class transposition `t` (0..12)
/// with the least register drift: up to a tritone either way.
pub fn transposition_semitones(t: u8) -> i32 {
    let t = (t % 12) as i32;
    if t <= 5 {
        t
    } else {
        t - 12
    }
}

/// One phrase of a song. Query phrases carry no accompaniment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phrase {
    pub label: PhraseLabel,
    pub meter: Meter,
    /// Monophonic melody, onsets relative to the phrase start.
    pub melody: Vec<NoteEvent>,
    /// One chord per beat.
    pub chords: Vec<Chord>,
    pub accompaniment: Option<PianoRoll>,
    pub source_id: String,
    /// Pitch-class transposition 0..=11 relative to the source.
    pub transposition: u8,
}

impl Phrase {
    pub fn steps(&self) -> usize {
        self.label.length_bars as usize * self.meter.steps_per_bar()
    }

    pub fn beats(&self) -> usize {
        self.label.length_bars as usize * self.meter.beats_per_bar()
    }

    /// Transposes melody, chords and accompaniment by pitch class `t`.
    pub fn transposed(&self, t: u8) -> Phrase {
        let t = t % 12;
        let semis = transposition_semitones(t);
        Phrase {
            label: self.label,
            meter: self.meter,
            melody: self
                .melody
                .iter()
                .map(|n| NoteEvent { pitch: shift_pitch(n.pitch, semis), ..*n })
                .collect(),
            chords: self.chords.iter().map(|c| c.transposed(t)).collect(),
            accompaniment: self.accompaniment.as_ref().map(|r| r.transposed(semis)),
            source_id: self.source_id.clone(),
            transposition: (self.transposition + t) % 12,
        }
    }

    /// Per-beat chroma as 0/1 rows.
    pub fn chroma(&self) -> Vec<[f64; 12]> {
        self.chords.iter().map(|c| c.chroma.to_chroma()).collect()
    }
}

/// Makes a melody monophonic: on overlap the higher pitch wins and the
/// lower note is truncated (or dropped when it starts under the higher).
pub fn enforce_monophony(notes: &[NoteEvent]) -> Vec<NoteEvent> {
    let mut sorted = notes.to_vec();
    sorted.sort_by(|a, b| a.onset.cmp(&b.onset).then(b.pitch.cmp(&a.pitch)));
    let mut out: Vec<NoteEvent> = Vec::with_capacity(sorted.len());
    for n in sorted {
        match out.last_mut() {
            Some(last) if n.onset < last.end() => {
                if n.pitch > last.pitch && n.onset > last.onset {
                    last.duration = n.onset - last.onset;
                    out.push(n);
                }
            }
            _ => out.push(n),
        }
    }
    out
}

/// A lead sheet: ordered phrases without accompaniment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadSheetQuery {
    pub title: String,
    pub meter: Meter,
    pub tempo_us_per_beat: u32,
    pub phrases: Vec<Phrase>,
}

impl LeadSheetQuery {
    pub fn n(&self) -> usize {
        self.phrases.len()
    }

    pub fn total_bars(&self) -> u32 {
        self.phrases.iter().map(|p| p.label.length_bars).sum()
    }

    pub fn total_steps(&self) -> usize {
        self.phrases.iter().map(Phrase::steps).sum()
    }

    /// Builds a query from a segmented song, stripping accompaniment.
    pub fn from_phrases(title: impl Into<String>, tempo_us_per_beat: u32, phrases: Vec<Phrase>) -> Option<Self> {
        let meter = phrases.first()?.meter;
        if phrases.iter().any(|p| p.meter != meter) {
            return None;
        }
        let phrases = phrases
            .into_iter()
            .map(|p| Phrase { accompaniment: None, ..p })
            .collect();
        Some(Self { title: title.into(), meter, tempo_us_per_beat, phrases })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_round_trip() {
        let l: PhraseLabel = "A8".parse().unwrap();
        assert_eq!(l, PhraseLabel { letter: 'A', length_bars: 8 });
        assert_eq!(l.to_string(), "A8");
        assert!("a8".parse::<PhraseLabel>().is_err());
        assert!("A0".parse::<PhraseLabel>().is_err());
        assert!("A".parse::<PhraseLabel>().is_err());
    }

    #[test]
    fn pitch_class_rotation() {
        let c_major = PitchClassSet::from_classes([0, 4, 7]);
        assert_eq!(c_major.rotate(2), PitchClassSet::from_classes([2, 6, 9]));
        assert_eq!(c_major.rotate(9), PitchClassSet::from_classes([9, 1, 4]));
        assert_eq!(c_major.rotate(12), c_major);
        assert_eq!(c_major.to_string(), "100010010000");
        assert_eq!("100010010000".parse::<PitchClassSet>().unwrap(), c_major);
    }

    #[test]
    fn chord_root_must_be_in_chroma() {
        assert!(Chord::new(2, PitchClassSet::from_classes([0, 4, 7])).is_err());
        assert!(Chord::new(9, PitchClassSet::from_classes([9, 0, 4])).is_ok());
        assert_eq!(Chord::new(9, PitchClassSet::from_classes([0, 4, 9])).unwrap().tones_from_root(), vec![9, 0, 4]);
    }

    #[test]
    fn roll_notes_round_trip_and_retrigger() {
        let notes = vec![
            RollNote { onset: 0, pitch: 60, duration: 4 },
            RollNote { onset: 2, pitch: 60, duration: 3 },
            RollNote { onset: 1, pitch: 64, duration: 10 },
        ];
        let roll = PianoRoll::from_notes(8, notes);
        roll.validate().unwrap();
        assert_eq!(
            roll.notes(),
            vec![
                RollNote { onset: 0, pitch: 60, duration: 2 },
                RollNote { onset: 1, pitch: 64, duration: 7 },
                RollNote { onset: 2, pitch: 60, duration: 3 },
            ]
        );
    }

    #[test]
    fn dangling_hold_rejected() {
        let mut cells = vec![CELL_OFF; 2 * PITCHES];
        cells[PITCHES + 60] = CELL_HOLD;
        assert_eq!(
            PianoRoll::from_cells(2, cells).unwrap_err(),
            DataError::DanglingHold { step: 1, pitch: 60 }
        );
    }

    #[test]
    fn monophony_keeps_higher_pitch() {
        let n = |p, o, d| NoteEvent::new(p, o, d, Track::Melody).unwrap();
        let out = enforce_monophony(&[n(60, 0, 8), n(67, 4, 4), n(55, 5, 2), n(64, 8, 2)]);
        assert_eq!(out, vec![n(60, 0, 4), n(67, 4, 4), n(64, 8, 2)]);
        let same_onset = enforce_monophony(&[n(60, 0, 4), n(62, 0, 2)]);
        assert_eq!(same_onset, vec![n(62, 0, 2)]);
    }

    #[test]
    fn transposition_folds_into_range() {
        assert_eq!(transposition_semitones(5), 5);
        assert_eq!(transposition_semitones(7), -5);
        assert_eq!(shift_pitch(125, 5), 118);
        assert_eq!(shift_pitch(2, -5), 9);
    }
}
