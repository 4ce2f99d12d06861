//! Features consumed by the scoring models: melody one-hot codes, 3-class
//! rhythm, chroma, tonal interval vectors, texture sketches, rhythm density,
//! voice number, and flattened cosine similarity.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::symbolic::{NoteEvent, PianoRoll, CELL_OFF, CELL_ONSET, STEPS_PER_BEAT};

/// Melody code for a continuation step.
pub const HOLD: u8 = 128;
/// Melody code for a silent step.
pub const REST: u8 = 129;
pub const MELODY_DIM: usize = 130;

/// Weights applied to DFT coefficients 1..=6 of a normalized chroma.
pub const TIV_WEIGHTS: [f64; 6] = [2.0, 11.0, 17.0, 16.0, 19.0, 7.0];

/// Per-beat texture descriptor: 12 pitch-class activations, onset count,
/// mean simultaneous-note count.
pub const TEXTURE_BEAT_DIM: usize = 14;
pub const TEXTURE_DIM: usize = 3 * TEXTURE_BEAT_DIM;
pub const DEFAULT_BOUNDARY_BEATS: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("melody is not monophonic: overlap at step {step}")]
    Overlap { step: u32 },
    #[error("note at step {onset} lies outside a {steps}-step phrase")]
    OutOfRange { onset: u32, steps: usize },
    #[error("cosine similarity undefined for an all-zero vector")]
    ZeroVector,
    #[error("shape mismatch: {left} vs {right}")]
    ShapeMismatch { left: usize, right: usize },
    #[error("invalid melody code sequence at step {0}")]
    InvalidCode(usize),
}

/// Melody as one code per 16th step: 0..=127 onset pitch, 128 hold, 129 rest.
/// Equivalent to a T x 130 one-hot matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MelodyFeature(Vec<u8>);

impl MelodyFeature {
    pub fn from_codes(codes: Vec<u8>) -> Result<Self, FeatureError> {
        for (t, &c) in codes.iter().enumerate() {
            if c > REST || (c == HOLD && (t == 0 || codes[t - 1] == REST)) {
                return Err(FeatureError::InvalidCode(t));
            }
        }
        Ok(Self(codes))
    }

    pub fn codes(&self) -> &[u8] {
        &self.0
    }

    pub fn steps(&self) -> usize {
        self.0.len()
    }

    /// Row-major T x 130 one-hot matrix.
    pub fn to_matrix(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.0.len() * MELODY_DIM];
        for (t, &c) in self.0.iter().enumerate() {
            m[t * MELODY_DIM + c as usize] = 1.0;
        }
        m
    }
}

pub fn melody_one_hot(melody: &[NoteEvent], steps: usize) -> Result<MelodyFeature, FeatureError> {
    let mut codes = vec![REST; steps];
    let mut notes = melody.to_vec();
    notes.sort_by_key(|n| n.onset);
    let mut busy_until = 0u32;
    for n in &notes {
        if n.onset as usize >= steps {
            return Err(FeatureError::OutOfRange { onset: n.onset, steps });
        }
        if n.onset < busy_until {
            return Err(FeatureError::Overlap { step: n.onset });
        }
        let end = (n.end() as usize).min(steps);
        codes[n.onset as usize] = n.pitch;
        for c in &mut codes[n.onset as usize + 1..end] {
            *c = HOLD;
        }
        busy_until = n.end();
    }
    Ok(MelodyFeature(codes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RhythmClass {
    Onset,
    Hold,
    Rest,
}

impl RhythmClass {
    fn column(self) -> usize {
        match self {
            RhythmClass::Onset => 0,
            RhythmClass::Hold => 1,
            RhythmClass::Rest => 2,
        }
    }
}

/// Melody condensed to onset / hold / rest per step (T x 3 one-hot).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RhythmFeature(Vec<RhythmClass>);

impl RhythmFeature {
    pub fn classes(&self) -> &[RhythmClass] {
        &self.0
    }

    pub fn steps(&self) -> usize {
        self.0.len()
    }

    pub fn to_matrix(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.0.len() * 3];
        for (t, c) in self.0.iter().enumerate() {
            m[t * 3 + c.column()] = 1.0;
        }
        m
    }

    /// Column sums `(onsets, holds, rests)`.
    pub fn column_sums(&self) -> [usize; 3] {
        let mut sums = [0; 3];
        for c in &self.0 {
            sums[c.column()] += 1;
        }
        sums
    }
}

pub fn rhythm_feature(mel: &MelodyFeature) -> RhythmFeature {
    RhythmFeature(
        mel.codes()
            .iter()
            .map(|&c| match c {
                HOLD => RhythmClass::Hold,
                REST => RhythmClass::Rest,
                _ => RhythmClass::Onset,
            })
            .collect(),
    )
}

/// Per-beat 12-D chroma rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChromaSeq(pub Vec<[f64; 12]>);

/// Per-beat tonal interval vectors, stored as (Re1, Im1, ..., Re6, Im6).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TivSeq(pub Vec<[f64; 12]>);

impl TivSeq {
    pub fn flatten(&self) -> Vec<f64> {
        self.0.iter().flat_map(|r| r.iter().copied()).collect()
    }
}

/// Weighted DFT coefficients 1..=6 of one chroma row, normalized by the row
/// sum. `None` for an all-zero row.
pub fn tiv_row(chroma: &[f64; 12], weights: &[f64; 6]) -> Option<[f64; 12]> {
    let total: f64 = chroma.iter().sum();
    if total == 0.0 {
        return None;
    }
    let mut out = [0.0; 12];
    for k in 1..=6 {
        let (mut re, mut im) = (0.0, 0.0);
        for (n, &c) in chroma.iter().enumerate() {
            if c != 0.0 {
                // Reduce kn mod 12 so equal angles give bit-equal terms.
                let angle = -2.0 * std::f64::consts::PI * ((k * n) % 12) as f64 / 12.0;
                re += c * angle.cos();
                im += c * angle.sin();
            }
        }
        let w = weights[k - 1] / total;
        out[2 * (k - 1)] = w * re;
        out[2 * (k - 1) + 1] = w * im;
    }
    Some(out)
}

pub fn tiv(chroma: &ChromaSeq, weights: &[f64; 6]) -> TivSeq {
    let mut empty = 0usize;
    let rows = chroma
        .0
        .iter()
        .map(|row| {
            tiv_row(row, weights).unwrap_or_else(|| {
                empty += 1;
                [0.0; 12]
            })
        })
        .collect();
    if empty > 0 {
        log::warn!("{empty} of {} beats have an empty chroma; mapped to the zero TIV", chroma.0.len());
    }
    TivSeq(rows)
}

/// Deterministic 42-D texture summary of an accompaniment roll.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TextureSketch([f64; TEXTURE_DIM]);

impl TextureSketch {
    pub fn new(values: [f64; TEXTURE_DIM]) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64; TEXTURE_DIM] {
        &self.0
    }

    pub fn whole(&self) -> &[f64] {
        &self.0[..TEXTURE_BEAT_DIM]
    }

    pub fn head(&self) -> &[f64] {
        &self.0[TEXTURE_BEAT_DIM..2 * TEXTURE_BEAT_DIM]
    }

    pub fn tail(&self) -> &[f64] {
        &self.0[2 * TEXTURE_BEAT_DIM..]
    }
}

impl TryFrom<Vec<f64>> for TextureSketch {
    type Error = String;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        let len = v.len();
        let arr: [f64; TEXTURE_DIM] = v.try_into().map_err(|_| format!("texture sketch needs {TEXTURE_DIM} values, got {len}"))?;
        Ok(Self(arr))
    }
}

impl From<TextureSketch> for Vec<f64> {
    fn from(s: TextureSketch) -> Self {
        s.0.to_vec()
    }
}

fn beat_descriptor(roll: &PianoRoll, beat: usize) -> [f64; TEXTURE_BEAT_DIM] {
    let start = beat * STEPS_PER_BEAT;
    let end = (start + STEPS_PER_BEAT).min(roll.steps());
    let n = (end - start) as f64;
    let mut d = [0.0; TEXTURE_BEAT_DIM];
    let mut onsets = 0usize;
    let mut active = 0usize;
    for t in start..end {
        let mut classes = [false; 12];
        for (p, &cell) in roll.row(t).iter().enumerate() {
            if cell != CELL_OFF {
                classes[p % 12] = true;
                active += 1;
                if cell == CELL_ONSET {
                    onsets += 1;
                }
            }
        }
        for (c, on) in classes.iter().enumerate() {
            if *on {
                d[c] += 1.0;
            }
        }
    }
    for v in &mut d[..12] {
        *v /= n;
    }
    d[12] = onsets as f64;
    d[13] = active as f64 / n;
    d
}

fn mean_of(rows: &[[f64; TEXTURE_BEAT_DIM]]) -> [f64; TEXTURE_BEAT_DIM] {
    let mut m = [0.0; TEXTURE_BEAT_DIM];
    for r in rows {
        for (a, b) in m.iter_mut().zip(r) {
            *a += b;
        }
    }
    for v in &mut m {
        *v /= rows.len() as f64;
    }
    m
}

/// Whole-phrase, first-`boundary_beats` and last-`boundary_beats` means of
/// the per-beat texture descriptor. Shorter phrases use all beats for the
/// boundary blocks.
pub fn texture_sketch(roll: &PianoRoll, boundary_beats: usize) -> TextureSketch {
    let beats = roll.steps().div_ceil(STEPS_PER_BEAT);
    if beats == 0 {
        return TextureSketch([0.0; TEXTURE_DIM]);
    }
    let rows: Vec<_> = (0..beats).map(|b| beat_descriptor(roll, b)).collect();
    let edge = if beats < boundary_beats || boundary_beats == 0 { beats } else { boundary_beats };
    let mut out = [0.0; TEXTURE_DIM];
    out[..TEXTURE_BEAT_DIM].copy_from_slice(&mean_of(&rows));
    out[TEXTURE_BEAT_DIM..2 * TEXTURE_BEAT_DIM].copy_from_slice(&mean_of(&rows[..edge]));
    out[2 * TEXTURE_BEAT_DIM..].copy_from_slice(&mean_of(&rows[beats - edge..]));
    TextureSketch(out)
}

/// Fraction of steps with at least one onset.
pub fn rhythm_density(roll: &PianoRoll) -> f64 {
    if roll.steps() == 0 {
        return 0.0;
    }
    let hits = (0..roll.steps()).filter(|&t| roll.has_onset(t)).count();
    hits as f64 / roll.steps() as f64
}

/// Mean count of sounding pitches over the non-silent steps.
pub fn voice_number(roll: &PianoRoll) -> f64 {
    let (sum, sounding) = (0..roll.steps())
        .map(|t| roll.active_count(t))
        .filter(|&c| c > 0)
        .fold((0usize, 0usize), |(s, n), c| (s + c, n + 1));
    if sounding == 0 {
        0.0
    } else {
        sum as f64 / sounding as f64
    }
}

/// Cosine similarity of two equally shaped, flattened matrices.
pub fn cosine_flat(a: &[f64], b: &[f64]) -> Result<f64, FeatureError> {
    if a.len() != b.len() {
        return Err(FeatureError::ShapeMismatch { left: a.len(), right: b.len() });
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(FeatureError::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Roll-level control statistics plus sketch, as cached in the index.
pub fn roll_summary(roll: &PianoRoll, boundary_beats: usize) -> (TextureSketch, f64, f64) {
    (texture_sketch(roll, boundary_beats), rhythm_density(roll), voice_number(roll))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbolic::{RollNote, Track};
    use proptest::prelude::*;

    fn note(pitch: u8, onset: u32, duration: u32) -> NoteEvent {
        NoteEvent { pitch, onset, duration, track: Track::Melody }
    }

    #[test]
    fn one_hot_definitions() {
        assert_eq!(melody_one_hot(&[], 4).unwrap().codes(), &[REST; 4]);
        assert_eq!(melody_one_hot(&[note(60, 0, 3)], 4).unwrap().codes(), &[60, HOLD, HOLD, REST]);
        let abutting = melody_one_hot(&[note(60, 0, 2), note(62, 2, 2)], 4).unwrap();
        assert_eq!(abutting.codes(), &[60, HOLD, 62, HOLD]);
        assert_eq!(
            melody_one_hot(&[note(60, 0, 3), note(62, 2, 2)], 4).unwrap_err(),
            FeatureError::Overlap { step: 2 }
        );
        assert!(matches!(melody_one_hot(&[note(60, 4, 1)], 4), Err(FeatureError::OutOfRange { .. })));
        let m = melody_one_hot(&[note(60, 0, 1)], 2).unwrap().to_matrix();
        assert_eq!(m.len(), 260);
        assert_eq!(m[60], 1.0);
        assert_eq!(m[130 + 129], 1.0);
        assert_eq!(m.iter().sum::<f64>(), 2.0);
    }

    #[test]
    fn melody_codes_validated() {
        assert!(MelodyFeature::from_codes(vec![HOLD]).is_err());
        assert!(MelodyFeature::from_codes(vec![REST, HOLD]).is_err());
        assert!(MelodyFeature::from_codes(vec![130]).is_err());
        assert!(MelodyFeature::from_codes(vec![60, HOLD, REST]).is_ok());
    }

    #[test]
    fn rhythm_definitions() {
        let r = rhythm_feature(&MelodyFeature::from_codes(vec![60, HOLD, REST]).unwrap());
        assert_eq!(r.to_matrix(), vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let rest = rhythm_feature(&melody_one_hot(&[], 5).unwrap());
        assert!(rest.classes().iter().all(|c| *c == RhythmClass::Rest));
    }

    #[test]
    fn tiv_uniform_row_vanishes() {
        let t = tiv_row(&[1.0; 12], &TIV_WEIGHTS).unwrap();
        assert!(t.iter().all(|v| v.abs() < 1e-12), "{t:?}");
        assert!(tiv_row(&[0.0; 12], &TIV_WEIGHTS).is_none());
        assert_eq!(tiv(&ChromaSeq(vec![[0.0; 12]]), &TIV_WEIGHTS).0, vec![[0.0; 12]]);
    }

    #[test]
    fn tiv_c_major_matches_direct_dft() {
        // Independent oracle: complex DFT evaluated term by term with
        // unreduced angles.
        let triad = [0usize, 4, 7];
        let mut chroma = [0.0; 12];
        for &n in &triad {
            chroma[n] = 1.0;
        }
        let got = tiv_row(&chroma, &TIV_WEIGHTS).unwrap();
        for k in 1..=6usize {
            let (mut re, mut im) = (0.0f64, 0.0f64);
            for &n in &triad {
                let a = -2.0 * std::f64::consts::PI * (k * n) as f64 / 12.0;
                re += a.cos();
                im += a.sin();
            }
            let w = TIV_WEIGHTS[k - 1] / 3.0;
            assert!((got[2 * k - 2] - w * re).abs() < 1e-12);
            assert!((got[2 * k - 1] - w * im).abs() < 1e-12);
        }
        // Frozen from the oracle: k = 1 real part is (2/3)(1 + cos(-2pi/3) + cos(-7pi/6)).
        let expected_re1 = 2.0 / 3.0 * (1.0 - 0.5 - 3f64.sqrt() / 2.0);
        assert!((got[0] - expected_re1).abs() < 1e-12);
    }

    fn roll(steps: usize, notes: &[(usize, u8, usize)]) -> PianoRoll {
        PianoRoll::from_notes(steps, notes.iter().map(|&(onset, pitch, duration)| RollNote { onset, pitch, duration }))
    }

    #[test]
    fn texture_sketch_cases() {
        assert!(texture_sketch(&PianoRoll::new(32), 8).values().iter().all(|v| *v == 0.0));

        let bar: Vec<(usize, u8, usize)> = vec![(0, 48, 4), (4, 55, 2), (6, 64, 2), (8, 60, 8), (12, 67, 4)];
        let repeated: Vec<_> = (0..4).flat_map(|b| bar.iter().map(move |&(o, p, d)| (o + 16 * b, p, d))).collect();
        let s = texture_sketch(&roll(64, &repeated), 8);
        assert_eq!(s.whole(), s.head());
        assert_eq!(s.head(), s.tail());

        let triad = texture_sketch(&roll(32, &[(0, 60, 32), (0, 64, 32), (0, 67, 32)]), 8);
        for c in 0..12 {
            let expected = if [0, 4, 7].contains(&c) { 1.0 } else { 0.0 };
            assert_eq!(triad.whole()[c], expected);
        }
        assert_eq!(triad.whole()[13], 3.0);
        assert_eq!(triad.whole()[12], 3.0 / 8.0);
    }

    #[test]
    fn density_and_voices() {
        let r = roll(16, &[(0, 60, 1), (4, 60, 1), (8, 60, 1), (12, 60, 1)]);
        assert_eq!(rhythm_density(&r), 0.25);
        assert_eq!(rhythm_density(&PianoRoll::new(16)), 0.0);
        let every: Vec<_> = (0..16).map(|t| (t, 60u8, 1usize)).collect();
        assert_eq!(rhythm_density(&roll(16, &every)), 1.0);

        assert_eq!(voice_number(&roll(16, &[(0, 60, 16), (0, 64, 16), (0, 67, 16)])), 3.0);
        assert_eq!(voice_number(&PianoRoll::new(16)), 0.0);
        assert_eq!(voice_number(&roll(16, &[(0, 60, 8), (0, 64, 8)])), 2.0);
    }

    #[test]
    fn cosine_cases() {
        assert!((cosine_flat(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_flat(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_flat(&[1.0, 1.0], &[1.0, 0.0]).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(cosine_flat(&[0.0, 0.0], &[1.0, 0.0]).unwrap_err(), FeatureError::ZeroVector);
        assert!(matches!(cosine_flat(&[1.0], &[1.0, 0.0]), Err(FeatureError::ShapeMismatch { .. })));
    }

    fn rotate(row: &[f64; 12], t: usize) -> [f64; 12] {
        let mut out = [0.0; 12];
        for n in 0..12 {
            out[(n + t) % 12] = row[n];
        }
        out
    }

    proptest! {
        #[test]
        fn rhythm_classes_partition_steps(codes in prop::collection::vec(0u8..=REST, 1..64)) {
            let mut codes = codes;
            if codes[0] == HOLD { codes[0] = REST; }
            for t in 1..codes.len() {
                if codes[t] == HOLD && codes[t - 1] == REST { codes[t] = REST; }
            }
            let mel = MelodyFeature::from_codes(codes.clone()).unwrap();
            let sums = rhythm_feature(&mel).column_sums();
            prop_assert_eq!(sums.iter().sum::<usize>(), codes.len());
            prop_assert_eq!(sums[1], codes.iter().filter(|&&c| c == HOLD).count());
            prop_assert_eq!(sums[2], codes.iter().filter(|&&c| c == REST).count());
        }

        #[test]
        fn tiv_magnitudes_shift_invariant(row in prop::array::uniform12(0.0f64..1.0), t in 0usize..12) {
            prop_assume!(row.iter().sum::<f64>() > 1e-3);
            let a = tiv_row(&row, &TIV_WEIGHTS).unwrap();
            let b = tiv_row(&rotate(&row, t), &TIV_WEIGHTS).unwrap();
            for k in 0..6 {
                let ma = a[2 * k].hypot(a[2 * k + 1]);
                let mb = b[2 * k].hypot(b[2 * k + 1]);
                prop_assert!((ma - mb).abs() < 1e-9, "k={} {} vs {}", k + 1, ma, mb);
            }
        }

        #[test]
        fn cosine_bounds(a in prop::collection::vec(-5.0f64..5.0, 8), b in prop::collection::vec(-5.0f64..5.0, 8)) {
            prop_assume!(a.iter().any(|v| v.abs() > 1e-6) && b.iter().any(|v| v.abs() > 1e-6));
            let ab = cosine_flat(&a, &b).unwrap();
            prop_assert!(ab.abs() <= 1.0 + 1e-12);
            prop_assert_eq!(ab, cosine_flat(&b, &a).unwrap());
            prop_assert!((cosine_flat(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn roll_statistics_transposition_invariant(
            notes in prop::collection::vec((0usize..32, 24u8..100, 1usize..8), 0..24),
            shift in -12i32..=12,
        ) {
            let r = PianoRoll::from_notes(32, notes.iter().map(|&(onset, pitch, duration)| RollNote { onset, pitch, duration }));
            let moved = r.transposed(shift);
            prop_assert_eq!(rhythm_density(&r), rhythm_density(&moved));
            prop_assert_eq!(voice_number(&r), voice_number(&moved));
            let s = texture_sketch(&r, 8);
            let m = texture_sketch(&moved, 8);
            if shift % 12 == 0 {
                prop_assert_eq!(&s, &m);
            } else {
                let k = shift.rem_euclid(12) as usize;
                for block in 0..3 {
                    for c in 0..12 {
                        prop_assert_eq!(s.values()[block * 14 + c], m.values()[block * 14 + (c + k) % 12]);
                    }
                    prop_assert_eq!(s.values()[block * 14 + 12], m.values()[block * 14 + 12]);
                    prop_assert_eq!(s.values()[block * 14 + 13], m.values()[block * 14 + 13]);
                }
            }
        }
    }
}
