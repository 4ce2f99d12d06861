//! Chord-conditioned texture transfer.
//!
//! Takes an accompaniment roll, the chords it was written over, and the
//! chords it should follow instead. It rewrites pitches beat by beat through
//! a pitch-class map and keeps every onset, hold and step position. The
//! inputs and outputs match a chord-encoder / texture-encoder / decoder
//! pipeline, so a learned model can replace this module later.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::symbolic::{Chord, PianoRoll, PitchClassSet, RollNote, STEPS_PER_BEAT};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TransferError {
    #[error("chord spans differ: roll has {roll_beats} beats, source {src} chords, target {dst} chords")]
    SpanMismatch { roll_beats: usize, src: usize, dst: usize },
}

/// A chord governing a contiguous run of beats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChordRecord {
    pub chord: Chord,
    pub beat_span: usize,
}

/// Collapses per-beat chords into runs.
pub fn chord_records(beats: &[Chord]) -> Vec<ChordRecord> {
    let mut out: Vec<ChordRecord> = Vec::new();
    for &c in beats {
        match out.last_mut() {
            Some(r) if r.chord == c => r.beat_span += 1,
            _ => out.push(ChordRecord { chord: c, beat_span: 1 }),
        }
    }
    out
}

/// Total map from source pitch classes to target pitch classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PitchClassMap(pub [u8; 12]);

impl PitchClassMap {
    pub const IDENTITY: PitchClassMap = PitchClassMap([0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11]);

    pub fn apply(&self, class: u8) -> u8 {
        self.0[(class % 12) as usize]
    }

    fn shifted(shift: u8) -> Self {
        let mut m = [0u8; 12];
        for (c, slot) in m.iter_mut().enumerate() {
            *slot = (c as u8 + shift) % 12;
        }
        PitchClassMap(m)
    }
}

const MAJOR: [u8; 7] = [0, 2, 4, 5, 7, 9, 11];
const MINOR: [u8; 7] = [0, 2, 3, 5, 7, 8, 10];
const MIXOLYDIAN: [u8; 7] = [0, 2, 4, 5, 7, 9, 10];

/// Chord tones plus the diatonic mode implied by the chord's quality.
pub fn chord_scale(chord: &Chord) -> PitchClassSet {
    let has = |i: u8| chord.chroma.contains((chord.root + i) % 12);
    let mode = if has(3) && !has(4) {
        MINOR
    } else if has(4) && has(10) {
        MIXOLYDIAN
    } else {
        MAJOR
    };
    let scale = PitchClassSet::from_classes(mode.iter().map(|i| (chord.root + i) % 12));
    PitchClassSet::from_bits(scale.bits() | chord.chroma.bits())
}

/// Maps chord tones positionally (both chords sorted upward from their
/// roots, the shorter list cycled) and every other class by the root
/// interval, snapped to the nearest class of the target chord's scale with
/// ties going down.
///
/// When the target is an exact transposition of the source, or either beat
/// has no chord, the map is a pure shift (identity for no chord).
pub fn pitch_class_map(src: &Chord, dst: &Chord) -> PitchClassMap {
    if src.is_none() || dst.is_none() {
        return PitchClassMap::IDENTITY;
    }
    let shift = (dst.root + 12 - src.root) % 12;
    if src.chroma.rotate(shift) == dst.chroma {
        return PitchClassMap::shifted(shift);
    }

    let src_tones = src.tones_from_root();
    let dst_tones = dst.tones_from_root();
    let allowed = chord_scale(dst);
    let mut map = [0u8; 12];
    for c in 0..12u8 {
        map[c as usize] = match src_tones.iter().position(|&t| t == c) {
            Some(i) => dst_tones[i % dst_tones.len()],
            None => {
                let target = (c + shift) % 12;
                (0..=6u8)
                    .flat_map(|d| [(target + 12 - d) % 12, (target + d) % 12])
                    .find(|&cand| allowed.contains(cand))
                    .expect("scale is non-empty")
            }
        };
    }
    PitchClassMap(map)
}

/// Nearest pitch with class `class` to `from`, ties downward, kept in 0..=127.
pub fn place_in_octave(from: u8, class: u8) -> u8 {
    let base = from as i32 - from as i32 % 12 + class as i32;
    let mut best: Option<i32> = None;
    for cand in [base - 12, base, base + 12] {
        if !(0..=127).contains(&cand) {
            continue;
        }
        best = match best {
            None => Some(cand),
            Some(b) => {
                let (db, dc) = ((b - from as i32).abs(), (cand - from as i32).abs());
                if dc < db || (dc == db && cand < b) {
                    Some(cand)
                } else {
                    Some(b)
                }
            }
        };
    }
    best.expect("some octave of every class lies in 0..=127") as u8
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transferred {
    pub roll: PianoRoll,
    /// Remapped notes that landed on an already sounding pitch.
    pub collisions: usize,
    /// Per-beat maps that were applied.
    pub maps: Vec<PitchClassMap>,
}

/// Re-harmonizes `acc` from `src_chords` to `dst_chords` (one chord per
/// beat). Each note is remapped through the map of the beat holding its
/// onset. Colliding notes with a shared onset merge into the longer one; a
/// later onset on a still sounding pitch re-strikes it.
pub fn transfer_with_report(acc: &PianoRoll, src_chords: &[Chord], dst_chords: &[Chord]) -> Result<Transferred, TransferError> {
    let beats = acc.steps().div_ceil(STEPS_PER_BEAT);
    if src_chords.len() != beats || dst_chords.len() != beats {
        return Err(TransferError::SpanMismatch { roll_beats: beats, src: src_chords.len(), dst: dst_chords.len() });
    }
    let maps: Vec<PitchClassMap> = src_chords.iter().zip(dst_chords).map(|(s, d)| pitch_class_map(s, d)).collect();

    let mut moved: Vec<RollNote> = acc
        .notes()
        .into_iter()
        .map(|n| {
            let map = maps[n.onset / STEPS_PER_BEAT];
            RollNote { pitch: place_in_octave(n.pitch, map.apply(n.pitch % 12)), ..n }
        })
        .collect();

    // Longest first within (pitch, onset) so the merge keeps it.
    moved.sort_by(|a, b| (a.pitch, a.onset).cmp(&(b.pitch, b.onset)).then(b.duration.cmp(&a.duration)));
    let mut collisions = 0;
    let mut kept: Vec<RollNote> = Vec::with_capacity(moved.len());
    for n in moved {
        match kept.last_mut() {
            Some(prev) if prev.pitch == n.pitch && prev.onset == n.onset => collisions += 1,
            Some(prev) if prev.pitch == n.pitch && n.onset < prev.onset + prev.duration => {
                collisions += 1;
                prev.duration = n.onset - prev.onset;
                kept.push(n);
            }
            _ => kept.push(n),
        }
    }
    if collisions > 0 {
        log::warn!("re-harmonization merged {collisions} colliding notes");
    }
    Ok(Transferred { roll: PianoRoll::from_notes(acc.steps(), kept), collisions, maps })
}

pub fn transfer(acc: &PianoRoll, src_chords: &[Chord], dst_chords: &[Chord]) -> Result<PianoRoll, TransferError> {
    transfer_with_report(acc, src_chords, dst_chords).map(|t| t.roll)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chord(root: u8, classes: &[u8]) -> Chord {
        Chord::new(root, PitchClassSet::from_classes(classes.iter().copied())).unwrap()
    }

    #[test]
    fn identity_when_chords_equal() {
        let c = chord(0, &[0, 4, 7]);
        assert_eq!(pitch_class_map(&c, &c), PitchClassMap::IDENTITY);
        let g7 = chord(7, &[7, 11, 2, 5]);
        assert_eq!(pitch_class_map(&g7, &g7), PitchClassMap::IDENTITY);
    }

    #[test]
    fn c_major_to_a_minor_by_hand() {
        let map = pitch_class_map(&chord(0, &[0, 4, 7]), &chord(9, &[9, 0, 4]));
        assert_eq!((map.apply(0), map.apply(4), map.apply(7)), (9, 0, 4));
        // D shifts by 9 to B, which A natural minor contains.
        assert_eq!(map.apply(2), 11);
        // C# shifts to A#; nearest A-minor classes are A (down) and B (up): tie goes down.
        assert_eq!(map.apply(1), 9);
    }

    #[test]
    fn positional_pairing_exhaustive() {
        // Every pair of triads/sevenths with every root: chord tones land on
        // chord tones and follow the positional rule.
        let shapes: [&[u8]; 4] = [&[0, 4, 7], &[0, 3, 7], &[0, 4, 7, 10], &[0, 3, 6]];
        for sr in 0..12u8 {
            for dr in 0..12u8 {
                for s in shapes {
                    for d in shapes {
                        let src = chord(sr, &s.iter().map(|i| (i + sr) % 12).collect::<Vec<_>>());
                        let dst = chord(dr, &d.iter().map(|i| (i + dr) % 12).collect::<Vec<_>>());
                        let map = pitch_class_map(&src, &dst);
                        let st = src.tones_from_root();
                        let dt = dst.tones_from_root();
                        for (i, t) in st.iter().enumerate() {
                            assert_eq!(map.apply(*t), dt[i % dt.len()]);
                            assert!(dst.chroma.contains(map.apply(*t)));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn octave_placement_minimizes_motion() {
        assert_eq!(place_in_octave(60, 9), 57);
        assert_eq!(place_in_octave(60, 2), 62);
        // Tritone away: tie resolves downward.
        assert_eq!(place_in_octave(60, 6), 54);
        assert_eq!(place_in_octave(2, 11), 11);
        assert_eq!(place_in_octave(126, 1), 121);
    }

    fn roll(steps: usize, notes: &[(usize, u8, usize)]) -> PianoRoll {
        PianoRoll::from_notes(steps, notes.iter().map(|&(onset, pitch, duration)| RollNote { onset, pitch, duration }))
    }

    #[test]
    fn transfer_cases() {
        let c = chord(0, &[0, 4, 7]);
        let am = chord(9, &[9, 0, 4]);
        let arpeggio = roll(16, &[(0, 48, 4), (4, 52, 4), (8, 55, 4), (12, 60, 4), (12, 64, 2)]);
        assert_eq!(transfer(&arpeggio, &[c; 4], &[c; 4]).unwrap(), arpeggio);

        let silent = PianoRoll::new(16);
        assert_eq!(transfer(&silent, &[c; 4], &[am; 4]).unwrap(), silent);

        let out = transfer_with_report(&arpeggio, &[c; 4], &[am; 4]).unwrap();
        assert_eq!(out.collisions, 0);
        for n in out.roll.notes() {
            assert!([9, 0, 4].contains(&(n.pitch % 12)), "{n:?}");
        }
        let onsets = |r: &PianoRoll| (0..r.steps()).filter(|&t| r.has_onset(t)).collect::<Vec<_>>();
        assert_eq!(onsets(&out.roll), onsets(&arpeggio));

        assert_eq!(
            transfer(&arpeggio, &[c; 3], &[c; 4]).unwrap_err(),
            TransferError::SpanMismatch { roll_beats: 4, src: 3, dst: 4 }
        );
    }

    #[test]
    fn collisions_merge() {
        // E and F over C7 -> F: 4 -> 9, 5 (non-chord) shifts to 10 then
        // snaps; two chord tones onto one target chord tone collide.
        let c = chord(0, &[0, 4, 7]);
        let power = chord(5, &[5, 0]);
        let r = roll(4, &[(0, 60, 4), (0, 67, 2)]);
        let out = transfer_with_report(&r, &[c], &[power]).unwrap();
        // 0 -> 5, 7 -> 5 (cycled): same onset, keep the longer.
        assert_eq!(out.collisions, 1);
        assert_eq!(out.roll.notes(), vec![RollNote { onset: 0, pitch: 65, duration: 4 }]);
    }

    #[test]
    fn records_collapse_runs() {
        let c = chord(0, &[0, 4, 7]);
        let g = chord(7, &[7, 11, 2]);
        let recs = chord_records(&[c, c, g, g, g, c]);
        assert_eq!(recs.iter().map(|r| r.beat_span).collect::<Vec<_>>(), vec![2, 3, 1]);
    }
}
