//! Sidecar annotation files.
//!
//! ```text
//! A8A8B8B8
//! 1.1 0 100010010000
//! 2.1 9 100010000100
//! ```
//!
//! Line 1 is the phrase annotation. Each further line is `bar.beat root
//! chromabits` (bar and beat 1-based, root a pitch class, chroma twelve 0/1
//! characters starting at C). A chord holds until the next line; beats before
//! the first line carry no chord. An all-zero chroma marks "no chord".
//! Blank lines and lines starting with `#` are ignored.

use thiserror::Error;

use super::{Chord, DataError, Meter, PitchClassSet};

#[derive(Debug, Error)]
pub enum SidecarError {
    #[error("sidecar is empty: missing phrase annotation line")]
    MissingAnnotation,
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sidecar {
    pub annotation: String,
    /// `(bar, beat, chord)`, 1-based, in file order.
    pub chords: Vec<(u32, u32, Chord)>,
}

pub fn parse_sidecar(text: &str) -> Result<Sidecar, SidecarError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (_, annotation) = lines.next().ok_or(SidecarError::MissingAnnotation)?;
    let mut chords = Vec::new();
    for (line, text) in lines {
        let syntax = |message: String| SidecarError::Syntax { line, message };
        let fields: Vec<&str> = text.split_whitespace().collect();
        let [position, root, bits] = fields[..] else {
            return Err(syntax(format!("expected `bar.beat root chromabits`, got {text:?}")));
        };
        let (bar, beat) = position
            .split_once('.')
            .and_then(|(a, b)| Some((a.parse::<u32>().ok()?, b.parse::<u32>().ok()?)))
            .filter(|&(a, b)| a >= 1 && b >= 1)
            .ok_or_else(|| syntax(format!("bad position {position:?}")))?;
        let root: u8 = root
            .parse()
            .ok()
            .filter(|r| *r < 12)
            .ok_or_else(|| syntax(format!("bad root {root:?}")))?;
        let chroma: PitchClassSet = bits.parse().map_err(|e: DataError| syntax(e.to_string()))?;
        let chord = if chroma.is_empty() { Chord::NONE } else { Chord::new(root, chroma).map_err(|e| syntax(e.to_string()))? };
        chords.push((bar, beat, chord));
    }
    Ok(Sidecar { annotation: annotation.to_string(), chords })
}

impl Sidecar {
    /// Expands the chord lines to one chord per beat.
    pub fn beat_chords(&self, meter: Meter, beats: usize) -> Result<Vec<Chord>, SidecarError> {
        let bpb = meter.beats_per_bar();
        let mut out = vec![Chord::NONE; beats];
        let mut entries: Vec<(usize, Chord)> = Vec::with_capacity(self.chords.len());
        for (i, &(bar, beat, chord)) in self.chords.iter().enumerate() {
            if beat as usize > bpb {
                return Err(SidecarError::Syntax {
                    line: i + 2,
                    message: format!("beat {beat} exceeds {meter} bar"),
                });
            }
            let index = (bar as usize - 1) * bpb + (beat as usize - 1);
            if entries.last().is_some_and(|&(prev, _)| prev >= index) {
                return Err(SidecarError::Syntax { line: i + 2, message: "chord lines must be in ascending order".into() });
            }
            entries.push((index, chord));
        }
        for (k, &(start, chord)) in entries.iter().enumerate() {
            let end = entries.get(k + 1).map_or(beats, |&(next, _)| next).min(beats);
            for slot in out.iter_mut().take(end).skip(start) {
                *slot = chord;
            }
        }
        Ok(out)
    }
}
