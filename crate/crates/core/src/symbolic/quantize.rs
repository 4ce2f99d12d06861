use super::{enforce_monophony, Chord, Meter, NoteEvent, PitchClassSet, SongDocument, TickNote, Track, STEPS_PER_BEAT};

/// A song on the 16th-note grid. Chord-track notes sit on beat boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedSong {
    pub source_id: String,
    pub meter: Meter,
    pub tempo_us_per_beat: u32,
    /// Monophonic.
    pub melody: Vec<NoteEvent>,
    pub chord_notes: Vec<NoteEvent>,
    pub accompaniment: Vec<NoteEvent>,
    /// One chord per beat; derived from the chord track unless replaced.
    pub chords: Vec<Chord>,
    pub total_steps: usize,
}

impl QuantizedSong {
    pub fn bars(&self) -> usize {
        self.total_steps.div_ceil(self.meter.steps_per_bar())
    }

    pub fn beats(&self) -> usize {
        self.bars() * self.meter.beats_per_bar()
    }

    /// Replaces the per-beat chords, padding with "no chord" to the song length.
    pub fn with_chords(mut self, mut chords: Vec<Chord>) -> Self {
        chords.resize(self.beats().max(chords.len()), Chord::NONE);
        self.chords = chords;
        self
    }
}

fn snap(tick: u64, unit: f64) -> u32 {
    (tick as f64 / unit).round() as u32
}

fn quantize_notes<'a>(notes: impl Iterator<Item = &'a TickNote>, unit: f64, steps_per_unit: u32, track: Track) -> Vec<NoteEvent> {
    let mut out: Vec<NoteEvent> = notes
        .map(|n| {
            let start = snap(n.start, unit);
            let end = snap(n.start + n.duration, unit);
            NoteEvent {
                pitch: n.pitch,
                onset: start * steps_per_unit,
                duration: end.saturating_sub(start).max(1) * steps_per_unit,
                track,
            }
        })
        .collect();
    out.sort();
    out
}

/// Snaps notes to 16th steps (chord-track notes to beats), clamps
/// degenerate durations to one unit, and derives per-beat chords from the
/// chord track.
pub fn quantize(doc: &SongDocument) -> QuantizedSong {
    let beat = doc.ticks_per_beat as f64;
    let step = beat / STEPS_PER_BEAT as f64;

    let melody = enforce_monophony(&quantize_notes(doc.notes_with_role(Track::Melody), step, 1, Track::Melody));
    let accompaniment = quantize_notes(doc.notes_with_role(Track::Accompaniment), step, 1, Track::Accompaniment);
    let chord_notes = quantize_notes(doc.notes_with_role(Track::Chord), beat, STEPS_PER_BEAT as u32, Track::Chord);

    let last_note = melody
        .iter()
        .chain(&accompaniment)
        .chain(&chord_notes)
        .map(|n| n.end() as usize)
        .max()
        .unwrap_or(0);
    let total_steps = last_note.max(snap(doc.end_tick, step) as usize);

    let mut song = QuantizedSong {
        source_id: String::new(),
        meter: doc.meter,
        tempo_us_per_beat: doc.tempo_us_per_beat,
        melody,
        chord_notes,
        accompaniment,
        chords: Vec::new(),
        total_steps,
    };
    let chords = chords_from_track(&song.chord_notes, song.beats());
    song.chords = chords;
    song
}

/// Per-beat chords from chord-track notes: the chroma of the notes sounding
/// at the beat start, rooted on the lowest of them.
pub fn chords_from_track(notes: &[NoteEvent], beats: usize) -> Vec<Chord> {
    (0..beats)
        .map(|b| {
            let step = (b * STEPS_PER_BEAT) as u32;
            let sounding: Vec<u8> = notes
                .iter()
                .filter(|n| n.onset <= step && step < n.end())
                .map(|n| n.pitch)
                .collect();
            match sounding.iter().min() {
                Some(&low) => Chord { root: low % 12, chroma: PitchClassSet::from_classes(sounding.iter().map(|p| p % 12)) },
                None => Chord::NONE,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbolic::MidiTrack;

    fn doc_with(track: &str, notes: Vec<(u64, u64, u8)>) -> SongDocument {
        SongDocument {
            ticks_per_beat: 480,
            tempo_us_per_beat: 500_000,
            meter: Meter::FourFour,
            tracks: vec![MidiTrack {
                name: track.into(),
                role: crate::symbolic::midi::role_for_name(track),
                notes: notes
                    .into_iter()
                    .map(|(start, duration, pitch)| TickNote { start, duration, pitch, velocity: 64, channel: 0 })
                    .collect(),
            }],
            end_tick: 0,
        }
    }

    #[test]
    fn on_grid_onset_unchanged() {
        let q = quantize(&doc_with("melody", vec![(240, 120, 60)]));
        assert_eq!(q.melody[0].onset, 2);
        assert_eq!(q.melody[0].duration, 1);
    }

    #[test]
    fn nearest_rounding() {
        // 120 ticks per step; 0.49 steps past step 3 snaps back to 3.
        let start = 3 * 120 + 58;
        let q = quantize(&doc_with("melody", vec![(start, 240, 60)]));
        assert_eq!(q.melody[0].onset, 3);
        let q = quantize(&doc_with("melody", vec![(3 * 120 + 61, 240, 60)]));
        assert_eq!(q.melody[0].onset, 4);
    }

    #[test]
    fn short_note_clamped() {
        let q = quantize(&doc_with("melody", vec![(0, 50, 60)]));
        assert_eq!(q.melody[0].duration, 1);
    }

    #[test]
    fn chord_track_snaps_to_beats() {
        let q = quantize(&doc_with("chord", vec![(470, 500, 60), (470, 500, 64), (470, 500, 67)]));
        assert!(q.chord_notes.iter().all(|n| n.onset == 4 && n.duration == 4));
        assert_eq!(q.total_steps, 8);
        assert_eq!(q.chords[0], Chord::NONE);
        assert_eq!(q.chords[1], Chord { root: 0, chroma: PitchClassSet::from_classes([0, 4, 7]) });
    }

    #[test]
    fn song_length_counts_whole_bars() {
        let q = quantize(&doc_with("melody", vec![(0, 480 * 5, 60)]));
        assert_eq!(q.total_steps, 20);
        assert_eq!(q.bars(), 2);
    }
}
