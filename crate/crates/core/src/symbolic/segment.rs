use thiserror::Error;

use super::{Chord, DataError, NoteEvent, PhraseLabel, Phrase, PianoRoll, QuantizedSong, RollNote};

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error("invalid phrase annotation {0:?}")]
    BadAnnotation(String),
    #[error("annotation covers {annotated} bars but the song has {song} bars")]
    LengthMismatch { annotated: u32, song: usize },
}

/// Splits an annotation such as `A8A8B8B8` (whitespace allowed) into labels.
pub fn parse_annotation(annotation: &str) -> Result<Vec<PhraseLabel>, SegmentError> {
    let compact: String = annotation.chars().filter(|c| !c.is_whitespace()).collect();
    let bad = || SegmentError::BadAnnotation(annotation.to_string());
    let mut labels = Vec::new();
    let mut rest = compact.as_str();
    while !rest.is_empty() {
        if !rest.as_bytes()[0].is_ascii_uppercase() {
            return Err(bad());
        }
        let digits_end = rest[1..]
            .find(|c: char| !c.is_ascii_digit())
            .map_or(rest.len(), |i| i + 1);
        let label: PhraseLabel = rest[..digits_end].parse().map_err(|_: DataError| bad())?;
        labels.push(label);
        rest = &rest[digits_end..];
    }
    if labels.is_empty() {
        return Err(bad());
    }
    Ok(labels)
}

/// Cuts a song into labelled phrases. Notes belong to the phrase containing
/// their onset and are clipped at its end.
pub fn segment_phrases(song: &QuantizedSong, annotation: &str) -> Result<Vec<Phrase>, SegmentError> {
    let labels = parse_annotation(annotation)?;
    let annotated: u32 = labels.iter().map(|l| l.length_bars).sum();
    if annotated as usize != song.bars() {
        return Err(SegmentError::LengthMismatch { annotated, song: song.bars() });
    }

    let spb = song.meter.steps_per_bar();
    let bpb = song.meter.beats_per_bar();
    let mut phrases = Vec::with_capacity(labels.len());
    let mut bar = 0usize;
    for label in labels {
        let len = label.length_bars as usize;
        let (start, end) = ((bar * spb) as u32, ((bar + len) * spb) as u32);
        let clip = |n: &NoteEvent| -> Option<NoteEvent> {
            (n.onset >= start && n.onset < end).then(|| NoteEvent {
                onset: n.onset - start,
                duration: n.end().min(end) - n.onset,
                ..*n
            })
        };
        let melody = song.melody.iter().filter_map(clip).collect();
        let acc_notes = song.accompaniment.iter().filter_map(clip).map(|n| RollNote {
            onset: n.onset as usize,
            pitch: n.pitch,
            duration: n.duration as usize,
        });
        let accompaniment = PianoRoll::from_notes(len * spb, acc_notes);
        let chords = (bar * bpb..(bar + len) * bpb)
            .map(|b| song.chords.get(b).copied().unwrap_or(Chord::NONE))
            .collect();
        phrases.push(Phrase {
            label,
            meter: song.meter,
            melody,
            chords,
            accompaniment: Some(accompaniment),
            source_id: song.source_id.clone(),
            transposition: 0,
        });
        bar += len;
    }
    Ok(phrases)
}
