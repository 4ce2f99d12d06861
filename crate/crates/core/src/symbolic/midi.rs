use std::collections::{BTreeMap, VecDeque};

use midly::num::{u15, u24, u28, u4, u7};
use midly::{Format, Header, MetaMessage, MidiMessage, Smf, Timing, TrackEvent, TrackEventKind};
use thiserror::Error;

use super::{LeadSheetQuery, Meter, Track, STEPS_PER_BEAT};
use crate::selection::ArrangementResult;

/// Resolution used for every file this crate writes.
pub const WRITE_TICKS_PER_BEAT: u16 = 480;
const DEFAULT_TEMPO: u32 = 500_000;

#[derive(Debug, Error)]
pub enum MidiError {
    #[error("malformed MIDI file: {0}")]
    MalformedFile(String),
    #[error("unsupported meter {numerator}/{denominator} (only 2/4 and 4/4)")]
    UnsupportedMeter { numerator: u8, denominator: u32 },
    #[error("SMPTE timecode timing is not supported")]
    UnsupportedTiming,
}

/// A note at tick resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TickNote {
    pub start: u64,
    pub duration: u64,
    pub pitch: u8,
    pub velocity: u8,
    pub channel: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MidiTrack {
    pub name: String,
    pub role: Track,
    pub notes: Vec<TickNote>,
}

/// Parsed contents of a standard MIDI file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SongDocument {
    pub ticks_per_beat: u16,
    pub tempo_us_per_beat: u32,
    pub meter: Meter,
    /// Only tracks that contain notes.
    pub tracks: Vec<MidiTrack>,
    /// Latest end-of-track or note-off tick.
    pub end_tick: u64,
}

/// Infers a track role from its name. Unnamed tracks are melody.
pub fn role_for_name(name: &str) -> Track {
    let lower = name.to_ascii_lowercase();
    if lower.trim().is_empty() || lower.contains("mel") || lower.contains("lead") || lower.contains("vocal") {
        Track::Melody
    } else if lower.contains("chord") {
        Track::Chord
    } else {
        Track::Accompaniment
    }
}

pub fn parse_midi(bytes: &[u8]) -> Result<SongDocument, MidiError> {
    let smf = Smf::parse(bytes).map_err(|e| MidiError::MalformedFile(e.to_string()))?;
    let ticks_per_beat = match smf.header.timing {
        Timing::Metrical(t) => t.as_int(),
        Timing::Timecode(..) => return Err(MidiError::UnsupportedTiming),
    };
    if ticks_per_beat == 0 {
        return Err(MidiError::MalformedFile("zero ticks per beat".into()));
    }

    let mut tempo: Option<(u64, u32)> = None;
    let mut meter: Option<(u64, Meter)> = None;
    let mut end_tick = 0u64;
    let mut tracks = Vec::new();

    for events in &smf.tracks {
        let mut tick = 0u64;
        let mut name = String::new();
        let mut open: BTreeMap<(u8, u8), VecDeque<(u64, u8)>> = BTreeMap::new();
        let mut notes = Vec::new();
        for ev in events {
            tick += ev.delta.as_int() as u64;
            match ev.kind {
                TrackEventKind::Meta(MetaMessage::TrackName(raw)) if name.is_empty() => {
                    name = String::from_utf8_lossy(raw).trim().to_string();
                }
                TrackEventKind::Meta(MetaMessage::Tempo(t)) => {
                    if tempo.is_none_or(|(at, _)| tick < at) {
                        tempo = Some((tick, t.as_int()));
                    }
                }
                TrackEventKind::Meta(MetaMessage::TimeSignature(num, pow, _, _)) => {
                    let denominator = 1u32.checked_shl(pow as u32).unwrap_or(0);
                    let m = u8::try_from(denominator)
                        .ok()
                        .and_then(|d| Meter::from_signature(num, d))
                        .ok_or(MidiError::UnsupportedMeter { numerator: num, denominator })?;
                    if meter.is_none_or(|(at, _)| tick < at) {
                        meter = Some((tick, m));
                    }
                }
                TrackEventKind::Meta(MetaMessage::EndOfTrack) => end_tick = end_tick.max(tick),
                TrackEventKind::Midi { channel, message } => {
                    let ch = channel.as_int();
                    match message {
                        MidiMessage::NoteOn { key, vel } if vel.as_int() > 0 => {
                            open.entry((ch, key.as_int())).or_default().push_back((tick, vel.as_int()));
                        }
                        MidiMessage::NoteOn { key, .. } | MidiMessage::NoteOff { key, .. } => {
                            if let Some((start, velocity)) =
                                open.get_mut(&(ch, key.as_int())).and_then(VecDeque::pop_front)
                            {
                                notes.push(TickNote { start, duration: tick - start, pitch: key.as_int(), velocity, channel: ch });
                                end_tick = end_tick.max(tick);
                            }
                        }
                        _ => {}
                    }
                }
                _ => {}
            }
        }
        // Notes never switched off end with the track.
        for ((ch, pitch), starts) in open {
            for (start, velocity) in starts {
                notes.push(TickNote { start, duration: tick - start, pitch, velocity, channel: ch });
            }
        }
        end_tick = end_tick.max(tick);
        if !notes.is_empty() {
            notes.sort();
            let role = role_for_name(&name);
            tracks.push(MidiTrack { name, role, notes });
        }
    }

    Ok(SongDocument {
        ticks_per_beat,
        tempo_us_per_beat: tempo.map_or(DEFAULT_TEMPO, |(_, t)| t),
        meter: meter.map_or(Meter::FourFour, |(_, m)| m),
        tracks,
        end_tick,
    })
}

impl SongDocument {
    /// Encodes as a format-1 file: a conductor track with tempo and meter,
    /// then one track per `tracks` entry.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut smf_tracks: Vec<Vec<TrackEvent<'_>>> = Vec::with_capacity(self.tracks.len() + 1);

        let conductor = vec![
            (0u64, TrackEventKind::Meta(MetaMessage::TrackName(b"conductor"))),
            (0, TrackEventKind::Meta(MetaMessage::Tempo(u24::new(self.tempo_us_per_beat)))),
            (0, TrackEventKind::Meta(MetaMessage::TimeSignature(self.meter.numerator(), 2, 24, 8))),
        ];
        smf_tracks.push(delta_encode(conductor, self.end_tick));

        for track in &self.tracks {
            // (tick, order, event): offs sort before ons at the same tick
            // unless the note itself has zero length.
            let mut timed: Vec<(u64, u8, TrackEventKind<'_>)> = Vec::with_capacity(track.notes.len() * 2 + 1);
            timed.push((0, 0, TrackEventKind::Meta(MetaMessage::TrackName(track.name.as_bytes()))));
            for n in &track.notes {
                let channel = u4::new(n.channel & 0x0f);
                let key = u7::new(n.pitch & 0x7f);
                timed.push((
                    n.start,
                    2,
                    TrackEventKind::Midi { channel, message: MidiMessage::NoteOn { key, vel: u7::new(n.velocity.clamp(1, 127)) } },
                ));
                timed.push((
                    n.start + n.duration,
                    if n.duration == 0 { 3 } else { 1 },
                    TrackEventKind::Midi { channel, message: MidiMessage::NoteOff { key, vel: u7::new(0) } },
                ));
            }
            timed.sort_by_key(|(tick, order, _)| (*tick, *order));
            let events = timed.into_iter().map(|(t, _, k)| (t, k)).collect();
            smf_tracks.push(delta_encode(events, self.end_tick));
        }

        let smf = Smf {
            header: Header::new(Format::Parallel, Timing::Metrical(u15::new(self.ticks_per_beat))),
            tracks: smf_tracks,
        };
        let mut out = Vec::new();
        smf.write_std(&mut out).expect("writing MIDI to a Vec cannot fail");
        out
    }

    pub fn notes_with_role(&self, role: Track) -> impl Iterator<Item = &TickNote> {
        self.tracks.iter().filter(move |t| t.role == role).flat_map(|t| t.notes.iter())
    }

    pub fn duration_seconds(&self) -> f64 {
        self.end_tick as f64 / self.ticks_per_beat as f64 * self.tempo_us_per_beat as f64 * 1e-6
    }
}

fn delta_encode(events: Vec<(u64, TrackEventKind<'_>)>, end_tick: u64) -> Vec<TrackEvent<'_>> {
    let mut out = Vec::with_capacity(events.len() + 1);
    let mut last = 0u64;
    for (tick, kind) in events {
        out.push(TrackEvent { delta: u28::new((tick - last) as u32), kind });
        last = tick;
    }
    let end = end_tick.max(last);
    out.push(TrackEvent { delta: u28::new((end - last) as u32), kind: TrackEventKind::Meta(MetaMessage::EndOfTrack) });
    out
}

/// Renders an arrangement: the query melody plus the re-harmonized
/// accompaniment, laid end to end on the shared 16th-note grid.
pub fn write_midi(arrangement: &ArrangementResult, query: &LeadSheetQuery) -> Vec<u8> {
    let ticks_per_step = (WRITE_TICKS_PER_BEAT as usize / STEPS_PER_BEAT) as u64;
    let mut melody = Vec::new();
    let mut accompaniment = Vec::new();
    let mut offset = 0u64;
    for (i, phrase) in query.phrases.iter().enumerate() {
        for n in &phrase.melody {
            melody.push(TickNote {
                start: (offset + n.onset as u64) * ticks_per_step,
                duration: n.duration as u64 * ticks_per_step,
                pitch: n.pitch,
                velocity: 100,
                channel: 0,
            });
        }
        if let Some(roll) = arrangement.accompaniment.get(i) {
            for n in roll.notes() {
                accompaniment.push(TickNote {
                    start: (offset + n.onset as u64) * ticks_per_step,
                    duration: n.duration as u64 * ticks_per_step,
                    pitch: n.pitch,
                    velocity: 80,
                    channel: 1,
                });
            }
        }
        offset += phrase.steps() as u64;
    }
    melody.sort();
    accompaniment.sort();

    let mut tracks = vec![MidiTrack { name: "melody".into(), role: Track::Melody, notes: melody }];
    if !accompaniment.is_empty() {
        tracks.push(MidiTrack { name: "accompaniment".into(), role: Track::Accompaniment, notes: accompaniment });
    }
    SongDocument {
        ticks_per_beat: WRITE_TICKS_PER_BEAT,
        tempo_us_per_beat: query.tempo_us_per_beat,
        meter: query.meter,
        tracks,
        end_tick: offset * ticks_per_step,
    }
    .to_bytes()
}
