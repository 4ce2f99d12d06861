//! Seeded generator of small annotated corpora for tests and demos.
//!
//! Every song has its own key, accompaniment style and register, and a
//! texture state (notes per beat, voices) that takes a random walk every two
//! bars inside each phrase. The state carries over unchanged across phrase
//! boundaries, so consecutive phrases share texture at their seam. Repeated phrase letters repeat melody and
//! chords.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::symbolic::{
    parse_annotation, song_from_bytes, Chord, Meter, MidiTrack, PhraseLabel, PitchClassSet, SongDocument,
    SourceSong, TickNote, Track, STEPS_PER_BEAT,
};

const TICKS_PER_BEAT: u16 = 480;
const TICKS_PER_STEP: u64 = TICKS_PER_BEAT as u64 / STEPS_PER_BEAT as u64;
/// Beats per texture-walk segment.
const SEGMENT_BEATS: usize = 8;
/// Steps between accompaniment onsets for each density level.
const ONSET_GAPS: [usize; 4] = [8, 4, 2, 1];
const MAX_VOICES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub songs: usize,
    pub seed: u64,
    /// Phrase annotations to draw song structures from.
    pub structures: Vec<String>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            songs: 50,
            seed: 7,
            structures: ["A8A8B8B8", "A4B4A4B4", "A8B8A8B8", "A4A4B8B8"].map(String::from).to_vec(),
        }
    }
}

/// One generated song: a MIDI document plus its sidecar text.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSong {
    pub id: String,
    pub document: SongDocument,
    pub sidecar: String,
}

impl SyntheticSong {
    pub fn midi_bytes(&self) -> Vec<u8> {
        self.document.to_bytes()
    }

    /// The song as the index reader sees it after a round trip through MIDI.
    pub fn to_source(&self) -> SourceSong {
        song_from_bytes(&self.id, &self.midi_bytes(), &self.sidecar).expect("synthetic songs are well formed")
    }

    /// Writes `<id>.mid` and `<id>.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> io::Result<PathBuf> {
        let path = dir.join(format!("{}.mid", self.id));
        fs::write(&path, self.midi_bytes())?;
        fs::write(dir.join(format!("{}.txt", self.id)), &self.sidecar)?;
        Ok(path)
    }
}

pub fn generate(config: &SynthConfig) -> Vec<SyntheticSong> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..config.songs)
        .map(|i| {
            let structure = config.structures.choose(&mut rng).map_or("A8A8B8B8", String::as_str);
            generate_song(&format!("song{i:03}"), structure, &mut rng)
        })
        .collect()
}

pub fn write_corpus(dir: &Path, config: &SynthConfig) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    generate(config).iter().map(|s| s.write(dir)).collect()
}

pub fn source_songs(config: &SynthConfig) -> Vec<SourceSong> {
    generate(config).iter().map(SyntheticSong::to_source).collect()
}

// (degree offset from the key, chord shape above its root)
const DIATONIC: [(u8, &[u8]); 8] = [
    (0, &[0, 4, 7]),
    (2, &[0, 3, 7]),
    (4, &[0, 3, 7]),
    (5, &[0, 4, 7]),
    (7, &[0, 4, 7]),
    (9, &[0, 3, 7]),
    (7, &[0, 4, 7, 10]),
    (2, &[0, 3, 7, 10]),
];
const MAJOR_SCALE: [u8; 7] = [0, 2, 4, 5, 7, 9, 11];

fn chord_at(key: u8, (degree, shape): (u8, &[u8])) -> Chord {
    let root = (key + degree) % 12;
    Chord::new(root, PitchClassSet::from_classes(shape.iter().map(|i| (root + i) % 12))).expect("root is in its chord")
}

/// Per-beat chords for a phrase: tonic first, dominant or tonic last, one
/// chord per bar with an occasional mid-bar change.
fn phrase_chords(key: u8, bars: usize, beats_per_bar: usize, rng: &mut ChaCha8Rng) -> Vec<Chord> {
    let mut out = Vec::with_capacity(bars * beats_per_bar);
    for bar in 0..bars {
        let pick = |rng: &mut ChaCha8Rng| {
            if bar == 0 {
                DIATONIC[0]
            } else if bar + 1 == bars {
                *[DIATONIC[0], DIATONIC[4], DIATONIC[6]].choose(rng).unwrap()
            } else {
                *DIATONIC.choose(rng).unwrap()
            }
        };
        let first = chord_at(key, pick(rng));
        let second = if beats_per_bar == 4 && rng.gen_bool(0.25) { chord_at(key, pick(rng)) } else { first };
        for beat in 0..beats_per_bar {
            out.push(if beat < beats_per_bar / 2 { first } else { second });
        }
    }
    out
}

/// Monophonic melody as `(onset step, duration, pitch)` relative to the phrase.
fn phrase_melody(key: u8, steps: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize, u8)> {
    let mut notes = Vec::new();
    let mut degree: i32 = rng.gen_range(7..14);
    let mut t = 0;
    while t < steps {
        let dur = (*[2usize, 2, 4, 4, 4, 6, 8].choose(rng).unwrap()).min(steps - t);
        if rng.gen_bool(0.85) {
            degree = (degree + rng.gen_range(-2..=2)).clamp(0, 20);
            let pitch = 60 + key as i32 + 12 * (degree / 7) + MAJOR_SCALE[(degree % 7) as usize] as i32;
            notes.push((t, dur, pitch as u8));
        }
        t += dur;
    }
    notes
}

#[derive(Debug, Clone, Copy)]
enum Style {
    Block,
    Arpeggio,
    BassChord,
}

/// Chord tones stacked upward from the first root at or above `floor`.
fn voicing(chord: &Chord, floor: u8, voices: usize) -> Vec<u8> {
    let tones = chord.tones_from_root();
    let mut pitch = floor + (chord.root + 12 - floor % 12) % 12;
    let mut out = vec![pitch];
    let mut i = 0;
    while out.len() < voices {
        i += 1;
        let class = tones[i % tones.len()];
        pitch += (class + 12 - pitch % 12) % 12;
        if class == pitch % 12 && out.last() == Some(&pitch) {
            pitch += 12;
        }
        out.push(pitch);
    }
    out
}

/// Accompaniment notes `(onset step, duration, pitch)` for one beat.
fn beat_texture(style: Style, chord: &Chord, floor: u8, density: usize, voices: usize, beat: usize) -> Vec<(usize, usize, u8)> {
    if chord.is_none() {
        return Vec::new();
    }
    let gap = ONSET_GAPS[density];
    let start = beat * STEPS_PER_BEAT;
    // Gaps wider than a beat strike on alternate beats only.
    if gap > STEPS_PER_BEAT && !beat.is_multiple_of(gap / STEPS_PER_BEAT) {
        return Vec::new();
    }
    let onsets: Vec<usize> = (0..STEPS_PER_BEAT.max(gap)).step_by(gap).map(|o| start + o).collect();
    let dur = gap;
    let v = voicing(chord, floor, voices);
    let mut out = Vec::new();
    match style {
        Style::Block => {
            for &o in &onsets {
                out.extend(v.iter().map(|&p| (o, dur, p)));
            }
        }
        Style::Arpeggio => {
            let held = STEPS_PER_BEAT.max(gap);
            out.push((start, held, v[0].saturating_sub(12)));
            for (j, &o) in onsets.iter().enumerate() {
                out.push((o, dur, v[j % v.len()]));
            }
        }
        Style::BassChord => {
            out.push((start, STEPS_PER_BEAT.max(gap), v[0].saturating_sub(12)));
            for &o in &onsets {
                out.extend(v.iter().skip(1).map(|&p| (o, dur, p)));
            }
        }
    }
    out
}

/// One reflecting step of +-1 within `min..=max`.
fn step_walk(state: &mut usize, min: usize, max: usize, rng: &mut ChaCha8Rng) {
    let up = if *state == min {
        true
    } else if *state == max {
        false
    } else {
        rng.gen_bool(0.5)
    };
    *state = if up { *state + 1 } else { *state - 1 };
}

fn tick_note(onset: usize, duration: usize, pitch: u8, velocity: u8, channel: u8) -> TickNote {
    TickNote {
        start: onset as u64 * TICKS_PER_STEP,
        duration: duration as u64 * TICKS_PER_STEP,
        pitch,
        velocity,
        channel,
    }
}

pub fn generate_song(id: &str, structure: &str, rng: &mut ChaCha8Rng) -> SyntheticSong {
    let labels: Vec<PhraseLabel> = parse_annotation(structure).expect("valid structure annotation");
    let meter = Meter::FourFour;
    let key: u8 = rng.gen_range(0..12);
    let style = *[Style::Block, Style::Arpeggio, Style::BassChord].choose(rng).unwrap();
    let floor: u8 = rng.gen_range(43..=57);
    let mut density: usize = rng.gen_range(0..ONSET_GAPS.len());
    let mut voices: usize = rng.gen_range(1..=MAX_VOICES);
    let tempo: u32 = rng.gen_range(400..=700) * 1000;

    let mut material: HashMap<(char, u32), (Vec<Chord>, Vec<(usize, usize, u8)>)> = HashMap::new();
    let mut chords: Vec<Chord> = Vec::new();
    let mut melody = Vec::new();
    let mut accompaniment = Vec::new();
    let mut offset = 0usize;
    let mut seams = Vec::new();
    for label in &labels {
        let bars = label.length_bars as usize;
        let steps = bars * meter.steps_per_bar();
        let (pc, pm) = material
            .entry((label.letter, label.length_bars))
            .or_insert_with(|| (phrase_chords(key, bars, meter.beats_per_bar(), rng), phrase_melody(key, steps, rng)))
            .clone();
        melody.extend(pm.iter().map(|&(o, d, p)| tick_note(offset + o, d, p, 100, 0)));
        chords.extend(pc);
        offset += steps;
        seams.push(chords.len());
    }
    let total_beats = chords.len();
    for (beat, chord) in chords.iter().enumerate() {
        // Texture drifts inside phrases and carries over unchanged at seams.
        if beat % SEGMENT_BEATS == 0 && beat > 0 && !seams.contains(&beat) {
            step_walk(&mut density, 0, ONSET_GAPS.len() - 1, rng);
            step_walk(&mut voices, 1, MAX_VOICES, rng);
        }
        for (o, d, p) in beat_texture(style, chord, floor, density, voices, beat) {
            let d = d.min(total_beats * STEPS_PER_BEAT - o);
            accompaniment.push(tick_note(o, d, p, 80, 1));
        }
    }

    let mut sidecar = format!("{structure}\n");
    let mut prev: Option<Chord> = None;
    for (beat, chord) in chords.iter().enumerate() {
        if prev != Some(*chord) {
            let (bar, b) = (beat / meter.beats_per_bar() + 1, beat % meter.beats_per_bar() + 1);
            sidecar.push_str(&format!("{bar}.{b} {} {}\n", chord.root, chord.chroma));
            prev = Some(*chord);
        }
    }

    melody.sort();
    accompaniment.sort();
    let document = SongDocument {
        ticks_per_beat: TICKS_PER_BEAT,
        tempo_us_per_beat: tempo,
        meter,
        tracks: vec![
            MidiTrack { name: "melody".into(), role: Track::Melody, notes: melody },
            MidiTrack { name: "piano".into(), role: Track::Accompaniment, notes: accompaniment },
        ],
        end_tick: offset as u64 * TICKS_PER_STEP,
    };
    SyntheticSong { id: id.to_string(), document, sidecar }
}
