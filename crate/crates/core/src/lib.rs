//! Corpus-indexed accompaniment arrangement.
//!
//! Reference phrases from an annotated MIDI corpus are chosen for each
//! phrase of a lead sheet by dynamic programming over a layered graph, then
//! re-harmonized to the lead sheet's chords.

pub mod cli;
pub mod config;
pub mod features;
pub mod reharmonize;
pub mod selection;
pub mod symbolic;
pub mod synthetic;
pub mod transition;
