//! JSON record of one arrangement run: the strongest candidates per layer,
//! the chosen path and its score decomposition.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArrangeOptions, ArrangementResult, FitnessScore, LayeredGraph};
use crate::symbolic::{write_atomic, IndexError, LeadSheetQuery, PhraseLabel};
use crate::transition::TransitionScore;

pub const TRACE_FORMAT: &str = "arrangement-trace";
pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTrace {
    pub entry: usize,
    pub source_id: String,
    pub phrase_index: usize,
    pub transposition: u8,
    pub fitness: FitnessScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTrace {
    pub label: PhraseLabel,
    pub candidates: usize,
    /// Best candidates by fitness, highest first.
    pub top: Vec<CandidateTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathStep {
    pub candidate: CandidateTrace,
    pub transition: Option<TransitionScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrangementTrace {
    pub format: String,
    pub version: u32,
    pub query: String,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub gamma: f64,
    pub rd: super::Level,
    pub vn: super::Level,
    pub layers: Vec<LayerTrace>,
    pub path: Vec<PathStep>,
    pub total_score: f64,
}

fn candidate(g: &LayeredGraph<'_>, id: usize, fitness: FitnessScore) -> CandidateTrace {
    let e = g.index.entry(id);
    CandidateTrace {
        entry: id,
        source_id: e.phrase.source_id.clone(),
        phrase_index: e.phrase_index,
        transposition: e.transposition(),
        fitness,
    }
}

impl ArrangementTrace {
    pub fn new(query: &LeadSheetQuery, g: &LayeredGraph<'_>, result: &ArrangementResult, opts: &ArrangeOptions) -> Self {
        let layers = g
            .layers
            .iter()
            .zip(&g.node_scores)
            .zip(&g.labels)
            .map(|((ids, scores), label)| {
                let mut order: Vec<usize> = (0..ids.len()).collect();
                order.sort_by(|&a, &b| scores[b].total.total_cmp(&scores[a].total).then(a.cmp(&b)));
                order.truncate(opts.trace_top);
                LayerTrace {
                    label: *label,
                    candidates: ids.len(),
                    top: order.iter().map(|&j| candidate(g, ids[j], scores[j])).collect(),
                }
            })
            .collect();
        let path = result
            .per_phrase
            .iter()
            .map(|p| PathStep { candidate: candidate(g, p.entry, p.fitness), transition: p.incoming })
            .collect();
        Self {
            format: TRACE_FORMAT.into(),
            version: TRACE_VERSION,
            query: query.title.clone(),
            alpha: opts.build.fitness.alpha,
            beta: opts.build.fitness.beta,
            delta: result.delta,
            gamma: result.gamma,
            rd: opts.build.control.rd,
            vn: opts.build.control.vn,
            layers,
            path,
            total_score: result.total_score,
        }
    }

    /// `delta * sum(fitness) + gamma * sum(transition)` over the path.
    pub fn recomputed_total(&self) -> f64 {
        let f: f64 = self.path.iter().map(|s| s.candidate.fitness.total).sum();
        let t: f64 = self.path.iter().filter_map(|s| s.transition.map(|t| t.total())).sum();
        self.delta * f + self.gamma * t
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(self).expect("trace serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        write_atomic(path, &self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let decode = |message: String| IndexError::Decode { path: path.into(), message };
        let bytes = std::fs::read(path).map_err(|source| IndexError::Io { path: path.into(), source })?;
        let doc: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| decode(e.to_string()))?;
        crate::symbolic::check_header(&doc, path, TRACE_FORMAT, TRACE_VERSION)?;
        serde_json::from_value(doc).map_err(|e| decode(e.to_string()))
    }
}
