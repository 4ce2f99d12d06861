//! Phrase selection: a layered graph with one layer per query phrase, node
//! scores from the fitness model, edge scores from the transition model,
//! and the best path by dynamic programming.

mod trace;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{cosine_flat, melody_one_hot, rhythm_feature, tiv, ChromaSeq, FeatureError, RhythmFeature, TivSeq};
use crate::reharmonize::{transfer_with_report, TransferError};
use crate::symbolic::{FeatureCache, LeadSheetQuery, Phrase, PhraseLabel, PianoRoll, ReferenceIndex};
use crate::transition::{form_term, projected_similarity, TransitionScore, TransitionWeights};

pub use trace::{ArrangementTrace, CandidateTrace, LayerTrace, PathStep, TRACE_FORMAT, TRACE_VERSION};

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_BETA: f64 = 0.5;
pub const DEFAULT_DELTA: f64 = 0.3;
pub const DEFAULT_GAMMA: f64 = 0.7;

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("query has no phrases")]
    EmptyQuery,
    #[error("no reference phrase matches query phrase {phrase} ({label}, {bars} bars, {steps} steps)")]
    NoCandidateForLength { phrase: usize, label: PhraseLabel, bars: u32, steps: usize },
    #[error("first-layer filter {criterion}={level} removed every candidate; relax it to 'any'")]
    EmptyAfterFilter { criterion: &'static str, level: Level },
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("phrase {phrase}: {source}")]
    Transfer { phrase: usize, source: TransferError },
}

/// Weights of the rhythm and chord terms of the fitness score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for FitnessWeights {
    fn default() -> Self {
        Self { alpha: DEFAULT_ALPHA, beta: DEFAULT_BETA }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessScore {
    pub rhythm: f64,
    pub chord: f64,
    pub total: f64,
}

/// The parts of a phrase's features the fitness model compares.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryFeatures {
    pub rhythm: RhythmFeature,
    pub tiv: TivSeq,
}

impl QueryFeatures {
    pub fn from_phrase(phrase: &Phrase, tiv_weights: &[f64; 6]) -> Result<Self, FeatureError> {
        let melody = melody_one_hot(&phrase.melody, phrase.steps())?;
        Ok(Self { rhythm: rhythm_feature(&melody), tiv: tiv(&ChromaSeq(phrase.chroma()), tiv_weights) })
    }

    pub fn from_cache(cache: &FeatureCache) -> Self {
        Self { rhythm: cache.rhythm.clone(), tiv: cache.tiv.clone() }
    }
}

fn cosine_or_zero(a: &[f64], b: &[f64]) -> Result<f64, FeatureError> {
    match cosine_flat(a, b) {
        Err(FeatureError::ZeroVector) => Ok(0.0),
        other => other,
    }
}

/// `alpha * cos(rhythm) + beta * cos(TIV)`. An all-zero side (no chords at
/// all) contributes 0.
pub fn fitness(x: &QueryFeatures, q: &QueryFeatures, w: FitnessWeights) -> Result<FitnessScore, FeatureError> {
    let rhythm = cosine_or_zero(&x.rhythm.to_matrix(), &q.rhythm.to_matrix())?;
    let chord = cosine_or_zero(&x.tiv.flatten(), &q.tiv.flatten())?;
    Ok(FitnessScore { rhythm, chord, total: w.alpha * rhythm + w.beta * chord })
}

/// Fitness of a reference phrase for a query phrase, computing both sides'
/// features.
pub fn phrase_fitness(x: &Phrase, q: &Phrase, w: FitnessWeights, tiv_weights: &[f64; 6]) -> Result<FitnessScore, FeatureError> {
    fitness(&QueryFeatures::from_phrase(x, tiv_weights)?, &QueryFeatures::from_phrase(q, tiv_weights)?, w)
}

/// One of the tercile intervals of a control statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Low,
    Medium,
    High,
    #[default]
    Any,
}

impl Level {
    /// Low is `v <= q1`, medium `q1 < v < q2`, high `v >= q2`.
    pub fn admits(self, v: f64, bounds: [f64; 2]) -> bool {
        match self {
            Level::Low => v <= bounds[0],
            Level::Medium => v > bounds[0] && v < bounds[1],
            Level::High => v >= bounds[1],
            Level::Any => true,
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Low => "low",
            Level::Medium => "medium",
            Level::High => "high",
            Level::Any => "any",
        })
    }
}

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "low" => Ok(Level::Low),
            "med" | "medium" => Ok(Level::Medium),
            "high" => Ok(Level::High),
            "any" => Ok(Level::Any),
            other => Err(format!("unknown level {other:?} (expected low, med, high or any)")),
        }
    }
}

/// Rhythm-density and voice-number targets for the first phrase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ControlSpec {
    pub rd: Level,
    pub vn: Level,
}

/// Keeps the candidates whose cached statistics fall in the requested
/// intervals of the index-wide terciles.
pub fn prefilter_first_layer(candidates: &[usize], control: ControlSpec, index: &ReferenceIndex) -> Result<Vec<usize>, SelectionError> {
    let q = index.quantiles;
    let rd: Vec<usize> = candidates
        .iter()
        .copied()
        .filter(|&id| control.rd.admits(index.entry(id).features.rhythm_density, q.rhythm_density))
        .collect();
    if rd.is_empty() && !candidates.is_empty() {
        return Err(SelectionError::EmptyAfterFilter { criterion: "rd", level: control.rd });
    }
    let vn: Vec<usize> = rd
        .iter()
        .copied()
        .filter(|&id| control.vn.admits(index.entry(id).features.voice_number, q.voice_number))
        .collect();
    if vn.is_empty() && !rd.is_empty() {
        return Err(SelectionError::EmptyAfterFilter { criterion: "vn", level: control.vn });
    }
    Ok(vn)
}

/// Candidate layers over a reference index, with fitness per node.
#[derive(Debug, Clone)]
pub struct LayeredGraph<'a> {
    pub index: &'a ReferenceIndex,
    pub labels: Vec<PhraseLabel>,
    /// Entry ids per layer, ascending.
    pub layers: Vec<Vec<usize>>,
    pub node_scores: Vec<Vec<FitnessScore>>,
}

impl LayeredGraph<'_> {
    pub fn n(&self) -> usize {
        self.layers.len()
    }

    pub fn transition(&self, w: &TransitionWeights, layer: usize, a: usize, b: usize) -> TransitionScore {
        let (x, y) = (self.index.entry(self.layers[layer][a]), self.index.entry(self.layers[layer + 1][b]));
        crate::transition::transition_score(w, x, y, &self.labels[layer], &self.labels[layer + 1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BuildOptions {
    pub control: ControlSpec,
    pub fitness: FitnessWeights,
    /// Keep only the best `k` candidates by fitness in every layer.
    pub prune: Option<usize>,
}

/// One layer per query phrase holding every reference of the same bar count
/// and step count. Only the first layer is filtered by the controls.
pub fn build_layers<'a>(query: &LeadSheetQuery, index: &'a ReferenceIndex, opts: &BuildOptions) -> Result<LayeredGraph<'a>, SelectionError> {
    if query.phrases.is_empty() {
        return Err(SelectionError::EmptyQuery);
    }
    let mut layers = Vec::with_capacity(query.n());
    let mut node_scores = Vec::with_capacity(query.n());
    for (i, phrase) in query.phrases.iter().enumerate() {
        let bars = phrase.label.length_bars;
        let mut ids: Vec<usize> = index
            .layer(bars)
            .iter()
            .copied()
            .filter(|&id| index.entry(id).phrase.steps() == phrase.steps())
            .collect();
        if ids.is_empty() {
            return Err(SelectionError::NoCandidateForLength { phrase: i, label: phrase.label, bars, steps: phrase.steps() });
        }
        if i == 0 {
            ids = prefilter_first_layer(&ids, opts.control, index)?;
        }
        let q = QueryFeatures::from_phrase(phrase, &index.tiv_weights)?;
        let mut scores = ids
            .par_iter()
            .map(|&id| fitness(&QueryFeatures::from_cache(&index.entry(id).features), &q, opts.fitness))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(k) = opts.prune.filter(|&k| k > 0 && k < ids.len()) {
            let mut order: Vec<usize> = (0..ids.len()).collect();
            order.sort_by(|&a, &b| scores[b].total.total_cmp(&scores[a].total).then(a.cmp(&b)));
            order.truncate(k);
            order.sort_unstable();
            ids = order.iter().map(|&j| ids[j]).collect();
            scores = order.iter().map(|&j| scores[j]).collect();
        }
        layers.push(ids);
        node_scores.push(scores);
    }
    Ok(LayeredGraph { index, labels: query.phrases.iter().map(|p| p.label).collect(), layers, node_scores })
}

/// Best path through layered nodes maximizing
/// `delta * sum(node) + gamma * sum(edge)`, where `edge(i, a, b)` scores
/// node `a` of layer `i` followed by node `b` of layer `i + 1`. Ties go to
/// the lowest node index, both for the final node and at every backtracking
/// step. Returns the path and its score.
pub fn viterbi_path<E>(nodes: &[Vec<f64>], edge: E, delta: f64, gamma: f64) -> (Vec<usize>, f64)
where
    E: Fn(usize, usize, usize) -> f64 + Sync,
{
    assert!(!nodes.is_empty() && nodes.iter().all(|l| !l.is_empty()), "every layer must be non-empty");
    let mut score: Vec<f64> = nodes[0].iter().map(|f| delta * f).collect();
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(nodes.len());
    for i in 1..nodes.len() {
        let prev = &score;
        let (next, from): (Vec<f64>, Vec<usize>) = (0..nodes[i].len())
            .into_par_iter()
            .map(|b| {
                let mut best = (0usize, f64::NEG_INFINITY);
                for (a, s) in prev.iter().enumerate() {
                    let cand = s + gamma * edge(i - 1, a, b);
                    if cand > best.1 {
                        best = (a, cand);
                    }
                }
                (best.1 + delta * nodes[i][b], best.0)
            })
            .unzip();
        score = next;
        back.push(from);
    }
    let mut last = 0;
    for (b, s) in score.iter().enumerate() {
        if *s > score[last] {
            last = b;
        }
    }
    let total = score[last];
    let mut path = vec![last];
    for from in back.iter().rev() {
        let b = *path.last().unwrap();
        path.push(from[b]);
    }
    path.reverse();
    (path, total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhraseScore {
    pub entry: usize,
    pub fitness: FitnessScore,
    /// Transition from the previous selected phrase; `None` for the first.
    pub incoming: Option<TransitionScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrangementResult {
    /// Selected index entry per query phrase.
    pub path: Vec<usize>,
    pub total_score: f64,
    pub per_phrase: Vec<PhraseScore>,
    /// Re-harmonized accompaniment per query phrase; empty until transfer.
    pub accompaniment: Vec<PianoRoll>,
    pub delta: f64,
    pub gamma: f64,
}

impl ArrangementResult {
    /// `delta * sum(fitness) + gamma * sum(transition)` from the stored parts.
    pub fn recomputed_total(&self) -> f64 {
        let f: f64 = self.per_phrase.iter().map(|p| p.fitness.total).sum();
        let t: f64 = self.per_phrase.iter().filter_map(|p| p.incoming.map(|s| s.total())).sum();
        self.delta * f + self.gamma * t
    }

    /// Number of form bits set along the path.
    pub fn form_bits(&self) -> usize {
        self.per_phrase.iter().filter(|p| p.incoming.is_some_and(|s| s.form == 1)).count()
    }
}

fn check_weights(delta: f64, gamma: f64) -> Result<(), SelectionError> {
    if !delta.is_finite() || !gamma.is_finite() {
        return Err(SelectionError::InvalidWeights(format!("delta={delta}, gamma={gamma} must be finite")));
    }
    Ok(())
}

/// Projections of every candidate, computed once per layer.
struct Projections {
    out: Vec<Vec<Vec<f64>>>,
    inc: Vec<Vec<Vec<f64>>>,
}

impl Projections {
    fn new(g: &LayeredGraph<'_>, w: &TransitionWeights) -> Self {
        let project = |f: &(dyn Fn(&crate::features::TextureSketch) -> Vec<f64> + Sync)| {
            g.layers
                .iter()
                .map(|l| l.par_iter().map(|&id| f(&g.index.entry(id).features.texture)).collect())
                .collect()
        };
        Self { out: project(&|x| w.project1(x)), inc: project(&|x| w.project2(x)) }
    }
}

/// Best path over the graph with the given transition weights. The
/// accompaniment is left empty.
pub fn viterbi(g: &LayeredGraph<'_>, w: &TransitionWeights, delta: f64, gamma: f64) -> Result<ArrangementResult, SelectionError> {
    check_weights(delta, gamma)?;
    let proj = Projections::new(g, w);
    let edge = |i: usize, a: usize, b: usize| -> TransitionScore {
        let x = &g.index.entry(g.layers[i][a]).features;
        let y = &g.index.entry(g.layers[i + 1][b]).features;
        TransitionScore {
            texture: projected_similarity(&proj.out[i][a], &proj.inc[i + 1][b]),
            form: form_term(&g.labels[i], &g.labels[i + 1], &x.melody, &y.melody),
        }
    };
    let nodes: Vec<Vec<f64>> = g.node_scores.iter().map(|l| l.iter().map(|s| s.total).collect()).collect();
    let (local, total) = viterbi_path(&nodes, |i, a, b| edge(i, a, b).total(), delta, gamma);

    let per_phrase = local
        .iter()
        .enumerate()
        .map(|(i, &j)| PhraseScore {
            entry: g.layers[i][j],
            fitness: g.node_scores[i][j],
            incoming: (i > 0).then(|| edge(i - 1, local[i - 1], j)),
        })
        .collect();
    Ok(ArrangementResult {
        path: local.iter().enumerate().map(|(i, &j)| g.layers[i][j]).collect(),
        total_score: total,
        per_phrase,
        accompaniment: Vec::new(),
        delta,
        gamma,
    })
}

/// Everything `arrange` needs besides the query, index and weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrangeOptions {
    pub build: BuildOptions,
    pub delta: f64,
    pub gamma: f64,
    /// Candidates per layer recorded in a trace.
    pub trace_top: usize,
}

impl Default for ArrangeOptions {
    fn default() -> Self {
        Self { build: BuildOptions::default(), delta: DEFAULT_DELTA, gamma: DEFAULT_GAMMA, trace_top: 5 }
    }
}

/// Selects references for every query phrase and re-harmonizes each to the
/// query's chords.
pub fn arrange(query: &LeadSheetQuery, index: &ReferenceIndex, w: &TransitionWeights, opts: &ArrangeOptions) -> Result<ArrangementResult, SelectionError> {
    arrange_traced(query, index, w, opts).map(|(r, _)| r)
}

pub fn arrange_traced(
    query: &LeadSheetQuery,
    index: &ReferenceIndex,
    w: &TransitionWeights,
    opts: &ArrangeOptions,
) -> Result<(ArrangementResult, ArrangementTrace), SelectionError> {
    let graph = build_layers(query, index, &opts.build)?;
    let mut result = viterbi(&graph, w, opts.delta, opts.gamma)?;
    result.accompaniment = result
        .path
        .par_iter()
        .zip(&query.phrases)
        .enumerate()
        .map(|(i, (&id, q))| {
            let x = &index.entry(id).phrase;
            let acc = x.accompaniment.clone().unwrap_or_else(|| PianoRoll::new(x.steps()));
            transfer_with_report(&acc, &x.chords, &q.chords)
                .map(|t| t.roll)
                .map_err(|source| SelectionError::Transfer { phrase: i, source })
        })
        .collect::<Result<_, _>>()?;
    let trace = ArrangementTrace::new(query, &graph, &result, opts);
    Ok((result, trace))
}
