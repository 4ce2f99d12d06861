//! Inter-phrase transition scoring: a cosine between two learned linear
//! projections of texture sketches, trained contrastively, plus a 0/1 form
//! bonus for repeated query labels matched by repeated reference melodies.

mod train;

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::features::{cosine_flat, FeatureError, MelodyFeature, TextureSketch, TEXTURE_DIM};
use crate::symbolic::{check_header, write_atomic, IndexError, PhraseLabel, ReferenceEntry};

pub use train::{
    evaluate_transitions, positive_pairs, train_transition, EpochStats, TrainConfig, TrainError,
    TrainingReport, ValidationReport,
};

pub const WEIGHTS_FORMAT: &str = "transition-weights";
pub const WEIGHTS_VERSION: u32 = 1;
pub const DEFAULT_D_OUT: usize = 32;
/// Candidates per contrastive sample: the true successor plus k - 1 negatives.
pub const DEFAULT_K: usize = 5;
/// Mean step-wise melody similarity above which two references count as repeats.
pub const FORM_SIMILARITY_THRESHOLD: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub final_loss: f64,
    pub final_validation_loss: Option<f64>,
    pub seed: u64,
    pub k: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
}

/// The two `d_out x 42` projection matrices, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionWeights {
    pub format: String,
    pub version: u32,
    pub d_out: usize,
    pub d_in: usize,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    pub training_meta: TrainingMeta,
}

impl TransitionWeights {
    fn with_matrices(d_out: usize, w1: Vec<f64>, w2: Vec<f64>) -> Self {
        Self {
            format: WEIGHTS_FORMAT.into(),
            version: WEIGHTS_VERSION,
            d_out,
            d_in: TEXTURE_DIM,
            w1,
            w2,
            training_meta: TrainingMeta::default(),
        }
    }

    /// Both matrices set to the identity, truncated or zero-padded to `d_out` rows.
    pub fn identity(d_out: usize) -> Self {
        let mut w = vec![0.0; d_out * TEXTURE_DIM];
        for i in 0..d_out.min(TEXTURE_DIM) {
            w[i * TEXTURE_DIM + i] = 1.0;
        }
        Self::with_matrices(d_out, w.clone(), w)
    }

    /// Both matrices set to one shared Gaussian draw with variance `1 / 42`,
    /// so the untrained score is a random-projection texture cosine.
    pub fn random<R: Rng>(d_out: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, (1.0 / TEXTURE_DIM as f64).sqrt()).expect("valid normal");
        let w: Vec<f64> = (0..d_out * TEXTURE_DIM).map(|_| normal.sample(rng)).collect();
        Self::with_matrices(d_out, w.clone(), w)
    }

    pub fn from_matrices(d_out: usize, w1: Vec<f64>, w2: Vec<f64>) -> Option<Self> {
        (w1.len() == d_out * TEXTURE_DIM && w2.len() == d_out * TEXTURE_DIM).then(|| Self::with_matrices(d_out, w1, w2))
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().chain(&self.w2).all(|v| v.is_finite())
    }

    pub fn project1(&self, x: &TextureSketch) -> Vec<f64> {
        matvec(&self.w1, self.d_out, x.values())
    }

    pub fn project2(&self, x: &TextureSketch) -> Vec<f64> {
        matvec(&self.w2, self.d_out, x.values())
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(self).expect("weights serialize")
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        write_atomic(path, &self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let decode = |message: String| IndexError::Decode { path: path.into(), message };
        let bytes = std::fs::read(path).map_err(|source| IndexError::Io { path: path.into(), source })?;
        let doc: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| decode(e.to_string()))?;
        check_header(&doc, path, WEIGHTS_FORMAT, WEIGHTS_VERSION)?;
        let w: TransitionWeights = serde_json::from_value(doc).map_err(|e| decode(e.to_string()))?;
        if w.d_in != TEXTURE_DIM || w.w1.len() != w.d_out * TEXTURE_DIM || w.w2.len() != w.d_out * TEXTURE_DIM {
            return Err(decode(format!("matrix shapes do not match {}x{}", w.d_out, TEXTURE_DIM)));
        }
        if !w.is_finite() {
            return Err(decode("non-finite weight".into()));
        }
        Ok(w)
    }
}

fn matvec(m: &[f64], rows: usize, x: &[f64; TEXTURE_DIM]) -> Vec<f64> {
    (0..rows)
        .map(|r| m[r * TEXTURE_DIM..(r + 1) * TEXTURE_DIM].iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// cos(W1 a, W2 b).
pub fn bilinear_sim(w: &TransitionWeights, a: &TextureSketch, b: &TextureSketch) -> Result<f64, FeatureError> {
    cosine_flat(&w.project1(a), &w.project2(b))
}

/// An anchor, its true successor, and k - 1 sampled negatives.
#[derive(Debug, Clone)]
pub struct ContrastiveBatch<'a> {
    pub anchor: &'a TextureSketch,
    pub positive: &'a TextureSketch,
    pub negatives: Vec<&'a TextureSketch>,
}

impl<'a> ContrastiveBatch<'a> {
    pub fn k(&self) -> usize {
        1 + self.negatives.len()
    }

    /// Positive first, then negatives.
    pub fn candidates(&self) -> impl Iterator<Item = &'a TextureSketch> + '_ {
        std::iter::once(self.positive).chain(self.negatives.iter().copied())
    }
}

/// `1 - softmax(sims)[0]`, where `sims[0]` is the positive's score.
pub fn loss_from_similarities(sims: &[f64]) -> f64 {
    let max = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = sims.iter().map(|s| (s - max).exp()).sum();
    1.0 - (sims[0] - max).exp() / denom
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Similarity of the anchor to each candidate, positive first. A zero
/// projection scores 0.
pub fn candidate_similarities(w: &TransitionWeights, batch: &ContrastiveBatch<'_>) -> Vec<f64> {
    let u = w.project1(batch.anchor);
    batch
        .candidates()
        .map(|c| cosine_flat(&u, &w.project2(c)).unwrap_or(0.0))
        .collect()
}

pub fn contrastive_loss(w: &TransitionWeights, batch: &ContrastiveBatch<'_>) -> f64 {
    loss_from_similarities(&candidate_similarities(w, batch))
}

/// Gradient of the contrastive loss with respect to both matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
}

impl Gradient {
    pub fn zeros(d_out: usize) -> Self {
        Self { w1: vec![0.0; d_out * TEXTURE_DIM], w2: vec![0.0; d_out * TEXTURE_DIM] }
    }

    pub fn add_scaled(&mut self, other: &Gradient, scale: f64) {
        for (a, b) in self.w1.iter_mut().zip(&other.w1) {
            *a += scale * b;
        }
        for (a, b) in self.w2.iter_mut().zip(&other.w2) {
            *a += scale * b;
        }
    }
}

/// Loss and its analytic gradient: chain rule through the softmax and
/// through each cosine.
pub fn contrastive_grad(w: &TransitionWeights, batch: &ContrastiveBatch<'_>) -> (f64, Gradient) {
    let d = w.d_out;
    let anchor = batch.anchor.values();
    let u = w.project1(batch.anchor);
    let nu = norm(&u);
    let cands: Vec<&TextureSketch> = batch.candidates().collect();
    let vs: Vec<Vec<f64>> = cands.iter().map(|c| w.project2(c)).collect();
    let nvs: Vec<f64> = vs.iter().map(|v| norm(v)).collect();
    let sims: Vec<f64> = vs
        .iter()
        .zip(&nvs)
        .map(|(v, &nv)| if nu == 0.0 || nv == 0.0 { 0.0 } else { dot(&u, v) / (nu * nv) })
        .collect();

    let max = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = sims.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let p: Vec<f64> = exps.iter().map(|e| e / z).collect();
    let loss = 1.0 - p[0];

    let mut grad = Gradient::zeros(d);
    let mut du = vec![0.0; d];
    for (j, (v, &nv)) in vs.iter().zip(&nvs).enumerate() {
        if nu == 0.0 || nv == 0.0 {
            continue;
        }
        // dL/ds_j = -p_0 (delta_0j - p_j)
        let g = -p[0] * (if j == 0 { 1.0 } else { 0.0 } - p[j]);
        if g == 0.0 {
            continue;
        }
        let s = sims[j];
        let c = cands[j].values();
        for r in 0..d {
            du[r] += g * (v[r] / (nu * nv) - s * u[r] / (nu * nu));
            let dv = g * (u[r] / (nu * nv) - s * v[r] / (nv * nv));
            let row = &mut grad.w2[r * TEXTURE_DIM..(r + 1) * TEXTURE_DIM];
            for (gw, x) in row.iter_mut().zip(c) {
                *gw += dv * x;
            }
        }
    }
    for r in 0..d {
        let row = &mut grad.w1[r * TEXTURE_DIM..(r + 1) * TEXTURE_DIM];
        for (gw, x) in row.iter_mut().zip(anchor) {
            *gw += du[r] * x;
        }
    }
    (loss, grad)
}

/// Mean step-wise cosine of two melodies' one-hot rows. One-hot rows have
/// cosine 1 when the codes agree and 0 otherwise. `None` for unequal lengths.
pub fn melody_similarity(a: &MelodyFeature, b: &MelodyFeature) -> Option<f64> {
    if a.steps() != b.steps() || a.steps() == 0 {
        return None;
    }
    let same = a.codes().iter().zip(b.codes()).filter(|(x, y)| x == y).count();
    Some(same as f64 / a.steps() as f64)
}

/// 1 iff the query labels share a letter and the two reference melodies are
/// near-identical.
pub fn form_term(q_i: &PhraseLabel, q_next: &PhraseLabel, x_i: &MelodyFeature, x_next: &MelodyFeature) -> u8 {
    if q_i.letter != q_next.letter {
        return 0;
    }
    match melody_similarity(x_i, x_next) {
        Some(s) if s > FORM_SIMILARITY_THRESHOLD => 1,
        _ => 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionScore {
    pub texture: f64,
    pub form: u8,
}

impl TransitionScore {
    pub fn total(&self) -> f64 {
        self.texture + self.form as f64
    }
}

/// Texture similarity from precomputed projections `W1 x_i` and `W2 x_next`.
pub fn projected_similarity(u: &[f64], v: &[f64]) -> f64 {
    match cosine_flat(u, v) {
        Ok(s) => s,
        Err(_) => {
            log::warn!("zero texture projection; transition texture score set to 0");
            0.0
        }
    }
}

pub fn transition_score(
    w: &TransitionWeights,
    x_i: &ReferenceEntry,
    x_next: &ReferenceEntry,
    q_i: &PhraseLabel,
    q_next: &PhraseLabel,
) -> TransitionScore {
    let texture = projected_similarity(&w.project1(&x_i.features.texture), &w.project2(&x_next.features.texture));
    let form = form_term(q_i, q_next, &x_i.features.melody, &x_next.features.melody);
    TransitionScore { texture, form }
}
