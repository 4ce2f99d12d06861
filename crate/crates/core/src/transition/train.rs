use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    candidate_similarities, contrastive_grad, contrastive_loss, ContrastiveBatch, Gradient, TrainingMeta,
    TransitionWeights, DEFAULT_D_OUT, DEFAULT_K,
};
use crate::symbolic::ReferenceIndex;

/// Candidate-pool size for the ranking evaluation.
pub const RANK_POOL: usize = 50;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TrainError {
    #[error("need at least 2 songs with 2 or more consecutive phrases; found {songs_with_pairs}")]
    InsufficientData { songs_with_pairs: usize },
    #[error("invalid training configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub k: usize,
    pub d_out: usize,
    pub seed: u64,
    /// Fraction of songs held out for validation.
    pub validation_fraction: f64,
}

impl TrainConfig {
    /// Full-size schedule: 50 epochs of 128 pairs, learning rate decaying
    /// exponentially from 1e-4 to 5e-6.
    pub fn full() -> Self {
        Self {
            epochs: 50,
            batch_size: 128,
            lr_start: 1e-4,
            lr_end: 5e-6,
            k: DEFAULT_K,
            d_out: DEFAULT_D_OUT,
            seed: 0,
            validation_fraction: 0.05,
        }
    }

    /// Small-corpus schedule: 10 epochs of 32 pairs.
    pub fn desk() -> Self {
        Self { epochs: 10, batch_size: 32, lr_start: 1e-2, lr_end: 5e-4, ..Self::full() }
    }

    fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.k < 2 {
            return bad("k must be at least 2");
        }
        if self.batch_size == 0 || self.epochs == 0 || self.d_out == 0 {
            return bad("epochs, batch size and d_out must be positive");
        }
        if !(self.lr_start > 0.0 && self.lr_end > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation fraction must lie in [0, 1)");
        }
        Ok(())
    }

    /// Learning rate for `epoch`, decayed geometrically from start to end.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.lr_start;
        }
        let frac = epoch as f64 / (self.epochs - 1) as f64;
        self.lr_start * (self.lr_end / self.lr_start).powf(frac)
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub pairs: usize,
    pub adjacent_loss: f64,
    pub same_song_loss: f64,
    pub random_loss: f64,
    /// Mean 1-based rank of the true successor among `rank_pool` candidates.
    pub mean_rank: f64,
    pub rank_pool: usize,
    pub phrase_accuracy: f64,
    pub song_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub train_songs: Vec<usize>,
    pub validation_songs: Vec<usize>,
    pub epochs: Vec<EpochStats>,
    pub validation: ValidationReport,
}

/// Consecutive same-song, same-key phrase pairs `(anchor id, successor id)`.
pub fn positive_pairs(index: &ReferenceIndex, songs: &[usize]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (i, a) in index.entries.iter().enumerate() {
        if !songs.contains(&a.song) {
            continue;
        }
        // Entries of one song are contiguous and ordered by phrase, then key.
        for b in &index.entries[i + 1..] {
            if b.song != a.song {
                break;
            }
            if b.phrase_index == a.phrase_index + 1 && b.transposition() == a.transposition() {
                pairs.push((a.id, b.id));
            }
        }
    }
    pairs
}

fn sample_excluding<R: Rng>(rng: &mut R, n: usize, count: usize, exclude: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(count);
    if n <= exclude.len() {
        return out;
    }
    while out.len() < count {
        let c = rng.gen_range(0..n);
        if !exclude.contains(&c) {
            out.push(c);
        }
    }
    out
}

struct Adam {
    m: Gradient,
    v: Gradient,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(d_out: usize) -> Self {
        Self { m: Gradient::zeros(d_out), v: Gradient::zeros(d_out), t: 0 }
    }

    fn step(&mut self, w: &mut TransitionWeights, g: &Gradient, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let update = |param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..param.len() {
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * grad[i];
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
                param[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        };
        update(&mut w.w1, &g.w1, &mut self.m.w1, &mut self.v.w1);
        update(&mut w.w2, &g.w2, &mut self.m.w2, &mut self.v.w2);
    }
}

fn batch_of<'a>(index: &'a ReferenceIndex, anchor: usize, positive: usize, negatives: &[usize]) -> ContrastiveBatch<'a> {
    ContrastiveBatch {
        anchor: &index.entry(anchor).features.texture,
        positive: &index.entry(positive).features.texture,
        negatives: negatives.iter().map(|&n| &index.entry(n).features.texture).collect(),
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Trains W1/W2 on consecutive-phrase positives with uniformly sampled
/// negatives. Deterministic for a given index and config: all randomness
/// comes from one generator seeded with `config.seed`.
pub fn train_transition(
    index: &ReferenceIndex,
    config: &TrainConfig,
) -> Result<(TransitionWeights, TrainingReport), TrainError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let all_songs: Vec<usize> = (0..index.songs.len()).collect();
    let mut songs_with_pairs: Vec<usize> = all_songs
        .iter()
        .copied()
        .filter(|&s| !positive_pairs(index, &[s]).is_empty())
        .collect();
    if songs_with_pairs.len() < 2 {
        return Err(TrainError::InsufficientData { songs_with_pairs: songs_with_pairs.len() });
    }
    songs_with_pairs.shuffle(&mut rng);
    let n_val = ((songs_with_pairs.len() as f64 * config.validation_fraction).ceil() as usize)
        .clamp(1, songs_with_pairs.len() - 1);
    let mut validation_songs = songs_with_pairs[..n_val].to_vec();
    let mut train_songs = songs_with_pairs[n_val..].to_vec();
    validation_songs.sort_unstable();
    train_songs.sort_unstable();

    let mut train_pairs = positive_pairs(index, &train_songs);
    let val_pairs = positive_pairs(index, &validation_songs);
    let n = index.len();
    let negs = config.k - 1;
    let val_negatives: Vec<Vec<usize>> = val_pairs
        .iter()
        .map(|&(a, b)| sample_excluding(&mut rng, n, negs, &[a, b]))
        .collect();

    let mut weights = TransitionWeights::random(config.d_out, &mut rng);
    let mut adam = Adam::new(config.d_out);
    let mut epochs = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lr = config.learning_rate(epoch);
        train_pairs.shuffle(&mut rng);
        let mut batch_losses = Vec::new();
        for chunk in train_pairs.chunks(config.batch_size) {
            let mut total = Gradient::zeros(config.d_out);
            let mut loss = 0.0;
            for &(a, b) in chunk {
                let negatives = sample_excluding(&mut rng, n, negs, &[a, b]);
                let (l, g) = contrastive_grad(&weights, &batch_of(index, a, b, &negatives));
                loss += l;
                total.add_scaled(&g, 1.0 / chunk.len() as f64);
            }
            adam.step(&mut weights, &total, lr);
            batch_losses.push(loss / chunk.len() as f64);
        }
        let validation_loss = mean(
            &val_pairs
                .iter()
                .zip(&val_negatives)
                .map(|(&(a, b), neg)| contrastive_loss(&weights, &batch_of(index, a, b, neg)))
                .collect::<Vec<_>>(),
        );
        let stats = EpochStats { epoch, learning_rate: lr, train_loss: mean(&batch_losses), validation_loss };
        log::info!(
            "epoch {:>3}  lr {:.2e}  train {:.5}  validation {:.5}",
            epoch + 1,
            lr,
            stats.train_loss,
            stats.validation_loss
        );
        epochs.push(stats);
    }

    let validation = evaluate_transitions(&weights, index, &validation_songs, config.k, &mut rng);
    let last = epochs.last().expect("at least one epoch");
    weights.training_meta = TrainingMeta {
        epochs: config.epochs,
        final_loss: last.train_loss,
        final_validation_loss: Some(last.validation_loss),
        seed: config.seed,
        k: config.k,
        batch_size: config.batch_size,
        lr_start: config.lr_start,
        lr_end: config.lr_end,
    };
    Ok((weights, TrainingReport { train_songs, validation_songs, epochs, validation }))
}

/// Contrastive loss for adjacent, same-song and random pairs, plus the
/// rank of each true successor among `RANK_POOL - 1` random phrases.
pub fn evaluate_transitions<R: Rng>(
    weights: &TransitionWeights,
    index: &ReferenceIndex,
    songs: &[usize],
    k: usize,
    rng: &mut R,
) -> ValidationReport {
    let pairs = positive_pairs(index, songs);
    let n = index.len();
    let (mut adjacent, mut same_song, mut random) = (Vec::new(), Vec::new(), Vec::new());
    let (mut ranks, mut phrase_hits, mut song_hits) = (Vec::new(), 0usize, 0usize);

    for &(a, b) in &pairs {
        let anchor = index.entry(a);
        let pair_loss = |other: usize, rng: &mut R| {
            let negatives = sample_excluding(rng, n, k - 1, &[a, other]);
            contrastive_loss(weights, &batch_of(index, a, other, &negatives))
        };
        adjacent.push(pair_loss(b, rng));

        // Every other phrase of the song in the same key, successor excluded.
        let siblings: Vec<usize> = index
            .entries
            .iter()
            .filter(|e| e.song == anchor.song && e.transposition() == anchor.transposition() && e.id != a && e.id != b)
            .map(|e| e.id)
            .collect();
        if !siblings.is_empty() {
            let losses: Vec<f64> = siblings.iter().map(|&s| pair_loss(s, rng)).collect();
            same_song.push(mean(&losses));
        }
        let r = sample_excluding(rng, n, 1, &[a])[0];
        random.push(pair_loss(r, rng));

        let pool = sample_excluding(rng, n, RANK_POOL - 1, &[a, b]);
        let batch = batch_of(index, a, b, &pool);
        let sims = candidate_similarities(weights, &batch);
        let rank = 1 + sims[1..].iter().filter(|&&s| s > sims[0]).count();
        ranks.push(rank as f64);
        if rank == 1 {
            phrase_hits += 1;
            song_hits += 1;
        } else {
            let top = sims[1..]
                .iter()
                .enumerate()
                .fold((0usize, f64::NEG_INFINITY), |best, (i, &s)| if s > best.1 { (i, s) } else { best })
                .0;
            if index.entry(pool[top]).song == anchor.song {
                song_hits += 1;
            }
        }
    }

    let count = pairs.len().max(1) as f64;
    ValidationReport {
        pairs: pairs.len(),
        adjacent_loss: mean(&adjacent),
        same_song_loss: mean(&same_song),
        random_loss: mean(&random),
        mean_rank: mean(&ranks),
        rank_pool: RANK_POOL,
        phrase_accuracy: phrase_hits as f64 / count,
        song_accuracy: song_hits as f64 / count,
    }
}
