//! Python bindings: build and load reference indexes, train transition
//! weights, arrange lead sheets, plus the small pure functions underneath.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use arranger::reharmonize;
use arranger::selection::{self, ArrangeOptions, ArrangementTrace, BuildOptions, ControlSpec, FitnessWeights, Level};
use arranger::symbolic::{self, layer_histogram, read_song, write_atomic, Chord, PitchClassSet, ReferenceIndex};
use arranger::synthetic::{self, SynthConfig};
use arranger::transition::{self, TrainConfig, TransitionWeights};

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err(e: impl ToString) -> PyErr {
    PyIOError::new_err(e.to_string())
}

fn level(s: Option<&str>) -> PyResult<Level> {
    s.map_or(Ok(Level::Any), |s| s.parse::<Level>().map_err(value_err))
}

/// A transposition-augmented phrase index over a corpus.
#[pyclass(name = "ReferenceIndex", module = "arranger_py")]
pub struct PyIndex {
    inner: ReferenceIndex,
}

#[pymethods]
impl PyIndex {
    /// Index every `*.mid` file (with its `.txt` sidecar) in a directory.
    #[staticmethod]
    fn build(corpus_dir: PathBuf) -> PyResult<Self> {
        let (inner, _) = symbolic::build_reference_index(&corpus_dir).map_err(value_err)?;
        Ok(Self { inner })
    }

    /// Index a generated corpus without touching the filesystem.
    #[staticmethod]
    #[pyo3(signature = (songs = 50, seed = 7))]
    fn synthetic(songs: usize, seed: u64) -> PyResult<Self> {
        let sources = synthetic::source_songs(&SynthConfig { songs, seed, ..Default::default() });
        let (inner, _) = ReferenceIndex::from_songs(sources).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ReferenceIndex::load(&path).map(|inner| Self { inner }).map_err(io_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(io_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn songs(&self) -> Vec<String> {
        self.inner.songs.clone()
    }

    #[getter]
    fn source_phrase_count(&self) -> usize {
        self.inner.source_phrase_count()
    }

    /// Source phrases per bar length.
    fn histogram(&self) -> Vec<(u32, usize)> {
        layer_histogram(&self.inner).into_iter().collect()
    }

    fn __repr__(&self) -> String {
        format!("ReferenceIndex(songs={}, entries={})", self.inner.songs.len(), self.inner.len())
    }
}

/// Learned projections of the texture-transition score.
#[pyclass(name = "TransitionWeights", module = "arranger_py")]
pub struct PyWeights {
    inner: TransitionWeights,
}

#[pymethods]
impl PyWeights {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        TransitionWeights::load(&path).map(|inner| Self { inner }).map_err(io_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(io_err)
    }

    #[getter]
    fn d_out(&self) -> usize {
        self.inner.d_out
    }

    fn __repr__(&self) -> String {
        format!("TransitionWeights(d_out={})", self.inner.d_out)
    }
}

/// Train transition weights. Returns the weights and a dict of validation
/// metrics.
#[pyfunction]
#[pyo3(signature = (index, schedule = "desk", seed = 1, epochs = None))]
fn train<'py>(
    py: Python<'py>,
    index: &PyIndex,
    schedule: &str,
    seed: u64,
    epochs: Option<usize>,
) -> PyResult<(PyWeights, Bound<'py, PyDict>)> {
    let mut config = match schedule {
        "desk" => TrainConfig::desk(),
        "full" => TrainConfig::full(),
        other => return Err(value_err(format!("schedule must be desk or full, got {other:?}"))),
    };
    config.seed = seed;
    if let Some(e) = epochs {
        config.epochs = e;
    }
    let (inner, report) = py.allow_threads(|| transition::train_transition(&index.inner, &config)).map_err(value_err)?;
    let v = report.validation;
    let d = PyDict::new(py);
    d.set_item("pairs", v.pairs)?;
    d.set_item("adjacent_loss", v.adjacent_loss)?;
    d.set_item("same_song_loss", v.same_song_loss)?;
    d.set_item("random_loss", v.random_loss)?;
    d.set_item("mean_rank", v.mean_rank)?;
    d.set_item("rank_pool", v.rank_pool)?;
    d.set_item("phrase_accuracy", v.phrase_accuracy)?;
    d.set_item("song_accuracy", v.song_accuracy)?;
    Ok((PyWeights { inner }, d))
}

/// One selected phrase.
#[pyclass(name = "Selection", module = "arranger_py", get_all)]
#[derive(Clone)]
pub struct PySelection {
    source_id: String,
    phrase_index: usize,
    transposition: u8,
    fitness: f64,
    texture: Option<f64>,
    form: Option<u8>,
}

#[pymethods]
impl PySelection {
    fn __repr__(&self) -> String {
        format!("Selection({} #{} +{}, fitness={:.4})", self.source_id, self.phrase_index, self.transposition, self.fitness)
    }
}

/// An arrangement: the chosen phrases, the score and the rendered MIDI.
#[pyclass(name = "Arrangement", module = "arranger_py")]
pub struct PyArrangement {
    #[pyo3(get)]
    total_score: f64,
    #[pyo3(get)]
    bars: u32,
    selections: Vec<PySelection>,
    midi: Vec<u8>,
    trace: ArrangementTrace,
}

#[pymethods]
impl PyArrangement {
    #[getter]
    fn selections(&self) -> Vec<PySelection> {
        self.selections.clone()
    }

    /// Standard MIDI file bytes (melody track plus accompaniment).
    fn midi_bytes(&self) -> Vec<u8> {
        self.midi.clone()
    }

    fn write_midi(&self, path: PathBuf) -> PyResult<()> {
        write_atomic(&path, &self.midi).map_err(io_err)
    }

    /// The score trace as a JSON string.
    fn trace_json(&self) -> String {
        String::from_utf8(self.trace.to_json()).expect("trace JSON is UTF-8")
    }

    fn __repr__(&self) -> String {
        format!("Arrangement(phrases={}, total_score={:.6})", self.selections.len(), self.total_score)
    }
}

/// Arrange accompaniment for a lead-sheet MIDI file (with its sidecar).
#[pyfunction]
#[pyo3(signature = (query, index, weights, rd = None, vn = None, alpha = 0.5, beta = 0.5, delta = 0.3, gamma = 0.7, prune = None))]
#[allow(clippy::too_many_arguments)]
fn arrange(
    py: Python<'_>,
    query: PathBuf,
    index: &PyIndex,
    weights: &PyWeights,
    rd: Option<&str>,
    vn: Option<&str>,
    alpha: f64,
    beta: f64,
    delta: f64,
    gamma: f64,
    prune: Option<usize>,
) -> PyResult<PyArrangement> {
    let song = read_song(&query).map_err(|e| value_err(format!("{}: {}", e.path.display(), e.message)))?;
    let q = song.to_query();
    let opts = ArrangeOptions {
        build: BuildOptions {
            control: ControlSpec { rd: level(rd)?, vn: level(vn)? },
            fitness: FitnessWeights { alpha, beta },
            prune,
        },
        delta,
        gamma,
        ..Default::default()
    };
    let (result, trace) =
        py.allow_threads(|| selection::arrange_traced(&q, &index.inner, &weights.inner, &opts)).map_err(value_err)?;
    let selections = trace
        .path
        .iter()
        .map(|s| {
            let c = &s.candidate;
            PySelection {
                source_id: c.source_id.clone(),
                phrase_index: c.phrase_index,
                transposition: c.transposition,
                fitness: c.fitness.total,
                texture: s.transition.map(|t| t.texture),
                form: s.transition.map(|t| t.form),
            }
        })
        .collect();
    Ok(PyArrangement {
        total_score: result.total_score,
        bars: q.total_bars(),
        selections,
        midi: symbolic::write_midi(&result, &q),
        trace,
    })
}

/// Write a synthetic corpus (MIDI plus sidecars) and return the file paths.
#[pyfunction]
#[pyo3(signature = (out_dir, songs = 50, seed = 7))]
fn synth(out_dir: PathBuf, songs: usize, seed: u64) -> PyResult<Vec<PathBuf>> {
    synthetic::write_corpus(&out_dir, &SynthConfig { songs, seed, ..Default::default() }).map_err(io_err)
}

fn chord(root: u8, classes: Vec<u8>) -> PyResult<Chord> {
    let mut bits = 0u16;
    for c in classes {
        if c >= 12 {
            return Err(value_err(format!("pitch class {c} out of range")));
        }
        bits |= 1 << c;
    }
    Chord::new(root, PitchClassSet::from_bits(bits)).map_err(value_err)
}

/// The 12-entry pitch-class map used to move notes from `src` to `dst`
/// (each chord given as root and member pitch classes).
#[pyfunction]
fn pitch_class_map(src_root: u8, src_classes: Vec<u8>, dst_root: u8, dst_classes: Vec<u8>) -> PyResult<Vec<u32>> {
    let map = reharmonize::pitch_class_map(&chord(src_root, src_classes)?, &chord(dst_root, dst_classes)?);
    Ok((0..12).map(|c| u32::from(map.apply(c))).collect())
}

/// Best path through a layered graph. `nodes[i][a]` is a node score and
/// `edges[i][a][b]` the edge score from layer i node a to layer i+1 node b.
#[pyfunction]
#[pyo3(signature = (nodes, edges, delta = 0.3, gamma = 0.7))]
fn viterbi(nodes: Vec<Vec<f64>>, edges: Vec<Vec<Vec<f64>>>, delta: f64, gamma: f64) -> PyResult<(Vec<usize>, f64)> {
    if nodes.is_empty() || nodes.iter().any(Vec::is_empty) {
        return Err(value_err("every layer needs at least one node"));
    }
    if edges.len() + 1 != nodes.len() {
        return Err(value_err(format!("{} layers need {} edge matrices, got {}", nodes.len(), nodes.len() - 1, edges.len())));
    }
    for (i, m) in edges.iter().enumerate() {
        if m.len() != nodes[i].len() || m.iter().any(|row| row.len() != nodes[i + 1].len()) {
            return Err(value_err(format!("edge matrix {i} must be {}x{}", nodes[i].len(), nodes[i + 1].len())));
        }
    }
    Ok(selection::viterbi_path(&nodes, |i, a, b| edges[i][a][b], delta, gamma))
}

/// Contrastive loss `1 - softmax(sims)[0]`; the first entry is the positive.
#[pyfunction]
fn contrastive_loss(sims: Vec<f64>) -> PyResult<f64> {
    if sims.is_empty() {
        return Err(value_err("need at least one similarity"));
    }
    Ok(transition::loss_from_similarities(&sims))
}

#[pymodule]
fn arranger_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyIndex>()?;
    m.add_class::<PyWeights>()?;
    m.add_class::<PyArrangement>()?;
    m.add_class::<PySelection>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(arrange, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(pitch_class_map, m)?)?;
    m.add_function(wrap_pyfunction!(viterbi, m)?)?;
    m.add_function(wrap_pyfunction!(contrastive_loss, m)?)?;
    Ok(())
}
