//! Python module `pysignnet`: pose files, metrics, synthetic corpora, the two
//! models for inference, and the full command line.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use signnet::data::{self, PoseFormat, PoseSequence, SyntheticSpec};
use signnet::losses;
use signnet::metrics;
use signnet::nn::{Pose2TextModel, Text2PoseModel};
use signnet::SignError;

fn to_py(e: SignError) -> PyErr {
    match e {
        SignError::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn frames_of(seq: &PoseSequence) -> Vec<Vec<f64>> {
    seq.frames().map(<[f64]>::to_vec).collect()
}

fn sequence(frames: Vec<Vec<f64>>) -> PyResult<PoseSequence> {
    PoseSequence::new(&frames).map_err(to_py)
}

/// Reads a pose file as a list of 150-value frames.
#[pyfunction]
fn load_pose(path: &str) -> PyResult<Vec<Vec<f64>>> {
    Ok(frames_of(&data::load_pose(path).map_err(to_py)?))
}

/// Writes frames as a pose file (`format` is "text" or "binary").
#[pyfunction]
#[pyo3(signature = (path, frames, format = "text"))]
fn save_pose(path: &str, frames: Vec<Vec<f64>>, format: &str) -> PyResult<()> {
    let format = match format {
        "text" => PoseFormat::Text,
        "binary" => PoseFormat::Binary,
        other => return Err(PyValueError::new_err(format!("unknown pose format `{other}`"))),
    };
    data::save_pose(path, &sequence(frames)?, format).map_err(to_py)
}

/// Corpus BLEU-1..4 with precisions and brevity penalty.
#[pyfunction]
fn corpus_bleu<'py>(
    py: Python<'py>,
    candidates: Vec<Vec<String>>,
    references: Vec<Vec<String>>,
) -> PyResult<Bound<'py, PyDict>> {
    let r = metrics::corpus_bleu(&candidates, &references).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("bleu", r.bleu.to_vec())?;
    d.set_item("precisions", r.precisions.to_vec())?;
    d.set_item("brevity_penalty", r.brevity_penalty)?;
    d.set_item("candidate_len", r.candidate_len)?;
    d.set_item("reference_len", r.reference_len)?;
    Ok(d)
}

/// DTW between two frame sequences: `(cost, normalized_cost, path)`.
#[pyfunction]
fn dtw(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<(f64, f64, Vec<(usize, usize)>)> {
    if a.iter().chain(&b).any(|f| f.len() != a.first().map_or(0, Vec::len)) {
        return Err(PyValueError::new_err("all frames must have the same width"));
    }
    let r = metrics::dtw(&a, &b, |x, y| metrics::euclidean(x, y)).map_err(to_py)?;
    let n = r.normalized_cost();
    Ok((r.cost, n, r.path))
}

/// Probability of `target` under per-frame distributions (blank at `blank`).
#[pyfunction]
#[pyo3(signature = (frame_probs, target, blank = 0))]
fn ctc_probability(frame_probs: Vec<Vec<f64>>, target: Vec<usize>, blank: usize) -> PyResult<f64> {
    let t = signnet::tensor::Tensor::from_rows(&frame_probs).map_err(to_py)?;
    losses::ctc_probability(&t, &target, blank).map_err(to_py)
}

/// `max(|B−T|² − |B−S|² + margin, 0)`.
#[pyfunction]
#[pyo3(signature = (baseline, truth, negative, margin = 0.2))]
fn triplet_distance(baseline: Vec<f64>, truth: Vec<f64>, negative: Vec<f64>, margin: f64) -> PyResult<f64> {
    losses::triplet_distance_values(&baseline, &truth, &negative, margin).map_err(to_py)
}

/// Writes a seeded synthetic corpus to `out_dir` (manifest + pose files).
#[pyfunction]
#[pyo3(signature = (out_dir, samples = 50, vocab_size = 12, confusable_pairs = 0, seed = 0))]
fn generate_corpus(out_dir: &str, samples: usize, vocab_size: usize, confusable_pairs: usize, seed: u64) -> PyResult<()> {
    let spec = SyntheticSpec {
        vocab_size,
        seed,
        ..SyntheticSpec::default()
    }
    .with_confusable_pairs(confusable_pairs);
    spec.validate().map_err(to_py)?;
    let corpus = data::generate_synthetic_corpus(&spec, samples).map_err(to_py)?;
    data::write_corpus(out_dir, &corpus, Some(&spec), PoseFormat::Text).map_err(to_py)
}

/// A trained text/gloss → pose generator.
#[pyclass(frozen)]
struct Text2Pose {
    model: Text2PoseModel,
}

#[pymethods]
impl Text2Pose {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Text2Pose {
            model: Text2PoseModel::load(path).map_err(to_py)?,
        })
    }

    /// "text" or "gloss".
    #[getter]
    fn source(&self) -> &'static str {
        match self.model.source() {
            data::SourceKind::Text => "text",
            data::SourceKind::Gloss => "gloss",
        }
    }

    /// Greedy generation; unknown tokens map to `<unk>`.
    #[pyo3(signature = (tokens, max_frames = 256))]
    fn generate(&self, tokens: Vec<String>, max_frames: usize) -> PyResult<Vec<Vec<f64>>> {
        let (ids, _) = self.model.token_ids(&tokens);
        Ok(frames_of(&self.model.generate(&ids, max_frames).map_err(to_py)?))
    }
}

/// A trained pose → text translator.
#[pyclass(frozen)]
struct Pose2Text {
    model: Pose2TextModel,
}

#[pymethods]
impl Pose2Text {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Pose2Text {
            model: Pose2TextModel::load(path).map_err(to_py)?,
        })
    }

    #[pyo3(signature = (frames, max_words = 32))]
    fn translate(&self, frames: Vec<Vec<f64>>, max_words: usize) -> PyResult<Vec<String>> {
        self.model.translate(&sequence(frames)?, max_words).map_err(to_py)
    }
}

/// Runs a `signnet` command line in-process and returns its exit code.
#[pyfunction]
fn run_cli(args: Vec<String>) -> u8 {
    let argv = std::iter::once("signnet".to_owned()).chain(args);
    match signnet::cli::Cli::try_parse_args(argv) {
        Ok(cli) => match signnet::cli::execute(cli) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
                signnet::cli::exit_code(&e)
            }
        },
        Err(msg) => {
            eprintln!("{msg}");
            signnet::cli::EXIT_USAGE
        }
    }
}

#[pymodule]
fn pysignnet(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("JOINTS", data::JOINTS)?;
    m.add("FRAME_WIDTH", data::FRAME_WIDTH)?;
    m.add_function(wrap_pyfunction!(load_pose, m)?)?;
    m.add_function(wrap_pyfunction!(save_pose, m)?)?;
    m.add_function(wrap_pyfunction!(corpus_bleu, m)?)?;
    m.add_function(wrap_pyfunction!(dtw, m)?)?;
    m.add_function(wrap_pyfunction!(ctc_probability, m)?)?;
    m.add_function(wrap_pyfunction!(triplet_distance, m)?)?;
    m.add_function(wrap_pyfunction!(generate_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add_class::<Text2Pose>()?;
    m.add_class::<Pose2Text>()?;
    Ok(())
}
