//! Python bindings for the biozbp pipeline.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use biozbp::dataset::{self, DatasetError, RawFormat, SeriesKind, Target};
use biozbp::eval::{self, CvConfig};
use biozbp::featsel::{self, SelectionMethod};
use biozbp::features::{self, FeatureConfig, FEATURE_NAMES};
use biozbp::fiducial;
use biozbp::pipeline;
use biozbp::preprocess::{self, FirSpec, SgMode, SgSpec};
use biozbp::regress::{self, ForestConfig, ModelConfig, ModelKind};
use biozbp::synth;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn dataset_err(e: DatasetError) -> PyErr {
    match e {
        DatasetError::Io { .. } => PyIOError::new_err(e.to_string()),
        other => value_err(other),
    }
}

fn parse<T: std::str::FromStr<Err = String>>(s: &str) -> PyResult<T> {
    s.parse().map_err(PyValueError::new_err)
}

fn to_py_json<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A uniformly sampled series with its processing log.
#[pyclass(name = "Series", module = "pybiozbp")]
pub struct PySeries {
    inner: dataset::ProcessedSeries,
}

#[pymethods]
impl PySeries {
    #[new]
    #[pyo3(signature = (values, sample_rate_hz, start_s=0.0, kind="BIOZ_ABS"))]
    fn new(values: Vec<f64>, sample_rate_hz: f64, start_s: f64, kind: &str) -> PyResult<Self> {
        let kind: SeriesKind = parse(kind)?;
        Ok(PySeries {
            inner: dataset::ProcessedSeries::new(values, sample_rate_hz, start_s, kind),
        })
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.values.clone()
    }

    #[getter]
    fn sample_rate_hz(&self) -> f64 {
        self.inner.sample_rate_hz
    }

    #[getter]
    fn start_s(&self) -> f64 {
        self.inner.start_s
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.kind.to_string()
    }

    #[getter]
    fn log(&self) -> Vec<String> {
        self.inner.log().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Series(kind={}, n={}, sample_rate_hz={})",
            self.inner.kind,
            self.inner.len(),
            self.inner.sample_rate_hz
        )
    }
}

/// Synchronised excitation, sense and ECG samples.
#[pyclass(name = "RawRecording", module = "pybiozbp")]
pub struct PyRawRecording {
    inner: dataset::RawRecording,
}

#[pymethods]
impl PyRawRecording {
    #[staticmethod]
    #[pyo3(signature = (path, format="csv"))]
    fn load(path: &str, format: &str) -> PyResult<Self> {
        let format: RawFormat = parse(format)?;
        Ok(PyRawRecording {
            inner: dataset::load_raw(path, format).map_err(dataset_err)?,
        })
    }

    #[pyo3(signature = (path, format="csv"))]
    fn save(&self, path: &str, format: &str) -> PyResult<()> {
        let format: RawFormat = parse(format)?;
        dataset::save_raw(&self.inner, path, format).map_err(dataset_err)
    }

    #[getter]
    fn vs(&self) -> Vec<f64> {
        self.inner.vs().to_vec()
    }

    #[getter]
    fn vr(&self) -> Vec<f64> {
        self.inner.vr().to_vec()
    }

    #[getter]
    fn ecg(&self) -> Vec<f64> {
        self.inner.ecg().to_vec()
    }

    #[getter]
    fn sample_rate_hz(&self) -> f64 {
        self.inner.meta().sample_rate_hz
    }

    #[getter]
    fn excitation_freq_hz(&self) -> f64 {
        self.inner.meta().excitation_freq_hz
    }

    #[getter]
    fn duration_s(&self) -> f64 {
        self.inner.duration_s()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Generates a synthetic recording. `config` holds any synthetic-config
/// fields to override (e.g. `{"heart_rate_bpm": 60, "noise_snr_db": 20}`).
/// Returns the recording and the ground truth as a dict.
#[pyfunction]
#[pyo3(signature = (duration_s, config=None))]
fn generate<'py>(
    py: Python<'py>,
    duration_s: f64,
    config: Option<&Bound<'py, PyDict>>,
) -> PyResult<(PyRawRecording, Bound<'py, PyAny>)> {
    let cfg: synth::SynthConfig = match config {
        None => synth::SynthConfig::default(),
        Some(d) => {
            let text: String = py.import("json")?.call_method1("dumps", (d,))?.extract()?;
            serde_json::from_str(&text).map_err(value_err)?
        }
    };
    let (rec, truth) = synth::generate(&cfg, duration_s).map_err(value_err)?;
    Ok((PyRawRecording { inner: rec }, to_py_json(py, &truth)?))
}

/// Demodulates a recording into `{"biz_abs", "biz_real", "biz_imag", "ecg"}` series.
#[pyfunction]
#[pyo3(signature = (recording, n_block=200))]
fn demodulate(recording: &PyRawRecording, n_block: usize) -> PyResult<BTreeMap<String, PySeries>> {
    let cfg = biozbp::demod::DemodConfig {
        n_block,
        ..Default::default()
    };
    let d = biozbp::demod::demodulate(&recording.inner, &cfg).map_err(value_err)?;
    Ok([
        ("biz_abs", d.biz_abs),
        ("biz_real", d.biz_real),
        ("biz_imag", d.biz_imag),
        ("ecg", d.ecg),
    ]
    .into_iter()
    .map(|(k, s)| (k.to_string(), PySeries { inner: s }))
    .collect())
}

#[pyfunction]
#[pyo3(signature = (low_hz=0.5, high_hz=10.0, order=1000, sample_rate_hz=500.0))]
fn design_fir(low_hz: f64, high_hz: f64, order: usize, sample_rate_hz: f64) -> PyResult<Vec<f64>> {
    let spec = FirSpec {
        order,
        low_hz,
        high_hz,
        sample_rate_hz,
        ..FirSpec::default()
    };
    preprocess::design_fir(&spec).map_err(value_err)
}

#[pyfunction]
fn apply_fir(series: &PySeries, taps: Vec<f64>) -> PyResult<PySeries> {
    Ok(PySeries {
        inner: preprocess::apply_fir(&series.inner, &taps).map_err(value_err)?,
    })
}

#[pyfunction]
fn magnitude_response(taps: Vec<f64>, sample_rate_hz: f64, freqs_hz: Vec<f64>) -> Vec<f64> {
    preprocess::magnitude_response(&taps, sample_rate_hz, &freqs_hz)
}

/// Savitzky-Golay smoothing (`detrend=True` returns input minus baseline).
#[pyfunction]
#[pyo3(signature = (series, poly_order=3, window_len=10001, detrend=false))]
fn savgol(series: &PySeries, poly_order: usize, window_len: usize, detrend: bool) -> PyResult<PySeries> {
    let mode = if detrend { SgMode::Detrend } else { SgMode::Smooth };
    let spec = SgSpec { poly_order, window_len };
    Ok(PySeries {
        inner: preprocess::apply_sg(&series.inner, &spec, mode).map_err(value_err)?,
    })
}

/// R-peak times in seconds.
#[pyfunction]
fn detect_r_peaks(ecg: &PySeries) -> PyResult<Vec<f64>> {
    fiducial::detect_r_peaks(&ecg.inner).map_err(value_err)
}

/// Per-cycle fiducials as a list of dicts.
#[pyfunction]
fn detect_cycle_fiducials<'py>(py: Python<'py>, biz: &PySeries, r_peaks: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    let cycles = fiducial::detect_cycle_fiducials(&biz.inner, &r_peaks).map_err(value_err)?;
    to_py_json(py, &cycles)
}

#[pyfunction]
fn feature_names() -> Vec<&'static str> {
    FEATURE_NAMES.to_vec()
}

/// The 42 features of one segment as `(values, invalid_reasons)`.
#[pyfunction]
#[pyo3(signature = (biz, ecg, entropy_m=2, entropy_r_fraction=0.2))]
fn extract_features(
    biz: &PySeries,
    ecg: &PySeries,
    entropy_m: usize,
    entropy_r_fraction: f64,
) -> (BTreeMap<String, f64>, Vec<String>) {
    let seg = dataset::LabeledSegment {
        biz: biz.inner.clone(),
        ecg: ecg.inner.clone(),
        sbp_mmhg: f64::NAN,
        dbp_mmhg: f64::NAN,
        segment_index: 0,
        subject_id: String::new(),
        trial_id: String::new(),
    };
    let cfg = FeatureConfig {
        entropy_m,
        entropy_r_fraction,
        ..FeatureConfig::default()
    };
    let v = features::extract_all(&seg, &cfg);
    let named = FEATURE_NAMES.iter().map(|n| n.to_string()).zip(v.values).collect();
    (named, v.invalid_reasons)
}

/// `(ApEn, SampEn)` with tolerance `r_fraction` times the series SD.
#[pyfunction]
#[pyo3(signature = (values, m=2, r_fraction=0.2))]
fn entropy(values: Vec<f64>, m: usize, r_fraction: f64) -> PyResult<(f64, f64)> {
    features::entropy_features(&values, m, r_fraction).map_err(value_err)
}

/// Segment feature matrix with labels.
#[pyclass(name = "FeatureTable", module = "pybiozbp")]
pub struct PyFeatureTable {
    inner: dataset::FeatureTable,
}

#[pymethods]
impl PyFeatureTable {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyFeatureTable {
            inner: dataset::load_feature_table(path).map_err(dataset_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        dataset::save_feature_table(&self.inner, path).map_err(dataset_err)
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner.feature_names().to_vec()
    }

    /// Rows of feature values (valid rows only when `valid_only`).
    #[pyo3(signature = (valid_only=true))]
    fn matrix(&self, valid_only: bool) -> Vec<Vec<f64>> {
        if valid_only {
            self.inner.valid_only().matrix()
        } else {
            self.inner.matrix()
        }
    }

    #[pyo3(signature = (target="SBP", valid_only=true))]
    fn labels(&self, target: &str, valid_only: bool) -> PyResult<Vec<f64>> {
        let target: Target = parse(target)?;
        Ok(if valid_only {
            self.inner.valid_only().labels(target)
        } else {
            self.inner.labels(target)
        })
    }

    fn n_valid(&self) -> usize {
        self.inner.valid_only().len()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Ranks features; returns a dict with `order` (names, best first) and `scores`.
#[pyfunction]
#[pyo3(signature = (table, target="SBP", method="rf-impurity", seed=0, n_trees=500))]
fn rank_features<'py>(
    py: Python<'py>,
    table: &PyFeatureTable,
    target: &str,
    method: &str,
    seed: u64,
    n_trees: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let method: SelectionMethod = parse(method)?;
    let forest = ForestConfig {
        n_trees,
        ..ForestConfig::default()
    };
    let r = featsel::rank_features(&table.inner, parse(target)?, method, &forest, seed).map_err(value_err)?;
    let out = PyDict::new(py);
    out.set_item("method", method.to_string())?;
    out.set_item(
        "order",
        r.order.iter().map(|&i| r.feature_names[i].clone()).collect::<Vec<_>>(),
    )?;
    let scores: BTreeMap<String, f64> = r.feature_names.iter().cloned().zip(r.scores.iter().copied()).collect();
    out.set_item("scores", scores)?;
    Ok(out.into_any())
}

#[pyfunction]
fn select_top_k(table: &PyFeatureTable, names: Vec<String>) -> PyResult<PyFeatureTable> {
    let cols = names
        .iter()
        .map(|n| {
            table
                .inner
                .feature_names()
                .iter()
                .position(|f| f == n)
                .ok_or_else(|| PyValueError::new_err(format!("unknown feature `{n}`")))
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok(PyFeatureTable {
        inner: table.inner.project(&cols).map_err(dataset_err)?,
    })
}

fn model_config(kind: &str, seed: u64, n_trees: Option<usize>) -> PyResult<ModelConfig> {
    let kind: ModelKind = parse(kind)?;
    let mut cfg = ModelConfig::default_for(kind).with_seed(seed);
    if let (ModelConfig::Rf(f), Some(n)) = (&mut cfg, n_trees) {
        f.n_trees = n;
    }
    Ok(cfg)
}

/// A fitted regressor (LR, DT, RF or SVR).
#[pyclass(name = "Model", module = "pybiozbp")]
pub struct PyModel {
    inner: regress::TrainedModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    #[pyo3(signature = (kind, x, y, feature_names=None, seed=0, n_trees=None))]
    fn train(
        kind: &str,
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        feature_names: Option<Vec<String>>,
        seed: u64,
        n_trees: Option<usize>,
    ) -> PyResult<Self> {
        let cfg = model_config(kind, seed, n_trees)?;
        let p = x.first().map_or(0, |r| r.len());
        let names = feature_names.unwrap_or_else(|| (0..p).map(|j| format!("x{j}")).collect());
        Ok(PyModel {
            inner: regress::train(&cfg, &x, &y, &names).map_err(value_err)?,
        })
    }

    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        self.inner.predict(&x).map_err(value_err)
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.kind.to_string()
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner.feature_names.clone()
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(value_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyModel {
            inner: regress::TrainedModel::from_json(text).map_err(value_err)?,
        })
    }
}

/// k-fold cross-validation; returns the evaluation report as a dict.
#[pyfunction]
#[pyo3(signature = (table, model="RF", target="SBP", n_folds=10, seed=0, n_trees=None))]
fn cross_validate<'py>(
    py: Python<'py>,
    table: &PyFeatureTable,
    model: &str,
    target: &str,
    n_folds: usize,
    seed: u64,
    n_trees: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = model_config(model, seed, n_trees)?;
    let cv = CvConfig {
        n_folds,
        shuffle_seed: seed,
        target: parse(target)?,
        ..CvConfig::default()
    };
    let report = eval::cross_validate(&table.inner, &cfg, &cv).map_err(value_err)?;
    to_py_json(py, &report)
}

#[pyfunction]
fn metrics<'py>(py: Python<'py>, reference: Vec<f64>, estimate: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    to_py_json(py, &eval::metrics(&reference, &estimate).map_err(value_err)?)
}

#[pyfunction]
fn aami_check(me: f64, rmse: f64) -> bool {
    eval::aami_check(me, rmse)
}

#[pyfunction]
fn bhs_grade(cp5: f64, cp10: f64, cp15: f64) -> PyResult<String> {
    Ok(eval::bhs_grade(cp5, cp10, cp15).map_err(value_err)?.to_string())
}

/// Runs the synthetic cohort end to end. `config_toml` overrides the
/// defaults; returns `(feature_table, {target: report})`.
#[pyfunction]
#[pyo3(signature = (config_toml=None, seed=None))]
fn run_synthetic_pipeline<'py>(
    py: Python<'py>,
    config_toml: Option<&str>,
    seed: Option<u64>,
) -> PyResult<(PyFeatureTable, Bound<'py, PyDict>)> {
    let mut cfg = match config_toml {
        Some(t) => pipeline::PipelineConfig::from_toml(t).map_err(value_err)?,
        None => pipeline::PipelineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let cfg = cfg.resolved();
    let (table, outcomes) = py
        .detach(|| pipeline::run_synthetic(&cfg))
        .map_err(|e| PyValueError::new_err(format!("[{}] {e}", e.stage())))?;
    let reports = PyDict::new(py);
    for o in &outcomes {
        reports.set_item(o.target.to_string(), to_py_json(py, &o.report)?)?;
    }
    Ok((PyFeatureTable { inner: table }, reports))
}

#[pymodule]
fn pybiozbp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySeries>()?;
    m.add_class::<PyRawRecording>()?;
    m.add_class::<PyFeatureTable>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(demodulate, m)?)?;
    m.add_function(wrap_pyfunction!(design_fir, m)?)?;
    m.add_function(wrap_pyfunction!(apply_fir, m)?)?;
    m.add_function(wrap_pyfunction!(magnitude_response, m)?)?;
    m.add_function(wrap_pyfunction!(savgol, m)?)?;
    m.add_function(wrap_pyfunction!(detect_r_peaks, m)?)?;
    m.add_function(wrap_pyfunction!(detect_cycle_fiducials, m)?)?;
    m.add_function(wrap_pyfunction!(feature_names, m)?)?;
    m.add_function(wrap_pyfunction!(extract_features, m)?)?;
    m.add_function(wrap_pyfunction!(entropy, m)?)?;
    m.add_function(wrap_pyfunction!(rank_features, m)?)?;
    m.add_function(wrap_pyfunction!(select_top_k, m)?)?;
    m.add_function(wrap_pyfunction!(cross_validate, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(aami_check, m)?)?;
    m.add_function(wrap_pyfunction!(bhs_grade, m)?)?;
    m.add_function(wrap_pyfunction!(run_synthetic_pipeline, m)?)?;
    Ok(())
}
