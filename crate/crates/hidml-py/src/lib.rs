//! Python bindings for the hidml metric-learning library.
//!
//! The module exposes the main pipeline as plain functions over nested lists
//! (`features` is a list of equal-length rows, `labels` a list of integers)
//! plus a `Model` class wrapping the learned low-rank factor. Build with
//! `cargo build -p hidml-py --release` and import the resulting shared
//! library as `hidml_py` (see `python/smoke_test.py`).

use hidml::classifier::{euclid_baseline, evaluation_report, fit_centers, predict_batch};
use hidml::data::{FeatureMatrix, LabelVector, SynthConfig};
use hidml::recover::{embed, load_model, save_model, LowRankFactor, ModelMeta};
use hidml::sampler::SamplerParams;
use hidml::solver::SgdParams;
use hidml::trainer::TrainerConfig;
use ndarray::Array2;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: hidml::Error) -> PyErr {
    match e {
        hidml::Error::Io(_) | hidml::Error::Model(_) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn features_from_rows(rows: Vec<Vec<f64>>) -> PyResult<FeatureMatrix> {
    if rows.is_empty() {
        return Err(PyValueError::new_err("features must be non-empty"));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("feature rows must all have the same length"));
    }
    let n = rows.len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let arr = Array2::from_shape_vec((n, d), flat)
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    FeatureMatrix::from_rows(arr).map_err(py_err)
}

fn labels_from_raw(raw: &[i64]) -> PyResult<LabelVector> {
    let mut originals = raw.to_vec();
    originals.sort_unstable();
    originals.dedup();
    let ids = raw
        .iter()
        .map(|l| originals.binary_search(l).expect("present") as u32)
        .collect();
    LabelVector::new(ids, originals).map_err(py_err)
}

fn labels_in_space(raw: &[i64], space: &[i64]) -> PyResult<LabelVector> {
    let ids = raw
        .iter()
        .map(|l| {
            space
                .iter()
                .position(|o| o == l)
                .map(|p| p as u32)
                .ok_or_else(|| {
                    PyValueError::new_err(format!("label {l} is unknown to the model"))
                })
        })
        .collect::<PyResult<Vec<u32>>>()?;
    LabelVector::with_class_space(ids, space.to_vec()).map_err(py_err)
}

fn rows_to_lists(z: &Array2<f64>) -> Vec<Vec<f64>> {
    (0..z.nrows()).map(|i| z.row(i).to_vec()).collect()
}

/// A trained low-rank metric: `M = L L^T` with its positive eigenvalues and
/// the label map of the training data.
#[pyclass]
struct Model {
    factor: LowRankFactor,
    meta: ModelMeta,
    history: Vec<(usize, usize, f64, f64, usize, Option<f64>)>,
}

#[pymethods]
impl Model {
    /// Feature dimension the model was trained on.
    #[getter]
    fn d(&self) -> usize {
        self.factor.d()
    }

    /// Effective rank of the learned factor.
    #[getter]
    fn rank(&self) -> usize {
        self.factor.rank()
    }

    /// Positive eigenvalues in non-increasing order.
    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.factor.eigvals().to_vec()
    }

    /// Original labels, indexed by internal class id.
    #[getter]
    fn labels(&self) -> Vec<i64> {
        self.meta.label_originals.clone()
    }

    /// Per-stage records as `(stage, triplets, obj_before, obj_after, nnz,
    /// val_accuracy)` tuples. Empty for loaded models.
    fn history(&self) -> Vec<(usize, usize, f64, f64, usize, Option<f64>)> {
        self.history.clone()
    }

    /// Project feature rows into the embedding space (one row per example).
    fn embed(&self, features: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = features_from_rows(features)?;
        let z = embed(&self.factor, &x).map_err(py_err)?;
        Ok(rows_to_lists(&z))
    }

    /// Serialize to the portable binary model format.
    fn save(&self, path: &str) -> PyResult<()> {
        save_model(path, &self.factor, &self.meta).map_err(py_err)
    }

    /// Load a model written by `save` (or by the `hidml train` CLI).
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let (factor, meta) = load_model(path).map_err(py_err)?;
        Ok(Model {
            factor,
            meta,
            history: Vec::new(),
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(d={}, rank={}, classes={})",
            self.factor.d(),
            self.factor.rank(),
            self.meta.label_originals.len()
        )
    }
}

/// Generate a labeled Gaussian-cluster dataset; returns `(features, labels)`.
#[pyfunction]
#[pyo3(signature = (d, n, classes, informative, separation, noise, seed=0))]
fn synth_clusters(
    d: usize,
    n: usize,
    classes: usize,
    informative: usize,
    separation: f64,
    noise: f64,
    seed: u64,
) -> PyResult<(Vec<Vec<f64>>, Vec<i64>)> {
    let (x, y) = hidml::data::synth_clusters(&SynthConfig {
        d,
        n,
        n_classes: classes,
        informative,
        separation,
        noise,
        seed,
    })
    .map_err(py_err)?;
    let labels = y.ids().iter().map(|&id| y.original(id as usize)).collect();
    Ok((rows_to_lists(x.rows()), labels))
}

/// Learn a metric with the multi-stage pipeline.
#[pyfunction]
#[pyo3(signature = (
    features, labels, *, m=100, q=600, r=50, stages=10, lambda_=1.0, gamma=1.0,
    epochs=5, averaging=false, targets_per_anchor=3, impostor_pool=10,
    max_triplets=None, early_stop=false, seed=0, classifier_k=3, classifier_tau=1.0,
))]
#[allow(clippy::too_many_arguments)]
fn train(
    features: Vec<Vec<f64>>,
    labels: Vec<i64>,
    m: usize,
    q: usize,
    r: usize,
    stages: usize,
    lambda_: f64,
    gamma: f64,
    epochs: usize,
    averaging: bool,
    targets_per_anchor: usize,
    impostor_pool: usize,
    max_triplets: Option<usize>,
    early_stop: bool,
    seed: u64,
    classifier_k: usize,
    classifier_tau: f64,
) -> PyResult<Model> {
    let x = features_from_rows(features)?;
    if labels.len() != x.n() {
        return Err(PyValueError::new_err(format!(
            "{} labels for {} examples",
            labels.len(),
            x.n()
        )));
    }
    let y = labels_from_raw(&labels)?;
    let cfg = TrainerConfig {
        m,
        q,
        r,
        stages,
        lambda: lambda_,
        gamma,
        sampler: SamplerParams {
            targets_per_anchor,
            impostor_pool,
            max_triplets,
            margin: 1.0,
            seed: 0,
        },
        sgd: SgdParams {
            epochs,
            shuffle_seed: 0,
            averaging,
        },
        classifier_k,
        classifier_tau,
        identity_sketch: false,
        early_stop,
        seed,
    };
    let out = hidml::trainer::train(&x, &y, &cfg, None).map_err(py_err)?;
    let history = out
        .history
        .iter()
        .map(|rec| {
            (
                rec.stage,
                rec.triplets,
                rec.obj_before,
                rec.obj_after,
                rec.nnz,
                rec.val_accuracy,
            )
        })
        .collect();
    Ok(Model {
        factor: out.factor,
        meta: ModelMeta {
            m: m as u64,
            q: q as u64,
            lambda: lambda_,
            gamma,
            label_originals: y.originals().to_vec(),
        },
        history,
    })
}

/// Classify a test set with the model's metric and smoothed k-NN; returns
/// `(mean_accuracy, per_class_recall, predictions)` with predictions in the
/// original label space.
#[pyfunction]
#[pyo3(signature = (model, train_features, train_labels, test_features, test_labels, *, k=3, tau=1.0, seed=0))]
#[allow(clippy::too_many_arguments)]
fn evaluate(
    model: &Model,
    train_features: Vec<Vec<f64>>,
    train_labels: Vec<i64>,
    test_features: Vec<Vec<f64>>,
    test_labels: Vec<i64>,
    k: usize,
    tau: f64,
    seed: u64,
) -> PyResult<(f64, Vec<f64>, Vec<i64>)> {
    let xtr = features_from_rows(train_features)?;
    let xte = features_from_rows(test_features)?;
    let ytr = labels_in_space(&train_labels, &model.meta.label_originals)?;
    let yte = labels_in_space(&test_labels, &model.meta.label_originals)?;
    let ztr = embed(&model.factor, &xtr).map_err(py_err)?;
    let zte = embed(&model.factor, &xte).map_err(py_err)?;
    let centers = fit_centers(&ztr, &ytr, k, tau, seed).map_err(py_err)?;
    let preds = predict_batch(&zte, &centers);
    let report = evaluation_report(&preds, &yte).map_err(py_err)?;
    let originals: Vec<i64> = preds
        .iter()
        .map(|&p| model.meta.label_originals[p as usize])
        .collect();
    Ok((report.mean_accuracy, report.per_class_recall, originals))
}

/// The same smoothed k-NN pipeline with the raw Euclidean metric; returns
/// `(mean_accuracy, per_class_recall, predictions)`.
#[pyfunction]
#[pyo3(signature = (train_features, train_labels, test_features, test_labels, *, k=3, tau=1.0, seed=0))]
fn evaluate_euclidean(
    train_features: Vec<Vec<f64>>,
    train_labels: Vec<i64>,
    test_features: Vec<Vec<f64>>,
    test_labels: Vec<i64>,
    k: usize,
    tau: f64,
    seed: u64,
) -> PyResult<(f64, Vec<f64>, Vec<i64>)> {
    let xtr = features_from_rows(train_features)?;
    let xte = features_from_rows(test_features)?;
    let ytr = labels_from_raw(&train_labels)?;
    let yte = labels_in_space(&test_labels, ytr.originals())?;
    let preds = euclid_baseline(&xtr, &ytr, &xte, k, tau, seed).map_err(py_err)?;
    let report = evaluation_report(&preds, &yte).map_err(py_err)?;
    let originals: Vec<i64> = preds
        .iter()
        .map(|&p| ytr.original(p as usize))
        .collect();
    Ok((report.mean_accuracy, report.per_class_recall, originals))
}

/// Smoothed hinge loss at margin value `x`.
#[pyfunction]
#[pyo3(signature = (x, gamma=1.0))]
fn smoothed_hinge(x: f64, gamma: f64) -> PyResult<f64> {
    let p = hidml::loss::SmoothParams::new(gamma).map_err(py_err)?;
    Ok(hidml::loss::smoothed_hinge(x, p))
}

/// Derivative of the smoothed hinge loss.
#[pyfunction]
#[pyo3(signature = (x, gamma=1.0))]
fn smoothed_hinge_grad(x: f64, gamma: f64) -> PyResult<f64> {
    let p = hidml::loss::SmoothParams::new(gamma).map_err(py_err)?;
    Ok(hidml::loss::smoothed_hinge_grad(x, p))
}

#[pymodule]
fn hidml_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(synth_clusters, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_euclidean, m)?)?;
    m.add_function(wrap_pyfunction!(smoothed_hinge, m)?)?;
    m.add_function(wrap_pyfunction!(smoothed_hinge_grad, m)?)?;
    Ok(())
}
