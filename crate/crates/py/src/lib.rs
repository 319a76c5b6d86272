//! Python bindings: the main loss functions, metrics, training entry
//! point, and projections, operating on plain Python lists.

use std::collections::BTreeMap;
use std::path::Path;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use attrib_core::data::{load_documents, save_documents, select_domains, DomainSetting, SplitCounts};
use attrib_core::encoder::EncoderConfig;
use attrib_core::error::Error;
use attrib_core::loss::{InnerScale, LossConfig};
use attrib_core::mat::Mat;
use attrib_core::optimizer::AdamConfig;
use attrib_core::projection::{tsne_embed, TsneConfig, TsneInit};
use attrib_core::synth::{generate, SynthConfig};
use attrib_core::trainer::{accuracy, select_checkpoint, train, TrainConfig, TrainedModel};

fn to_py_err(e: Error) -> PyErr {
    match e.exit_code() {
        1 => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn mat_from_rows(rows: Vec<Vec<f64>>, what: &str) -> PyResult<Mat> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err(format!("{what}: ragged rows")));
    }
    Ok(Mat::from_vec(n, d, rows.into_iter().flatten().collect()))
}

fn mat_to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

/// Mean cross-entropy of logits against labels; returns (loss, gradient).
#[pyfunction]
fn cross_entropy(logits: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let logits = mat_from_rows(logits, "logits")?;
    let (loss, grad) = attrib_core::loss::cross_entropy(&logits, &labels).map_err(to_py_err)?;
    Ok((loss, mat_to_rows(&grad)))
}

/// Supervised contrastive loss over feature rows; returns (loss, gradient).
#[pyfunction]
#[pyo3(signature = (features, labels, tau = 0.2, normalize = true))]
fn supervised_contrastive(
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    tau: f64,
    normalize: bool,
) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let z = mat_from_rows(features, "features")?;
    let config = LossConfig {
        tau,
        scl_weight: 1.0,
        normalize_z: normalize,
        inner_scale: InnerScale::Positives,
    };
    let (loss, grad) =
        attrib_core::loss::supervised_contrastive(&z, &labels, &config).map_err(to_py_err)?;
    Ok((loss, mat_to_rows(&grad)))
}

/// Absolute accuracy gain over a baseline, in percentage points.
#[pyfunction]
fn actual_difference(acc_tar: f64, acc_bert: f64) -> f64 {
    attrib_core::evaluator::actual_difference(acc_tar, acc_bert)
}

/// Relative accuracy gain over a baseline, in percent.
#[pyfunction]
fn improvement_percentage(acc_tar: f64, acc_bert: f64) -> PyResult<f64> {
    attrib_core::evaluator::improvement_percentage(acc_tar, acc_bert).map_err(to_py_err)
}

/// Generate the synthetic multi-domain benchmark and write it as JSON
/// Lines. Returns the number of documents written.
#[pyfunction]
#[pyo3(signature = (path, seed = 17, train_n = 600, val_n = 200, test_n = 200, dim = 32))]
fn synthesize_dataset(
    path: String,
    seed: u64,
    train_n: usize,
    val_n: usize,
    test_n: usize,
    dim: usize,
) -> PyResult<usize> {
    let config = SynthConfig {
        seed,
        dim,
        counts: SplitCounts {
            train_n,
            val_n,
            test_n,
        },
        ..SynthConfig::default()
    };
    let dataset = generate(&config).map_err(to_py_err)?;
    save_documents(&dataset, Path::new(&path)).map_err(to_py_err)?;
    Ok(dataset.documents.len())
}

/// Train on the named source domains of a JSON Lines dataset and
/// evaluate in-domain and per-target accuracy. Returns a dict with
/// `in_domain`, `per_target`, `ood_avg`, `selected_epoch`, and the
/// per-epoch `history`.
#[pyfunction]
#[pyo3(signature = (path, sources, targets, epochs = 10, batch_size = 16, lr = 1e-5,
                    tau = 0.2, scl_weight = 1.0, proj_dim = 256, seed = 1))]
#[allow(clippy::too_many_arguments)]
fn train_eval(
    py: Python<'_>,
    path: String,
    sources: Vec<String>,
    targets: Vec<String>,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    tau: f64,
    scl_weight: f64,
    proj_dim: usize,
    seed: u64,
) -> PyResult<Py<PyDict>> {
    let dataset = load_documents(Path::new(&path)).map_err(to_py_err)?;
    let index_of = |name: &String| -> PyResult<usize> {
        dataset
            .domain_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| PyValueError::new_err(format!("unknown domain {name:?}")))
    };
    let setting = DomainSetting::new(
        sources.iter().map(index_of).collect::<PyResult<Vec<_>>>()?,
        targets.iter().map(index_of).collect::<PyResult<Vec<_>>>()?,
    );
    let pools = select_domains(&dataset, &setting).map_err(to_py_err)?;
    let dim = dataset
        .embedding_dim
        .ok_or_else(|| PyValueError::new_err("dataset has no embeddings"))?;
    let config = TrainConfig {
        epochs,
        batch_size,
        seed,
        loss: LossConfig {
            tau,
            scl_weight,
            ..LossConfig::default()
        },
        adam: AdamConfig {
            lr,
            ..AdamConfig::default()
        },
        proj_dim,
        ..TrainConfig::default()
    };
    let encoder = EncoderConfig::external(dim);
    let output = train(&pools, &encoder, &config, dataset.class_count(), None).map_err(to_py_err)?;
    let epoch = select_checkpoint(&output.history).map_err(to_py_err)?;
    let model = TrainedModel {
        encoder_config: encoder,
        state: output.checkpoints[epoch - 1].model.clone(),
    };

    let in_domain = accuracy(&model, &pools.source_test).map_err(to_py_err)?;
    let mut per_target: BTreeMap<String, f64> = BTreeMap::new();
    for (&d, pool) in &pools.target_test {
        per_target.insert(
            dataset.domain_names[d].clone(),
            accuracy(&model, pool).map_err(to_py_err)?,
        );
    }
    let ood_avg = if per_target.is_empty() {
        None
    } else {
        Some(per_target.values().sum::<f64>() / per_target.len() as f64)
    };

    let result = PyDict::new(py);
    result.set_item("in_domain", in_domain)?;
    result.set_item("per_target", per_target)?;
    result.set_item("ood_avg", ood_avg)?;
    result.set_item("selected_epoch", epoch)?;
    let history: Vec<(usize, f64, f64)> = output
        .history
        .records
        .iter()
        .map(|r| (r.epoch, r.mean_loss, r.val_accuracy))
        .collect();
    result.set_item("history", history)?;
    Ok(result.into())
}

/// Exact t-SNE to 2-D; returns one [x, y] pair per input row.
#[pyfunction]
#[pyo3(signature = (points, perplexity = 30.0, iterations = 1000, learning_rate = 200.0, seed = 0))]
fn tsne(
    points: Vec<Vec<f64>>,
    perplexity: f64,
    iterations: usize,
    learning_rate: f64,
    seed: u64,
) -> PyResult<Vec<Vec<f64>>> {
    let x = mat_from_rows(points, "points")?;
    let config = TsneConfig {
        perplexity,
        iterations,
        learning_rate,
        seed,
        init: TsneInit::Pca,
        ..TsneConfig::default()
    };
    let emb = tsne_embed(&x, &config).map_err(to_py_err)?;
    Ok(mat_to_rows(&emb.coords))
}

#[pymodule]
fn attrib_rs(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(cross_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(supervised_contrastive, m)?)?;
    m.add_function(wrap_pyfunction!(actual_difference, m)?)?;
    m.add_function(wrap_pyfunction!(improvement_percentage, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train_eval, m)?)?;
    m.add_function(wrap_pyfunction!(tsne, m)?)?;
    Ok(())
}
