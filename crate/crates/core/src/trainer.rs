//! Training loop over the combined source pool.
//!
//! Each epoch shuffles all source-domain training documents together,
//! walks them in minibatches, and updates the projection head, the
//! classifier, and (in full mode with a trainable encoder) the encoder
//! table by the combined loss. Validation accuracy on the source
//! validation union is recorded per epoch; model selection picks the
//! best epoch afterwards.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{save_checkpoint, Checkpoint, ModelState};
use crate::data::{Document, DocumentPools};
use crate::encoder::{encode_batch, encoder_backward, init_encoder_params, EncoderConfig, EncoderKind, EncoderParams};
use crate::error::{Error, Result};
use crate::loss::{combined_loss, LossConfig};
use crate::mat::Mat;
use crate::model::{classify, forward, init_params, model_backward, project, ProjectionOrder, DEFAULT_PROJECTION_DIM};
use crate::optimizer::{Adam, AdamConfig};
use crate::rng::{fnv1a64, SplitMix64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Encoder and downstream layers train jointly.
    Full,
    /// Encoder frozen; projection head and classifier train.
    Probing,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Full => "full",
            TrainMode::Probing => "probing",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub mode: TrainMode,
    /// Strict probing: train only the classifier. Requires scl_weight 0,
    /// since the contrastive term acts on untrainable features then.
    pub probe_strict: bool,
    /// Enforce proportional per-batch domain quotas instead of plain
    /// global shuffling.
    pub stratify_domains: bool,
    pub loss: LossConfig,
    pub adam: AdamConfig,
    pub proj_dim: usize,
    pub proj_order: ProjectionOrder,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            seed: 1,
            mode: TrainMode::Full,
            probe_strict: false,
            stratify_domains: false,
            loss: LossConfig::default(),
            adam: AdamConfig::default(),
            proj_dim: DEFAULT_PROJECTION_DIM,
            proj_order: ProjectionOrder::TanhThenLayerNorm,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("train.epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("train.batch_size must be positive".into()));
        }
        if self.loss.scl_weight > 0.0 && self.batch_size < 2 {
            return Err(Error::InvalidConfig(
                "train.batch_size must be at least 2 when the contrastive term is active".into(),
            ));
        }
        if self.probe_strict && self.loss.scl_weight > 0.0 {
            return Err(Error::InvalidConfig(
                "strict probing trains only the classifier; set loss.scl_weight to 0".into(),
            ));
        }
        if self.proj_dim == 0 {
            return Err(Error::InvalidConfig("model projection dim must be positive".into()));
        }
        self.loss.validate()?;
        self.adam.validate()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub mean_ce: f64,
    pub mean_scl: f64,
    pub mean_loss: f64,
    /// Accuracy percentage on the source validation union.
    pub val_accuracy: f64,
    pub checkpoint_path: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub history: TrainHistory,
    /// One checkpoint per epoch, in epoch order.
    pub checkpoints: Vec<Checkpoint>,
}

/// A trained encoder + projection + classifier stack, ready to score
/// documents.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub encoder_config: EncoderConfig,
    pub state: ModelState,
}

impl TrainedModel {
    pub fn logits(&self, docs: &[Document]) -> Result<Mat> {
        let batch = encode_batch(docs, &self.encoder_config, &self.state.encoder)?;
        let trace = project(&batch.features, &self.state.proj)?;
        classify(&trace.z, &self.state.clf)
    }

    /// Reduced-dimension features z for a document pool.
    pub fn features(&self, docs: &[Document]) -> Result<Mat> {
        let batch = encode_batch(docs, &self.encoder_config, &self.state.encoder)?;
        Ok(project(&batch.features, &self.state.proj)?.z)
    }
}

/// Top-1 accuracy percentage with argmax ties broken toward the lowest
/// class index.
pub fn accuracy(model: &TrainedModel, docs: &[Document]) -> Result<f64> {
    if docs.is_empty() {
        return Err(Error::EmptyPool("accuracy over empty pool".into()));
    }
    let logits = model.logits(docs)?;
    let mut correct = 0usize;
    for (i, doc) in docs.iter().enumerate() {
        let row = logits.row(i);
        let mut best = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        if best == doc.model_label {
            correct += 1;
        }
    }
    Ok(correct as f64 / docs.len() as f64 * 100.0)
}

/// Content hash over pool ids, recorded in manifests so a run can be
/// tied to the exact documents it saw.
pub fn pool_hash(pools: &DocumentPools) -> u64 {
    let mut buf = String::new();
    for (name, pool) in [
        ("train", &pools.source_train),
        ("val", &pools.source_val),
        ("test", &pools.source_test),
    ] {
        buf.push_str(name);
        buf.push('\n');
        for doc in pool.iter() {
            buf.push_str(&doc.id);
            buf.push('\n');
        }
    }
    for (d, pool) in &pools.target_test {
        buf.push_str(&format!("target:{d}\n"));
        for doc in pool {
            buf.push_str(&doc.id);
            buf.push('\n');
        }
    }
    fnv1a64(buf.as_bytes())
}

/// Order a shuffled epoch so each domain appears at a steady rate; used
/// by the stratify_domains flag. Documents keep their shuffled order
/// within each domain.
fn stratified_order(docs: &[Document], shuffled: &[usize]) -> Vec<usize> {
    let mut per_domain: Vec<(usize, Vec<usize>)> = Vec::new();
    for &i in shuffled {
        let d = docs[i].domain;
        match per_domain.iter_mut().find(|(dom, _)| *dom == d) {
            Some((_, v)) => v.push(i),
            None => per_domain.push((d, vec![i])),
        }
    }
    per_domain.sort_by_key(|(d, _)| *d);
    // Merge by fractional position within each domain queue.
    let mut keyed: Vec<(f64, usize, usize)> = Vec::with_capacity(shuffled.len());
    for (d, queue) in &per_domain {
        let len = queue.len() as f64;
        for (pos, &i) in queue.iter().enumerate() {
            keyed.push(((pos as f64 + 0.5) / len, *d, i));
        }
    }
    keyed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, _, i)| i).collect()
}

/// Run the training loop, returning per-epoch history and checkpoints.
/// With `checkpoint_dir` set, each epoch is also written to disk along
/// with a manifest carrying config, seed, pool hash, and history.
pub fn train(
    pools: &DocumentPools,
    encoder_config: &EncoderConfig,
    config: &TrainConfig,
    classes: usize,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutput> {
    config.validate()?;
    encoder_config.validate()?;
    if pools.source_train.is_empty() {
        return Err(Error::EmptyPool("source train".into()));
    }
    if classes == 0 {
        return Err(Error::InvalidConfig("training needs at least one class".into()));
    }

    // Sub-streams: seed for the model, seed+1 for the encoder table,
    // seed+2 for the epoch shuffles.
    let (mut proj, mut clf) = init_params(
        config.seed,
        encoder_config.hidden_dim,
        config.proj_dim,
        classes,
    )?;
    proj.order = config.proj_order;
    let mut encoder_params = init_encoder_params(encoder_config, config.seed.wrapping_add(1))?;
    let mut shuffle_rng = SplitMix64::new(config.seed.wrapping_add(2));
    let mut adam = Adam::new(config.adam);

    let update_encoder = config.mode == TrainMode::Full
        && encoder_config.kind == EncoderKind::HashedNgram
        && encoder_config.trainable;
    let scl_active = config.loss.scl_weight > 0.0;

    let mut history = TrainHistory::default();
    let mut checkpoints = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let n = pools.source_train.len();
        let mut order: Vec<usize> = (0..n).collect();
        shuffle_rng.shuffle(&mut order);
        if config.stratify_domains {
            order = stratified_order(&pools.source_train, &order);
        }

        let mut sum_ce = 0.0;
        let mut sum_scl = 0.0;
        let mut sum_loss = 0.0;
        let mut batches = 0usize;

        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            if chunk.len() < 2 && scl_active {
                continue; // the contrastive term is undefined for singletons
            }
            let docs: Vec<Document> = chunk
                .iter()
                .map(|&i| pools.source_train[i].clone())
                .collect();
            let labels: Vec<usize> = docs.iter().map(|d| d.model_label).collect();

            let encoded = encode_batch(&docs, encoder_config, &encoder_params)?;
            let trace = forward(&encoded.features, &proj, &clf)?;
            let losses = combined_loss(&trace.logits, &trace.z, &labels, &config.loss)?;
            if !losses.total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss at epoch {epoch}, batch {batch_idx}"
                )));
            }
            let grads = model_backward(&trace, &proj, &clf, &losses.dlogits, &losses.dz)?;

            adam.begin_step();
            if !config.probe_strict {
                adam.update("proj.w", proj.w.data_mut(), grads.dw.data())?;
                adam.update("proj.b", &mut proj.b, &grads.db)?;
                adam.update("proj.ln_gain", &mut proj.ln_gain, &grads.dln_gain)?;
                adam.update("proj.ln_bias", &mut proj.ln_bias, &grads.dln_bias)?;
            }
            adam.update("clf.v", clf.v.data_mut(), grads.dv.data())?;
            adam.update("clf.c", &mut clf.c, &grads.dc)?;
            if update_encoder {
                let table_grad =
                    encoder_backward(&encoded.ngram_buckets, &grads.dh, encoder_config)?;
                if let EncoderParams::Hashed { table } = &mut encoder_params {
                    adam.update("encoder.table", table.data_mut(), table_grad.data())?;
                }
            }

            sum_ce += losses.ce;
            sum_scl += losses.scl;
            sum_loss += losses.total;
            batches += 1;
        }

        if batches == 0 {
            return Err(Error::EmptyPool(format!(
                "epoch {epoch} produced no usable batches"
            )));
        }

        let model = TrainedModel {
            encoder_config: encoder_config.clone(),
            state: ModelState {
                proj: proj.clone(),
                clf: clf.clone(),
                encoder: encoder_params.clone(),
            },
        };
        let val_accuracy = if pools.source_val.is_empty() {
            0.0
        } else {
            accuracy(&model, &pools.source_val)?
        };

        let checkpoint = Checkpoint {
            epoch,
            model: model.state,
            adam: adam.state.clone(),
        };
        let checkpoint_path = match checkpoint_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let path = dir.join(format!("epoch_{epoch}.json"));
                save_checkpoint(&path, &checkpoint)?;
                Some(path.to_string_lossy().into_owned())
            }
            None => None,
        };
        checkpoints.push(checkpoint);
        history.records.push(EpochRecord {
            epoch,
            mean_ce: sum_ce / batches as f64,
            mean_scl: sum_scl / batches as f64,
            mean_loss: sum_loss / batches as f64,
            val_accuracy,
            checkpoint_path,
        });
    }

    if let Some(dir) = checkpoint_dir {
        let manifest = serde_json::json!({
            "config": config,
            "encoder": encoder_config,
            "seed": config.seed,
            "pool_hash": format!("{:016x}", pool_hash(pools)),
            "history": history,
        });
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
    }

    Ok(TrainOutput {
        history,
        checkpoints,
    })
}

/// Best epoch by source-validation accuracy, earliest epoch on ties.
/// Returns the 1-based epoch number.
pub fn select_checkpoint(history: &TrainHistory) -> Result<usize> {
    if history.records.is_empty() {
        return Err(Error::EmptyPool("empty training history".into()));
    }
    let mut best = &history.records[0];
    for record in &history.records[1..] {
        if record.val_accuracy > best.val_accuracy {
            best = record;
        }
    }
    Ok(best.epoch)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    pub selected_epoch: usize,
    pub val_accuracy: f64,
    /// Mean accuracy over target domains, when the setting has targets.
    pub target_accuracy: Option<f64>,
    pub seed: u64,
    pub pool_hash: String,
}

/// Grid values used in the temperature search.
pub const DEFAULT_TAU_GRID: [f64; 6] = [0.1, 0.2, 0.5, 0.7, 0.8, 1.0];

/// One full train+select run per temperature, same seed throughout.
/// Rows come back ranked by validation accuracy (descending).
pub fn sweep_temperature(
    pools: &DocumentPools,
    encoder_config: &EncoderConfig,
    base_config: &TrainConfig,
    grid: &[f64],
    classes: usize,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("temperature grid is empty".into()));
    }
    if let Some(&bad) = grid.iter().find(|&&t| !(t > 0.0)) {
        return Err(Error::InvalidConfig(format!(
            "temperature grid contains a nonpositive value: {bad}"
        )));
    }
    let hash = format!("{:016x}", pool_hash(pools));
    let mut rows = Vec::with_capacity(grid.len());
    for &tau in grid {
        let mut config = base_config.clone();
        config.loss.tau = tau;
        let output = train(pools, encoder_config, &config, classes, None)?;
        let epoch = select_checkpoint(&output.history)?;
        let record = &output.history.records[epoch - 1];
        let checkpoint = &output.checkpoints[epoch - 1];
        let model = TrainedModel {
            encoder_config: encoder_config.clone(),
            state: checkpoint.model.clone(),
        };
        let target_accuracy = if pools.target_test.is_empty() {
            None
        } else {
            let mut accs = Vec::new();
            for pool in pools.target_test.values() {
                accs.push(accuracy(&model, pool)?);
            }
            Some(accs.iter().sum::<f64>() / accs.len() as f64)
        };
        rows.push(SweepRow {
            tau,
            selected_epoch: epoch,
            val_accuracy: record.val_accuracy,
            target_accuracy,
            seed: config.seed,
            pool_hash: hash.clone(),
        });
    }
    rows.sort_by(|a, b| {
        b.val_accuracy
            .partial_cmp(&a.val_accuracy)
            .unwrap()
            .then(a.tau.partial_cmp(&b.tau).unwrap())
    });
    Ok(rows)
}
