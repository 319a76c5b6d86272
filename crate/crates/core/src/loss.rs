//! Training objectives: cross-entropy, supervised contrastive loss, and
//! their combination, each with exact analytic gradients.
//!
//! The supervised contrastive term treats every batch element as an
//! anchor. Positives `P(i)` are the other same-class elements, candidates
//! `A(i)` are all other elements, and each anchor contributes
//! `-(1/|P(i)|) sum_p log( exp(s_ip/tau) / sum_a exp(s_ia/tau) )`
//! where `s` is the (optionally L2-normalized) dot-product similarity.
//! Anchors without positives contribute zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::{dot, Mat};

/// Guard added to row norms before dividing, so zero rows stay total.
const NORM_EPS: f64 = 1e-12;

/// How the per-anchor sum over positives is scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerScale {
    /// `1/|P(i)|` — the canonical supervised-contrastive form.
    Positives,
    /// `1/N` — variant scaling by batch size, kept for comparison runs.
    BatchSize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossConfig {
    /// Temperature dividing the similarities.
    pub tau: f64,
    /// Weight on the contrastive term; 1.0 recovers the plain sum of both losses.
    pub scl_weight: f64,
    /// L2-normalize feature rows before the dot products.
    pub normalize_z: bool,
    pub inner_scale: InnerScale,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.2,
            scl_weight: 1.0,
            normalize_z: true,
            inner_scale: InnerScale::Positives,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "loss.tau must be positive, got {}",
                self.tau
            )));
        }
        if self.scl_weight < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "loss.scl_weight must be nonnegative, got {}",
                self.scl_weight
            )));
        }
        Ok(())
    }
}

/// Mean negative log-softmax of the true class, with the gradient
/// `(softmax - onehot)/N`.
pub fn cross_entropy(logits: &Mat, labels: &[usize]) -> Result<(f64, Mat)> {
    let n = logits.rows();
    let c = logits.cols();
    if n == 0 {
        return Err(Error::InvalidConfig(
            "cross_entropy requires at least one row".into(),
        ));
    }
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "cross_entropy: {} logits rows vs {} labels",
            n,
            labels.len()
        )));
    }
    let mut grad = Mat::zeros(n, c);
    let mut loss = 0.0;
    for i in 0..n {
        let y = labels[i];
        if y >= c {
            return Err(Error::InvalidConfig(format!(
                "label {y} out of range for {c} classes"
            )));
        }
        let row = logits.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for &v in row {
            denom += (v - m).exp();
        }
        let lse = m + denom.ln();
        loss += lse - row[y];
        let grow = grad.row_mut(i);
        for (j, &v) in row.iter().enumerate() {
            grow[j] = (v - m).exp() / denom / n as f64;
        }
        grow[y] -= 1.0 / n as f64;
    }
    Ok((loss / n as f64, grad))
}

/// Row-normalized copy of `z` plus the raw norms needed for the backward
/// pass. `rho = norm + NORM_EPS` is the actual divisor.
fn normalize_rows(z: &Mat) -> (Mat, Vec<f64>, Vec<f64>) {
    let n = z.rows();
    let mut out = z.clone();
    let mut norms = Vec::with_capacity(n);
    let mut rhos = Vec::with_capacity(n);
    for i in 0..n {
        let norm = crate::mat::norm2(z.row(i));
        let rho = norm + NORM_EPS;
        for v in out.row_mut(i) {
            *v /= rho;
        }
        norms.push(norm);
        rhos.push(rho);
    }
    (out, norms, rhos)
}

/// Supervised contrastive loss over a batch of feature rows.
///
/// Returns the total over anchors and the exact gradient with respect to
/// the input rows (including the normalization chain when enabled).
pub fn supervised_contrastive(
    z: &Mat,
    labels: &[usize],
    config: &LossConfig,
) -> Result<(f64, Mat)> {
    config.validate()?;
    let n = z.rows();
    let d = z.cols();
    if n < 2 {
        return Err(Error::InvalidConfig(
            "supervised contrastive loss needs a batch of at least 2".into(),
        ));
    }
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "supervised_contrastive: {} feature rows vs {} labels",
            n,
            labels.len()
        )));
    }
    let tau = config.tau;
    let (zhat, norms, rhos) = if config.normalize_z {
        normalize_rows(z)
    } else {
        (z.clone(), vec![], vec![])
    };

    // Pairwise similarities s_ij = zhat_i . zhat_j.
    let sim = zhat.matmul_transpose_b(&zhat);

    let mut loss = 0.0;
    // g[i][j] = dL/ds_ij from anchor i; diagonal stays zero.
    let mut g = Mat::zeros(n, n);
    for i in 0..n {
        let positives: Vec<usize> = (0..n)
            .filter(|&j| j != i && labels[j] == labels[i])
            .collect();
        if positives.is_empty() {
            continue;
        }
        let p_count = positives.len() as f64;
        let w = match config.inner_scale {
            InnerScale::Positives => 1.0 / p_count,
            InnerScale::BatchSize => 1.0 / n as f64,
        };

        // log-sum-exp over candidates A(i) = all j != i, max-subtracted.
        let mut m = f64::NEG_INFINITY;
        for j in 0..n {
            if j != i {
                m = m.max(sim.get(i, j) / tau);
            }
        }
        let mut denom = 0.0;
        for j in 0..n {
            if j != i {
                denom += (sim.get(i, j) / tau - m).exp();
            }
        }
        let lse = m + denom.ln();

        for &p in &positives {
            loss += w * (lse - sim.get(i, p) / tau);
        }
        for j in 0..n {
            if j == i {
                continue;
            }
            let q = (sim.get(i, j) / tau - m).exp() / denom;
            let mut gij = w * p_count * q / tau;
            if labels[j] == labels[i] {
                gij -= w / tau;
            }
            g.set(i, j, gij);
        }
    }

    // dL/dzhat_r = sum_j G_rj zhat_j + sum_i G_ir zhat_i.
    let mut coeff = g.clone();
    let gt = g.transpose();
    coeff.add_assign(&gt);
    let mut dz = coeff.matmul(&zhat);

    if config.normalize_z {
        // Back through zhat = z / (norm + eps).
        for i in 0..n {
            let rho = rhos[i];
            let norm = norms[i];
            let gdotz = dot(dz.row(i), z.row(i));
            let zrow: Vec<f64> = z.row(i).to_vec();
            let drow = dz.row_mut(i);
            for k in 0..d {
                let correction = if norm > 0.0 {
                    zrow[k] * gdotz / (rho * rho * norm)
                } else {
                    0.0
                };
                drow[k] = drow[k] / rho - correction;
            }
        }
    }
    Ok((loss, dz))
}

/// Literal double-loop evaluation of the contrastive loss. Reference
/// implementation for tests; no shared exponent tables, no vectorization.
pub fn supervised_contrastive_oracle(
    z: &Mat,
    labels: &[usize],
    config: &LossConfig,
) -> Result<f64> {
    config.validate()?;
    let n = z.rows();
    if n < 2 {
        return Err(Error::InvalidConfig(
            "supervised contrastive loss needs a batch of at least 2".into(),
        ));
    }
    let (zhat, _, _) = if config.normalize_z {
        normalize_rows(z)
    } else {
        (z.clone(), vec![], vec![])
    };
    let mut loss = 0.0;
    for i in 0..n {
        let positives: Vec<usize> = (0..n)
            .filter(|&j| j != i && labels[j] == labels[i])
            .collect();
        if positives.is_empty() {
            continue;
        }
        let w = match config.inner_scale {
            InnerScale::Positives => 1.0 / positives.len() as f64,
            InnerScale::BatchSize => 1.0 / n as f64,
        };
        for &p in &positives {
            let num = (dot(zhat.row(i), zhat.row(p)) / config.tau).exp();
            let mut den = 0.0;
            for a in 0..n {
                if a != i {
                    den += (dot(zhat.row(i), zhat.row(a)) / config.tau).exp();
                }
            }
            loss += -w * (num / den).ln();
        }
    }
    Ok(loss)
}

/// Combined objective `L = L_CE + scl_weight * L_SCL` with both gradients.
///
/// With `scl_weight = 0` the contrastive term is skipped entirely, so
/// singleton batches remain valid for cross-entropy-only training.
pub fn combined_loss(
    logits: &Mat,
    z: &Mat,
    labels: &[usize],
    config: &LossConfig,
) -> Result<CombinedLoss> {
    let (ce, dlogits) = cross_entropy(logits, labels)?;
    if config.scl_weight == 0.0 {
        let dz = Mat::zeros(z.rows(), z.cols());
        return Ok(CombinedLoss {
            total: ce,
            ce,
            scl: 0.0,
            dlogits,
            dz,
        });
    }
    let (scl, mut dz) = supervised_contrastive(z, labels, config)?;
    dz.scale(config.scl_weight);
    Ok(CombinedLoss {
        total: ce + config.scl_weight * scl,
        ce,
        scl,
        dlogits,
        dz,
    })
}

#[derive(Debug, Clone)]
pub struct CombinedLoss {
    pub total: f64,
    pub ce: f64,
    pub scl: f64,
    pub dlogits: Mat,
    pub dz: Mat,
}
