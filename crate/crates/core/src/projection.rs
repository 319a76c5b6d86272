//! 2-D projection of learned features for domain-divergence analysis:
//! exact t-SNE with a PCA fallback, plus scatter export.
//!
//! The t-SNE here is the exact O(n^2) algorithm: per-point Gaussian
//! bandwidths found by binary search on the entropy, symmetrized
//! affinities, early exaggeration, and momentum gradient descent on the
//! Student-t embedding. Desk-scale inputs (a few thousand points) keep
//! this tractable and bitwise deterministic.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::rng::SplitMix64;
use crate::trainer::TrainedModel;

/// Iterations of early exaggeration and of the low-momentum phase.
const EXAGGERATION_ITERS: usize = 250;
const MOMENTUM_EARLY: f64 = 0.5;
const MOMENTUM_LATE: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TsneInit {
    Pca,
    Random,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    /// Factor applied to the affinities for the first 250 iterations.
    pub early_exaggeration: f64,
    pub seed: u64,
    pub init: TsneInit,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            seed: 0,
            init: TsneInit::Pca,
        }
    }
}

impl TsneConfig {
    pub fn validate(&self, points: usize) -> Result<()> {
        if !(self.perplexity > 0.0) {
            return Err(Error::InvalidConfig("tsne.perplexity must be positive".into()));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("tsne.iterations must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("tsne.learning_rate must be positive".into()));
        }
        if self.early_exaggeration < 1.0 {
            return Err(Error::InvalidConfig(
                "tsne.early_exaggeration must be at least 1".into(),
            ));
        }
        if points < 4 {
            return Err(Error::InvalidConfig(format!(
                "t-SNE needs at least 4 points, got {points}"
            )));
        }
        if self.perplexity >= (points as f64 - 1.0) / 3.0 {
            return Err(Error::InvalidConfig(format!(
                "perplexity {} infeasible for {} points (needs < (n-1)/3)",
                self.perplexity, points
            )));
        }
        Ok(())
    }
}

/// 2-D embedding with per-point metadata.
#[derive(Debug, Clone)]
pub struct Embedding2D {
    /// n x 2 coordinates, centered on the origin.
    pub coords: Mat,
    pub labels: Vec<usize>,
    pub domains: Vec<usize>,
    /// Set when the input was degenerate (all points identical) and the
    /// output is all zeros.
    pub degenerate: bool,
    /// (iteration, KL divergence) samples from the descent.
    pub kl_history: Vec<(usize, f64)>,
}

impl Embedding2D {
    pub fn with_metadata(mut self, labels: Vec<usize>, domains: Vec<usize>) -> Self {
        self.labels = labels;
        self.domains = domains;
        self
    }
}

/// Features and metadata sampled for projection.
#[derive(Debug, Clone)]
pub struct ProjectionSample {
    pub features: Mat,
    pub labels: Vec<usize>,
    pub domains: Vec<usize>,
}

/// Seeded uniform sample of `per_domain` documents from every domain,
/// embedded to z by the trained model.
pub fn sample_for_projection(
    dataset: &Dataset,
    model: &TrainedModel,
    per_domain: usize,
    seed: u64,
) -> Result<ProjectionSample> {
    let mut rng = SplitMix64::new(seed);
    let mut chosen = Vec::new();
    for domain in 0..dataset.domain_count() {
        let mut indices = dataset.domain_doc_indices(domain);
        if indices.len() < per_domain {
            return Err(Error::InsufficientDocuments {
                domain: dataset.domain_names[domain].clone(),
                requested: per_domain,
                available: indices.len(),
            });
        }
        rng.shuffle(&mut indices);
        chosen.extend(indices.into_iter().take(per_domain));
    }
    let docs: Vec<_> = chosen.iter().map(|&i| dataset.documents[i].clone()).collect();
    let features = if docs.is_empty() {
        Mat::zeros(0, 0)
    } else {
        model.features(&docs)?
    };
    Ok(ProjectionSample {
        features,
        labels: docs.iter().map(|d| d.model_label).collect(),
        domains: docs.iter().map(|d| d.domain).collect(),
    })
}

fn pairwise_sq_distances(x: &Mat) -> Mat {
    let n = x.rows();
    let mut d = Mat::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut acc = 0.0;
            for (a, b) in x.row(i).iter().zip(x.row(j)) {
                let diff = a - b;
                acc += diff * diff;
            }
            d.set(i, j, acc);
            d.set(j, i, acc);
        }
    }
    d
}

/// Conditional affinities with per-row bandwidths matched to the target
/// entropy `ln(perplexity)` by binary search. Returns the row-stochastic
/// matrix and the achieved row entropies.
pub fn conditional_affinities(distances: &Mat, perplexity: f64) -> (Mat, Vec<f64>) {
    let n = distances.rows();
    let target = perplexity.ln();
    let mut p = Mat::zeros(n, n);
    let mut entropies = vec![0.0; n];
    for i in 0..n {
        let mut beta = 1.0;
        let mut beta_min = f64::NEG_INFINITY;
        let mut beta_max = f64::INFINITY;
        // Shift by the row minimum so exp never underflows to all-zero.
        let dmin = (0..n)
            .filter(|&j| j != i)
            .map(|j| distances.get(i, j))
            .fold(f64::INFINITY, f64::min);
        let mut row = vec![0.0; n];
        let mut entropy = 0.0;
        for _ in 0..200 {
            let mut sum = 0.0;
            for (j, r) in row.iter_mut().enumerate() {
                if j == i {
                    *r = 0.0;
                    continue;
                }
                *r = (-beta * (distances.get(i, j) - dmin)).exp();
                sum += *r;
            }
            entropy = 0.0;
            for (j, r) in row.iter_mut().enumerate() {
                if j == i {
                    continue;
                }
                *r /= sum;
                if *r > 0.0 {
                    entropy -= *r * r.ln();
                }
            }
            let diff = entropy - target;
            if diff.abs() < 1e-7 {
                break;
            }
            if diff > 0.0 {
                beta_min = beta;
                beta = if beta_max.is_finite() {
                    (beta + beta_max) / 2.0
                } else {
                    beta * 2.0
                };
            } else {
                beta_max = beta;
                beta = if beta_min.is_finite() {
                    (beta + beta_min) / 2.0
                } else {
                    beta / 2.0
                };
            }
        }
        entropies[i] = entropy;
        p.row_mut(i).copy_from_slice(&row);
    }
    (p, entropies)
}

/// Symmetrized joint affinities `(P + P^T) / (2n)`.
pub fn joint_affinities(conditional: &Mat) -> Mat {
    let n = conditional.rows();
    let mut p = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            p.set(
                i,
                j,
                (conditional.get(i, j) + conditional.get(j, i)) / (2.0 * n as f64),
            );
        }
    }
    p
}

fn center_rows(y: &mut Mat) {
    let n = y.rows();
    let mut mean = [0.0f64; 2];
    for i in 0..n {
        mean[0] += y.get(i, 0);
        mean[1] += y.get(i, 1);
    }
    mean[0] /= n as f64;
    mean[1] /= n as f64;
    for i in 0..n {
        y.set(i, 0, y.get(i, 0) - mean[0]);
        y.set(i, 1, y.get(i, 1) - mean[1]);
    }
}

/// Exact t-SNE embedding; deterministic per seed.
pub fn tsne_embed(x: &Mat, config: &TsneConfig) -> Result<Embedding2D> {
    let n = x.rows();
    config.validate(n)?;

    let distances = pairwise_sq_distances(x);
    let max_dist = distances.data().iter().cloned().fold(0.0, f64::max);
    if max_dist < 1e-24 {
        // All points identical: nothing to embed.
        return Ok(Embedding2D {
            coords: Mat::zeros(n, 2),
            labels: vec![],
            domains: vec![],
            degenerate: true,
            kl_history: vec![],
        });
    }

    let (conditional, _) = conditional_affinities(&distances, config.perplexity);
    let p = joint_affinities(&conditional);

    // Init: small-scale PCA scores or small random Gaussian.
    let mut y = match config.init {
        TsneInit::Random => {
            let mut rng = SplitMix64::new(config.seed);
            let mut y = Mat::zeros(n, 2);
            for v in y.data_mut() {
                *v = rng.next_gaussian() * 1e-4;
            }
            y
        }
        TsneInit::Pca => {
            let pca = pca_top2(x);
            let col0_std = {
                let mut s = 0.0;
                for i in 0..n {
                    s += pca.scores.get(i, 0) * pca.scores.get(i, 0);
                }
                (s / n as f64).sqrt()
            };
            if col0_std > 0.0 {
                pca.scores.scaled(1e-4 / col0_std)
            } else {
                let mut rng = SplitMix64::new(config.seed);
                let mut y = Mat::zeros(n, 2);
                for v in y.data_mut() {
                    *v = rng.next_gaussian() * 1e-4;
                }
                y
            }
        }
    };
    center_rows(&mut y);

    let kl_stride = if n <= 256 { 1 } else { 10 };
    let mut kl_history = Vec::new();
    let mut velocity = Mat::zeros(n, 2);
    // Per-coordinate adaptive gains, as in the reference descent: grow
    // when gradient and velocity disagree, shrink when they agree.
    let mut gains = Mat::from_vec(n, 2, vec![1.0; n * 2]);
    let mut weights = Mat::zeros(n, n);

    for iter in 0..config.iterations {
        // Student-t weights and their normalizer.
        let mut wsum = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    weights.set(i, j, 0.0);
                    continue;
                }
                let dx = y.get(i, 0) - y.get(j, 0);
                let dy = y.get(i, 1) - y.get(j, 1);
                let w = 1.0 / (1.0 + dx * dx + dy * dy);
                weights.set(i, j, w);
                wsum += w;
            }
        }

        if iter % kl_stride == 0 || iter + 1 == config.iterations {
            let mut kl = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let pij = p.get(i, j);
                    if pij > 0.0 {
                        let qij = weights.get(i, j) / wsum;
                        kl += pij * (pij / qij).ln();
                    }
                }
            }
            kl_history.push((iter, kl));
        }

        let exaggeration = if iter < EXAGGERATION_ITERS {
            config.early_exaggeration
        } else {
            1.0
        };
        let momentum = if iter < EXAGGERATION_ITERS {
            MOMENTUM_EARLY
        } else {
            MOMENTUM_LATE
        };

        for i in 0..n {
            let mut g = [0.0f64; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = weights.get(i, j);
                let q = w / wsum;
                let factor = 4.0 * (exaggeration * p.get(i, j) - q) * w;
                g[0] += factor * (y.get(i, 0) - y.get(j, 0));
                g[1] += factor * (y.get(i, 1) - y.get(j, 1));
            }
            for k in 0..2 {
                // Velocity opposing the gradient means steady descent:
                // grow the gain. Same sign means oscillation: damp it.
                let gain = if g[k] * velocity.get(i, k) < 0.0 {
                    gains.get(i, k) + 0.2
                } else {
                    gains.get(i, k) * 0.8
                }
                .max(0.01);
                gains.set(i, k, gain);
                let v = momentum * velocity.get(i, k) - config.learning_rate * gain * g[k];
                velocity.set(i, k, v);
            }
        }
        for i in 0..n {
            y.set(i, 0, y.get(i, 0) + velocity.get(i, 0));
            y.set(i, 1, y.get(i, 1) + velocity.get(i, 1));
        }
        center_rows(&mut y);
    }

    Ok(Embedding2D {
        coords: y,
        labels: vec![],
        domains: vec![],
        degenerate: false,
        kl_history,
    })
}

/// Top-2 principal components of the (centered) data.
#[derive(Debug, Clone)]
pub struct PcaResult {
    /// n x 2 projection scores.
    pub scores: Mat,
    pub eigenvalues: [f64; 2],
    /// Trace of the covariance: total variance.
    pub total_variance: f64,
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// (eigenvalues, eigenvectors as columns), unsorted.
fn jacobi_eigen(a: &Mat) -> (Vec<f64>, Mat) {
    let d = a.rows();
    let mut m = a.clone();
    let mut v = Mat::zeros(d, d);
    for i in 0..d {
        v.set(i, i, 1.0);
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..d {
            for q in (p + 1)..d {
                off += m.get(p, q) * m.get(p, q);
            }
        }
        if off < 1e-22 {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = m.get(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..d {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..d {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let eigenvalues = (0..d).map(|i| m.get(i, i)).collect();
    (eigenvalues, v)
}

/// PCA scores, eigenvalues, and total variance for the top-2 components.
pub fn pca_top2(x: &Mat) -> PcaResult {
    let n = x.rows();
    let d = x.cols();
    // Center.
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, &v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut centered = x.clone();
    for i in 0..n {
        for (v, m) in centered.row_mut(i).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    // Covariance (population).
    let mut cov = centered.transpose_matmul(&centered);
    cov.scale(1.0 / n as f64);
    let total_variance: f64 = (0..d).map(|i| cov.get(i, i)).sum();

    let (eigenvalues, vectors) = jacobi_eigen(&cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigenvalues[b].partial_cmp(&eigenvalues[a]).unwrap());

    let mut scores = Mat::zeros(n, 2);
    let mut top_vals = [0.0f64; 2];
    for c in 0..2.min(d) {
        let col = order[c];
        top_vals[c] = eigenvalues[col].max(0.0);
        let mut component: Vec<f64> = (0..d).map(|r| vectors.get(r, col)).collect();
        // Sign convention: largest-magnitude loading positive.
        let mut max_idx = 0;
        for (i, v) in component.iter().enumerate() {
            if v.abs() > component[max_idx].abs() {
                max_idx = i;
            }
        }
        if component[max_idx] < 0.0 {
            for v in &mut component {
                *v = -*v;
            }
        }
        for i in 0..n {
            let s: f64 = centered.row(i).iter().zip(&component).map(|(a, b)| a * b).sum();
            scores.set(i, c, s);
        }
    }
    PcaResult {
        scores,
        eigenvalues: top_vals,
        total_variance,
    }
}

/// PCA projection as an embedding. Degenerate inputs (zero variance)
/// produce all-zero coordinates.
pub fn pca_embed(x: &Mat) -> Result<Embedding2D> {
    if x.rows() < 2 {
        return Err(Error::InvalidConfig("pca needs at least 2 points".into()));
    }
    let pca = pca_top2(x);
    let degenerate = pca.total_variance < 1e-24;
    Ok(Embedding2D {
        coords: if degenerate {
            Mat::zeros(x.rows(), 2)
        } else {
            pca.scores
        },
        labels: vec![],
        domains: vec![],
        degenerate,
        kl_history: vec![],
    })
}

/// Mean silhouette coefficient of the labels in a 2-D embedding,
/// used as the run-and-measure quality check for the projections.
pub fn silhouette_2d(coords: &Mat, labels: &[usize]) -> f64 {
    let n = coords.rows();
    assert_eq!(labels.len(), n);
    let dist = |i: usize, j: usize| -> f64 {
        let dx = coords.get(i, 0) - coords.get(j, 0);
        let dy = coords.get(i, 1) - coords.get(j, 1);
        (dx * dx + dy * dy).sqrt()
    };
    let classes: std::collections::BTreeSet<usize> = labels.iter().cloned().collect();
    let mut total = 0.0;
    for i in 0..n {
        let mut mean_by_class: std::collections::BTreeMap<usize, (f64, usize)> =
            classes.iter().map(|&c| (c, (0.0, 0))).collect();
        for j in 0..n {
            if i == j {
                continue;
            }
            let entry = mean_by_class.get_mut(&labels[j]).unwrap();
            entry.0 += dist(i, j);
            entry.1 += 1;
        }
        let own = mean_by_class[&labels[i]];
        if own.1 == 0 {
            continue; // singleton cluster contributes 0
        }
        let a = own.0 / own.1 as f64;
        let b = mean_by_class
            .iter()
            .filter(|(&c, &(_, count))| c != labels[i] && count > 0)
            .map(|(_, &(sum, count))| sum / count as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() {
            total += (b - a) / a.max(b);
        }
    }
    total / n as f64
}

const SVG_COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

fn svg_marker(shape: usize, x: f64, y: f64, color: &str) -> String {
    match shape % 4 {
        0 => format!(r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#),
        1 => format!(
            r#"<rect x="{:.2}" y="{:.2}" width="6" height="6" fill="{color}"/>"#,
            x - 3.0,
            y - 3.0
        ),
        2 => format!(
            r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="{color}"/>"#,
            x,
            y - 4.0,
            x - 3.5,
            y + 3.0,
            x + 3.5,
            y + 3.0
        ),
        _ => format!(
            r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="{color}"/>"#,
            x,
            y - 4.0,
            x + 4.0,
            y,
            x,
            y + 4.0,
            x - 4.0,
            y
        ),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScatterFormat {
    Svg,
    Csv,
}

/// Write the embedding as an SVG scatter (color by class, marker shape
/// by domain, with a legend) or as CSV rows `x,y,model_label,domain`.
pub fn export_scatter(
    emb: &Embedding2D,
    class_names: &[String],
    domain_names: &[String],
    path: &Path,
    format: ScatterFormat,
) -> Result<()> {
    let n = emb.coords.rows();
    if n == 0 {
        return Err(Error::InvalidConfig("cannot export an empty embedding".into()));
    }
    if emb.labels.len() != n || emb.domains.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "embedding has {n} points but {} labels / {} domains",
            emb.labels.len(),
            emb.domains.len()
        )));
    }
    match format {
        ScatterFormat::Csv => {
            let mut out = String::from("x,y,model_label,domain\n");
            for i in 0..n {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    emb.coords.get(i, 0),
                    emb.coords.get(i, 1),
                    class_names[emb.labels[i]],
                    domain_names[emb.domains[i]],
                ));
            }
            std::fs::write(path, out)?;
        }
        ScatterFormat::Svg => {
            let (w, h, margin) = (640.0, 480.0, 40.0);
            let (mut xmin, mut xmax, mut ymin, mut ymax) =
                (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
            for i in 0..n {
                xmin = xmin.min(emb.coords.get(i, 0));
                xmax = xmax.max(emb.coords.get(i, 0));
                ymin = ymin.min(emb.coords.get(i, 1));
                ymax = ymax.max(emb.coords.get(i, 1));
            }
            let xspan = (xmax - xmin).max(1e-12);
            let yspan = (ymax - ymin).max(1e-12);
            let sx = |x: f64| margin + (x - xmin) / xspan * (w - 2.0 * margin);
            let sy = |y: f64| h - margin - (y - ymin) / yspan * (h - 2.0 * margin);
            let mut svg = format!(
                r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
            );
            svg.push('\n');
            for i in 0..n {
                let color = SVG_COLORS[emb.labels[i] % SVG_COLORS.len()];
                svg.push_str(&svg_marker(
                    emb.domains[i],
                    sx(emb.coords.get(i, 0)),
                    sy(emb.coords.get(i, 1)),
                    color,
                ));
                svg.push('\n');
            }
            // Legend: one color entry per class, one shape entry per domain.
            let mut ly = 20.0;
            for (c, name) in class_names.iter().enumerate() {
                let color = SVG_COLORS[c % SVG_COLORS.len()];
                svg.push_str(&format!(
                    r#"<g class="legend-class">{}<text x="{:.0}" y="{:.0}" font-size="12">{name}</text></g>"#,
                    svg_marker(0, w - 130.0, ly - 4.0, color),
                    w - 120.0,
                    ly
                ));
                svg.push('\n');
                ly += 16.0;
            }
            for (d, name) in domain_names.iter().enumerate() {
                svg.push_str(&format!(
                    r#"<g class="legend-domain">{}<text x="{:.0}" y="{:.0}" font-size="12">{name}</text></g>"#,
                    svg_marker(d, w - 130.0, ly - 4.0, "#555555"),
                    w - 120.0,
                    ly
                ));
                svg.push('\n');
                ly += 16.0;
            }
            svg.push_str("</svg>\n");
            std::fs::write(path, svg)?;
        }
    }
    Ok(())
}
