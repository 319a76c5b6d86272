//! Projection head and classifier.
//!
//! The projection `f` maps encoder output `h` to reduced-dimension
//! features `z` through an affine layer, a tanh, and layer normalization
//! (tanh first by default; the order is switchable for ablations). The
//! classifier `g` is a single fully connected layer producing logits;
//! softmax lives in the loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::rng::SplitMix64;

/// Default reduced feature dimension.
pub const DEFAULT_PROJECTION_DIM: usize = 256;

const LN_EPS: f64 = 1e-5;

/// Order of the nonlinearity and the normalization inside `f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionOrder {
    TanhThenLayerNorm,
    LayerNormThenTanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionParams {
    /// Dz x H weight.
    pub w: Mat,
    /// Dz bias.
    pub b: Vec<f64>,
    pub ln_gain: Vec<f64>,
    pub ln_bias: Vec<f64>,
    pub order: ProjectionOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    /// C x Dz weight.
    pub v: Mat,
    /// C bias.
    pub c: Vec<f64>,
}

impl ProjectionParams {
    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.rows()
    }
}

impl ClassifierParams {
    pub fn classes(&self) -> usize {
        self.v.rows()
    }
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub h: Mat,
    /// Affine output W h + b.
    pub pre_act: Mat,
    /// Output of the tanh, wherever it sits in the pipeline.
    pub post_tanh: Mat,
    /// Per-row mean of the layer-norm input.
    pub ln_mean: Vec<f64>,
    /// Per-row variance of the layer-norm input.
    pub ln_var: Vec<f64>,
    /// Normalized, pre-affine layer-norm values.
    pub ln_xhat: Mat,
    pub z: Mat,
    pub logits: Mat,
}

/// Gradients for one training step.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub dw: Mat,
    pub db: Vec<f64>,
    pub dln_gain: Vec<f64>,
    pub dln_bias: Vec<f64>,
    pub dv: Mat,
    pub dc: Vec<f64>,
    pub dh: Mat,
}

/// Uniform `±1/sqrt(fan_in)` weights, zero biases, identity layer norm.
pub fn init_params(
    seed: u64,
    input_dim: usize,
    proj_dim: usize,
    classes: usize,
) -> Result<(ProjectionParams, ClassifierParams)> {
    if input_dim == 0 || proj_dim == 0 || classes == 0 {
        return Err(Error::InvalidConfig(format!(
            "init_params requires positive dimensions, got H={input_dim} Dz={proj_dim} C={classes}"
        )));
    }
    let mut rng = SplitMix64::new(seed);
    let wb = 1.0 / (input_dim as f64).sqrt();
    let mut w = Mat::zeros(proj_dim, input_dim);
    for v in w.data_mut() {
        *v = rng.uniform(-wb, wb);
    }
    let vb = 1.0 / (proj_dim as f64).sqrt();
    let mut v = Mat::zeros(classes, proj_dim);
    for x in v.data_mut() {
        *x = rng.uniform(-vb, vb);
    }
    Ok((
        ProjectionParams {
            w,
            b: vec![0.0; proj_dim],
            ln_gain: vec![1.0; proj_dim],
            ln_bias: vec![0.0; proj_dim],
            order: ProjectionOrder::TanhThenLayerNorm,
        },
        ClassifierParams {
            v,
            c: vec![0.0; classes],
        },
    ))
}

fn layer_norm_rows(input: &Mat) -> (Mat, Vec<f64>, Vec<f64>) {
    let n = input.rows();
    let d = input.cols();
    let mut xhat = Mat::zeros(n, d);
    let mut means = Vec::with_capacity(n);
    let mut vars = Vec::with_capacity(n);
    for i in 0..n {
        let row = input.row(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv_std = 1.0 / (var + LN_EPS).sqrt();
        let out = xhat.row_mut(i);
        for (o, &v) in out.iter_mut().zip(row) {
            *o = (v - mean) * inv_std;
        }
        means.push(mean);
        vars.push(var);
    }
    (xhat, means, vars)
}

/// Forward through the projection head, returning `z` and the trace
/// fragments (without logits; `classify` completes the trace).
pub fn project(h: &Mat, params: &ProjectionParams) -> Result<ForwardTrace> {
    if h.cols() != params.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "project: input has {} columns, projection expects {}",
            h.cols(),
            params.input_dim()
        )));
    }
    let n = h.rows();
    let dz = params.output_dim();
    let mut pre = h.matmul_transpose_b(&params.w);
    for i in 0..n {
        let row = pre.row_mut(i);
        for (v, b) in row.iter_mut().zip(&params.b) {
            *v += b;
        }
    }

    match params.order {
        ProjectionOrder::TanhThenLayerNorm => {
            let mut act = pre.clone();
            for v in act.data_mut() {
                *v = v.tanh();
            }
            let (xhat, means, vars) = layer_norm_rows(&act);
            let mut z = Mat::zeros(n, dz);
            for i in 0..n {
                let zr = z.row_mut(i);
                let xr = xhat.row(i);
                for j in 0..dz {
                    zr[j] = params.ln_gain[j] * xr[j] + params.ln_bias[j];
                }
            }
            Ok(ForwardTrace {
                h: h.clone(),
                pre_act: pre,
                post_tanh: act,
                ln_mean: means,
                ln_var: vars,
                ln_xhat: xhat,
                z,
                logits: Mat::zeros(0, 0),
            })
        }
        ProjectionOrder::LayerNormThenTanh => {
            let (xhat, means, vars) = layer_norm_rows(&pre);
            let mut z = Mat::zeros(n, dz);
            for i in 0..n {
                let zr = z.row_mut(i);
                let xr = xhat.row(i);
                for j in 0..dz {
                    zr[j] = (params.ln_gain[j] * xr[j] + params.ln_bias[j]).tanh();
                }
            }
            Ok(ForwardTrace {
                h: h.clone(),
                pre_act: pre,
                post_tanh: z.clone(),
                ln_mean: means,
                ln_var: vars,
                ln_xhat: xhat,
                z,
                logits: Mat::zeros(0, 0),
            })
        }
    }
}

/// logits = V z + c.
pub fn classify(z: &Mat, params: &ClassifierParams) -> Result<Mat> {
    if z.cols() != params.v.cols() {
        return Err(Error::ShapeMismatch(format!(
            "classify: z has {} columns, classifier expects {}",
            z.cols(),
            params.v.cols()
        )));
    }
    let mut logits = z.matmul_transpose_b(&params.v);
    for i in 0..logits.rows() {
        let row = logits.row_mut(i);
        for (v, c) in row.iter_mut().zip(&params.c) {
            *v += c;
        }
    }
    Ok(logits)
}

/// Forward through projection and classifier, producing a complete trace.
pub fn forward(h: &Mat, proj: &ProjectionParams, clf: &ClassifierParams) -> Result<ForwardTrace> {
    let mut trace = project(h, proj)?;
    trace.logits = classify(&trace.z, clf)?;
    Ok(trace)
}

fn layer_norm_backward(
    dxhat: &Mat,
    xhat: &Mat,
    vars: &[f64],
) -> Mat {
    let n = dxhat.rows();
    let d = dxhat.cols();
    let mut out = Mat::zeros(n, d);
    for i in 0..n {
        let inv_std = 1.0 / (vars[i] + LN_EPS).sqrt();
        let dx = dxhat.row(i);
        let xh = xhat.row(i);
        let mean_dx = dx.iter().sum::<f64>() / d as f64;
        let mean_dx_xhat = dx.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        let orow = out.row_mut(i);
        for j in 0..d {
            orow[j] = inv_std * (dx[j] - mean_dx - xh[j] * mean_dx_xhat);
        }
    }
    out
}

/// Exact gradients through classifier, layer norm, tanh, and affine.
///
/// The total upstream gradient on `z` is `V^T dL_dlogits + dL_dz_extra`;
/// the contrastive branch enters through `dL_dz_extra`.
pub fn model_backward(
    trace: &ForwardTrace,
    proj: &ProjectionParams,
    clf: &ClassifierParams,
    dlogits: &Mat,
    dz_extra: &Mat,
) -> Result<ModelGrads> {
    let n = trace.z.rows();
    let dz_dim = trace.z.cols();
    let classes = clf.classes();
    if dlogits.rows() != n || dlogits.cols() != classes {
        return Err(Error::ShapeMismatch(format!(
            "model_backward: dlogits is {}x{}, expected {}x{}",
            dlogits.rows(),
            dlogits.cols(),
            n,
            classes
        )));
    }
    if dz_extra.rows() != n || dz_extra.cols() != dz_dim {
        return Err(Error::ShapeMismatch(format!(
            "model_backward: dz_extra is {}x{}, expected {}x{}",
            dz_extra.rows(),
            dz_extra.cols(),
            n,
            dz_dim
        )));
    }

    // Classifier: logits = z V^T + c.
    let dv = dlogits.transpose_matmul(&trace.z);
    let mut dc = vec![0.0; classes];
    for i in 0..n {
        for (acc, &g) in dc.iter_mut().zip(dlogits.row(i)) {
            *acc += g;
        }
    }
    let mut dz_total = dlogits.matmul(&clf.v);
    dz_total.add_assign(dz_extra);

    let mut dln_gain = vec![0.0; dz_dim];
    let mut dln_bias = vec![0.0; dz_dim];

    let dpre = match proj.order {
        ProjectionOrder::TanhThenLayerNorm => {
            // z = gain * xhat + bias, xhat = LN(tanh(pre)).
            let mut dxhat = Mat::zeros(n, dz_dim);
            for i in 0..n {
                let dz_row = dz_total.row(i);
                let xh = trace.ln_xhat.row(i);
                for j in 0..dz_dim {
                    dln_gain[j] += dz_row[j] * xh[j];
                    dln_bias[j] += dz_row[j];
                }
                let dxr = dxhat.row_mut(i);
                for j in 0..dz_dim {
                    dxr[j] = dz_row[j] * proj.ln_gain[j];
                }
            }
            let mut da = layer_norm_backward(&dxhat, &trace.ln_xhat, &trace.ln_var);
            for i in 0..n {
                let a = trace.post_tanh.row(i).to_vec();
                let dar = da.row_mut(i);
                for j in 0..dz_dim {
                    dar[j] *= 1.0 - a[j] * a[j];
                }
            }
            da
        }
        ProjectionOrder::LayerNormThenTanh => {
            // z = tanh(gain * xhat + bias), xhat = LN(pre).
            let mut dxhat = Mat::zeros(n, dz_dim);
            for i in 0..n {
                let dz_row = dz_total.row(i);
                let zr = trace.z.row(i);
                let xh = trace.ln_xhat.row(i);
                for j in 0..dz_dim {
                    let du = dz_row[j] * (1.0 - zr[j] * zr[j]);
                    dln_gain[j] += du * xh[j];
                    dln_bias[j] += du;
                    dxhat.row_mut(i)[j] = du * proj.ln_gain[j];
                }
            }
            layer_norm_backward(&dxhat, &trace.ln_xhat, &trace.ln_var)
        }
    };

    // pre = h W^T + b.
    let dw = dpre.transpose_matmul(&trace.h);
    let mut db = vec![0.0; dz_dim];
    for i in 0..n {
        for (acc, &g) in db.iter_mut().zip(dpre.row(i)) {
            *acc += g;
        }
    }
    let dh = dpre.matmul(&proj.w);

    Ok(ModelGrads {
        dw,
        db,
        dln_gain,
        dln_bias,
        dv,
        dc,
        dh,
    })
}
