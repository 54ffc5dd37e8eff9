//! The contrastive network.
//!
//! Class semantics go through a two-layer MLP `g` (Leaky ReLU hidden layer,
//! linear output) into feature space, are fused with each image feature by an
//! element-wise product, and the fusion is scored by a second two-layer MLP
//! `h` whose scalar output passes through a sigmoid. Every image in a batch is
//! contrasted against every class, giving a dense `B × C` grid.

use std::collections::hash_map::DefaultHasher;
use std::fs;
use std::hash::{Hash, Hasher};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::io::{decode_payload, read_u64};
use crate::error::{Error, Result};
use crate::linalg::{
    leaky_relu_grad_scalar, leaky_relu_scalar, matmul, matmul_nt, matmul_tn, sigmoid_scalar, Matrix,
};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TCNP";

/// The eight trainable tensors. Biases are stored as `1 × n` matrices.
/// The same layout carries gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensors {
    pub g_w1: Matrix,
    pub g_b1: Matrix,
    pub g_w2: Matrix,
    pub g_b2: Matrix,
    pub h_w1: Matrix,
    pub h_b1: Matrix,
    pub h_w2: Matrix,
    pub h_b2: Matrix,
}

impl ParamTensors {
    pub const NAMES: [&'static str; 8] = [
        "g_w1", "g_b1", "g_w2", "g_b2", "h_w1", "h_b1", "h_w2", "h_b2",
    ];

    pub fn iter(&self) -> [&Matrix; 8] {
        [
            &self.g_w1, &self.g_b1, &self.g_w2, &self.g_b2, &self.h_w1, &self.h_b1, &self.h_w2,
            &self.h_b2,
        ]
    }

    pub fn iter_mut(&mut self) -> [&mut Matrix; 8] {
        [
            &mut self.g_w1,
            &mut self.g_b1,
            &mut self.g_w2,
            &mut self.g_b2,
            &mut self.h_w1,
            &mut self.h_b1,
            &mut self.h_w2,
            &mut self.h_b2,
        ]
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        Self {
            g_w1: z(&self.g_w1),
            g_b1: z(&self.g_b1),
            g_w2: z(&self.g_w2),
            g_b2: z(&self.g_b2),
            h_w1: z(&self.h_w1),
            h_b1: z(&self.h_b1),
            h_w2: z(&self.h_w2),
            h_b2: z(&self.h_b2),
        }
    }

    pub fn shapes(&self) -> [(usize, usize); 8] {
        self.iter().map(|m| m.shape())
    }

    pub fn len(&self) -> usize {
        self.iter().iter().map(|m| m.data().len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.iter().iter().all(|m| m.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().iter().fold(0.0, |acc, m| acc.max(m.max_abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcnParams {
    pub tensors: ParamTensors,
    pub leaky_slope: f64,
    /// Scale every feature row to unit L2 norm before fusion.
    pub normalize_features: bool,
}

impl TcnParams {
    pub fn semantic_dim(&self) -> usize {
        self.tensors.g_w1.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.tensors.g_w2.cols()
    }

    pub fn hidden_g(&self) -> usize {
        self.tensors.g_w1.cols()
    }

    pub fn hidden_h(&self) -> usize {
        self.tensors.h_w1.cols()
    }

    /// Checks internal shape consistency and finiteness.
    pub fn validate(&self) -> Result<()> {
        let t = &self.tensors;
        let (da, hg, df, hh) = (self.semantic_dim(), self.hidden_g(), self.feature_dim(), self.hidden_h());
        let expected = [
            (da, hg),
            (1, hg),
            (hg, df),
            (1, df),
            (df, hh),
            (1, hh),
            (hh, 1),
            (1, 1),
        ];
        for ((name, got), want) in ParamTensors::NAMES.iter().zip(t.shapes()).zip(expected) {
            if got != want {
                return Err(Error::Shape {
                    op: name,
                    left: got,
                    right: want,
                });
            }
        }
        if !t.is_finite() || !self.leaky_slope.is_finite() {
            return Err(Error::NonFinite("TcnParams"));
        }
        Ok(())
    }

    fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for m in self.tensors.iter() {
            m.shape().hash(&mut h);
            for v in m.data() {
                v.to_bits().hash(&mut h);
            }
        }
        self.leaky_slope.to_bits().hash(&mut h);
        self.normalize_features.hash(&mut h);
        h.finish()
    }
}

/// Uniform `±√(6/fan_in)` weights and zero biases, deterministic in `seed`.
pub fn init_params(
    semantic_dim: usize,
    feature_dim: usize,
    hidden_g: usize,
    hidden_h: usize,
    leaky_slope: f64,
    seed: u64,
) -> Result<TcnParams> {
    if semantic_dim == 0 || feature_dim == 0 || hidden_g == 0 || hidden_h == 0 {
        return Err(Error::Invalid("network dimensions must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |rows: usize, cols: usize| {
        let bound = (6.0 / rows as f64).sqrt();
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
    };
    let tensors = ParamTensors {
        g_w1: uniform(semantic_dim, hidden_g),
        g_b1: Matrix::zeros(1, hidden_g),
        g_w2: uniform(hidden_g, feature_dim),
        g_b2: Matrix::zeros(1, feature_dim),
        h_w1: uniform(feature_dim, hidden_h),
        h_b1: Matrix::zeros(1, hidden_h),
        h_w2: uniform(hidden_h, 1),
        h_b2: Matrix::zeros(1, 1),
    };
    Ok(TcnParams {
        tensors,
        leaky_slope,
        normalize_features: false,
    })
}

fn dense_leaky(x: &Matrix, w: &Matrix, b: &Matrix, slope: f64) -> Result<(Matrix, Matrix)> {
    let mut pre = matmul(x, w)?;
    pre.add_row_vector(b.data());
    let act = pre.map(|v| leaky_relu_scalar(v, slope));
    Ok((pre, act))
}

/// The semantic branch: `leaky(a·W1 + b1)·W2 + b2`.
pub fn encode_semantics(params: &TcnParams, semantics: &Matrix) -> Result<Matrix> {
    Ok(encode_semantics_traced(params, semantics)?.2)
}

fn encode_semantics_traced(params: &TcnParams, semantics: &Matrix) -> Result<(Matrix, Matrix, Matrix)> {
    let t = &params.tensors;
    if semantics.cols() != t.g_w1.rows() {
        return Err(Error::Shape {
            op: "encode_semantics",
            left: semantics.shape(),
            right: t.g_w1.shape(),
        });
    }
    let (pre, hidden) = dense_leaky(semantics, &t.g_w1, &t.g_b1, params.leaky_slope)?;
    let mut out = matmul(&hidden, &t.g_w2)?;
    out.add_row_vector(t.g_b2.data());
    Ok((pre, hidden, out))
}

fn prepare_features(params: &TcnParams, features: &Matrix) -> Result<Matrix> {
    if features.cols() != params.feature_dim() {
        return Err(Error::Shape {
            op: "contrast_forward",
            left: features.shape(),
            right: params.tensors.g_w2.shape(),
        });
    }
    if !params.normalize_features {
        return Ok(features.clone());
    }
    let mut f = features.clone();
    for i in 0..f.rows() {
        let row = f.row_mut(i);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    Ok(f)
}

/// Fusions `z_ij = f_i ⊗ g_j`, row `i·C + j`.
fn fuse(features: &Matrix, encoded: &Matrix) -> Result<Matrix> {
    let (b, c, d) = (features.rows(), encoded.rows(), features.cols());
    let mut data = Vec::with_capacity(b * c * d);
    for i in 0..b {
        let f = features.row(i);
        for j in 0..c {
            data.extend(f.iter().zip(encoded.row(j)).map(|(x, y)| x * y));
        }
    }
    Matrix::new(b * c, d, data)
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub features: Matrix,
    pub semantics: Matrix,
    pub g_pre: Matrix,
    pub g_hidden: Matrix,
    pub g_out: Matrix,
    /// `(B·C) × d_f`, row `i·C + j`.
    pub fusion: Matrix,
    pub h_pre: Matrix,
    pub h_hidden: Matrix,
    /// Pre-sigmoid scores, `B × C`.
    pub logits: Matrix,
    params_fingerprint: u64,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.logits.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.logits.cols()
    }

    /// Contrastive values `v_ij = σ(logit_ij)`.
    pub fn scores(&self) -> Matrix {
        self.logits.map(sigmoid_scalar)
    }
}

fn head_logits(params: &TcnParams, fusion: &Matrix) -> Result<(Matrix, Matrix, Vec<f64>)> {
    let t = &params.tensors;
    let (pre, hidden) = dense_leaky(fusion, &t.h_w1, &t.h_b1, params.leaky_slope)?;
    let w2 = t.h_w2.data();
    let b2 = t.h_b2.data()[0];
    let logits = (0..hidden.rows())
        .map(|r| b2 + hidden.row(r).iter().zip(w2).map(|(a, w)| a * w).sum::<f64>())
        .collect();
    Ok((pre, hidden, logits))
}

/// Scores every image against every class: returns `(v, trace)` with `v` of shape `B × C`.
pub fn contrast_forward(
    params: &TcnParams,
    features: &Matrix,
    semantics: &Matrix,
) -> Result<(Matrix, ForwardTrace)> {
    let features = prepare_features(params, features)?;
    let (g_pre, g_hidden, g_out) = encode_semantics_traced(params, semantics)?;
    let fusion = fuse(&features, &g_out)?;
    let (h_pre, h_hidden, logits) = head_logits(params, &fusion)?;
    let logits = Matrix::new(features.rows(), semantics.rows(), logits)?;
    let trace = ForwardTrace {
        features,
        semantics: semantics.clone(),
        g_pre,
        g_hidden,
        g_out,
        fusion,
        h_pre,
        h_hidden,
        logits,
        params_fingerprint: params.fingerprint(),
    };
    Ok((trace.scores(), trace))
}

/// Logit grid only, evaluated in image chunks to bound memory.
pub fn contrast_logits(params: &TcnParams, features: &Matrix, semantics: &Matrix) -> Result<Matrix> {
    let features = prepare_features(params, features)?;
    let encoded = encode_semantics(params, semantics)?;
    let c = semantics.rows();
    let chunk = (65_536 / c.max(1)).max(1);
    let mut out = Vec::with_capacity(features.rows() * c);
    let idx: Vec<usize> = (0..features.rows()).collect();
    for rows in idx.chunks(chunk) {
        let fusion = fuse(&features.select_rows(rows), &encoded)?;
        out.extend(head_logits(params, &fusion)?.2);
    }
    Matrix::new(features.rows(), c, out)
}

/// Backpropagates `dL/dv` (upstream gradient on contrastive values).
pub fn contrast_backward(params: &TcnParams, trace: &ForwardTrace, d_scores: &Matrix) -> Result<ParamTensors> {
    if d_scores.shape() != trace.logits.shape() {
        return Err(Error::Shape {
            op: "contrast_backward",
            left: d_scores.shape(),
            right: trace.logits.shape(),
        });
    }
    let mut d_logits = d_scores.clone();
    for (d, &x) in d_logits.data_mut().iter_mut().zip(trace.logits.data()) {
        let v = sigmoid_scalar(x);
        *d *= v * (1.0 - v);
    }
    contrast_backward_logits(params, trace, &d_logits)
}

/// Backpropagates `dL/dlogit`; the training path, which avoids the
/// vanishing `v(1 − v)` factor of saturated scores.
pub fn contrast_backward_logits(
    params: &TcnParams,
    trace: &ForwardTrace,
    d_logits: &Matrix,
) -> Result<ParamTensors> {
    if params.fingerprint() != trace.params_fingerprint {
        return Err(Error::StaleTrace("parameters changed since the forward pass".into()));
    }
    if d_logits.shape() != trace.logits.shape() {
        return Err(Error::Shape {
            op: "contrast_backward",
            left: d_logits.shape(),
            right: trace.logits.shape(),
        });
    }
    let t = &params.tensors;
    let slope = params.leaky_slope;
    let (b, c) = trace.logits.shape();
    let df = trace.features.cols();
    let dlog = d_logits.data();

    // Head output layer.
    let d_flat = Matrix::new(b * c, 1, dlog.to_vec())?;
    let h_w2 = matmul_tn(&trace.h_hidden, &d_flat)?;
    let h_b2 = Matrix::new(1, 1, vec![dlog.iter().sum()])?;

    // Head hidden layer.
    let w2 = t.h_w2.data();
    let mut d_h_pre = trace.h_pre.clone();
    for r in 0..b * c {
        let g = dlog[r];
        for ((d, &pre), &w) in d_h_pre.row_mut(r).iter_mut().zip(trace.h_pre.row(r)).zip(w2) {
            *d = g * w * leaky_relu_grad_scalar(pre, slope);
        }
    }
    let h_w1 = matmul_tn(&trace.fusion, &d_h_pre)?;
    let h_b1 = Matrix::new(1, d_h_pre.cols(), d_h_pre.column_sums())?;
    let d_fusion = matmul_nt(&d_h_pre, &t.h_w1)?;

    // Fusion: dG_j = Σ_i dz_ij ⊗ f_i.
    let mut d_g_out = Matrix::zeros(c, df);
    for i in 0..b {
        let f = trace.features.row(i);
        for j in 0..c {
            let dz = d_fusion.row(i * c + j);
            for ((o, &d), &x) in d_g_out.row_mut(j).iter_mut().zip(dz).zip(f) {
                *o += d * x;
            }
        }
    }

    // Semantic branch.
    let g_w2 = matmul_tn(&trace.g_hidden, &d_g_out)?;
    let g_b2 = Matrix::new(1, df, d_g_out.column_sums())?;
    let mut d_g_pre = matmul_nt(&d_g_out, &t.g_w2)?;
    for (d, &pre) in d_g_pre.data_mut().iter_mut().zip(trace.g_pre.data()) {
        *d *= leaky_relu_grad_scalar(pre, slope);
    }
    let g_w1 = matmul_tn(&trace.semantics, &d_g_pre)?;
    let g_b1 = Matrix::new(1, d_g_pre.cols(), d_g_pre.column_sums())?;

    Ok(ParamTensors {
        g_w1,
        g_b1,
        g_w2,
        g_b2,
        h_w1,
        h_b1,
        h_w2,
        h_b2,
    })
}

fn push_tensor(buf: &mut Vec<u8>, name: &str, m: &Matrix) {
    buf.extend_from_slice(&(name.len() as u64).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    buf.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Checkpoint layout: `TCNP`, tensor count (u64), then per tensor a u64
/// name length, the UTF-8 name, u64 rows, u64 cols and the f64 payload.
/// `leaky_slope` and `normalize_features` travel as `1 × 1` tensors.
pub fn encode_checkpoint(params: &TcnParams) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&10u64.to_le_bytes());
    for (name, m) in ParamTensors::NAMES.iter().zip(params.tensors.iter()) {
        push_tensor(&mut buf, name, m);
    }
    let scalar = |v: f64| Matrix::filled(1, 1, v);
    push_tensor(&mut buf, "leaky_slope", &scalar(params.leaky_slope));
    push_tensor(
        &mut buf,
        "normalize_features",
        &scalar(if params.normalize_features { 1.0 } else { 0.0 }),
    );
    buf
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TcnParams> {
    const WHAT: &str = "checkpoint";
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::format(WHAT, "bad magic, expected \"TCNP\""));
    }
    let mut pos = 4;
    let count = read_u64(bytes, &mut pos, WHAT)? as usize;
    let mut named: Vec<(String, Matrix)> = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let len = read_u64(bytes, &mut pos, WHAT)? as usize;
        let raw = bytes
            .get(pos..pos.saturating_add(len))
            .ok_or_else(|| Error::format(WHAT, "truncated tensor name"))?;
        let name = String::from_utf8(raw.to_vec()).map_err(|_| Error::format(WHAT, "name is not UTF-8"))?;
        pos += len;
        let rows = read_u64(bytes, &mut pos, WHAT)? as usize;
        let cols = read_u64(bytes, &mut pos, WHAT)? as usize;
        named.push((name, decode_payload(bytes, &mut pos, rows, cols, WHAT)?));
    }
    if pos != bytes.len() {
        return Err(Error::format(WHAT, "trailing bytes"));
    }
    let mut take = |name: &str| -> Result<Matrix> {
        let i = named
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::format(WHAT, format!("missing tensor {name}")))?;
        Ok(named.swap_remove(i).1)
    };
    let tensors = ParamTensors {
        g_w1: take("g_w1")?,
        g_b1: take("g_b1")?,
        g_w2: take("g_w2")?,
        g_b2: take("g_b2")?,
        h_w1: take("h_w1")?,
        h_b1: take("h_b1")?,
        h_w2: take("h_w2")?,
        h_b2: take("h_b2")?,
    };
    let leaky_slope = take("leaky_slope")?.data()[0];
    let normalize_features = take("normalize_features")?.data()[0] != 0.0;
    let params = TcnParams {
        tensors,
        leaky_slope,
        normalize_features,
    };
    params.validate()?;
    Ok(params)
}

pub fn save_checkpoint(params: &TcnParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TcnParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
