//! Non-recurrent pieces: embedding lookup, dropout, the classifier head and losses.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cell::CellParams;
use crate::error::{Error, Result};
use crate::linalg::{gemm_into, gemm_nt_into, gemm_tn_into, sigmoid, Matrix, Vector};

/// Token id reserved for padding; its embedding row is zero and never trained.
pub const PAD_ID: usize = 0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub table: Matrix,
}

impl EmbeddingTable {
    /// Rows uniform in `±0.05`; the padding row is zero.
    pub fn new<R: Rng + ?Sized>(vocab_size: usize, dim: usize, rng: &mut R) -> Self {
        let mut table = Matrix::from_fn(vocab_size, dim, |_, _| rng.random_range(-0.05..0.05));
        table.row_mut(PAD_ID).fill(0.0);
        EmbeddingTable { table }
    }

    pub fn vocab_size(&self) -> usize {
        self.table.rows()
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    fn check_id(&self, id: usize) -> Result<()> {
        if id >= self.vocab_size() {
            return Err(Error::OutOfVocabulary {
                id,
                vocab: self.vocab_size(),
            });
        }
        Ok(())
    }

    pub fn embed(&self, ids: &[usize]) -> Result<Vec<Vector>> {
        ids.iter()
            .map(|&id| {
                self.check_id(id)?;
                Ok(Vector::from_vec(self.table.row(id).to_vec()))
            })
            .collect()
    }

    /// Embeds a batch of equal-length sequences into one `d x B` matrix per step.
    pub fn embed_steps(&self, batch: &[&[u32]]) -> Result<Vec<Matrix>> {
        let steps = batch.first().map_or(0, |s| s.len());
        let mut out = vec![Matrix::zeros(self.dim(), batch.len()); steps];
        for (j, seq) in batch.iter().enumerate() {
            if seq.len() != steps {
                return Err(Error::Contract("ragged token batch".into()));
            }
            for (t, &id) in seq.iter().enumerate() {
                let id = id as usize;
                self.check_id(id)?;
                for (k, &v) in self.table.row(id).iter().enumerate() {
                    out[t].set(k, j, v);
                }
            }
        }
        Ok(out)
    }

    /// Scatters per-step input gradients back onto table rows. Padding receives nothing.
    pub fn accumulate_grad(grad: &mut Matrix, batch: &[&[u32]], d_steps: &[Matrix]) {
        for (j, seq) in batch.iter().enumerate() {
            for (t, &id) in seq.iter().enumerate() {
                let id = id as usize;
                if id == PAD_ID {
                    continue;
                }
                let d = &d_steps[t];
                let row = grad.row_mut(id);
                for (k, g) in row.iter_mut().enumerate() {
                    *g += d.get(k, j);
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropoutSpec {
    pub signal_rate: f64,
    pub weight_row_rate: f64,
}

impl Default for DropoutSpec {
    fn default() -> Self {
        DropoutSpec {
            signal_rate: 0.0,
            weight_row_rate: 0.0,
        }
    }
}

impl DropoutSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("signal_rate", self.signal_rate),
            ("weight_row_rate", self.weight_row_rate),
        ] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {r}")));
            }
        }
        Ok(())
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Contract(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

/// Inverted dropout on individual entries.
///
/// Returns the dropped signal and the multiplier mask (`0` or `1/(1-rate)`);
/// in evaluation mode the input passes through and no mask is produced.
pub fn signal_dropout<R: Rng + ?Sized>(
    x: &Matrix,
    rate: f64,
    rng: &mut R,
    training: bool,
) -> Result<(Matrix, Option<Matrix>)> {
    check_rate(rate)?;
    if !training {
        return Ok((x.clone(), None));
    }
    if rate == 0.0 {
        return Ok((x.clone(), Some(Matrix::filled(x.rows(), x.cols(), 1.0))));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask = Matrix::from_fn(x.rows(), x.cols(), |_, _| {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            keep
        }
    });
    let out = crate::linalg::hadamard(x, &mask)?;
    Ok((out, Some(mask)))
}

/// One row multiplier vector per `W`/`U` matrix of a cell, in the cell's tensor order.
#[derive(Clone, Debug, PartialEq)]
pub struct RowMasks {
    pub entries: Vec<(String, Vec<f64>)>,
}

fn weight_matrices_mut(p: &mut CellParams) -> Vec<(String, &mut Matrix)> {
    let mut out = Vec::new();
    let parts = [
        ("i", &mut p.input_gate),
        ("f", &mut p.forget_gate),
        ("o", &mut p.output_gate),
        ("c", &mut p.candidate),
    ];
    for (suffix, gp) in parts {
        if let Some(w) = &mut gp.w {
            out.push((format!("W_{suffix}"), w));
        }
        if let Some(u) = &mut gp.u {
            out.push((format!("U_{suffix}"), u));
        }
    }
    out
}

fn scale_rows(m: &mut Matrix, multipliers: &[f64]) {
    for (r, &s) in multipliers.iter().enumerate() {
        for v in m.row_mut(r) {
            *v *= s;
        }
    }
}

impl RowMasks {
    /// Scales the weight rows of `params` by the stored multipliers.
    pub fn apply(&self, params: &mut CellParams) {
        for ((name, m), (mask_name, mask)) in weight_matrices_mut(params).into_iter().zip(&self.entries) {
            debug_assert_eq!(&name, mask_name);
            scale_rows(m, mask);
        }
    }

    /// Applies the masks to gradients taken with respect to the masked weights,
    /// giving gradients with respect to the underlying weights.
    pub fn mask_grads(&self, grads: &mut CellParams) {
        self.apply(grads);
    }
}

/// Drops whole rows of every present input and recurrent matrix; biases are untouched.
///
/// Draw one mask set per mini-batch and reuse it for every step of that batch.
pub fn weight_row_dropout<R: Rng + ?Sized>(
    params: &CellParams,
    rate: f64,
    rng: &mut R,
) -> Result<(CellParams, RowMasks)> {
    check_rate(rate)?;
    let mut masked = params.clone();
    let keep = 1.0 / (1.0 - rate);
    let mut entries = Vec::new();
    for (name, m) in weight_matrices_mut(&mut masked) {
        let mask: Vec<f64> = (0..m.rows())
            .map(|_| {
                if rate == 0.0 {
                    1.0
                } else if rng.random::<f64>() < rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        if rate > 0.0 {
            scale_rows(m, &mask);
        }
        entries.push((name, mask));
    }
    Ok((masked, RowMasks { entries }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseHead {
    pub w: Matrix,
    pub b: Vector,
}

pub type HeadGrads = DenseHead;

impl DenseHead {
    /// Glorot-uniform weights, zero bias.
    pub fn new<R: Rng + ?Sized>(outputs: usize, hidden: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (outputs + hidden) as f64).sqrt();
        DenseHead {
            w: Matrix::from_fn(outputs, hidden, |_, _| rng.random_range(-limit..limit)),
            b: Vector::zeros(outputs),
        }
    }

    pub fn zeros(outputs: usize, hidden: usize) -> Self {
        DenseHead {
            w: Matrix::zeros(outputs, hidden),
            b: Vector::zeros(outputs),
        }
    }

    pub fn zeros_like(&self) -> Self {
        DenseHead::zeros(self.w.rows(), self.w.cols())
    }

    pub fn outputs(&self) -> usize {
        self.w.rows()
    }

    pub fn forward(&self, h: &Matrix) -> Result<Matrix> {
        if h.rows() != self.w.cols() {
            return Err(Error::dim("dense head", self.w.shape(), h.shape()));
        }
        let mut logits = Matrix::zeros(self.w.rows(), h.cols());
        gemm_into(&self.w, h, &mut logits)?;
        logits.add_column_broadcast(&self.b)?;
        Ok(logits)
    }

    pub fn backward(&self, h: &Matrix, d_logits: &Matrix) -> Result<(HeadGrads, Matrix)> {
        if d_logits.shape() != (self.w.rows(), h.cols()) {
            return Err(Error::dim(
                "dense head backward",
                d_logits.shape(),
                (self.w.rows(), h.cols()),
            ));
        }
        let mut grads = self.zeros_like();
        gemm_nt_into(d_logits, h, &mut grads.w)?;
        grads.b = d_logits.sum_columns();
        let mut d_h = Matrix::zeros(h.rows(), h.cols());
        gemm_tn_into(&self.w, d_logits, &mut d_h)?;
        Ok((grads, d_h))
    }
}

/// Mean softmax cross-entropy over the batch and its gradient with respect to the logits.
pub fn softmax_xent(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (k, batch) = logits.shape();
    if k < 2 {
        return Err(Error::Contract(format!("softmax needs at least 2 classes, got {k}")));
    }
    if labels.len() != batch {
        return Err(Error::dim("softmax labels", logits.shape(), (labels.len(), 1)));
    }
    let mut grad = Matrix::zeros(k, batch);
    let mut total = 0.0;
    for (j, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(Error::Contract(format!("label {label} out of range for {k} classes")));
        }
        let max = (0..k).map(|i| logits.get(i, j)).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..k).map(|i| (logits.get(i, j) - max).exp()).sum();
        let log_sum = sum.ln();
        total += log_sum - (logits.get(label, j) - max);
        for i in 0..k {
            let p = (logits.get(i, j) - max - log_sum).exp();
            let target = if i == label { 1.0 } else { 0.0 };
            grad.set(i, j, (p - target) / batch as f64);
        }
    }
    Ok((total / batch as f64, grad))
}

/// Mean binary cross-entropy on a `1 x B` row of logits, in the overflow-free form.
pub fn sigmoid_xent(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (k, batch) = logits.shape();
    if k != 1 || labels.len() != batch {
        return Err(Error::dim("sigmoid_xent", logits.shape(), (1, labels.len())));
    }
    let mut grad = Matrix::zeros(1, batch);
    let mut total = 0.0;
    for (j, &label) in labels.iter().enumerate() {
        if label > 1 {
            return Err(Error::Contract(format!("binary label expected, got {label}")));
        }
        let z = logits.get(0, j);
        let y = label as f64;
        total += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        grad.set(0, j, (sigmoid(z) - y) / batch as f64);
    }
    Ok((total / batch as f64, grad))
}
