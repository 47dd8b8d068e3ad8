use std::borrow::Cow;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bptt::{backward_sequence_with, forward_sequence, BackwardOptions};
use crate::cell::{init_params_with, CellDims, CellParams, CellState, InitOptions};
use crate::data::{InputKind, SequenceDataset};
use crate::error::{Error, Result};
use crate::layers::{
    sigmoid_xent, signal_dropout, softmax_xent, weight_row_dropout, DenseHead, DropoutSpec,
    EmbeddingTable,
};
use crate::linalg::{hadamard, sigmoid, Matrix};

/// Cell, classifier head and (for token input) the embedding table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub cell: CellParams,
    pub head: DenseHead,
    pub embedding: Option<EmbeddingTable>,
}

/// Gradients mirror the model's layout.
pub type ModelGrads = Model;

/// How a batch's inputs are presented to the model.
#[derive(Clone, Copy, Debug)]
pub enum BatchInputs<'a> {
    Dense(&'a [Matrix]),
    Tokens(&'a [&'a [u32]]),
}

/// Result of one training forward/backward pass.
#[derive(Clone, Debug)]
pub struct BatchOutcome {
    pub loss: f64,
    pub correct: usize,
    pub grads: ModelGrads,
}

impl Model {
    /// Initializes cell, head and embedding in that order from `rng`.
    ///
    /// `outputs` is the number of classes, or 1 for a binary sigmoid head.
    pub fn init<R: Rng + ?Sized>(
        variant: crate::cell::GateVariant,
        dims: CellDims,
        outputs: usize,
        embedding_rows: Option<usize>,
        options: InitOptions,
        rng: &mut R,
    ) -> Self {
        let cell = init_params_with(variant, dims, options, rng);
        let head = DenseHead::new(outputs, dims.hidden, rng);
        let embedding = embedding_rows.map(|v| EmbeddingTable::new(v, dims.input, rng));
        Model { cell, head, embedding }
    }

    pub fn zeros_like(&self) -> ModelGrads {
        Model {
            cell: self.cell.zeros_like(),
            head: self.head.zeros_like(),
            embedding: self.embedding.as_ref().map(|e| EmbeddingTable {
                table: Matrix::zeros(e.table.rows(), e.table.cols()),
            }),
        }
    }

    /// Every trainable tensor with its name, in checkpoint order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out: Vec<_> = self
            .cell
            .tensors()
            .into_iter()
            .map(|t| (format!("cell.{}", t.name), t.shape, t.data))
            .collect();
        out.push(("head.W".into(), vec![self.head.w.rows(), self.head.w.cols()], self.head.w.as_slice()));
        out.push(("head.b".into(), vec![self.head.b.len()], self.head.b.as_slice()));
        if let Some(e) = &self.embedding {
            out.push((
                "embedding.table".into(),
                vec![e.table.rows(), e.table.cols()],
                e.table.as_slice(),
            ));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<_> = self
            .cell
            .tensors_mut()
            .into_iter()
            .map(|t| (format!("cell.{}", t.name), t.data))
            .collect();
        out.push(("head.W".into(), self.head.w.as_mut_slice()));
        out.push(("head.b".into(), self.head.b.as_mut_slice()));
        if let Some(e) = &mut self.embedding {
            out.push(("embedding.table".into(), e.table.as_mut_slice()));
        }
        out
    }

    pub fn is_binary(&self) -> bool {
        self.head.outputs() == 1
    }

    /// Checks that `data` can be fed to this model.
    pub fn check_dataset(&self, data: &SequenceDataset) -> Result<()> {
        let dims = self.cell.dims();
        match (data.kind(), &self.embedding) {
            (InputKind::Tokens, None) => {
                return Err(Error::Contract("token data needs a model with an embedding".into()))
            }
            (InputKind::Dense, Some(_)) => {
                return Err(Error::Contract("dense data given to an embedding model".into()))
            }
            (InputKind::Dense, None) if data.input_dim() != dims.input => {
                return Err(Error::Contract(format!(
                    "data has {} inputs per step, model expects {}",
                    data.input_dim(),
                    dims.input
                )))
            }
            _ => {}
        }
        let classes = if self.is_binary() { 2 } else { self.head.outputs() };
        if data.num_classes() > classes {
            return Err(Error::Contract(format!(
                "data has {} classes, model predicts {classes}",
                data.num_classes()
            )));
        }
        if data.seq_len() == 0 && !data.is_empty() {
            return Err(Error::Contract("sequences must have at least one step".into()));
        }
        Ok(())
    }

    fn embed<'a>(&'a self, inputs: BatchInputs<'a>) -> Result<Cow<'a, [Matrix]>> {
        match inputs {
            BatchInputs::Dense(steps) => Ok(Cow::Borrowed(steps)),
            BatchInputs::Tokens(ids) => {
                let e = self
                    .embedding
                    .as_ref()
                    .ok_or_else(|| Error::Contract("token batch given to a dense model".into()))?;
                Ok(Cow::Owned(e.embed_steps(ids)?))
            }
        }
    }

    fn loss(&self, logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
        if self.is_binary() {
            sigmoid_xent(logits, labels)
        } else {
            softmax_xent(logits, labels)
        }
    }

    /// Logits for a batch with dropout off.
    pub fn logits(&self, inputs: BatchInputs<'_>) -> Result<Matrix> {
        let steps = self.embed(inputs)?;
        let batch = steps.first().map_or(0, Matrix::cols);
        let initial = CellState::zeros(self.cell.dims().hidden, batch);
        let (last, _) = forward_sequence(&self.cell, &steps, &initial)?;
        self.head.forward(&last.h)
    }

    /// Class predictions: argmax with ties to the lowest index, or
    /// `sigmoid(z) > 0.5` for a binary head.
    pub fn predict(&self, logits: &Matrix) -> Vec<usize> {
        (0..logits.cols())
            .map(|j| {
                if self.is_binary() {
                    usize::from(sigmoid(logits.get(0, j)) > 0.5)
                } else {
                    let mut best = 0;
                    for k in 1..logits.rows() {
                        if logits.get(k, j) > logits.get(best, j) {
                            best = k;
                        }
                    }
                    best
                }
            })
            .collect()
    }

    /// One training pass: dropout draws, forward, loss, and full gradients.
    ///
    /// Row masks are drawn before signal masks; both come from `rng`.
    pub fn train_batch<R: Rng + ?Sized>(
        &self,
        inputs: BatchInputs<'_>,
        labels: &[usize],
        dropout: DropoutSpec,
        rng: &mut R,
    ) -> Result<BatchOutcome> {
        let (cell, masks) = if dropout.weight_row_rate > 0.0 {
            let (masked, masks) = weight_row_dropout(&self.cell, dropout.weight_row_rate, rng)?;
            (Cow::Owned(masked), Some(masks))
        } else {
            (Cow::Borrowed(&self.cell), None)
        };

        let embedded = self.embed(inputs)?;
        let mut signal_masks = Vec::new();
        let steps: Cow<'_, [Matrix]> = if dropout.signal_rate > 0.0 {
            let mut dropped = Vec::with_capacity(embedded.len());
            for x in embedded.iter() {
                let (y, mask) = signal_dropout(x, dropout.signal_rate, rng, true)?;
                dropped.push(y);
                signal_masks.push(mask.expect("training mode yields a mask"));
            }
            Cow::Owned(dropped)
        } else {
            embedded
        };

        let batch = labels.len();
        if steps.first().map(Matrix::cols) != Some(batch) {
            return Err(Error::Contract(format!(
                "batch of {batch} labels does not match the inputs"
            )));
        }
        let initial = CellState::zeros(cell.dims().hidden, batch);
        let (last, cache) = forward_sequence(&cell, &steps, &initial)?;
        let logits = self.head.forward(&last.h)?;
        let (loss, d_logits) = self.loss(&logits, labels)?;
        let correct = self
            .predict(&logits)
            .iter()
            .zip(labels)
            .filter(|(p, y)| p == y)
            .count();

        let (head_grads, d_h) = self.head.backward(&last.h, &d_logits)?;
        let want_inputs = self.embedding.is_some() && matches!(inputs, BatchInputs::Tokens(_));
        let seq = backward_sequence_with(
            &cell,
            &cache,
            &d_h,
            BackwardOptions { input_grads: want_inputs },
        )?;
        let mut cell_grads = seq.params;
        if let Some(m) = &masks {
            m.mask_grads(&mut cell_grads);
        }
        let embedding = match (&self.embedding, inputs) {
            (Some(e), BatchInputs::Tokens(ids)) => {
                let mut d_steps = seq.inputs;
                if !signal_masks.is_empty() {
                    for (d, m) in d_steps.iter_mut().zip(&signal_masks) {
                        *d = hadamard(d, m)?;
                    }
                }
                let mut table = Matrix::zeros(e.table.rows(), e.table.cols());
                EmbeddingTable::accumulate_grad(&mut table, ids, &d_steps);
                Some(EmbeddingTable { table })
            }
            _ => None,
        };
        Ok(BatchOutcome {
            loss,
            correct,
            grads: Model {
                cell: cell_grads,
                head: head_grads,
                embedding,
            },
        })
    }

    /// Mean loss and accuracy with dropout off, in chunks of `chunk` samples.
    ///
    /// Columns never interact, so the result does not depend on `chunk`.
    pub fn evaluate_chunked(&self, data: &SequenceDataset, chunk: usize) -> Result<(f64, f64)> {
        self.check_dataset(data)?;
        if data.is_empty() {
            return Ok((0.0, 0.0));
        }
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let order: Vec<usize> = (0..data.len()).collect();
        for idx in order.chunks(chunk.max(1)) {
            let labels = data.batch_labels(idx);
            let logits = match data.kind() {
                InputKind::Dense => self.logits(BatchInputs::Dense(&data.dense_batch(idx)))?,
                InputKind::Tokens => self.logits(BatchInputs::Tokens(&data.token_batch(idx)))?,
            };
            let (loss, _) = self.loss(&logits, &labels)?;
            loss_sum += loss * idx.len() as f64;
            correct += self
                .predict(&logits)
                .iter()
                .zip(&labels)
                .filter(|(p, y)| p == y)
                .count();
        }
        let n = data.len() as f64;
        Ok((loss_sum / n, correct as f64 / n))
    }
}

pub const EVAL_CHUNK: usize = 500;

/// Mean loss and accuracy of `model` on `data` with dropout off.
pub fn evaluate(model: &Model, data: &SequenceDataset) -> Result<(f64, f64)> {
    model.evaluate_chunked(data, EVAL_CHUNK)
}
