//! Datasets as sequences: IDX digit images and token files.

mod idx;
mod text;

pub use idx::{
    encode_idx_images, encode_idx_labels, load_idx, parse_idx_images, parse_idx_labels, pixelwise,
    rowwise, standardize, write_idx, LabeledImages, StandardizedImages, Standardizer,
    IMAGES_MAGIC, LABELS_MAGIC,
};
pub use text::{
    convert_text, load_token_dataset, load_token_file, pad_truncate, parse_token_lines, tokenize,
    ConvertSummary, TokenSamples, Vocabulary, FIRST_WORD_ID, OOV_ID,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub enum SequenceInputs {
    /// `count x T x m` values, row-major per sample.
    Dense { values: Vec<f64>, input_dim: usize },
    /// `count x T` token ids.
    Tokens { ids: Vec<u32> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputKind {
    Dense,
    Tokens,
}

/// Fixed-length labelled sequences, either dense vectors or token ids.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceDataset {
    inputs: SequenceInputs,
    labels: Vec<usize>,
    seq_len: usize,
    num_classes: usize,
}

impl SequenceDataset {
    pub fn dense(
        values: Vec<f64>,
        seq_len: usize,
        input_dim: usize,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if values.len() != labels.len() * seq_len * input_dim {
            return Err(Error::Consistency(format!(
                "{} values cannot hold {} sequences of {}x{}",
                values.len(),
                labels.len(),
                seq_len,
                input_dim
            )));
        }
        Self::check_labels(&labels, num_classes)?;
        Ok(SequenceDataset {
            inputs: SequenceInputs::Dense { values, input_dim },
            labels,
            seq_len,
            num_classes,
        })
    }

    pub fn tokens(ids: Vec<u32>, seq_len: usize, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if ids.len() != labels.len() * seq_len {
            return Err(Error::Consistency(format!(
                "{} ids cannot hold {} sequences of length {}",
                ids.len(),
                labels.len(),
                seq_len
            )));
        }
        Self::check_labels(&labels, num_classes)?;
        Ok(SequenceDataset {
            inputs: SequenceInputs::Tokens { ids },
            labels,
            seq_len,
            num_classes,
        })
    }

    fn check_labels(labels: &[usize], num_classes: usize) -> Result<()> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Consistency(format!(
                "label {bad} outside {num_classes} classes"
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn kind(&self) -> InputKind {
        match self.inputs {
            SequenceInputs::Dense { .. } => InputKind::Dense,
            SequenceInputs::Tokens { .. } => InputKind::Tokens,
        }
    }

    /// Width of one step: `m` for dense inputs, 1 for tokens.
    pub fn input_dim(&self) -> usize {
        match self.inputs {
            SequenceInputs::Dense { input_dim, .. } => input_dim,
            SequenceInputs::Tokens { .. } => 1,
        }
    }

    pub fn inputs(&self) -> &SequenceInputs {
        &self.inputs
    }

    /// Sample `i` as `T x m` row-major values. Panics for token datasets.
    pub fn dense_sequence(&self, i: usize) -> &[f64] {
        match &self.inputs {
            SequenceInputs::Dense { values, input_dim } => {
                let n = self.seq_len * input_dim;
                &values[i * n..(i + 1) * n]
            }
            SequenceInputs::Tokens { .. } => panic!("dense_sequence on a token dataset"),
        }
    }

    /// Sample `i` as token ids. Panics for dense datasets.
    pub fn token_sequence(&self, i: usize) -> &[u32] {
        match &self.inputs {
            SequenceInputs::Tokens { ids } => &ids[i * self.seq_len..(i + 1) * self.seq_len],
            SequenceInputs::Dense { .. } => panic!("token_sequence on a dense dataset"),
        }
    }

    /// One `m x B` matrix per step for the samples at `indices`.
    pub fn dense_batch(&self, indices: &[usize]) -> Vec<Matrix> {
        let m = self.input_dim();
        let mut steps = vec![Matrix::zeros(m, indices.len()); self.seq_len];
        for (j, &i) in indices.iter().enumerate() {
            let seq = self.dense_sequence(i);
            for (t, x) in steps.iter_mut().enumerate() {
                for k in 0..m {
                    x.set(k, j, seq[t * m + k]);
                }
            }
        }
        steps
    }

    pub fn token_batch(&self, indices: &[usize]) -> Vec<&[u32]> {
        indices.iter().map(|&i| self.token_sequence(i)).collect()
    }

    pub fn batch_labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    /// The first `n` samples (`0` keeps everything).
    pub fn take(&self, n: usize) -> SequenceDataset {
        if n == 0 || n >= self.len() {
            return self.clone();
        }
        let inputs = match &self.inputs {
            SequenceInputs::Dense { values, input_dim } => SequenceInputs::Dense {
                values: values[..n * self.seq_len * input_dim].to_vec(),
                input_dim: *input_dim,
            },
            SequenceInputs::Tokens { ids } => SequenceInputs::Tokens {
                ids: ids[..n * self.seq_len].to_vec(),
            },
        };
        SequenceDataset {
            inputs,
            labels: self.labels[..n].to_vec(),
            seq_len: self.seq_len,
            num_classes: self.num_classes,
        }
    }
}

/// Shuffled mini-batches of sample indices for one epoch.
///
/// The permutation depends only on `(seed, epoch)`; the last batch may be short.
/// Epoch `e` draws from ChaCha8 stream `e + 1` of the seed, leaving stream 0
/// to the run's initialization and dropout.
pub fn batch_iter(len: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be positive");
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    order.shuffle(&mut rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}
