use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bptt::{
    backward_sequence, central_difference, central_difference_fourth, forward_sequence,
    relative_error, DEFAULT_FD_STEP, FOURTH_ORDER_FD_STEP,
};
use crate::cell::{init_params_with, CellDims, CellGrads, CellParams, CellState, GateVariant, InitOptions};
use crate::error::Result;
use crate::layers::{softmax_xent, DenseHead};
use crate::linalg::Matrix;

pub const GRADCHECK_TOLERANCE: f64 = 1e-6;
const CLASSES: usize = 3;

/// Which central-difference rule provides the numeric gradient.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FdRule {
    /// `(L(x+h) - L(x-h)) / 2h` with `h = 1e-5`.
    TwoPoint,
    /// The fourth-order five-point rule with `h = 2^-10`.
    #[default]
    FourthOrder,
}

impl FdRule {
    fn apply(self, loss: impl FnMut(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
        match self {
            FdRule::TwoPoint => central_difference(loss, x, DEFAULT_FD_STEP),
            FdRule::FourthOrder => central_difference_fourth(loss, x, FOURTH_ORDER_FD_STEP),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GradcheckSpec {
    pub variant: GateVariant,
    pub input: usize,
    pub hidden: usize,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub spec: GradcheckSpec,
    /// Largest relative error per tensor (cell tensors, then the head and inputs).
    pub per_tensor: Vec<(String, f64)>,
    pub max_relative_error: f64,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn summary(&self) -> String {
        let s = &self.spec;
        format!(
            "gradcheck {} m={} n={} T={} B={} seed={}: max relative error {:.3e} ({})",
            s.variant,
            s.input,
            s.hidden,
            s.steps,
            s.batch,
            s.seed,
            self.max_relative_error,
            if self.passed { "pass" } else { "FAIL" }
        )
    }
}

struct Problem {
    cell: CellParams,
    head: DenseHead,
    inputs: Vec<Matrix>,
    labels: Vec<usize>,
}

impl Problem {
    fn new(spec: &GradcheckSpec) -> Result<Self> {
        let dims = CellDims::new(spec.input, spec.hidden)?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut cell = init_params_with(spec.variant, dims, InitOptions::default(), &mut rng);
        // nonzero biases so their gradients are exercised away from the symmetric point
        for t in cell.tensors_mut() {
            if t.name.starts_with('b') {
                t.data.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
            }
        }
        let mut head = DenseHead::new(CLASSES, spec.hidden, &mut rng);
        head.b.as_mut_slice().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        let inputs = (0..spec.steps)
            .map(|_| Matrix::from_fn(spec.input, spec.batch, |_, _| rng.sample(StandardNormal)))
            .collect();
        let labels = (0..spec.batch).map(|_| rng.random_range(0..CLASSES)).collect();
        Ok(Problem { cell, head, inputs, labels })
    }

    fn loss(&self, cell: &CellParams, head: &DenseHead, inputs: &[Matrix]) -> f64 {
        let initial = CellState::zeros(cell.dims().hidden, self.labels.len());
        let (last, _) = forward_sequence(cell, inputs, &initial).expect("shapes fixed by construction");
        let logits = head.forward(&last.h).expect("shapes fixed by construction");
        softmax_xent(&logits, &self.labels).expect("labels in range").0
    }
}

/// Compares the analytic gradient of a softmax-headed sequence loss with
/// central finite differences over every cell, head and input entry.
pub fn gradcheck(spec: GradcheckSpec) -> Result<GradcheckReport> {
    gradcheck_with(spec, FdRule::default(), |_| {})
}

/// As [`gradcheck`], but lets `tamper` edit the analytic cell gradient first
/// (a negative control for the checker itself).
pub fn gradcheck_with_hook(
    spec: GradcheckSpec,
    tamper: impl FnOnce(&mut CellGrads),
) -> Result<GradcheckReport> {
    gradcheck_with(spec, FdRule::default(), tamper)
}

pub fn gradcheck_with(
    spec: GradcheckSpec,
    rule: FdRule,
    tamper: impl FnOnce(&mut CellGrads),
) -> Result<GradcheckReport> {
    let p = Problem::new(&spec)?;
    let initial = CellState::zeros(spec.hidden, spec.batch);
    let (last, cache) = forward_sequence(&p.cell, &p.inputs, &initial)?;
    let logits = p.head.forward(&last.h)?;
    let (_, d_logits) = softmax_xent(&logits, &p.labels)?;
    let (head_grads, d_h) = p.head.backward(&last.h, &d_logits)?;
    let (mut cell_grads, input_grads) = backward_sequence(&p.cell, &cache, &d_h)?;
    tamper(&mut cell_grads);

    let mut per_tensor = Vec::new();
    let worst = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| relative_error(*x, *y))
            .fold(0.0, f64::max)
    };

    let names: Vec<String> = p.cell.tensors().iter().map(|t| t.name.clone()).collect();
    for (k, name) in names.iter().enumerate() {
        let theta = p.cell.tensors()[k].data.to_vec();
        let numeric = rule.apply(
            |v| {
                let mut c = p.cell.clone();
                c.tensors_mut()[k].data.copy_from_slice(v);
                p.loss(&c, &p.head, &p.inputs)
            },
            &theta,
        );
        let analytic = cell_grads.tensor(name).expect("same layout as params");
        per_tensor.push((name.clone(), worst(analytic, &numeric)));
    }

    let numeric = rule.apply(
        |v| {
            let mut h = p.head.clone();
            h.w.as_mut_slice().copy_from_slice(v);
            p.loss(&p.cell, &h, &p.inputs)
        },
        p.head.w.as_slice(),
    );
    per_tensor.push(("head.W".into(), worst(head_grads.w.as_slice(), &numeric)));
    let numeric = rule.apply(
        |v| {
            let mut h = p.head.clone();
            h.b.as_mut_slice().copy_from_slice(v);
            p.loss(&p.cell, &h, &p.inputs)
        },
        p.head.b.as_slice(),
    );
    per_tensor.push(("head.b".into(), worst(head_grads.b.as_slice(), &numeric)));

    for t in 0..spec.steps {
        let numeric = rule.apply(
            |v| {
                let mut xs = p.inputs.clone();
                xs[t].as_mut_slice().copy_from_slice(v);
                p.loss(&p.cell, &p.head, &xs)
            },
            p.inputs[t].as_slice(),
        );
        per_tensor.push((format!("x_{t}"), worst(input_grads[t].as_slice(), &numeric)));
    }

    let max_relative_error = per_tensor.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradcheckReport {
        spec,
        per_tensor,
        max_relative_error,
        passed: max_relative_error <= GRADCHECK_TOLERANCE,
    })
}
