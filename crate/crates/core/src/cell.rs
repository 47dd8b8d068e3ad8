//! The LSTM cell and its three reduced-gate variants.
//!
//! All four variants share the candidate path
//! `g = tanh(U_c h + W_c x + b_c)`, `c' = f*c + i*g`, `h' = o*tanh(c')`.
//! They differ only in which terms drive the input, forget and output gates:
//!
//! | variant  | gate pre-activation |
//! |----------|---------------------|
//! | Standard | `U h + W x + b`     |
//! | Lstm1    | `U h + b`           |
//! | Lstm2    | `U h`               |
//! | Lstm3    | `b`                 |
//!
//! Activations are column-batched: a batch of `B` samples is an `n x B` matrix.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gemm_into, hadamard, map_sigmoid, map_tanh, Matrix, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateVariant {
    Standard,
    Lstm1,
    Lstm2,
    Lstm3,
}

impl GateVariant {
    pub const ALL: [GateVariant; 4] = [
        GateVariant::Standard,
        GateVariant::Lstm1,
        GateVariant::Lstm2,
        GateVariant::Lstm3,
    ];

    pub fn gate_has_input(self) -> bool {
        matches!(self, GateVariant::Standard)
    }

    pub fn gate_has_recurrent(self) -> bool {
        !matches!(self, GateVariant::Lstm3)
    }

    pub fn gate_has_bias(self) -> bool {
        !matches!(self, GateVariant::Lstm2)
    }

    pub fn name(self) -> &'static str {
        match self {
            GateVariant::Standard => "standard",
            GateVariant::Lstm1 => "lstm1",
            GateVariant::Lstm2 => "lstm2",
            GateVariant::Lstm3 => "lstm3",
        }
    }
}

impl fmt::Display for GateVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GateVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "standard" | "lstm" => Ok(GateVariant::Standard),
            "lstm1" => Ok(GateVariant::Lstm1),
            "lstm2" => Ok(GateVariant::Lstm2),
            "lstm3" => Ok(GateVariant::Lstm3),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

/// Input dimension `m` and hidden/cell dimension `n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellDims {
    pub input: usize,
    pub hidden: usize,
}

impl CellDims {
    pub fn new(input: usize, hidden: usize) -> Result<Self> {
        if input == 0 || hidden == 0 {
            return Err(Error::Contract(format!(
                "cell dimensions must be positive, got m={input}, n={hidden}"
            )));
        }
        Ok(CellDims { input, hidden })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Input,
    Forget,
    Output,
}

impl Gate {
    pub const ALL: [Gate; 3] = [Gate::Input, Gate::Forget, Gate::Output];

    fn suffix(self) -> &'static str {
        match self {
            Gate::Input => "i",
            Gate::Forget => "f",
            Gate::Output => "o",
        }
    }
}

/// The terms feeding one sigmoid gate (or the candidate). Absent terms are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    pub w: Option<Matrix>,
    pub u: Option<Matrix>,
    pub b: Option<Vector>,
}

impl GateParams {
    fn zeros(dims: CellDims, input: bool, recurrent: bool, bias: bool) -> Self {
        let n = dims.hidden;
        GateParams {
            w: input.then(|| Matrix::zeros(n, dims.input)),
            u: recurrent.then(|| Matrix::zeros(n, n)),
            b: bias.then(|| Vector::zeros(n)),
        }
    }

    /// `U h + W x + b`, skipping absent terms.
    pub fn preactivation(&self, x: &Matrix, h_prev: &Matrix) -> Result<Matrix> {
        let mut z = Matrix::zeros(h_prev.rows(), h_prev.cols());
        if let Some(u) = &self.u {
            gemm_into(u, h_prev, &mut z)?;
        }
        if let Some(w) = &self.w {
            gemm_into(w, x, &mut z)?;
        }
        if let Some(b) = &self.b {
            z.add_column_broadcast(b)?;
        }
        Ok(z)
    }

    fn element_count(&self) -> usize {
        self.w.as_ref().map_or(0, |m| m.as_slice().len())
            + self.u.as_ref().map_or(0, |m| m.as_slice().len())
            + self.b.as_ref().map_or(0, Vector::len)
    }
}

/// A named view of one parameter tensor.
#[derive(Debug)]
pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

#[derive(Debug)]
pub struct TensorMut<'a> {
    pub name: String,
    pub data: &'a mut [f64],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    variant: GateVariant,
    dims: CellDims,
    pub input_gate: GateParams,
    pub forget_gate: GateParams,
    pub output_gate: GateParams,
    pub candidate: GateParams,
}

/// Gradients share the container (and the presence pattern) of the parameters.
pub type CellGrads = CellParams;

impl CellParams {
    pub fn zeros(variant: GateVariant, dims: CellDims) -> Self {
        let gate = || {
            GateParams::zeros(
                dims,
                variant.gate_has_input(),
                variant.gate_has_recurrent(),
                variant.gate_has_bias(),
            )
        };
        CellParams {
            variant,
            dims,
            input_gate: gate(),
            forget_gate: gate(),
            output_gate: gate(),
            candidate: GateParams::zeros(dims, true, true, true),
        }
    }

    pub fn zeros_like(&self) -> Self {
        CellParams::zeros(self.variant, self.dims)
    }

    pub fn variant(&self) -> GateVariant {
        self.variant
    }

    pub fn dims(&self) -> CellDims {
        self.dims
    }

    pub fn gate(&self, gate: Gate) -> &GateParams {
        match gate {
            Gate::Input => &self.input_gate,
            Gate::Forget => &self.forget_gate,
            Gate::Output => &self.output_gate,
        }
    }

    pub fn gate_mut(&mut self, gate: Gate) -> &mut GateParams {
        match gate {
            Gate::Input => &mut self.input_gate,
            Gate::Forget => &mut self.forget_gate,
            Gate::Output => &mut self.output_gate,
        }
    }

    fn parts(&self) -> [(&'static str, &GateParams); 4] {
        [
            (Gate::Input.suffix(), &self.input_gate),
            (Gate::Forget.suffix(), &self.forget_gate),
            (Gate::Output.suffix(), &self.output_gate),
            ("c", &self.candidate),
        ]
    }

    /// Present tensors in canonical order: for each of i, f, o, c the `W`, `U`, `b` that exist.
    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        for (suffix, gp) in self.parts() {
            if let Some(w) = &gp.w {
                out.push(TensorRef {
                    name: format!("W_{suffix}"),
                    shape: vec![w.rows(), w.cols()],
                    data: w.as_slice(),
                });
            }
            if let Some(u) = &gp.u {
                out.push(TensorRef {
                    name: format!("U_{suffix}"),
                    shape: vec![u.rows(), u.cols()],
                    data: u.as_slice(),
                });
            }
            if let Some(b) = &gp.b {
                out.push(TensorRef {
                    name: format!("b_{suffix}"),
                    shape: vec![b.len()],
                    data: b.as_slice(),
                });
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let mut out = Vec::new();
        let parts = [
            (Gate::Input.suffix(), &mut self.input_gate),
            (Gate::Forget.suffix(), &mut self.forget_gate),
            (Gate::Output.suffix(), &mut self.output_gate),
            ("c", &mut self.candidate),
        ];
        for (suffix, gp) in parts {
            if let Some(w) = &mut gp.w {
                out.push(TensorMut {
                    name: format!("W_{suffix}"),
                    data: w.as_mut_slice(),
                });
            }
            if let Some(u) = &mut gp.u {
                out.push(TensorMut {
                    name: format!("U_{suffix}"),
                    data: u.as_mut_slice(),
                });
            }
            if let Some(b) = &mut gp.b {
                out.push(TensorMut {
                    name: format!("b_{suffix}"),
                    data: b.as_mut_slice(),
                });
            }
        }
        out
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.tensors()
            .into_iter()
            .find(|t| t.name == name)
            .map(|t| t.data)
    }

    pub fn element_count(&self) -> usize {
        self.parts().iter().map(|(_, gp)| gp.element_count()).sum()
    }

    /// True when the present terms are exactly those the variant prescribes.
    pub fn presence_matches_variant(&self) -> bool {
        let v = self.variant;
        let gates_ok = Gate::ALL.iter().all(|&g| {
            let gp = self.gate(g);
            gp.w.is_some() == v.gate_has_input()
                && gp.u.is_some() == v.gate_has_recurrent()
                && gp.b.is_some() == v.gate_has_bias()
        });
        let c = &self.candidate;
        gates_ok && c.w.is_some() && c.u.is_some() && c.b.is_some()
    }

    /// The same function expressed as a Standard cell with the eliminated terms set to zero.
    pub fn embed_in_standard(&self) -> CellParams {
        let mut full = CellParams::zeros(GateVariant::Standard, self.dims);
        for g in Gate::ALL {
            let src = self.gate(g);
            let dst = full.gate_mut(g);
            if let Some(w) = &src.w {
                dst.w = Some(w.clone());
            }
            if let Some(u) = &src.u {
                dst.u = Some(u.clone());
            }
            if let Some(b) = &src.b {
                dst.b = Some(b.clone());
            }
        }
        full.candidate = self.candidate.clone();
        full
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|x| x.is_finite()))
    }
}

/// Closed-form parameter count of one cell layer.
pub fn param_count(variant: GateVariant, dims: CellDims) -> usize {
    let (m, n) = (dims.input, dims.hidden);
    let standard = 4 * (m * n + n * n + n);
    match variant {
        GateVariant::Standard => standard,
        GateVariant::Lstm1 => standard - 3 * m * n,
        GateVariant::Lstm2 => standard - 3 * (m * n + n),
        GateVariant::Lstm3 => standard - 3 * (m * n + n * n),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InitOptions {
    /// Start the forget-gate bias at 1 instead of 0 (ignored when the variant has no gate bias).
    pub forget_bias_one: bool,
}

pub fn init_params(variant: GateVariant, dims: CellDims, seed: u64) -> CellParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_params_with(variant, dims, InitOptions::default(), &mut rng)
}

/// Input kernels uniform in `±sqrt(6/(m+n))`, recurrent kernels orthogonal, biases zero.
///
/// Draw order: gates i, f, o, then the candidate; within each, `W` before `U`.
pub fn init_params_with<R: Rng + ?Sized>(
    variant: GateVariant,
    dims: CellDims,
    options: InitOptions,
    rng: &mut R,
) -> CellParams {
    let mut params = CellParams::zeros(variant, dims);
    let limit = (6.0 / (dims.input + dims.hidden) as f64).sqrt();
    for gp in [
        &mut params.input_gate,
        &mut params.forget_gate,
        &mut params.output_gate,
        &mut params.candidate,
    ] {
        if let Some(w) = &mut gp.w {
            for x in w.as_mut_slice() {
                *x = rng.random_range(-limit..limit);
            }
        }
        if let Some(u) = &mut gp.u {
            *u = random_orthogonal(dims.hidden, rng);
        }
    }
    if options.forget_bias_one {
        if let Some(b) = &mut params.forget_gate.b {
            b.as_mut_slice().fill(1.0);
        }
    }
    params
}

/// Orthogonal factor of a Gaussian draw, via Gram-Schmidt with one
/// re-orthogonalization pass. The triangular factor has a positive diagonal
/// by construction, which fixes the column signs.
pub fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Matrix {
    let draw = Matrix::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    // work on columns as contiguous rows of the transpose
    let mut cols = draw.transpose();
    for j in 0..n {
        for _pass in 0..2 {
            for k in 0..j {
                let proj: f64 = (0..n).map(|r| cols.get(k, r) * cols.get(j, r)).sum();
                for r in 0..n {
                    let v = cols.get(j, r) - proj * cols.get(k, r);
                    cols.set(j, r, v);
                }
            }
        }
        let norm = cols.row(j).iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in cols.row_mut(j) {
            *v /= norm;
        }
    }
    cols.transpose()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellState {
    pub h: Matrix,
    pub c: Matrix,
}

impl CellState {
    pub fn zeros(hidden: usize, batch: usize) -> Self {
        CellState {
            h: Matrix::zeros(hidden, batch),
            c: Matrix::zeros(hidden, batch),
        }
    }
}

/// Everything one step saw and produced; enough to run the step backwards.
#[derive(Clone, Debug, PartialEq)]
pub struct StepCache {
    pub x: Matrix,
    pub h_prev: Matrix,
    pub c_prev: Matrix,
    pub i: Matrix,
    pub f: Matrix,
    pub o: Matrix,
    pub g: Matrix,
    pub c: Matrix,
    pub h: Matrix,
}

fn check_step_shapes(params: &CellParams, x: &Matrix, h_prev: &Matrix) -> Result<()> {
    let dims = params.dims;
    if x.rows() != dims.input {
        return Err(Error::dim("cell input", x.shape(), (dims.input, x.cols())));
    }
    if h_prev.rows() != dims.hidden || h_prev.cols() != x.cols() {
        return Err(Error::dim(
            "cell state",
            h_prev.shape(),
            (dims.hidden, x.cols()),
        ));
    }
    if !params.presence_matches_variant() {
        return Err(Error::Contract(format!(
            "parameter presence does not match variant {}",
            params.variant
        )));
    }
    Ok(())
}

/// Input, forget and output gate activations.
pub fn gates(params: &CellParams, x: &Matrix, h_prev: &Matrix) -> Result<(Matrix, Matrix, Matrix)> {
    check_step_shapes(params, x, h_prev)?;
    let act = |gp: &GateParams| gp.preactivation(x, h_prev).map(|z| map_sigmoid(&z));
    Ok((
        act(&params.input_gate)?,
        act(&params.forget_gate)?,
        act(&params.output_gate)?,
    ))
}

pub fn step(params: &CellParams, x: &Matrix, state: &CellState) -> Result<(CellState, StepCache)> {
    if state.c.shape() != state.h.shape() {
        return Err(Error::dim("cell state", state.h.shape(), state.c.shape()));
    }
    let (i, f, o) = gates(params, x, &state.h)?;
    let g = map_tanh(&params.candidate.preactivation(x, &state.h)?);
    let mut c = hadamard(&f, &state.c)?;
    for (cv, (iv, gv)) in c
        .as_mut_slice()
        .iter_mut()
        .zip(i.as_slice().iter().zip(g.as_slice()))
    {
        *cv += iv * gv;
    }
    let h = hadamard(&o, &map_tanh(&c))?;
    let next = CellState {
        h: h.clone(),
        c: c.clone(),
    };
    let cache = StepCache {
        x: x.clone(),
        h_prev: state.h.clone(),
        c_prev: state.c.clone(),
        i,
        f,
        o,
        g,
        c,
        h,
    };
    Ok((next, cache))
}
