//! Backpropagation through time for all four cell variants.
//!
//! The loss attaches to the final hidden state only, so the backward sweep
//! starts from `dL/dh_T` with `dL/dc_T = 0`. Gradients follow both the `h`
//! and the `c` recurrence over the full sequence.

use crate::cell::{step, CellGrads, CellParams, CellState, GateParams, StepCache};
use crate::error::{Error, Result};
use crate::linalg::{gemm_nt_into, gemm_tn_into, Matrix};

#[derive(Clone, Debug)]
pub struct SequenceCache {
    pub initial: CellState,
    pub steps: Vec<StepCache>,
}

impl SequenceCache {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

pub fn forward_sequence(
    params: &CellParams,
    inputs: &[Matrix],
    initial: &CellState,
) -> Result<(CellState, SequenceCache)> {
    if inputs.is_empty() {
        return Err(Error::Contract("forward_sequence needs at least one step".into()));
    }
    let mut state = initial.clone();
    let mut steps = Vec::with_capacity(inputs.len());
    for x in inputs {
        let (next, cache) = step(params, x, &state)?;
        steps.push(cache);
        state = next;
    }
    Ok((
        state,
        SequenceCache {
            initial: initial.clone(),
            steps,
        },
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BackwardOptions {
    /// Produce `dL/dx_t` for every step (needed when the inputs are themselves learned).
    pub input_grads: bool,
}

impl Default for BackwardOptions {
    fn default() -> Self {
        BackwardOptions { input_grads: true }
    }
}

#[derive(Clone, Debug)]
pub struct SequenceGrads {
    pub params: CellGrads,
    /// One entry per step when requested, otherwise empty.
    pub inputs: Vec<Matrix>,
}

pub fn backward_sequence(
    params: &CellParams,
    cache: &SequenceCache,
    d_h_last: &Matrix,
) -> Result<(CellGrads, Vec<Matrix>)> {
    let out = backward_sequence_with(params, cache, d_h_last, BackwardOptions::default())?;
    Ok((out.params, out.inputs))
}

pub fn backward_sequence_with(
    params: &CellParams,
    cache: &SequenceCache,
    d_h_last: &Matrix,
    options: BackwardOptions,
) -> Result<SequenceGrads> {
    let last = cache
        .steps
        .last()
        .ok_or_else(|| Error::Contract("backward over an empty cache".into()))?;
    let dims = params.dims();
    if last.h.rows() != dims.hidden || last.x.rows() != dims.input {
        return Err(Error::Contract(format!(
            "cache was produced for m={}, n={} but params have m={}, n={}",
            last.x.rows(),
            last.h.rows(),
            dims.input,
            dims.hidden
        )));
    }
    if d_h_last.shape() != last.h.shape() {
        return Err(Error::Contract(format!(
            "upstream gradient shape {:?} does not match h_T {:?}",
            d_h_last.shape(),
            last.h.shape()
        )));
    }

    let mut grads = params.zeros_like();
    let (n, batch) = last.h.shape();
    let mut dh = d_h_last.clone();
    let mut dc = Matrix::zeros(n, batch);
    let mut d_inputs = Vec::with_capacity(if options.input_grads { cache.len() } else { 0 });

    let mut dzi = Matrix::zeros(n, batch);
    let mut dzf = Matrix::zeros(n, batch);
    let mut dzo = Matrix::zeros(n, batch);
    let mut dzg = Matrix::zeros(n, batch);

    for s in cache.steps.iter().rev() {
        {
            let dh = dh.as_slice();
            let dc = dc.as_mut_slice();
            let (zi, zf, zo, zg) = (
                dzi.as_mut_slice(),
                dzf.as_mut_slice(),
                dzo.as_mut_slice(),
                dzg.as_mut_slice(),
            );
            let (i, f, o, g) = (s.i.as_slice(), s.f.as_slice(), s.o.as_slice(), s.g.as_slice());
            let (c, c_prev) = (s.c.as_slice(), s.c_prev.as_slice());
            for k in 0..dh.len() {
                let tc = c[k].tanh();
                let d_o = dh[k] * tc;
                let d_c = dc[k] + dh[k] * o[k] * (1.0 - tc * tc);
                zi[k] = d_c * g[k] * i[k] * (1.0 - i[k]);
                zf[k] = d_c * c_prev[k] * f[k] * (1.0 - f[k]);
                zo[k] = d_o * o[k] * (1.0 - o[k]);
                zg[k] = d_c * i[k] * (1.0 - g[k] * g[k]);
                // carried to the previous step
                dc[k] = d_c * f[k];
            }
        }

        let mut dh_prev = Matrix::zeros(n, batch);
        let mut dx = options
            .input_grads
            .then(|| Matrix::zeros(dims.input, batch));
        let pairs: [(&GateParams, &mut GateParams, &Matrix); 4] = [
            (&params.input_gate, &mut grads.input_gate, &dzi),
            (&params.forget_gate, &mut grads.forget_gate, &dzf),
            (&params.output_gate, &mut grads.output_gate, &dzo),
            (&params.candidate, &mut grads.candidate, &dzg),
        ];
        for (p, gp, dz) in pairs {
            accumulate_gate(p, gp, dz, s, &mut dh_prev, dx.as_mut())?;
        }
        if let Some(dx) = dx {
            d_inputs.push(dx);
        }
        dh = dh_prev;
    }
    d_inputs.reverse();
    Ok(SequenceGrads {
        params: grads,
        inputs: d_inputs,
    })
}

fn accumulate_gate(
    p: &GateParams,
    grad: &mut GateParams,
    dz: &Matrix,
    s: &StepCache,
    dh_prev: &mut Matrix,
    dx: Option<&mut Matrix>,
) -> Result<()> {
    if let (Some(gw), Some(w)) = (&mut grad.w, &p.w) {
        gemm_nt_into(dz, &s.x, gw)?;
        if let Some(dx) = dx {
            gemm_tn_into(w, dz, dx)?;
        }
    }
    if let (Some(gu), Some(u)) = (&mut grad.u, &p.u) {
        gemm_nt_into(dz, &s.h_prev, gu)?;
        gemm_tn_into(u, dz, dh_prev)?;
    }
    if let Some(gb) = &mut grad.b {
        for (acc, v) in gb.as_mut_slice().iter_mut().zip(dz.sum_columns().as_slice()) {
            *acc += v;
        }
    }
    Ok(())
}

/// Central-difference derivative of `loss` at every coordinate of `x`.
///
/// The divisor is the separation of the two probe points as actually
/// represented, which removes the rounding of `x +- h` from the estimate.
pub fn central_difference(
    mut loss: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    step_h: f64,
) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            let orig = probe[k];
            let (up, down) = (orig + step_h, orig - step_h);
            probe[k] = up;
            let plus = loss(&probe);
            probe[k] = down;
            let minus = loss(&probe);
            probe[k] = orig;
            (plus - minus) / (up - down)
        })
        .collect()
}

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Fourth-order central difference,
/// `(8(L(x+h) - L(x-h)) - (L(x+2h) - L(x-2h))) / 12h`.
///
/// Truncation error falls as `h^4`, so a coarse power-of-two step (which
/// keeps `x +- h` exact for moderate `x`) gives errors near `1e-13` for
/// losses of order one, well below what the two-point rule reaches.
pub fn central_difference_fourth(
    mut loss: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    step_h: f64,
) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            let orig = probe[k];
            let mut at = |offset: f64| {
                probe[k] = orig + offset;
                loss(&probe)
            };
            let (p1, m1, p2, m2) = (at(step_h), at(-step_h), at(2.0 * step_h), at(-2.0 * step_h));
            probe[k] = orig;
            (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * step_h)
        })
        .collect()
}

/// Step for [`central_difference_fourth`]: `2^-10`.
pub const FOURTH_ORDER_FD_STEP: f64 = 1.0 / 1024.0;

/// Finite-difference gradient of `loss` with respect to every present cell parameter.
pub fn finite_difference_grads(
    mut loss: impl FnMut(&CellParams) -> f64,
    params: &CellParams,
    step_h: f64,
) -> CellGrads {
    let mut grads = params.zeros_like();
    let mut probe = params.clone();
    let count = params.tensors().len();
    for t in 0..count {
        let len = params.tensors()[t].data.len();
        for k in 0..len {
            let orig = probe.tensors()[t].data[k];
            let (up, down) = (orig + step_h, orig - step_h);
            probe.tensors_mut()[t].data[k] = up;
            let plus = loss(&probe);
            probe.tensors_mut()[t].data[k] = down;
            let minus = loss(&probe);
            probe.tensors_mut()[t].data[k] = orig;
            grads.tensors_mut()[t].data[k] = (plus - minus) / (up - down);
        }
    }
    grads
}

/// `|a - b| / max(1e-8, |a| + |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

/// Largest elementwise relative error between two gradient containers with the same layout.
pub fn max_relative_error(a: &CellGrads, b: &CellGrads) -> f64 {
    a.tensors()
        .iter()
        .zip(b.tensors().iter())
        .flat_map(|(x, y)| {
            assert_eq!(x.name, y.name);
            x.data.iter().zip(y.data).map(|(p, q)| relative_error(*p, *q))
        })
        .fold(0.0, f64::max)
}
