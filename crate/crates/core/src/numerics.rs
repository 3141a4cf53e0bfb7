//! Dense linear algebra, activations, softmax / cross-entropy, Adam and the
//! finite-difference gradient checker.
//!
//! Everything here works in `f64`. Vectors are plain slices; only trainable
//! parameters are wrapped in [`Matrix`].

use rand::Rng;

use crate::error::{Result, V2cError};

/// Floor applied to probabilities before taking the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(V2cError::Shape(format!("matrix {rows}x{cols} needs {} values, got {}", rows * cols, data.len())));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Column vector `[len x 1]`.
    pub fn column(values: &[f64]) -> Self {
        Matrix { rows: values.len(), cols: 1, data: values.to_vec() }
    }

    /// Entries drawn independently from `U[-range, range]`.
    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, range: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols).map(|_| rng.gen_range(-range..=range)).collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `out += self * x`
    pub fn mul_vec_acc(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o += dot(row, x);
        }
    }

    /// `out += selfᵀ * v`
    pub fn tmul_vec_acc(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (&vr, row) in v.iter().zip(self.data.chunks_exact(self.cols)) {
            if vr == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(row) {
                *o += vr * w;
            }
        }
    }

    /// `self += a bᵀ`
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (&ar, row) in a.iter().zip(self.data.chunks_exact_mut(self.cols)) {
            if ar == 0.0 {
                continue;
            }
            for (w, &bc) in row.iter_mut().zip(b) {
                *w += ar * bc;
            }
        }
    }

    /// `self += v` treating `self` as a column.
    pub fn add_column(&mut self, v: &[f64]) {
        debug_assert_eq!(v.len(), self.data.len());
        for (w, &x) in self.data.iter_mut().zip(v) {
            *w += x;
        }
    }

    /// `self += other`
    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (w, &x) in self.data.iter_mut().zip(&other.data) {
            *w += x;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Logistic sigmoid, evaluated without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn tanh(x: f64) -> f64 {
    x.tanh()
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(V2cError::Usage("softmax of an empty vector".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    Ok(out)
}

/// `ln max(p, PROB_FLOOR)`; NaN stays NaN so divergence is not masked.
pub fn floored_ln(p: f64) -> f64 {
    if p.is_nan() {
        p
    } else {
        p.max(PROB_FLOOR).ln()
    }
}

/// `-Σ ln p[t][target[t]]` over the steps whose mask is set.
pub fn masked_cross_entropy(prob_rows: &[Vec<f64>], targets: &[usize], mask: &[bool]) -> Result<f64> {
    if prob_rows.len() != targets.len() || targets.len() != mask.len() {
        return Err(V2cError::Usage(format!(
            "masked_cross_entropy length mismatch: {} rows, {} targets, {} mask entries",
            prob_rows.len(),
            targets.len(),
            mask.len()
        )));
    }
    let mut loss = 0.0;
    for (t, ((row, &target), &keep)) in prob_rows.iter().zip(targets).zip(mask).enumerate() {
        if !keep {
            continue;
        }
        let p = *row
            .get(target)
            .ok_or_else(|| V2cError::Usage(format!("target index {target} out of range at step {t} (row has {} entries)", row.len())))?;
        loss -= floored_ln(p);
    }
    Ok(loss)
}

/// A named trainable matrix together with its gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSlot {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
}

impl ParamSlot {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        ParamSlot { name: name.into(), value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn adam_step(&mut self, state: &mut AdamState) -> Result<()> {
        state.step(&mut self.value, &self.grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Default::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment estimates for one parameter matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Matrix,
    pub v: Matrix,
    pub t: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize, config: AdamConfig) -> Self {
        AdamState { m: Matrix::zeros(rows, cols), v: Matrix::zeros(rows, cols), t: 0, config }
    }

    pub fn for_slot(slot: &ParamSlot, config: AdamConfig) -> Self {
        Self::new(slot.value.rows(), slot.value.cols(), config)
    }

    /// One bias-corrected Adam update of `value` given `grad`.
    pub fn step(&mut self, value: &mut Matrix, grad: &Matrix) -> Result<()> {
        if value.shape() != grad.shape() || value.shape() != self.m.shape() {
            return Err(V2cError::Shape(format!(
                "adam step: value {:?}, grad {:?}, state {:?}",
                value.shape(),
                grad.shape(),
                self.m.shape()
            )));
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let it = value.data.iter_mut().zip(&grad.data).zip(self.m.data.iter_mut().zip(self.v.data.iter_mut()));
        for ((w, &g), (m, v)) in it {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Per-entry comparison of analytic and numeric gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(slot name, flat index, analytic, numeric)` of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
    pub entries: usize,
}

/// Relative error used by the gradient checker.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compare `slots[*].grad` against central differences of `loss_fn`.
///
/// Values are perturbed in place and restored bit-exactly after each probe.
pub fn finite_diff_check<F>(mut loss_fn: F, slots: &mut [ParamSlot], epsilon: f64) -> Result<GradCheckReport>
where
    F: FnMut(&[ParamSlot]) -> f64,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(V2cError::Usage(format!("finite-difference epsilon {epsilon} outside [1e-7, 1e-3]")));
    }
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, entries: 0 };
    for s in 0..slots.len() {
        for k in 0..slots[s].value.len() {
            let original = slots[s].value.data[k];
            slots[s].value.data[k] = original + epsilon;
            let plus = loss_fn(slots);
            slots[s].value.data[k] = original - epsilon;
            let minus = loss_fn(slots);
            slots[s].value.data[k] = original;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let analytic = slots[s].grad.data[k];
            let err = relative_error(analytic, numeric);
            report.entries += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((slots[s].name.clone(), k, analytic, numeric));
            }
        }
    }
    Ok(report)
}
