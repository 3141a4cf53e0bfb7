//! LSTM and GRU step functions and their adjoints.
//!
//! Forward steps return a cache holding every intermediate the adjoint
//! needs; `backward` accumulates parameter gradients into a caller-owned
//! gradient structure of the same shape and returns the gradients with
//! respect to the step input and the previous state.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, V2cError};
use crate::numerics::{sigmoid, tanh, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Lstm,
    Gru,
}

impl CellKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CellKind::Lstm => "lstm",
            CellKind::Gru => "gru",
        }
    }
}

impl std::str::FromStr for CellKind {
    type Err = V2cError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lstm" => Ok(CellKind::Lstm),
            "gru" => Ok(CellKind::Gru),
            other => Err(V2cError::Usage(format!("unknown cell kind `{other}` (expected lstm or gru)"))),
        }
    }
}

impl std::fmt::Display for CellKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Recurrent state. `c` is empty for GRU cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl CellState {
    pub fn zeros(kind: CellKind, hidden: usize) -> Self {
        let c = match kind {
            CellKind::Lstm => vec![0.0; hidden],
            CellKind::Gru => Vec::new(),
        };
        CellState { h: vec![0.0; hidden], c }
    }
}

/// Gradients flowing out of one cell step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepGrads {
    pub dx: Vec<f64>,
    pub dh_prev: Vec<f64>,
    /// Empty for GRU.
    pub dc_prev: Vec<f64>,
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(V2cError::Shape(format!("{what}: expected length {want}, got {got}")));
    }
    Ok(())
}

fn affine(wx: &Matrix, wh: &Matrix, b: &Matrix, x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut out = b.data().to_vec();
    wx.mul_vec_acc(x, &mut out);
    wh.mul_vec_acc(h, &mut out);
    out
}

// ---------------------------------------------------------------------------
// LSTM

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_xi: Matrix,
    pub w_xf: Matrix,
    pub w_xo: Matrix,
    pub w_xg: Matrix,
    pub w_hi: Matrix,
    pub w_hf: Matrix,
    pub w_ho: Matrix,
    pub w_hg: Matrix,
    pub b_i: Matrix,
    pub b_f: Matrix,
    pub b_o: Matrix,
    pub b_g: Matrix,
}

/// Intermediates of one LSTM step.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub g: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let wx = || Matrix::zeros(hidden, input);
        let wh = || Matrix::zeros(hidden, hidden);
        let b = || Matrix::zeros(hidden, 1);
        LstmParams {
            w_xi: wx(),
            w_xf: wx(),
            w_xo: wx(),
            w_xg: wx(),
            w_hi: wh(),
            w_hf: wh(),
            w_ho: wh(),
            w_hg: wh(),
            b_i: b(),
            b_f: b(),
            b_o: b(),
            b_g: b(),
        }
    }

    /// Weights from `U[-range, range]`, biases zero.
    pub fn uniform<R: Rng + ?Sized>(input: usize, hidden: usize, range: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(input, hidden);
        for (name, m) in p.matrices_mut() {
            if !name.starts_with("b_") {
                *m = Matrix::uniform(m.rows(), m.cols(), range, rng);
            }
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        self.w_xi.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_xi.rows()
    }

    pub fn matrices(&self) -> [(&'static str, &Matrix); 12] {
        [
            ("w_xi", &self.w_xi),
            ("w_xf", &self.w_xf),
            ("w_xo", &self.w_xo),
            ("w_xg", &self.w_xg),
            ("w_hi", &self.w_hi),
            ("w_hf", &self.w_hf),
            ("w_ho", &self.w_ho),
            ("w_hg", &self.w_hg),
            ("b_i", &self.b_i),
            ("b_f", &self.b_f),
            ("b_o", &self.b_o),
            ("b_g", &self.b_g),
        ]
    }

    pub fn matrices_mut(&mut self) -> [(&'static str, &mut Matrix); 12] {
        [
            ("w_xi", &mut self.w_xi),
            ("w_xf", &mut self.w_xf),
            ("w_xo", &mut self.w_xo),
            ("w_xg", &mut self.w_xg),
            ("w_hi", &mut self.w_hi),
            ("w_hf", &mut self.w_hf),
            ("w_ho", &mut self.w_ho),
            ("w_hg", &mut self.w_hg),
            ("b_i", &mut self.b_i),
            ("b_f", &mut self.b_f),
            ("b_o", &mut self.b_o),
            ("b_g", &mut self.b_g),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let (input, hidden) = (self.input_dim(), self.hidden_dim());
        for (name, m) in self.matrices() {
            let want = match &name[..3] {
                "w_x" => (hidden, input),
                "w_h" => (hidden, hidden),
                _ => (hidden, 1),
            };
            if m.shape() != want {
                return Err(V2cError::Shape(format!("lstm {name}: expected {want:?}, got {:?}", m.shape())));
            }
        }
        Ok(())
    }

    pub fn step(&self, x: &[f64], prev: &CellState) -> Result<(CellState, LstmCache)> {
        let hidden = self.hidden_dim();
        check_len("lstm input", x.len(), self.input_dim())?;
        check_len("lstm h_prev", prev.h.len(), hidden)?;
        check_len("lstm c_prev", prev.c.len(), hidden)?;

        let mut i = affine(&self.w_xi, &self.w_hi, &self.b_i, x, &prev.h);
        let mut f = affine(&self.w_xf, &self.w_hf, &self.b_f, x, &prev.h);
        let mut o = affine(&self.w_xo, &self.w_ho, &self.b_o, x, &prev.h);
        let mut g = affine(&self.w_xg, &self.w_hg, &self.b_g, x, &prev.h);
        i.iter_mut().for_each(|v| *v = sigmoid(*v));
        f.iter_mut().for_each(|v| *v = sigmoid(*v));
        o.iter_mut().for_each(|v| *v = sigmoid(*v));
        g.iter_mut().for_each(|v| *v = tanh(*v));

        let c: Vec<f64> = (0..hidden).map(|k| f[k] * prev.c[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|&v| tanh(v)).collect();
        let h: Vec<f64> = (0..hidden).map(|k| o[k] * tanh_c[k]).collect();

        let state = CellState { h, c: c.clone() };
        let cache = LstmCache { x: x.to_vec(), h_prev: prev.h.clone(), c_prev: prev.c.clone(), i, f, o, g, c, tanh_c };
        Ok((state, cache))
    }

    /// Adjoint of [`LstmParams::step`]; parameter gradients are added to `grads`.
    pub fn backward(&self, cache: &LstmCache, dh: &[f64], dc: &[f64], grads: &mut LstmParams) -> Result<StepGrads> {
        let hidden = self.hidden_dim();
        check_len("lstm dh", dh.len(), hidden)?;
        check_len("lstm dc", dc.len(), hidden)?;
        check_len("lstm cache", cache.c.len(), hidden)?;
        check_len("lstm cache input", cache.x.len(), self.input_dim())?;
        if grads.hidden_dim() != hidden || grads.input_dim() != self.input_dim() {
            return Err(V2cError::Shape("lstm gradient buffer does not match parameters".into()));
        }

        let mut da_i = vec![0.0; hidden];
        let mut da_f = vec![0.0; hidden];
        let mut da_o = vec![0.0; hidden];
        let mut da_g = vec![0.0; hidden];
        let mut dc_prev = vec![0.0; hidden];
        for k in 0..hidden {
            let (i, f, o, g, tc) = (cache.i[k], cache.f[k], cache.o[k], cache.g[k], cache.tanh_c[k]);
            let d_o = dh[k] * tc;
            let d_c = dc[k] + dh[k] * o * (1.0 - tc * tc);
            let d_i = d_c * g;
            let d_g = d_c * i;
            let d_f = d_c * cache.c_prev[k];
            dc_prev[k] = d_c * f;
            da_i[k] = d_i * i * (1.0 - i);
            da_f[k] = d_f * f * (1.0 - f);
            da_o[k] = d_o * o * (1.0 - o);
            da_g[k] = d_g * (1.0 - g * g);
        }

        grads.w_xi.add_outer(&da_i, &cache.x);
        grads.w_xf.add_outer(&da_f, &cache.x);
        grads.w_xo.add_outer(&da_o, &cache.x);
        grads.w_xg.add_outer(&da_g, &cache.x);
        grads.w_hi.add_outer(&da_i, &cache.h_prev);
        grads.w_hf.add_outer(&da_f, &cache.h_prev);
        grads.w_ho.add_outer(&da_o, &cache.h_prev);
        grads.w_hg.add_outer(&da_g, &cache.h_prev);
        grads.b_i.add_column(&da_i);
        grads.b_f.add_column(&da_f);
        grads.b_o.add_column(&da_o);
        grads.b_g.add_column(&da_g);

        let mut dx = vec![0.0; self.input_dim()];
        let mut dh_prev = vec![0.0; hidden];
        for (wx, wh, da) in [
            (&self.w_xi, &self.w_hi, &da_i),
            (&self.w_xf, &self.w_hf, &da_f),
            (&self.w_xo, &self.w_ho, &da_o),
            (&self.w_xg, &self.w_hg, &da_g),
        ] {
            wx.tmul_vec_acc(da, &mut dx);
            wh.tmul_vec_acc(da, &mut dh_prev);
        }
        Ok(StepGrads { dx, dh_prev, dc_prev })
    }
}

// ---------------------------------------------------------------------------
// GRU

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_xr: Matrix,
    pub w_xz: Matrix,
    pub w_xh: Matrix,
    pub w_hr: Matrix,
    pub w_hz: Matrix,
    pub w_hh: Matrix,
    pub b_r: Matrix,
    pub b_z: Matrix,
    pub b_h: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    /// `r ⊙ h_prev`
    pub rh: Vec<f64>,
    pub h_tilde: Vec<f64>,
}

impl GruParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let wx = || Matrix::zeros(hidden, input);
        let wh = || Matrix::zeros(hidden, hidden);
        let b = || Matrix::zeros(hidden, 1);
        GruParams { w_xr: wx(), w_xz: wx(), w_xh: wx(), w_hr: wh(), w_hz: wh(), w_hh: wh(), b_r: b(), b_z: b(), b_h: b() }
    }

    /// Weights from `U[-range, range]`, biases zero.
    pub fn uniform<R: Rng + ?Sized>(input: usize, hidden: usize, range: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(input, hidden);
        for (name, m) in p.matrices_mut() {
            if !name.starts_with("b_") {
                *m = Matrix::uniform(m.rows(), m.cols(), range, rng);
            }
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        self.w_xr.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_xr.rows()
    }

    pub fn matrices(&self) -> [(&'static str, &Matrix); 9] {
        [
            ("w_xr", &self.w_xr),
            ("w_xz", &self.w_xz),
            ("w_xh", &self.w_xh),
            ("w_hr", &self.w_hr),
            ("w_hz", &self.w_hz),
            ("w_hh", &self.w_hh),
            ("b_r", &self.b_r),
            ("b_z", &self.b_z),
            ("b_h", &self.b_h),
        ]
    }

    pub fn matrices_mut(&mut self) -> [(&'static str, &mut Matrix); 9] {
        [
            ("w_xr", &mut self.w_xr),
            ("w_xz", &mut self.w_xz),
            ("w_xh", &mut self.w_xh),
            ("w_hr", &mut self.w_hr),
            ("w_hz", &mut self.w_hz),
            ("w_hh", &mut self.w_hh),
            ("b_r", &mut self.b_r),
            ("b_z", &mut self.b_z),
            ("b_h", &mut self.b_h),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let (input, hidden) = (self.input_dim(), self.hidden_dim());
        for (name, m) in self.matrices() {
            let want = match &name[..3] {
                "w_x" => (hidden, input),
                "w_h" => (hidden, hidden),
                _ => (hidden, 1),
            };
            if m.shape() != want {
                return Err(V2cError::Shape(format!("gru {name}: expected {want:?}, got {:?}", m.shape())));
            }
        }
        Ok(())
    }

    pub fn step(&self, x: &[f64], prev: &CellState) -> Result<(CellState, GruCache)> {
        let hidden = self.hidden_dim();
        check_len("gru input", x.len(), self.input_dim())?;
        check_len("gru h_prev", prev.h.len(), hidden)?;

        let mut r = affine(&self.w_xr, &self.w_hr, &self.b_r, x, &prev.h);
        let mut z = affine(&self.w_xz, &self.w_hz, &self.b_z, x, &prev.h);
        r.iter_mut().for_each(|v| *v = sigmoid(*v));
        z.iter_mut().for_each(|v| *v = sigmoid(*v));
        let rh: Vec<f64> = r.iter().zip(&prev.h).map(|(a, b)| a * b).collect();
        let mut h_tilde = affine(&self.w_xh, &self.w_hh, &self.b_h, x, &rh);
        h_tilde.iter_mut().for_each(|v| *v = tanh(*v));
        let h: Vec<f64> = (0..hidden).map(|k| z[k] * prev.h[k] + (1.0 - z[k]) * h_tilde[k]).collect();

        let cache = GruCache { x: x.to_vec(), h_prev: prev.h.clone(), r, z, rh, h_tilde };
        Ok((CellState { h, c: Vec::new() }, cache))
    }

    /// Adjoint of [`GruParams::step`]; parameter gradients are added to `grads`.
    pub fn backward(&self, cache: &GruCache, dh: &[f64], grads: &mut GruParams) -> Result<StepGrads> {
        let hidden = self.hidden_dim();
        check_len("gru dh", dh.len(), hidden)?;
        check_len("gru cache", cache.z.len(), hidden)?;
        check_len("gru cache input", cache.x.len(), self.input_dim())?;
        if grads.hidden_dim() != hidden || grads.input_dim() != self.input_dim() {
            return Err(V2cError::Shape("gru gradient buffer does not match parameters".into()));
        }

        let mut dh_prev = vec![0.0; hidden];
        let mut da_z = vec![0.0; hidden];
        let mut da_h = vec![0.0; hidden];
        for k in 0..hidden {
            let (z, ht, hp) = (cache.z[k], cache.h_tilde[k], cache.h_prev[k]);
            let d_z = dh[k] * (hp - ht);
            let d_ht = dh[k] * (1.0 - z);
            dh_prev[k] = dh[k] * z;
            da_z[k] = d_z * z * (1.0 - z);
            da_h[k] = d_ht * (1.0 - ht * ht);
        }

        // candidate path through r ⊙ h_prev
        let mut d_rh = vec![0.0; hidden];
        self.w_hh.tmul_vec_acc(&da_h, &mut d_rh);
        let mut da_r = vec![0.0; hidden];
        for k in 0..hidden {
            let r = cache.r[k];
            dh_prev[k] += d_rh[k] * r;
            da_r[k] = d_rh[k] * cache.h_prev[k] * r * (1.0 - r);
        }

        grads.w_xr.add_outer(&da_r, &cache.x);
        grads.w_xz.add_outer(&da_z, &cache.x);
        grads.w_xh.add_outer(&da_h, &cache.x);
        grads.w_hr.add_outer(&da_r, &cache.h_prev);
        grads.w_hz.add_outer(&da_z, &cache.h_prev);
        grads.w_hh.add_outer(&da_h, &cache.rh);
        grads.b_r.add_column(&da_r);
        grads.b_z.add_column(&da_z);
        grads.b_h.add_column(&da_h);

        let mut dx = vec![0.0; self.input_dim()];
        self.w_xr.tmul_vec_acc(&da_r, &mut dx);
        self.w_xz.tmul_vec_acc(&da_z, &mut dx);
        self.w_xh.tmul_vec_acc(&da_h, &mut dx);
        self.w_hr.tmul_vec_acc(&da_r, &mut dh_prev);
        self.w_hz.tmul_vec_acc(&da_z, &mut dh_prev);
        Ok(StepGrads { dx, dh_prev, dc_prev: Vec::new() })
    }
}

// ---------------------------------------------------------------------------
// kind-erased wrappers used by the model

#[derive(Debug, Clone, PartialEq)]
pub enum CellParams {
    Lstm(LstmParams),
    Gru(GruParams),
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellCache {
    Lstm(LstmCache),
    Gru(GruCache),
}

impl CellParams {
    pub fn zeros(kind: CellKind, input: usize, hidden: usize) -> Self {
        match kind {
            CellKind::Lstm => CellParams::Lstm(LstmParams::zeros(input, hidden)),
            CellKind::Gru => CellParams::Gru(GruParams::zeros(input, hidden)),
        }
    }

    pub fn uniform<R: Rng + ?Sized>(kind: CellKind, input: usize, hidden: usize, range: f64, rng: &mut R) -> Self {
        match kind {
            CellKind::Lstm => CellParams::Lstm(LstmParams::uniform(input, hidden, range, rng)),
            CellKind::Gru => CellParams::Gru(GruParams::uniform(input, hidden, range, rng)),
        }
    }

    pub fn kind(&self) -> CellKind {
        match self {
            CellParams::Lstm(_) => CellKind::Lstm,
            CellParams::Gru(_) => CellKind::Gru,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            CellParams::Lstm(p) => p.input_dim(),
            CellParams::Gru(p) => p.input_dim(),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        match self {
            CellParams::Lstm(p) => p.hidden_dim(),
            CellParams::Gru(p) => p.hidden_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CellParams::Lstm(p) => p.validate(),
            CellParams::Gru(p) => p.validate(),
        }
    }

    pub fn matrices(&self) -> Vec<(&'static str, &Matrix)> {
        match self {
            CellParams::Lstm(p) => p.matrices().to_vec(),
            CellParams::Gru(p) => p.matrices().to_vec(),
        }
    }

    pub fn matrices_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        match self {
            CellParams::Lstm(p) => p.matrices_mut().into_iter().collect(),
            CellParams::Gru(p) => p.matrices_mut().into_iter().collect(),
        }
    }

    pub fn step(&self, x: &[f64], prev: &CellState) -> Result<(CellState, CellCache)> {
        match self {
            CellParams::Lstm(p) => p.step(x, prev).map(|(s, c)| (s, CellCache::Lstm(c))),
            CellParams::Gru(p) => p.step(x, prev).map(|(s, c)| (s, CellCache::Gru(c))),
        }
    }

    /// `dc` is ignored for GRU.
    pub fn backward(&self, cache: &CellCache, dh: &[f64], dc: &[f64], grads: &mut CellParams) -> Result<StepGrads> {
        match (self, cache, grads) {
            (CellParams::Lstm(p), CellCache::Lstm(c), CellParams::Lstm(g)) => p.backward(c, dh, dc, g),
            (CellParams::Gru(p), CellCache::Gru(c), CellParams::Gru(g)) => p.backward(c, dh, g),
            _ => Err(V2cError::Shape("cell kind of cache or gradient buffer does not match parameters".into())),
        }
    }
}
