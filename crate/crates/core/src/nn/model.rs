//! The classifier: input projection + ReLU, a stack of unidirectional LSTM
//! layers, and a linear readout of the last time step.
//!
//! Batches are packed time-major: row `t * B + b` holds time step `t` of
//! window `b`, so each layer's input contribution is one GEMM and each time
//! step touches a contiguous block of `B` rows.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, ArrayView3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub n_features: usize,
    pub hidden: usize,
    pub layers: usize,
    pub n_classes: usize,
}

/// Gate blocks along the `4H` axis are ordered input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// `in × 4H`
    pub w_in: Array2<f64>,
    /// `H × 4H`
    pub w_rec: Array2<f64>,
    /// `1 × 4H`
    pub bias: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    /// `F × H`
    pub proj_w: Array2<f64>,
    /// `1 × H`
    pub proj_b: Array2<f64>,
    pub layers: Vec<LayerParams>,
    /// `H × classes`
    pub out_w: Array2<f64>,
    /// `1 × classes`
    pub out_b: Array2<f64>,
}

impl Params {
    pub fn zeros(d: ModelDims) -> Self {
        let h = d.hidden;
        Self {
            proj_w: Array2::zeros((d.n_features, h)),
            proj_b: Array2::zeros((1, h)),
            layers: (0..d.layers)
                .map(|_| LayerParams {
                    w_in: Array2::zeros((h, 4 * h)),
                    w_rec: Array2::zeros((h, 4 * h)),
                    bias: Array2::zeros((1, 4 * h)),
                })
                .collect(),
            out_w: Array2::zeros((h, d.n_classes)),
            out_b: Array2::zeros((1, d.n_classes)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims())
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            n_features: self.proj_w.nrows(),
            hidden: self.proj_w.ncols(),
            layers: self.layers.len(),
            n_classes: self.out_w.ncols(),
        }
    }

    /// Every tensor in declared (checkpoint) order.
    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut v = vec![&self.proj_w, &self.proj_b];
        for l in &self.layers {
            v.extend([&l.w_in, &l.w_rec, &l.bias]);
        }
        v.extend([&self.out_w, &self.out_b]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut v = vec![&mut self.proj_w, &mut self.proj_b];
        for l in &mut self.layers {
            v.extend([&mut l.w_in, &mut l.w_rec, &mut l.bias]);
        }
        v.extend([&mut self.out_w, &mut self.out_b]);
        v
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut v = vec!["proj_w".to_string(), "proj_b".to_string()];
        for i in 0..self.layers.len() {
            v.extend([format!("lstm{i}_w_in"), format!("lstm{i}_w_rec"), format!("lstm{i}_bias")]);
        }
        v.extend(["out_w".to_string(), "out_b".to_string()]);
        v
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmClassifier {
    pub params: Params,
    pub dropout: f64,
    /// Also drop units of the last LSTM layer's output before the readout.
    pub dropout_after_last: bool,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn add_row(m: &mut Array2<f64>, row: &Array2<f64>) {
    let r = row.row(0);
    for mut x in m.rows_mut() {
        x += &r;
    }
}

fn col_sums(m: &Array2<f64>) -> Array2<f64> {
    m.sum_axis(Axis(0)).insert_axis(Axis(0))
}

/// Inverted dropout mask: 0 with probability `p`, else `1 / (1 - p)`.
pub fn dropout_mask<R: Rng + ?Sized>(rows: usize, cols: usize, p: f64, rng: &mut R) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_simple_fn((rows, cols), || if rng.random::<f64>() < p { 0.0 } else { keep })
}

/// Packs `B × T × F` windows into time-major `T·B × F`.
pub fn pack_time_major(batch: &ArrayView3<'_, f64>) -> Array2<f64> {
    let (b, t, f) = batch.dim();
    let mut out = Array2::zeros((t * b, f));
    for bi in 0..b {
        for ti in 0..t {
            out.row_mut(ti * b + bi).assign(&batch.slice(s![bi, ti, ..]));
        }
    }
    out
}

struct LayerCache {
    /// activated gates, `T·B × 4H`
    gates: Array2<f64>,
    c: Array2<f64>,
    h: Array2<f64>,
}

struct Cache {
    /// projection output after ReLU, before dropout
    proj: Array2<f64>,
    proj_mask: Option<Array2<f64>>,
    /// input of each layer (post-dropout)
    inputs: Vec<Array2<f64>>,
    layers: Vec<LayerCache>,
    /// masks applied to the outputs of layers `0..L-1`
    layer_masks: Vec<Option<Array2<f64>>>,
    /// readout mask, `B × H`
    last_mask: Option<Array2<f64>>,
    readout: Array2<f64>,
}

fn lstm_forward(u: &Array2<f64>, p: &LayerParams, b: usize, t_len: usize) -> LayerCache {
    let h = p.w_rec.nrows();
    let mut z = u.dot(&p.w_in);
    add_row(&mut z, &p.bias);
    let mut c = Array2::<f64>::zeros((t_len * b, h));
    let mut hs = Array2::<f64>::zeros((t_len * b, h));
    for t in 0..t_len {
        let rows = t * b..(t + 1) * b;
        if t > 0 {
            let prev = hs.slice(s![(t - 1) * b..t * b, ..]);
            general_mat_mul(1.0, &prev, &p.w_rec, 1.0, &mut z.slice_mut(s![rows.clone(), ..]));
        }
        for r in rows {
            let zr = z.row_mut(r).into_slice().expect("standard layout");
            for j in 0..h {
                let i = sigmoid(zr[j]);
                let f = sigmoid(zr[h + j]);
                let g = zr[2 * h + j].tanh();
                let o = sigmoid(zr[3 * h + j]);
                zr[j] = i;
                zr[h + j] = f;
                zr[2 * h + j] = g;
                zr[3 * h + j] = o;
                let c_prev = if t > 0 { c[[r - b, j]] } else { 0.0 };
                let cc = f * c_prev + i * g;
                c[[r, j]] = cc;
                hs[[r, j]] = o * cc.tanh();
            }
        }
    }
    LayerCache { gates: z, c, h: hs }
}

/// Returns (d input, dW_in, dW_rec, d bias) given the gradient on the layer's hidden outputs.
fn lstm_backward(
    u: &Array2<f64>,
    p: &LayerParams,
    cache: &LayerCache,
    dh_out: &Array2<f64>,
    b: usize,
    t_len: usize,
) -> (Array2<f64>, LayerParams) {
    let h = p.w_rec.nrows();
    let mut dz = Array2::<f64>::zeros((t_len * b, 4 * h));
    let mut dh_next = Array2::<f64>::zeros((b, h));
    let mut dc_next = Array2::<f64>::zeros((b, h));
    for t in (0..t_len).rev() {
        for bi in 0..b {
            let r = t * b + bi;
            let g_row = cache.gates.row(r);
            let dz_row = dz.row_mut(r).into_slice().expect("standard layout");
            for j in 0..h {
                let (i, f, g, o) = (g_row[j], g_row[h + j], g_row[2 * h + j], g_row[3 * h + j]);
                let cc = cache.c[[r, j]];
                let tc = cc.tanh();
                let dh = dh_out[[r, j]] + dh_next[[bi, j]];
                let d_o = dh * tc;
                let dc = dh * o * (1.0 - tc * tc) + dc_next[[bi, j]];
                let c_prev = if t > 0 { cache.c[[r - b, j]] } else { 0.0 };
                dc_next[[bi, j]] = dc * f;
                dz_row[j] = dc * g * i * (1.0 - i);
                dz_row[h + j] = dc * c_prev * f * (1.0 - f);
                dz_row[2 * h + j] = dc * i * (1.0 - g * g);
                dz_row[3 * h + j] = d_o * o * (1.0 - o);
            }
        }
        if t > 0 {
            let block = dz.slice(s![t * b..(t + 1) * b, ..]);
            general_mat_mul(1.0, &block, &p.w_rec.t(), 0.0, &mut dh_next);
        }
    }
    let w_in = u.t().dot(&dz);
    let w_rec = if t_len > 1 {
        cache
            .h
            .slice(s![..(t_len - 1) * b, ..])
            .t()
            .dot(&dz.slice(s![b.., ..]))
    } else {
        Array2::zeros((h, 4 * h))
    };
    let bias = col_sums(&dz);
    let du = dz.dot(&p.w_in.t());
    (du, LayerParams { w_in, w_rec, bias })
}

/// Row-wise log-softmax.
pub fn log_softmax(logits: &ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

pub fn softmax(logits: &ArrayView2<'_, f64>) -> Array2<f64> {
    log_softmax(logits).mapv(f64::exp)
}

impl LstmClassifier {
    /// Uniform ±1/√fan-in weights, zero biases, forget-gate bias 1.
    pub fn new<R: Rng + ?Sized>(dims: ModelDims, dropout: f64, dropout_after_last: bool, rng: &mut R) -> Self {
        let mut params = Params::zeros(dims);
        let h = dims.hidden;
        let fill = |m: &mut Array2<f64>, rng: &mut R| {
            let a = 1.0 / (m.nrows() as f64).sqrt();
            m.mapv_inplace(|_| rng.random_range(-a..a));
        };
        fill(&mut params.proj_w, rng);
        for l in &mut params.layers {
            fill(&mut l.w_in, rng);
            fill(&mut l.w_rec, rng);
            l.bias.slice_mut(s![0, h..2 * h]).fill(1.0);
        }
        fill(&mut params.out_w, rng);
        Self {
            params,
            dropout,
            dropout_after_last,
        }
    }

    pub fn dims(&self) -> ModelDims {
        self.params.dims()
    }

    fn check_input(&self, f: usize) -> Result<()> {
        let want = self.params.proj_w.nrows();
        if f != want {
            return Err(Error::Shape(format!("model expects {want} features, batch has {f}")));
        }
        Ok(())
    }

    fn run<R: Rng + ?Sized>(&self, x: &Array2<f64>, b: usize, t_len: usize, training: bool, rng: &mut R) -> (Array2<f64>, Cache) {
        let p = &self.params;
        let n_layers = p.layers.len();
        let h = p.proj_w.ncols();
        let drop = training && self.dropout > 0.0;
        let mask = |rows, rng: &mut R| drop.then(|| dropout_mask(rows, h, self.dropout, rng));

        let mut proj = x.dot(&p.proj_w);
        add_row(&mut proj, &p.proj_b);
        proj.mapv_inplace(|v| if v < 0.0 { 0.0 } else { v });
        let proj_mask = mask(t_len * b, rng);
        let mut input = match &proj_mask {
            Some(m) => &proj * m,
            None => proj.clone(),
        };

        let mut inputs = Vec::with_capacity(n_layers);
        let mut layers = Vec::with_capacity(n_layers);
        let mut layer_masks = Vec::with_capacity(n_layers);
        for (l, lp) in p.layers.iter().enumerate() {
            let cache = lstm_forward(&input, lp, b, t_len);
            let next = if l + 1 < n_layers {
                let m = mask(t_len * b, rng);
                let out = match &m {
                    Some(m) => &cache.h * m,
                    None => cache.h.clone(),
                };
                layer_masks.push(m);
                Some(out)
            } else {
                layer_masks.push(None);
                None
            };
            inputs.push(std::mem::replace(&mut input, next.unwrap_or_default()));
            layers.push(cache);
        }

        let last_h = layers.last().expect("at least one layer").h.slice(s![(t_len - 1) * b.., ..]).to_owned();
        let last_mask = if self.dropout_after_last { mask(b, rng) } else { None };
        let readout = match &last_mask {
            Some(m) => &last_h * m,
            None => last_h,
        };
        let mut logits = readout.dot(&p.out_w);
        add_row(&mut logits, &p.out_b);
        (
            logits,
            Cache {
                proj,
                proj_mask,
                inputs,
                layers,
                layer_masks,
                last_mask,
                readout,
            },
        )
    }

    /// Logits for a packed time-major batch of `b` windows.
    pub fn forward_packed<R: Rng + ?Sized>(&self, x: &Array2<f64>, b: usize, training: bool, rng: &mut R) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        if b == 0 || !x.nrows().is_multiple_of(b) || x.nrows() == 0 {
            return Err(Error::Shape(format!("{} packed rows do not divide into {b} windows", x.nrows())));
        }
        Ok(self.run(x, b, x.nrows() / b, training, rng).0)
    }

    /// Logits (`B × classes`) for a `B × T × F` batch. Dropout masks are drawn
    /// from `rng` only when `training`.
    pub fn forward<R: Rng + ?Sized>(&self, batch: &ArrayView3<'_, f64>, training: bool, rng: &mut R) -> Result<Array2<f64>> {
        let (b, _, f) = batch.dim();
        self.check_input(f)?;
        self.forward_packed(&pack_time_major(batch), b, training, rng)
    }

    /// Mean cross-entropy and its gradient for a packed batch, in training
    /// mode. A non-finite loss is reported as `NonFiniteLoss` with zero
    /// positions; the training loop fills them in.
    pub fn loss_and_grad_packed<R: Rng + ?Sized>(
        &self,
        x: &Array2<f64>,
        labels: &[usize],
        rng: &mut R,
    ) -> Result<(f64, Params)> {
        let b = labels.len();
        self.check_input(x.ncols())?;
        if b == 0 || !x.nrows().is_multiple_of(b) {
            return Err(Error::Shape(format!("{} packed rows do not divide into {b} windows", x.nrows())));
        }
        let n_classes = self.params.out_w.ncols();
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::Parameter(format!("label {bad} outside 0..{n_classes}")));
        }
        let t_len = x.nrows() / b;
        let p = &self.params;
        let (logits, cache) = self.run(x, b, t_len, true, rng);

        let logp = log_softmax(&logits.view());
        let loss = -labels.iter().enumerate().map(|(i, &l)| logp[[i, l]]).sum::<f64>() / b as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: 0, batch: 0 });
        }
        let mut dlogits = logp.mapv(f64::exp);
        for (i, &l) in labels.iter().enumerate() {
            dlogits[[i, l]] -= 1.0;
        }
        dlogits /= b as f64;

        let mut g = p.zeros_like();
        g.out_w = cache.readout.t().dot(&dlogits);
        g.out_b = col_sums(&dlogits);
        let mut d_last = dlogits.dot(&p.out_w.t());
        if let Some(m) = &cache.last_mask {
            d_last *= m;
        }

        let h = p.proj_w.ncols();
        let n_layers = p.layers.len();
        let mut dh = Array2::<f64>::zeros((t_len * b, h));
        dh.slice_mut(s![(t_len - 1) * b.., ..]).assign(&d_last);
        for l in (0..n_layers).rev() {
            let (du, lg) = lstm_backward(&cache.inputs[l], &p.layers[l], &cache.layers[l], &dh, b, t_len);
            g.layers[l] = lg;
            dh = du;
            // `dh` is now the gradient on this layer's input, i.e. the masked output below
            let below_mask = if l > 0 { cache.layer_masks[l - 1].as_ref() } else { cache.proj_mask.as_ref() };
            if let Some(m) = below_mask {
                dh *= m;
            }
        }
        // through the ReLU
        ndarray::Zip::from(&mut dh).and(&cache.proj).for_each(|d, &a| {
            if a <= 0.0 {
                *d = 0.0;
            }
        });
        g.proj_w = x.t().dot(&dh);
        g.proj_b = col_sums(&dh);
        Ok((loss, g))
    }

    pub fn loss_and_grad<R: Rng + ?Sized>(&self, batch: &ArrayView3<'_, f64>, labels: &[usize], rng: &mut R) -> Result<(f64, Params)> {
        if batch.dim().0 != labels.len() {
            return Err(Error::Shape(format!("{} windows, {} labels", batch.dim().0, labels.len())));
        }
        self.check_input(batch.dim().2)?;
        self.loss_and_grad_packed(&pack_time_major(batch), labels, rng)
    }
}

/// Argmax with the lowest index winning ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
