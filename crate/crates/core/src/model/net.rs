//! Network tensors with a forward pass that records what the backward pass
//! needs. All arithmetic is f64.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::config::{ClassTask, ModelConfig, RegressionTask};
use crate::rng::SeededRng;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `out x in`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    fn zeros(out: usize, inp: usize) -> Self {
        Self {
            w: Array2::zeros((out, inp)),
            b: Array1::zeros(out),
        }
    }

    fn init(out: usize, inp: usize, gain: f64, seed: u64, name: &str) -> Self {
        let mut rng = SeededRng::for_label(seed, name);
        let std = gain / (inp as f64).sqrt();
        Self {
            w: Array2::from_shape_simple_fn((out, inp), || std * rng.normal()),
            b: Array1::zeros(out),
        }
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }

    /// Accumulates parameter gradients into `grad`, returns the input
    /// gradient.
    fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.w += &dy.t().dot(x);
        grad.b += &dy.sum_axis(Axis(0));
        dy.dot(&self.w)
    }

    fn forward_vec(&self, x: &Array1<f64>) -> Array1<f64> {
        self.w.dot(x) + &self.b
    }

    fn backward_vec(&self, x: &Array1<f64>, dy: &Array1<f64>, grad: &mut Linear) -> Array1<f64> {
        let outer = dy
            .view()
            .insert_axis(Axis(1))
            .dot(&x.view().insert_axis(Axis(0)));
        grad.w += &outer;
        grad.b += dy;
        self.w.t().dot(dy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    fn new(dim: usize) -> Self {
        Self {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
        }
    }

    fn zeros(dim: usize) -> Self {
        Self {
            gamma: Array1::zeros(dim),
            beta: Array1::zeros(dim),
        }
    }

    fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LnCache) {
        let n = x.ncols() as f64;
        let mut xhat = x.clone();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / n;
            row -= mean;
            let var = row.iter().map(|v| v * v).sum::<f64>() / n;
            *inv = 1.0 / (var + LN_EPS).sqrt();
            row *= *inv;
        }
        let y = &xhat * &self.gamma + &self.beta;
        (y, LnCache { xhat, inv_std })
    }

    fn backward(&self, cache: &LnCache, dy: &Array2<f64>, grad: &mut LayerNorm) -> Array2<f64> {
        grad.gamma += &(dy * &cache.xhat).sum_axis(Axis(0));
        grad.beta += &dy.sum_axis(Axis(0));
        let n = dy.ncols() as f64;
        let dxhat = dy * &self.gamma;
        let mut dx = Array2::zeros(dy.dim());
        for (((mut out, dxh), xh), &inv) in dx
            .rows_mut()
            .into_iter()
            .zip(dxhat.rows())
            .zip(cache.xhat.rows())
            .zip(cache.inv_std.iter())
        {
            let sum_d = dxh.sum();
            let sum_dx = dxh.dot(&xh);
            for i in 0..out.len() {
                out[i] = inv / n * (n * dxh[i] - sum_d - xh[i] * sum_dx);
            }
        }
        dx
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub ln1: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

impl EncoderLayer {
    fn init(cfg: &ModelConfig, seed: u64, prefix: &str) -> Self {
        let m = cfg.model_dim;
        let f = cfg.ff_dim;
        let name = |s: &str| format!("{prefix}.{s}");
        Self {
            ln1: LayerNorm::new(m),
            q: Linear::init(m, m, 1.0, seed, &name("attn.q")),
            k: Linear::init(m, m, 1.0, seed, &name("attn.k")),
            v: Linear::init(m, m, 1.0, seed, &name("attn.v")),
            o: Linear::init(m, m, 1.0, seed, &name("attn.o")),
            ln2: LayerNorm::new(m),
            ff1: Linear::init(f, m, 2f64.sqrt(), seed, &name("ff1")),
            ff2: Linear::init(m, f, 1.0, seed, &name("ff2")),
        }
    }

    fn zeros(cfg: &ModelConfig) -> Self {
        let m = cfg.model_dim;
        let f = cfg.ff_dim;
        Self {
            ln1: LayerNorm::zeros(m),
            q: Linear::zeros(m, m),
            k: Linear::zeros(m, m),
            v: Linear::zeros(m, m),
            o: Linear::zeros(m, m),
            ln2: LayerNorm::zeros(m),
            ff1: Linear::zeros(f, m),
            ff2: Linear::zeros(m, f),
        }
    }
}

/// Every trainable tensor. Gradients and optimizer moments use the same
/// type.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub conv1: Linear,
    pub conv2: Linear,
    pub layers: Vec<EncoderLayer>,
    pub final_ln: LayerNorm,
    pub embed: Linear,
    pub regression_heads: Vec<Option<Linear>>,
    pub class_heads: Vec<Option<Linear>>,
}

impl Network {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let k = cfg.kernel_size;
        let c = cfg.conv_channels;
        let m = cfg.model_dim;
        let d = cfg.embed_dim;
        Self {
            conv1: Linear::init(c, k * cfg.n_mels, 2f64.sqrt(), seed, "conv1"),
            conv2: Linear::init(m, k * c, 2f64.sqrt(), seed, "conv2"),
            layers: (0..cfg.encoder_layers)
                .map(|l| EncoderLayer::init(cfg, seed, &format!("encoder.{l}")))
                .collect(),
            final_ln: LayerNorm::new(m),
            embed: Linear::init(d, m, 2f64.sqrt(), seed, "embed"),
            regression_heads: RegressionTask::ALL
                .iter()
                .map(|t| {
                    cfg.heads
                        .has_regression(*t)
                        .then(|| Linear::init(1, d, 1.0, seed, &format!("head.{}", t.name())))
                })
                .collect(),
            class_heads: ClassTask::ALL
                .iter()
                .map(|t| {
                    cfg.heads.has_class(*t).then(|| {
                        Linear::init(t.classes(), d, 1.0, seed, &format!("head.{}", t.name()))
                    })
                })
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(&mut |_, t| t.iter_mut().for_each(|v| *v = 0.0));
        z
    }

    /// Zero gradients for `cfg`.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let k = cfg.kernel_size;
        let c = cfg.conv_channels;
        let m = cfg.model_dim;
        let d = cfg.embed_dim;
        Self {
            conv1: Linear::zeros(c, k * cfg.n_mels),
            conv2: Linear::zeros(m, k * c),
            layers: (0..cfg.encoder_layers)
                .map(|_| EncoderLayer::zeros(cfg))
                .collect(),
            final_ln: LayerNorm::zeros(m),
            embed: Linear::zeros(d, m),
            regression_heads: RegressionTask::ALL
                .iter()
                .map(|t| cfg.heads.has_regression(*t).then(|| Linear::zeros(1, d)))
                .collect(),
            class_heads: ClassTask::ALL
                .iter()
                .map(|t| {
                    cfg.heads
                        .has_class(*t)
                        .then(|| Linear::zeros(t.classes(), d))
                })
                .collect(),
        }
    }

    /// Visits tensors in a fixed order with their names and shapes.
    pub fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        let mut lin = |name: &str, l: &Linear| {
            f(
                &format!("{name}.weight"),
                l.w.shape(),
                l.w.as_slice().expect("contiguous"),
            );
            f(
                &format!("{name}.bias"),
                l.b.shape(),
                l.b.as_slice().expect("contiguous"),
            );
        };
        lin("conv1", &self.conv1);
        lin("conv2", &self.conv2);
        for (i, layer) in self.layers.iter().enumerate() {
            let p = format!("encoder.{i}");
            lin(&format!("{p}.attn.q"), &layer.q);
            lin(&format!("{p}.attn.k"), &layer.k);
            lin(&format!("{p}.attn.v"), &layer.v);
            lin(&format!("{p}.attn.o"), &layer.o);
            lin(&format!("{p}.ff1"), &layer.ff1);
            lin(&format!("{p}.ff2"), &layer.ff2);
        }
        lin("embed", &self.embed);
        for (t, h) in RegressionTask::ALL.iter().zip(&self.regression_heads) {
            if let Some(h) = h {
                lin(&format!("head.{}", t.name()), h);
            }
        }
        for (t, h) in ClassTask::ALL.iter().zip(&self.class_heads) {
            if let Some(h) = h {
                lin(&format!("head.{}", t.name()), h);
            }
        }
        let mut ln = |name: &str, l: &LayerNorm| {
            f(
                &format!("{name}.gamma"),
                l.gamma.shape(),
                l.gamma.as_slice().expect("contiguous"),
            );
            f(
                &format!("{name}.beta"),
                l.beta.shape(),
                l.beta.as_slice().expect("contiguous"),
            );
        };
        for (i, layer) in self.layers.iter().enumerate() {
            ln(&format!("encoder.{i}.ln1"), &layer.ln1);
            ln(&format!("encoder.{i}.ln2"), &layer.ln2);
        }
        ln("final_ln", &self.final_ln);
    }

    /// Same order as [`Network::visit`].
    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        let mut lin = |name: &str, l: &mut Linear| {
            f(
                &format!("{name}.weight"),
                l.w.as_slice_mut().expect("contiguous"),
            );
            f(
                &format!("{name}.bias"),
                l.b.as_slice_mut().expect("contiguous"),
            );
        };
        lin("conv1", &mut self.conv1);
        lin("conv2", &mut self.conv2);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let p = format!("encoder.{i}");
            lin(&format!("{p}.attn.q"), &mut layer.q);
            lin(&format!("{p}.attn.k"), &mut layer.k);
            lin(&format!("{p}.attn.v"), &mut layer.v);
            lin(&format!("{p}.attn.o"), &mut layer.o);
            lin(&format!("{p}.ff1"), &mut layer.ff1);
            lin(&format!("{p}.ff2"), &mut layer.ff2);
        }
        lin("embed", &mut self.embed);
        for (t, h) in RegressionTask::ALL
            .iter()
            .zip(self.regression_heads.iter_mut())
        {
            if let Some(h) = h {
                lin(&format!("head.{}", t.name()), h);
            }
        }
        for (t, h) in ClassTask::ALL.iter().zip(self.class_heads.iter_mut()) {
            if let Some(h) = h {
                lin(&format!("head.{}", t.name()), h);
            }
        }
        let mut ln = |name: &str, l: &mut LayerNorm| {
            f(
                &format!("{name}.gamma"),
                l.gamma.as_slice_mut().expect("contiguous"),
            );
            f(
                &format!("{name}.beta"),
                l.beta.as_slice_mut().expect("contiguous"),
            );
        };
        for (i, layer) in self.layers.iter_mut().enumerate() {
            ln(&format!("encoder.{i}.ln1"), &mut layer.ln1);
            ln(&format!("encoder.{i}.ln2"), &mut layer.ln2);
        }
        ln("final_ln", &mut self.final_ln);
    }

    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.visit(&mut |name, shape, _| out.push((name.to_string(), shape.to_vec())));
        out
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, t| n += t.len());
        n
    }

    /// `self += other * scale`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Network, scale: f64) {
        let mut flat = Vec::new();
        other.visit(&mut |_, _, t| flat.push(t.to_vec()));
        let mut it = flat.into_iter();
        self.visit_mut(&mut |_, t| {
            let o = it.next().expect("same structure");
            for (a, b) in t.iter_mut().zip(o) {
                *a += b * scale;
            }
        });
    }

    /// Copies a tensor out by name.
    pub fn get(&self, name: &str) -> Option<Vec<f64>> {
        let mut found = None;
        self.visit(&mut |n, _, t| {
            if n == name {
                found = Some(t.to_vec());
            }
        });
        found
    }
}

/// Stride-2 im2col: row `t` holds frames `2t - pad .. 2t + pad`,
/// zero outside the input.
fn im2col(x: &Array2<f64>, kernel: usize) -> Array2<f64> {
    let (len, ch) = x.dim();
    let pad = kernel / 2;
    let out_len = (len + 2 * pad - kernel) / 2 + 1;
    let mut p = Array2::zeros((out_len, kernel * ch));
    for t in 0..out_len {
        for k in 0..kernel {
            let src = (2 * t + k) as isize - pad as isize;
            if src >= 0 && (src as usize) < len {
                p.slice_mut(s![t, k * ch..(k + 1) * ch])
                    .assign(&x.row(src as usize));
            }
        }
    }
    p
}

fn col2im(dp: &Array2<f64>, kernel: usize, len: usize, ch: usize) -> Array2<f64> {
    let pad = kernel / 2;
    let mut dx = Array2::zeros((len, ch));
    for t in 0..dp.nrows() {
        for k in 0..kernel {
            let src = (2 * t + k) as isize - pad as isize;
            if src >= 0 && (src as usize) < len {
                let mut row = dx.row_mut(src as usize);
                row += &dp.slice(s![t, k * ch..(k + 1) * ch]);
            }
        }
    }
    dx
}

pub fn positional_encoding(len: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, dim), |(t, i)| {
        let rate = 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
        let angle = t as f64 / rate;
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

struct LayerCache {
    input: Array2<f64>,
    ln1: LnCache,
    u1: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    attn_out: Array2<f64>,
    ln2: LnCache,
    u2: Array2<f64>,
    f1: Array2<f64>,
    g: Array2<f64>,
}

/// Activations kept for the backward pass.
pub struct ForwardCache {
    p1: Array2<f64>,
    y1: Array2<f64>,
    a1: Array2<f64>,
    p2: Array2<f64>,
    y2: Array2<f64>,
    layers: Vec<LayerCache>,
    final_ln: LnCache,
    pooled: Array1<f64>,
    e_pre: Array1<f64>,
    embedding: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawOutput {
    pub embedding: Array1<f64>,
    pub regression: Vec<Option<f64>>,
    pub logits: Vec<Option<Array1<f64>>>,
}

/// Gradient of the loss with respect to the network outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrad {
    pub regression: Vec<f64>,
    pub logits: Vec<Option<Array1<f64>>>,
    /// Extra gradient on the embedding itself (unused in training, handy
    /// for probing).
    pub embedding: Option<Array1<f64>>,
}

impl Network {
    pub fn forward(&self, cfg: &ModelConfig, x: ArrayView2<f64>) -> (RawOutput, ForwardCache) {
        let kernel = cfg.kernel_size;
        let p1 = im2col(&x.to_owned(), kernel);
        let y1 = self.conv1.forward(&p1);
        let a1 = y1.mapv(gelu);
        let p2 = im2col(&a1, kernel);
        let y2 = self.conv2.forward(&p2);
        let mut h = y2.mapv(gelu) + positional_encoding(y2.nrows(), cfg.model_dim);

        let heads = cfg.attn_heads;
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (u1, ln1) = layer.ln1.forward(&h);
            let q = layer.q.forward(&u1);
            let k = layer.k.forward(&u1);
            let v = layer.v.forward(&u1);
            let mut concat = Array2::zeros(q.dim());
            let mut probs = Vec::with_capacity(heads);
            for hd in 0..heads {
                let cols = s![.., hd * dh..(hd + 1) * dh];
                let mut sc = q.slice(cols).dot(&k.slice(cols).t()) * scale;
                softmax_rows(&mut sc);
                concat.slice_mut(cols).assign(&sc.dot(&v.slice(cols)));
                probs.push(sc);
            }
            let att = layer.o.forward(&concat);
            let h1 = &h + &att;
            let (u2, ln2) = layer.ln2.forward(&h1);
            let f1 = layer.ff1.forward(&u2);
            let g = f1.mapv(gelu);
            let f2 = layer.ff2.forward(&g);
            let h2 = &h1 + &f2;
            layers.push(LayerCache {
                input: h,
                ln1,
                u1,
                q,
                k,
                v,
                probs,
                attn_out: concat,
                ln2,
                u2,
                f1,
                g,
            });
            h = h2;
        }
        let (hf, final_ln) = self.final_ln.forward(&h);
        let pooled = hf.mean_axis(Axis(0)).expect("non-empty sequence");
        let e_pre = self.embed.forward_vec(&pooled);
        let embedding = e_pre.mapv(gelu);
        let regression = self
            .regression_heads
            .iter()
            .map(|hd| hd.as_ref().map(|l| l.forward_vec(&embedding)[0]))
            .collect();
        let logits = self
            .class_heads
            .iter()
            .map(|hd| hd.as_ref().map(|l| l.forward_vec(&embedding)))
            .collect();
        let out = RawOutput {
            embedding: embedding.clone(),
            regression,
            logits,
        };
        let cache = ForwardCache {
            p1,
            y1,
            a1,
            p2,
            y2,
            layers,
            final_ln,
            pooled,
            e_pre,
            embedding,
        };
        (out, cache)
    }

    /// Accumulates parameter gradients into `grad`.
    pub fn backward(
        &self,
        cfg: &ModelConfig,
        cache: &ForwardCache,
        dout: &OutputGrad,
        grad: &mut Network,
    ) {
        let mut de = dout
            .embedding
            .clone()
            .unwrap_or_else(|| Array1::zeros(cfg.embed_dim));
        for ((head, ghead), &dy) in self
            .regression_heads
            .iter()
            .zip(grad.regression_heads.iter_mut())
            .zip(&dout.regression)
        {
            if let (Some(h), Some(gh)) = (head, ghead) {
                de += &h.backward_vec(&cache.embedding, &Array1::from_elem(1, dy), gh);
            }
        }
        for ((head, ghead), dy) in self
            .class_heads
            .iter()
            .zip(grad.class_heads.iter_mut())
            .zip(&dout.logits)
        {
            if let (Some(h), Some(gh), Some(dy)) = (head, ghead, dy) {
                de += &h.backward_vec(&cache.embedding, dy, gh);
            }
        }
        let de_pre = &de * &cache.e_pre.mapv(gelu_grad);
        let dpooled = self
            .embed
            .backward_vec(&cache.pooled, &de_pre, &mut grad.embed);

        let seq = cfg.encoder_len();
        let dhf = Array2::from_shape_fn((seq, cfg.model_dim), |(_, j)| dpooled[j] / seq as f64);
        let mut dh = self
            .final_ln
            .backward(&cache.final_ln, &dhf, &mut grad.final_ln);

        let heads = cfg.attn_heads;
        let dhd = cfg.head_dim();
        let scale = 1.0 / (dhd as f64).sqrt();
        for ((layer, lc), glayer) in self
            .layers
            .iter()
            .zip(&cache.layers)
            .zip(grad.layers.iter_mut())
            .rev()
        {
            // Feed-forward branch.
            let dg = layer.ff2.backward(&lc.g, &dh, &mut glayer.ff2);
            let df1 = dg * &lc.f1.mapv(gelu_grad);
            let du2 = layer.ff1.backward(&lc.u2, &df1, &mut glayer.ff1);
            let dh1 = &dh + &layer.ln2.backward(&lc.ln2, &du2, &mut glayer.ln2);

            // Attention branch.
            let dconcat = layer.o.backward(&lc.attn_out, &dh1, &mut glayer.o);
            let mut dq = Array2::zeros(lc.q.dim());
            let mut dk = Array2::zeros(lc.k.dim());
            let mut dv = Array2::zeros(lc.v.dim());
            for hd in 0..heads {
                let cols = s![.., hd * dhd..(hd + 1) * dhd];
                let p = &lc.probs[hd];
                let do_h = dconcat.slice(cols);
                let dp = do_h.dot(&lc.v.slice(cols).t());
                dv.slice_mut(cols).assign(&p.t().dot(&do_h));
                let mut ds = p * &dp;
                for (mut row, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                    let total = row.sum();
                    row.zip_mut_with(&prow, |r, &pv| *r -= pv * total);
                }
                ds *= scale;
                dq.slice_mut(cols).assign(&ds.dot(&lc.k.slice(cols)));
                dk.slice_mut(cols).assign(&ds.t().dot(&lc.q.slice(cols)));
            }
            let du1 = layer.q.backward(&lc.u1, &dq, &mut glayer.q)
                + layer.k.backward(&lc.u1, &dk, &mut glayer.k)
                + layer.v.backward(&lc.u1, &dv, &mut glayer.v);
            dh = &dh1 + &layer.ln1.backward(&lc.ln1, &du1, &mut glayer.ln1);
            debug_assert_eq!(dh.dim(), lc.input.dim());
        }

        // Convolution stack; positional encoding is constant.
        let dy2 = dh * &cache.y2.mapv(gelu_grad);
        let dp2 = self.conv2.backward(&cache.p2, &dy2, &mut grad.conv2);
        let da1 = col2im(&dp2, cfg.kernel_size, cache.a1.nrows(), cache.a1.ncols());
        let dy1 = da1 * &cache.y1.mapv(gelu_grad);
        // Input gradient is not needed.
        grad.conv1.w += &dy1.t().dot(&cache.p1);
        grad.conv1.b += &dy1.sum_axis(Axis(0));
    }
}
