use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

/// Weights and bias of one affine layer; also used for gradients and
/// optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Layer {
    fn zeros_like(&self) -> Self {
        Self { w: DMatrix::zeros(self.w.nrows(), self.w.ncols()), b: DVector::zeros(self.b.len()) }
    }
}

/// Intermediate values of a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<DMatrix<f64>>,
    pre: Vec<DMatrix<f64>>,
}

/// Fully connected network with a hidden activation and a linear output.
/// Batches are column-major: one sample per column.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

impl Mlp {
    /// Uniform initialization in `±1/√fan_in` for weights and biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes, activation)?;
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.w.ncols() as f64).sqrt();
            layer.w.iter_mut().for_each(|x| *x = rng.random_range(-bound..bound));
            layer.b.iter_mut().for_each(|x| *x = rng.random_range(-bound..bound));
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize], activation: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Input(format!("invalid layer sizes {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .map(|p| Layer { w: DMatrix::zeros(p[1], p[0]), b: DVector::zeros(p[1]) })
            .collect();
        Ok(Self { layers, activation })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().w.nrows()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.w.nrows()));
        s
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn check_input(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.nrows() != self.input_dim() {
            return Err(Error::dim("network input", self.input_dim(), x.nrows()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_one(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let y = self.forward(&DMatrix::from_column_slice(x.len(), 1, x.as_slice()))?;
        Ok(y.column(0).into_owned())
    }

    pub fn forward_cached(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, ForwardCache)> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.w * &h;
            for mut col in z.column_iter_mut() {
                col += &layer.b;
            }
            inputs.push(h);
            h = if l == last { z.clone() } else { z.map(|v| self.activation.apply(v)) };
            pre.push(z);
        }
        Ok((h, ForwardCache { inputs, pre }))
    }

    /// Gradients of `Σ upstream ∘ y` with respect to every parameter and to
    /// the input batch.
    pub fn backward(&self, cache: &ForwardCache, upstream: &DMatrix<f64>) -> Result<(Vec<Layer>, DMatrix<f64>)> {
        let out = cache.pre.last().unwrap();
        if upstream.shape() != out.shape() {
            return Err(Error::dim("upstream gradient", out.len(), upstream.len()));
        }
        let mut grads: Vec<Layer> = self.layers.iter().map(Layer::zeros_like).collect();
        let mut delta = upstream.clone();
        for l in (0..self.layers.len()).rev() {
            grads[l].w = &delta * cache.inputs[l].transpose();
            grads[l].b = DVector::from_iterator(delta.nrows(), delta.row_iter().map(|r| r.sum()));
            let dx = self.layers[l].w.tr_mul(&delta);
            delta = if l > 0 {
                dx.zip_map(&cache.pre[l - 1], |g, p| g * self.activation.derivative(p))
            } else {
                dx
            };
        }
        Ok((grads, delta))
    }

    /// Forward then backward in one call.
    pub fn gradients(&self, x: &DMatrix<f64>, upstream: &DMatrix<f64>) -> Result<(Vec<Layer>, DMatrix<f64>)> {
        let (_, cache) = self.forward_cached(x)?;
        self.backward(&cache, upstream)
    }

    /// `θ_self ← τ·θ_src + (1 − τ)·θ_self`.
    pub fn polyak(&mut self, src: &Mlp, tau: f64) {
        for (dst, s) in self.layers.iter_mut().zip(&src.layers) {
            dst.w.zip_apply(&s.w, |d, v| *d = tau * v + (1.0 - tau) * *d);
            dst.b.zip_apply(&s.b, |d, v| *d = tau * v + (1.0 - tau) * *d);
        }
    }

    /// Parameters in a flat vector (layer by layer, weights column-major,
    /// then bias).
    pub fn flat_params(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_flat_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(Error::dim("flat parameters", self.num_params(), p.len()));
        }
        let mut k = 0;
        for layer in &mut self.layers {
            for x in layer.w.iter_mut().chain(layer.b.iter_mut()) {
                *x = p[k];
                k += 1;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.iter().chain(l.b.iter()).all(|x| x.is_finite()))
    }
}

pub fn flatten(layers: &[Layer]) -> Vec<f64> {
    layers.iter().flat_map(|l| l.w.iter().chain(l.b.iter()).copied().collect::<Vec<_>>()).collect()
}

/// Euclidean norm of all gradient entries.
pub fn grad_norm(grads: &[Layer]) -> f64 {
    grads
        .iter()
        .map(|g| g.w.norm_squared() + g.b.norm_squared())
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients so their joint norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Layer], max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.w *= scale;
            g.b *= scale;
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

/// Adam (β₁ = 0.9, β₂ = 0.999, ε = 1e-8) or plain gradient descent.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    t: i32,
    m: Vec<Layer>,
    v: Vec<Layer>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, net: &Mlp) -> Self {
        let zeros: Vec<Layer> = net.layers.iter().map(Layer::zeros_like).collect();
        Self { kind, lr, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &[Layer]) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in net.layers.iter_mut().zip(grads) {
                    p.w.zip_apply(&g.w, |x, d| *x -= self.lr * d);
                    p.b.zip_apply(&g.b, |x, d| *x -= self.lr * d);
                }
            }
            OptimizerKind::Adam => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                self.t += 1;
                let c1 = 1.0 - B1.powi(self.t);
                let c2 = 1.0 - B2.powi(self.t);
                let lr = self.lr;
                let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                    *m = B1 * *m + (1.0 - B1) * g;
                    *v = B2 * *v + (1.0 - B2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
                };
                for (((p, g), m), v) in net.layers.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
                    for i in 0..p.w.len() {
                        update(&mut p.w[i], g.w[i], &mut m.w[i], &mut v.w[i]);
                    }
                    for i in 0..p.b.len() {
                        update(&mut p.b[i], g.b[i], &mut m.b[i], &mut v.b[i]);
                    }
                }
            }
        }
    }
}
