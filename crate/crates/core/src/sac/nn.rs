//! Dense feed-forward networks with hand-written backpropagation.

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    #[inline]
    fn derivative<T: Real>(self, z: T, y: T) -> T {
        match self {
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - y * y,
        }
    }
}

/// `y = x W + b` with `W` stored as `inputs x outputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Real> Linear<T> {
    /// Uniform fan-in initialization scaled by `scale`.
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, scale: f64, rng: &mut R) -> Self {
        let bound = scale / (inputs as f64).sqrt();
        let mut draw = || T::lit(rng.random_range(-bound..=bound));
        let weight = Array2::from_shape_simple_fn((inputs, outputs), &mut draw);
        let bias = Array1::from_shape_simple_fn(outputs, &mut draw);
        Self { weight, bias }
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }
}

/// Hidden layers use `activation`; the output layer is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Linear<T>>,
    pub activation: Activation,
}

/// Intermediate values kept by [`Mlp::forward_cached`] for the backward pass.
#[derive(Clone, Debug)]
pub struct MlpCache<T> {
    /// Input of every layer; `inputs[0]` is the network input.
    inputs: Vec<Array2<T>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Array2<T>>,
}

/// Parameter gradients laid out like [`Mlp::layers`].
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads<T> {
    pub layers: Vec<Linear<T>>,
}

impl<T: Real> MlpGrads<T> {
    pub fn slices(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice().expect("standard layout"), l.bias.as_slice().expect("standard layout")])
            .collect()
    }

    pub fn add_assign(&mut self, other: &MlpGrads<T>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }
}

impl<T: Real> Mlp<T> {
    /// `sizes` lists every layer width including input and output.
    /// The last layer's initial weights are multiplied by `final_scale`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, final_scale: f64, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| Linear::new(sizes[i], sizes[i + 1], if i + 1 == n { final_scale } else { 1.0 }, rng))
            .collect();
        Self { layers, activation }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").outputs()
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim()).chain(self.layers.iter().map(Linear::outputs)).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, x: &Array2<T>) -> Array2<T> {
        let act = self.activation;
        let mut h = x.dot(&self.layers[0].weight) + &self.layers[0].bias;
        for layer in &self.layers[1..] {
            h.mapv_inplace(|z| act.apply(z));
            h = h.dot(&layer.weight) + &layer.bias;
        }
        h
    }

    pub fn forward_cached(&self, x: &Array2<T>) -> (Array2<T>, MlpCache<T>) {
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n - 1);
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = h.dot(&layer.weight) + &layer.bias;
            inputs.push(h);
            if i + 1 == n {
                return (z, MlpCache { inputs, pre });
            }
            let act = self.activation;
            h = z.mapv(|v| act.apply(v));
            pre.push(z);
        }
        unreachable!("loop returns at the output layer")
    }

    /// Backpropagates `grad_out` (dL/d output). Returns parameter gradients when
    /// `param_grads` is set, and always the gradient with respect to the input.
    pub fn backward(
        &self,
        cache: &MlpCache<T>,
        grad_out: &Array2<T>,
        param_grads: bool,
    ) -> (Option<MlpGrads<T>>, Array2<T>) {
        let n = self.layers.len();
        let mut grads: Vec<Linear<T>> = Vec::with_capacity(if param_grads { n } else { 0 });
        let mut g = grad_out.clone();
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            if param_grads {
                let weight = cache.inputs[i].t().dot(&g);
                // optimizer steps walk parameters and gradients as flat slices
                let weight =
                    if weight.is_standard_layout() { weight } else { weight.as_standard_layout().into_owned() };
                grads.push(Linear { weight, bias: g.sum_axis(Axis(0)) });
            }
            let mut g_in = g.dot(&layer.weight.t());
            if i > 0 {
                let act = self.activation;
                Zip::from(&mut g_in)
                    .and(&cache.pre[i - 1])
                    .and(&cache.inputs[i])
                    .for_each(|gi, &z, &y| *gi *= act.derivative(z, y));
            }
            g = g_in;
        }
        let grads = param_grads.then(|| {
            grads.reverse();
            MlpGrads { layers: grads }
        });
        (grads, g)
    }

    /// Smallest |pre-activation| over all hidden units; finite-difference checks
    /// on ReLU nets are only meaningful away from the kink.
    pub fn min_abs_preactivation(&self, x: &Array2<T>) -> T {
        let (_, cache) = self.forward_cached(x);
        cache.pre.iter().flat_map(|p| p.iter().map(|v| v.abs())).fold(T::infinity(), T::min)
    }

    pub fn param_slices(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice().expect("standard layout"), l.bias.as_slice().expect("standard layout")])
            .collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [l.weight.as_slice_mut().expect("standard layout"), l.bias.as_slice_mut().expect("standard layout")]
            })
            .collect()
    }

    /// `self += (1 - polyak) * (source - self)`, i.e. `self <- polyak*self + (1-polyak)*source`.
    pub fn soft_update_from(&mut self, source: &Mlp<T>, polyak: T) {
        let mix = T::one() - polyak;
        for (dst, src) in self.param_slices_mut().into_iter().zip(source.param_slices()) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += mix * (s - *d);
            }
        }
    }

    pub fn max_abs_diff(&self, other: &Mlp<T>) -> T {
        self.param_slices()
            .into_iter()
            .zip(other.param_slices())
            .flat_map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| (x - y).abs()))
            .fold(T::zero(), T::max)
    }

    pub fn all_finite(&self) -> bool {
        self.param_slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam over a fixed list of parameter slices.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    cfg: AdamConfig,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: AdamConfig, shapes: &[usize]) -> Self {
        Self {
            cfg,
            step: 0,
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn for_mlp(cfg: AdamConfig, net: &Mlp<T>) -> Self {
        let shapes: Vec<usize> = net.param_slices().iter().map(|s| s.len()).collect();
        Self::new(cfg, &shapes)
    }

    pub fn step(&mut self, params: Vec<&mut [T]>, grads: Vec<&[T]>) {
        debug_assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let b1 = T::lit(self.cfg.beta1);
        let b2 = T::lit(self.cfg.beta2);
        let one = T::one();
        let bc1 = one - b1.powi(self.step);
        let bc2 = one - b2.powi(self.step);
        let lr = T::lit(self.cfg.lr);
        let eps = T::lit(self.cfg.eps);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
