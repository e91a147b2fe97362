//! The parameter generator: a shared encoder `a = act(W1·x + b1)` feeding
//! one linear head per circuit parameter, squashed to `(0, π)` by
//! `θ_i = π·sigmoid(W2·a + b2)_i`.

use std::f64::consts::PI;
use std::hash::{Hash, Hasher};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ansatz::{FeatureVector, ParameterVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    /// Linear encoder; used for closed-form gradient checks.
    Identity,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

/// Weights of the generator, stored contiguously as
/// `[W1 (hidden×input) | b1 | W2 (output×hidden) | b2]`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaModelParams {
    input_dim: usize,
    hidden_dim: usize,
    output_dim: usize,
    activation: Activation,
    values: Vec<f64>,
}

impl MetaModelParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        let len = hidden_dim * input_dim + hidden_dim + output_dim * hidden_dim + output_dim;
        Self {
            input_dim,
            hidden_dim,
            output_dim,
            activation: Activation::Tanh,
            values: vec![0.0; len],
        }
    }

    /// Every weight and bias drawn from `N(0, σ²)`.
    pub fn random_normal<R: Rng + ?Sized>(
        input_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
        sigma: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let normal = Normal::new(0.0, sigma)
            .map_err(|e| Error::InvalidArgument(format!("init σ = {sigma}: {e}")))?;
        let mut p = Self::zeros(input_dim, hidden_dim, output_dim);
        for v in &mut p.values {
            *v = normal.sample(rng);
        }
        Ok(p)
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    /// Rebuilds from the flat layout; the length must match the shape.
    pub fn from_flat(
        input_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
        activation: Activation,
        values: Vec<f64>,
    ) -> Result<Self> {
        let expected = Self::zeros(input_dim, hidden_dim, output_dim).values.len();
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "meta-model parameter count",
                expected,
                got: values.len(),
            });
        }
        Ok(Self {
            input_dim,
            hidden_dim,
            output_dim,
            activation,
            values,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn offsets(&self) -> [usize; 4] {
        let w1 = 0;
        let b1 = w1 + self.hidden_dim * self.input_dim;
        let w2 = b1 + self.hidden_dim;
        let b2 = w2 + self.output_dim * self.hidden_dim;
        [w1, b1, w2, b2]
    }

    pub fn w1(&self) -> &[f64] {
        let o = self.offsets();
        &self.values[o[0]..o[1]]
    }

    pub fn b1(&self) -> &[f64] {
        let o = self.offsets();
        &self.values[o[1]..o[2]]
    }

    pub fn w2(&self) -> &[f64] {
        let o = self.offsets();
        &self.values[o[2]..o[3]]
    }

    pub fn b2(&self) -> &[f64] {
        let o = self.offsets();
        &self.values[o[3]..]
    }

    /// `(W1, b1, W2, b2)` as disjoint mutable slices.
    pub fn parts_mut(&mut self) -> (&mut [f64], &mut [f64], &mut [f64], &mut [f64]) {
        let o = self.offsets();
        let (w1, rest) = self.values.split_at_mut(o[1]);
        let (b1, rest) = rest.split_at_mut(o[2] - o[1]);
        let (w2, b2) = rest.split_at_mut(o[3] - o[2]);
        (w1, b1, w2, b2)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Hash of shape and exact weight bits.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        (self.input_dim, self.hidden_dim, self.output_dim).hash(&mut h);
        for v in &self.values {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }

    pub fn l2_norm(&self) -> f64 {
        crate::spectral::norm(&self.values)
    }
}

/// Activations saved by [`meta_forward`] for [`meta_backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    x: Vec<f64>,
    hidden: Vec<f64>,
    logits: Vec<f64>,
    fingerprint: u64,
}

impl ForwardCache {
    pub fn hidden(&self) -> &[f64] {
        &self.hidden
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Generator output `θ(x) ∈ (0, π)^p`, without a cache.
pub fn meta_generate(phi: &MetaModelParams, x: &FeatureVector) -> Result<ParameterVector> {
    meta_forward_inner(phi, x, false).map(|(theta, _)| theta)
}

/// Generator output plus the activations needed for backpropagation.
pub fn meta_forward(
    phi: &MetaModelParams,
    x: &FeatureVector,
) -> Result<(ParameterVector, ForwardCache)> {
    let (theta, cache) = meta_forward_inner(phi, x, true)?;
    Ok((theta, cache.expect("cache requested")))
}

fn meta_forward_inner(
    phi: &MetaModelParams,
    x: &FeatureVector,
    keep_cache: bool,
) -> Result<(ParameterVector, Option<ForwardCache>)> {
    if x.len() != phi.input_dim {
        return Err(Error::DimensionMismatch {
            what: "meta-model input",
            expected: phi.input_dim,
            got: x.len(),
        });
    }
    let (d, h) = (phi.input_dim, phi.hidden_dim);
    let (w1, b1, w2, b2) = (phi.w1(), phi.b1(), phi.w2(), phi.b2());
    let hidden: Vec<f64> = (0..h)
        .map(|j| {
            let pre = b1[j] + w1[j * d..(j + 1) * d].iter().zip(x.iter()).map(|(w, v)| w * v).sum::<f64>();
            phi.activation.apply(pre)
        })
        .collect();
    let logits: Vec<f64> = (0..phi.output_dim)
        .map(|i| b2[i] + w2[i * h..(i + 1) * h].iter().zip(&hidden).map(|(w, a)| w * a).sum::<f64>())
        .collect();
    let theta: Vec<f64> = logits.iter().map(|&z| PI * sigmoid(z)).collect();
    let cache = keep_cache.then(|| ForwardCache {
        x: x.to_vec(),
        hidden,
        logits,
        fingerprint: phi.fingerprint(),
    });
    Ok((theta.into(), cache))
}

/// Exact gradient of a loss with respect to every generator weight, given
/// `∂L/∂θ` at the cached forward pass. The result has the parameter layout.
pub fn meta_backward(
    phi: &MetaModelParams,
    cache: &ForwardCache,
    dl_dtheta: &[f64],
) -> Result<MetaModelParams> {
    if cache.fingerprint != phi.fingerprint() {
        return Err(Error::StaleCache);
    }
    if dl_dtheta.len() != phi.output_dim {
        return Err(Error::DimensionMismatch {
            what: "∂L/∂θ",
            expected: phi.output_dim,
            got: dl_dtheta.len(),
        });
    }
    let (d, h) = (phi.input_dim, phi.hidden_dim);
    let mut grad = MetaModelParams::zeros(d, h, phi.output_dim).with_activation(phi.activation);
    let w2 = phi.w2();
    // ∂θ/∂z = π σ(z)(1 − σ(z))
    let dz: Vec<f64> = cache
        .logits
        .iter()
        .zip(dl_dtheta)
        .map(|(&z, &g)| {
            let s = sigmoid(z);
            g * PI * s * (1.0 - s)
        })
        .collect();
    let mut da = vec![0.0; h];
    {
        let (_, _, gw2, gb2) = grad.parts_mut();
        for (i, &dzi) in dz.iter().enumerate() {
            gb2[i] = dzi;
            for j in 0..h {
                gw2[i * h + j] = dzi * cache.hidden[j];
                da[j] += w2[i * h + j] * dzi;
            }
        }
    }
    let (gw1, gb1, _, _) = grad.parts_mut();
    for j in 0..h {
        let dpre = da[j] * phi.activation.derivative_from_output(cache.hidden[j]);
        gb1[j] = dpre;
        for k in 0..d {
            gw1[j * d + k] = dpre * cache.x[k];
        }
    }
    Ok(grad)
}
