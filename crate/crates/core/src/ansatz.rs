//! Hardware-efficient layered ansatz with angle encoding.
//!
//! Circuit layout: for each feature `i`, `RX(x_i)` then `RZ(scale·x_i)` on
//! qubit `i mod N`; then `L` layers, each of `RX, RY, RZ` on every qubit
//! followed by the CNOT ring `(q, q+1 mod N)` for `q = 0..N`.
//!
//! Parameter layout is layer-major, then qubit, then rotation:
//! `index(ℓ, q, r) = ℓ·3N + 3q + r` with `r = 0 (RX), 1 (RY), 2 (RZ)`.

use std::ops::{Deref, DerefMut, Range};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulator::{run_sequence, GateOp, GateSequence, StateVector};

const ROTATIONS_PER_QUBIT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnsatzSpec {
    pub num_qubits: usize,
    pub num_layers: usize,
    pub feature_dim: usize,
    pub encoding_rz_scale: f64,
}

impl Default for AnsatzSpec {
    fn default() -> Self {
        Self {
            num_qubits: 8,
            num_layers: 3,
            feature_dim: 8,
            encoding_rz_scale: 0.01,
        }
    }
}

impl AnsatzSpec {
    pub fn new(num_qubits: usize, num_layers: usize, feature_dim: usize) -> Self {
        Self {
            num_qubits,
            num_layers,
            feature_dim,
            ..Self::default()
        }
    }

    /// `p = N·L·3`.
    pub fn num_params(&self) -> usize {
        self.num_qubits * self.num_layers * ROTATIONS_PER_QUBIT
    }

    pub fn params_per_layer(&self) -> usize {
        self.num_qubits * ROTATIONS_PER_QUBIT
    }

    pub fn param_index(&self, layer: usize, qubit: usize, rotation: usize) -> usize {
        layer * self.params_per_layer() + qubit * ROTATIONS_PER_QUBIT + rotation
    }

    pub fn layer_of(&self, param: usize) -> usize {
        param / self.params_per_layer()
    }

    /// Contiguous parameter range of each layer.
    pub fn layer_ranges(&self) -> Vec<Range<usize>> {
        let w = self.params_per_layer();
        (0..self.num_layers).map(|l| l * w..(l + 1) * w).collect()
    }

    /// Number of encoding gates preceding the first layer.
    pub fn num_encoding_gates(&self) -> usize {
        2 * self.feature_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_qubits == 0 || self.num_qubits > crate::simulator::MAX_QUBITS {
            return Err(Error::InvalidArgument(format!(
                "num_qubits must be in 1..={}, got {}",
                crate::simulator::MAX_QUBITS,
                self.num_qubits
            )));
        }
        if !self.encoding_rz_scale.is_finite() {
            return Err(Error::InvalidArgument("encoding_rz_scale is not finite".into()));
        }
        Ok(())
    }

    fn check(&self, x: &FeatureVector, theta: &ParameterVector) -> Result<()> {
        self.validate()?;
        if x.len() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                what: "feature vector",
                expected: self.feature_dim,
                got: x.len(),
            });
        }
        if theta.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected: self.num_params(),
                got: theta.len(),
            });
        }
        if let Some(v) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature value {v}")));
        }
        Ok(())
    }
}

macro_rules! real_vector {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub Vec<f64>);

        impl $name {
            pub fn zeros(len: usize) -> Self {
                Self(vec![0.0; len])
            }

            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }
        }

        impl Deref for $name {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut [f64] {
                &mut self.0
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(v: Vec<f64>) -> Self {
                Self(v)
            }
        }
    };
}

real_vector!(
    /// Circuit rotation angles in radians, in the ansatz parameter layout.
    ParameterVector
);
real_vector!(
    /// One (standardized) input sample.
    FeatureVector
);

/// Builds the encoding block followed by the parameterized layers.
pub fn build_circuit(
    spec: &AnsatzSpec,
    x: &FeatureVector,
    theta: &ParameterVector,
) -> Result<GateSequence> {
    spec.check(x, theta)?;
    let n = spec.num_qubits;
    let mut gates = Vec::with_capacity(2 * spec.feature_dim + spec.num_layers * 4 * n);
    for (i, &xi) in x.iter().enumerate() {
        gates.push(GateOp::rx(i % n, xi));
        gates.push(GateOp::rz(i % n, spec.encoding_rz_scale * xi));
    }
    for layer in 0..spec.num_layers {
        for q in 0..n {
            let k = spec.param_index(layer, q, 0);
            gates.push(GateOp::rx(q, theta[k]).with_param_index(k));
            gates.push(GateOp::ry(q, theta[k + 1]).with_param_index(k + 1));
            gates.push(GateOp::rz(q, theta[k + 2]).with_param_index(k + 2));
        }
        if n > 1 {
            for q in 0..n {
                gates.push(GateOp::cnot(q, (q + 1) % n));
            }
        }
    }
    GateSequence::new(n, gates)
}

/// `θ_task + λ·θ_meta`, elementwise.
pub fn compose_parameters(
    theta_task: &ParameterVector,
    theta_meta: &ParameterVector,
    lambda: f64,
) -> Result<ParameterVector> {
    if theta_task.len() != theta_meta.len() {
        return Err(Error::DimensionMismatch {
            what: "meta parameter vector",
            expected: theta_task.len(),
            got: theta_meta.len(),
        });
    }
    if !(0.0..=1.0).contains(&lambda) {
        log::warn!("meta scaling λ = {lambda} lies outside [0, 1]");
    }
    if lambda == 0.0 {
        return Ok(theta_task.clone());
    }
    Ok(theta_task
        .iter()
        .zip(theta_meta.iter())
        .map(|(t, m)| t + lambda * m)
        .collect::<Vec<_>>()
        .into())
}

/// State prepared by the ansatz from `|0…0⟩`.
pub fn circuit_state(
    spec: &AnsatzSpec,
    x: &FeatureVector,
    theta: &ParameterVector,
) -> Result<StateVector> {
    let seq = build_circuit(spec, x, theta)?;
    run_sequence(&seq, &StateVector::zero_state(spec.num_qubits)?)
}
