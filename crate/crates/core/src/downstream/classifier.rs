//! Hybrid classifier: ansatz with composite angles, `⟨Z_q⟩` features and a
//! two-logit linear readout trained with softmax cross-entropy.

use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ansatz::{build_circuit, compose_parameters, AnsatzSpec, FeatureVector, ParameterVector};
use crate::error::{Error, Result};
use crate::par;
use crate::sculpture::{meta_generate, MetaModelParams};
use crate::simulator::{pauli_z_expectations, run_sequence, GateOp, StateVector};
use crate::spectral::norm;

pub const NUM_CLASSES: usize = 2;

/// Linear readout `logits = W·o + b` over the `N` qubit expectations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutParams {
    /// Row-major `2 × N`.
    pub weights: Vec<f64>,
    pub bias: [f64; NUM_CLASSES],
}

impl ReadoutParams {
    pub fn zeros(num_qubits: usize) -> Self {
        Self {
            weights: vec![0.0; NUM_CLASSES * num_qubits],
            bias: [0.0; NUM_CLASSES],
        }
    }

    /// Weights `~ N(0, σ²)`, zero bias.
    pub fn random_normal<R: Rng + ?Sized>(num_qubits: usize, sigma: f64, rng: &mut R) -> Result<Self> {
        let normal = Normal::new(0.0, sigma)
            .map_err(|e| Error::InvalidArgument(format!("readout init σ = {sigma}: {e}")))?;
        Ok(Self {
            weights: (0..NUM_CLASSES * num_qubits).map(|_| normal.sample(rng)).collect(),
            bias: [0.0; NUM_CLASSES],
        })
    }

    pub fn num_inputs(&self) -> usize {
        self.weights.len() / NUM_CLASSES
    }

    pub fn logits(&self, features: &[f64]) -> Result<[f64; NUM_CLASSES]> {
        let n = self.num_inputs();
        if features.len() != n {
            return Err(Error::DimensionMismatch {
                what: "readout input",
                expected: n,
                got: features.len(),
            });
        }
        let mut out = self.bias;
        for (c, z) in out.iter_mut().enumerate() {
            *z += self.weights[c * n..(c + 1) * n]
                .iter()
                .zip(features)
                .map(|(w, o)| w * o)
                .sum::<f64>();
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// One labelled, standardized input.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: FeatureVector,
    pub label: u8,
    /// `θ_meta(x)` from the frozen generator, computed once per sample.
    pub theta_meta: ParameterVector,
}

impl Sample {
    pub fn new(features: FeatureVector, label: u8, phi: &MetaModelParams) -> Result<Self> {
        let theta_meta = meta_generate(phi, &features)?;
        Ok(Self {
            features,
            label,
            theta_meta,
        })
    }
}

/// `⟨Z_q⟩` of the circuit at `θ_task + λ·θ_meta`.
pub fn circuit_features(
    spec: &AnsatzSpec,
    theta_task: &ParameterVector,
    sample: &Sample,
    lambda: f64,
) -> Result<Vec<f64>> {
    let theta = compose_parameters(theta_task, &sample.theta_meta, lambda)?;
    let seq = build_circuit(spec, &sample.features, &theta)?;
    let state = run_sequence(&seq, &StateVector::zero_state(spec.num_qubits)?)?;
    Ok(pauli_z_expectations(&state))
}

pub fn classifier_forward(
    theta_task: &ParameterVector,
    readout: &ReadoutParams,
    x: &FeatureVector,
    lambda: f64,
    phi: &MetaModelParams,
    spec: &AnsatzSpec,
) -> Result<[f64; NUM_CLASSES]> {
    let sample = Sample::new(x.clone(), 0, phi)?;
    readout.logits(&circuit_features(spec, theta_task, &sample, lambda)?)
}

pub fn softmax(logits: &[f64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let m = logits[0].max(logits[1]);
    let e = [(logits[0] - m).exp(), (logits[1] - m).exp()];
    let s = e[0] + e[1];
    [e[0] / s, e[1] / s]
}

/// `−log softmax(logits)[label]`, stabilized by subtracting the max logit.
pub fn cross_entropy(logits: &[f64; NUM_CLASSES], label: u8) -> Result<f64> {
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite(format!("logits {logits:?}")));
    }
    if label as usize >= NUM_CLASSES {
        return Err(Error::InvalidArgument(format!("label {label} is not 0 or 1")));
    }
    // (m - z_y) + ln(1 + e^{-|z0 - z1|}) keeps full precision for confident logits
    let m = logits[0].max(logits[1]);
    let gap = (logits[0] - logits[1]).abs();
    Ok((m - logits[label as usize]) + (-gap).exp().ln_1p())
}

/// Argmax with ties resolved toward class 0.
pub fn predict(logits: &[f64; NUM_CLASSES]) -> u8 {
    u8::from(logits[1] > logits[0])
}

/// Per-sample quantities kept from the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardRecord {
    pub features: Vec<f64>,
    pub logits: [f64; NUM_CLASSES],
    pub label: u8,
}

impl ForwardRecord {
    /// `softmax − onehot`, the gradient of the loss wrt the logits.
    fn dlogits(&self) -> [f64; NUM_CLASSES] {
        let mut d = softmax(&self.logits);
        d[self.label as usize] -= 1.0;
        d
    }
}

pub fn forward_batch(
    spec: &AnsatzSpec,
    theta_task: &ParameterVector,
    readout: &ReadoutParams,
    batch: &[&Sample],
    lambda: f64,
) -> Result<Vec<ForwardRecord>> {
    par::try_map_range(batch.len(), |i| {
        let s = batch[i];
        let features = circuit_features(spec, theta_task, s, lambda)?;
        let logits = readout.logits(&features)?;
        Ok(ForwardRecord {
            features,
            logits,
            label: s.label,
        })
    })
}

/// Mean cross-entropy of a forward pass.
pub fn batch_loss(records: &[ForwardRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut total = 0.0;
    for r in records {
        total += cross_entropy(&r.logits, r.label)?;
    }
    Ok(total / records.len() as f64)
}

/// Gradient of the batch-mean loss with respect to the readout.
pub fn grad_readout(records: &[ForwardRecord]) -> Result<ReadoutParams> {
    let Some(first) = records.first() else {
        return Err(Error::EmptyBatch);
    };
    let n = first.features.len();
    let mut grad = ReadoutParams::zeros(n);
    let inv = 1.0 / records.len() as f64;
    for r in records {
        let dz = r.dlogits();
        for (c, d) in dz.iter().enumerate() {
            grad.bias[c] += inv * d;
            for (g, o) in grad.weights[c * n..(c + 1) * n].iter_mut().zip(&r.features) {
                *g += inv * d * o;
            }
        }
    }
    Ok(grad)
}

/// `∂⟨Z_q⟩/∂θ_k` for all `k, q` by the ±π/2 parameter-shift rule, as a
/// `p × N` row-major matrix.
///
/// Since `R_P(θ ± π/2) = R_P(θ)(I ∓ iP)/√2`, the two shifted final states
/// are `(ψ ∓ i·b_k)/√2` with `b_k = U_after P_k ψ_k`, so each parameter
/// costs one propagation instead of two.
pub fn expectation_jacobian(
    spec: &AnsatzSpec,
    features: &FeatureVector,
    theta: &ParameterVector,
) -> Result<Vec<f64>> {
    let seq = build_circuit(spec, features, theta)?;
    let positions = seq.param_positions(spec.num_params())?;
    let n = spec.num_qubits;
    let mut jac = vec![0.0; spec.num_params() * n];
    let zero = StateVector::zero_state(n)?;
    let psi = run_sequence(&seq, &zero)?;
    let mut state = zero;
    let mut cursor = 0;
    for (k, &pos) in positions.iter().enumerate() {
        seq.apply_range(&mut state, cursor..pos + 1);
        cursor = pos + 1;
        let gate = &seq.gates()[pos];
        let generator = gate.kind.generator().expect("parameter gates are rotations");
        let mut b = state.clone();
        b.apply_unchecked(&GateOp::pauli(generator, gate.target));
        seq.apply_range(&mut b, pos + 1..seq.len());
        let shifted = |sign: f64| {
            let amps = psi
                .amplitudes()
                .iter()
                .zip(b.amplitudes())
                .map(|(a, bb)| (a + Complex64::new(0.0, -sign) * bb) * FRAC_1_SQRT_2)
                .collect();
            StateVector::from_amplitudes(amps).map(|s| pauli_z_expectations(&s))
        };
        let plus = shifted(1.0)?;
        let minus = shifted(-1.0)?;
        for (q, (p, m)) in plus.iter().zip(&minus).enumerate() {
            jac[k * n + q] = 0.5 * (p - m);
        }
    }
    Ok(jac)
}

/// Parameter-shift gradient of the batch-mean loss with respect to
/// `θ_task`, chained through the readout and the cross-entropy.
pub fn grad_theta_task_samples(
    spec: &AnsatzSpec,
    theta_task: &ParameterVector,
    readout: &ReadoutParams,
    batch: &[&Sample],
    records: &[ForwardRecord],
    lambda: f64,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = spec.num_qubits;
    let p = spec.num_params();
    let per_sample = par::try_map_range(batch.len(), |i| {
        let s = batch[i];
        let theta = compose_parameters(theta_task, &s.theta_meta, lambda)?;
        let jac = expectation_jacobian(spec, &s.features, &theta)?;
        // dL/do_q = Σ_c (softmax − onehot)_c W_cq
        let dz = records[i].dlogits();
        let dl_do: Vec<f64> = (0..n)
            .map(|q| (0..NUM_CLASSES).map(|c| dz[c] * readout.weights[c * n + q]).sum())
            .collect();
        Ok::<_, Error>((0..p)
            .map(|k| jac[k * n..(k + 1) * n].iter().zip(&dl_do).map(|(j, d)| j * d).sum())
            .collect::<Vec<f64>>())
    })?;
    let inv = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; p];
    for g in per_sample {
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += inv * v;
        }
    }
    Ok(grad)
}

/// Convenience form taking raw labelled inputs and the generator.
pub fn grad_theta_task(
    theta_task: &ParameterVector,
    readout: &ReadoutParams,
    batch: &[(FeatureVector, u8)],
    lambda: f64,
    phi: &MetaModelParams,
    spec: &AnsatzSpec,
) -> Result<Vec<f64>> {
    let samples = batch
        .iter()
        .map(|(x, y)| Sample::new(x.clone(), *y, phi))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Sample> = samples.iter().collect();
    let records = forward_batch(spec, theta_task, readout, &refs, lambda)?;
    grad_theta_task_samples(spec, theta_task, readout, &refs, &records, lambda)
}

/// Rescales `g` onto the ball of radius `max_norm` when it lies outside.
pub fn clip_gradient(g: &[f64], max_norm: f64) -> Result<Vec<f64>> {
    if !(max_norm > 0.0) {
        return Err(Error::InvalidArgument(format!("clip norm must be positive, got {max_norm}")));
    }
    let n = norm(g);
    if n > max_norm {
        let s = max_norm / n;
        Ok(g.iter().map(|v| v * s).collect())
    } else {
        Ok(g.to_vec())
    }
}
