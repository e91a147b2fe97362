//! Dense statevector simulation for the rotation/CNOT gate set.
//!
//! Amplitude ordering: qubit 0 is the least significant bit of the basis
//! index, so `|q_{N-1} … q_1 q_0⟩` sits at index `Σ q_k 2^k`.
//!
//! Rotations follow `R_P(θ) = exp(−iθP/2)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Upper bound on register width.
pub const MAX_QUBITS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amplitudes: Vec<Complex64>,
    num_qubits: usize,
    /// Set for tangent/derivative states, which are not unit norm.
    pub unnormalized: bool,
}

impl StateVector {
    /// `|0…0⟩` on `num_qubits` qubits.
    pub fn zero_state(num_qubits: usize) -> Result<Self> {
        Self::basis_state(num_qubits, 0)
    }

    pub fn basis_state(num_qubits: usize, index: usize) -> Result<Self> {
        if num_qubits > MAX_QUBITS {
            return Err(Error::InvalidArgument(format!(
                "{num_qubits} qubits exceeds the supported maximum of {MAX_QUBITS}"
            )));
        }
        let dim = 1usize << num_qubits;
        if index >= dim {
            return Err(Error::InvalidArgument(format!(
                "basis index {index} out of range for {num_qubits} qubits"
            )));
        }
        let mut amplitudes = vec![ZERO; dim];
        amplitudes[index] = ONE;
        Ok(Self {
            amplitudes,
            num_qubits,
            unnormalized: false,
        })
    }

    /// Wraps raw amplitudes; the length must be a power of two.
    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self> {
        let len = amplitudes.len();
        if len == 0 || !len.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "amplitude count {len} is not a power of two"
            )));
        }
        let num_qubits = len.trailing_zeros() as usize;
        let norm = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>();
        Ok(Self {
            amplitudes,
            num_qubits,
            unnormalized: (norm - 1.0).abs() > 1e-10,
        })
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Multiplies every amplitude by `factor` and marks the state unnormalized.
    pub fn scale(&mut self, factor: Complex64) {
        for a in &mut self.amplitudes {
            *a *= factor;
        }
        self.unnormalized = true;
    }

    /// Applies `gate` in place.
    pub fn apply(&mut self, gate: &GateOp) -> Result<()> {
        gate.validate(self.num_qubits)?;
        self.apply_unchecked(gate);
        Ok(())
    }

    /// Applies `gate` without re-validating indices. Callers must have
    /// validated the gate against this register (e.g. via [`GateSequence`]).
    pub(crate) fn apply_unchecked(&mut self, gate: &GateOp) {
        match gate.kind {
            GateKind::Cnot => {
                let control = gate.control.expect("validated CNOT has a control");
                self.apply_cnot(control, gate.target);
            }
            GateKind::Rz => {
                let half = 0.5 * gate.angle.expect("validated rotation has an angle");
                let (s, c) = half.sin_cos();
                self.apply_diagonal(gate.target, Complex64::new(c, -s), Complex64::new(c, s));
            }
            GateKind::PauliZ => self.apply_diagonal(gate.target, ONE, -ONE),
            _ => {
                let m = gate.matrix();
                self.apply_single(gate.target, &m);
            }
        }
    }

    /// Applies the inverse of a unitary gate in place. Pauli gates and CNOT
    /// are self-inverse; rotations are applied with negated angle.
    pub(crate) fn apply_inverse_unchecked(&mut self, gate: &GateOp) {
        if gate.kind.is_rotation() {
            let mut inv = gate.clone();
            inv.angle = inv.angle.map(|a| -a);
            self.apply_unchecked(&inv);
        } else {
            self.apply_unchecked(gate);
        }
    }

    fn apply_single(&mut self, target: usize, m: &[[Complex64; 2]; 2]) {
        let bit = 1usize << target;
        let dim = self.amplitudes.len();
        let amps = &mut self.amplitudes;
        let mut base = 0;
        while base < dim {
            for i in base..base + bit {
                let a0 = amps[i];
                let a1 = amps[i | bit];
                amps[i] = m[0][0] * a0 + m[0][1] * a1;
                amps[i | bit] = m[1][0] * a0 + m[1][1] * a1;
            }
            base += bit << 1;
        }
    }

    fn apply_diagonal(&mut self, target: usize, d0: Complex64, d1: Complex64) {
        let bit = 1usize << target;
        for (i, a) in self.amplitudes.iter_mut().enumerate() {
            if i & bit == 0 {
                *a *= d0;
            } else {
                *a *= d1;
            }
        }
    }

    fn apply_cnot(&mut self, control: usize, target: usize) {
        let cbit = 1usize << control;
        let tbit = 1usize << target;
        for i in 0..self.amplitudes.len() {
            if i & cbit != 0 && i & tbit == 0 {
                self.amplitudes.swap(i, i | tbit);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GateKind {
    Rx,
    Ry,
    Rz,
    Cnot,
    PauliX,
    PauliY,
    PauliZ,
}

impl GateKind {
    pub fn is_rotation(self) -> bool {
        matches!(self, GateKind::Rx | GateKind::Ry | GateKind::Rz)
    }

    /// The Pauli generating a rotation kind.
    pub fn generator(self) -> Option<GateKind> {
        match self {
            GateKind::Rx => Some(GateKind::PauliX),
            GateKind::Ry => Some(GateKind::PauliY),
            GateKind::Rz => Some(GateKind::PauliZ),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateOp {
    pub kind: GateKind,
    pub target: usize,
    pub control: Option<usize>,
    pub angle: Option<f64>,
    /// Slot in the trainable parameter vector; `None` for fixed gates.
    pub param_index: Option<usize>,
}

impl GateOp {
    fn rotation(kind: GateKind, target: usize, angle: f64) -> Self {
        Self {
            kind,
            target,
            control: None,
            angle: Some(angle),
            param_index: None,
        }
    }

    fn fixed(kind: GateKind, target: usize) -> Self {
        Self {
            kind,
            target,
            control: None,
            angle: None,
            param_index: None,
        }
    }

    pub fn rx(target: usize, angle: f64) -> Self {
        Self::rotation(GateKind::Rx, target, angle)
    }

    pub fn ry(target: usize, angle: f64) -> Self {
        Self::rotation(GateKind::Ry, target, angle)
    }

    pub fn rz(target: usize, angle: f64) -> Self {
        Self::rotation(GateKind::Rz, target, angle)
    }

    pub fn cnot(control: usize, target: usize) -> Self {
        Self {
            kind: GateKind::Cnot,
            target,
            control: Some(control),
            angle: None,
            param_index: None,
        }
    }

    pub fn pauli_x(target: usize) -> Self {
        Self::fixed(GateKind::PauliX, target)
    }

    pub fn pauli_y(target: usize) -> Self {
        Self::fixed(GateKind::PauliY, target)
    }

    pub fn pauli_z(target: usize) -> Self {
        Self::fixed(GateKind::PauliZ, target)
    }

    /// Pauli gate of the given kind; panics for non-Pauli kinds.
    pub fn pauli(kind: GateKind, target: usize) -> Self {
        assert!(
            matches!(kind, GateKind::PauliX | GateKind::PauliY | GateKind::PauliZ),
            "{kind:?} is not a Pauli"
        );
        Self::fixed(kind, target)
    }

    pub fn with_param_index(mut self, index: usize) -> Self {
        self.param_index = Some(index);
        self
    }

    pub fn validate(&self, num_qubits: usize) -> Result<()> {
        if self.target >= num_qubits {
            return Err(Error::InvalidGate(format!(
                "{:?} target {} out of range for {} qubits",
                self.kind, self.target, num_qubits
            )));
        }
        match (self.kind, self.control) {
            (GateKind::Cnot, Some(c)) if c >= num_qubits => {
                return Err(Error::InvalidGate(format!(
                    "CNOT control {c} out of range for {num_qubits} qubits"
                )))
            }
            (GateKind::Cnot, Some(c)) if c == self.target => {
                return Err(Error::InvalidGate(format!(
                    "CNOT control equals target ({c})"
                )))
            }
            (GateKind::Cnot, None) => {
                return Err(Error::InvalidGate("CNOT without control".into()))
            }
            (kind, Some(_)) if kind != GateKind::Cnot => {
                return Err(Error::InvalidGate(format!("{kind:?} cannot take a control")))
            }
            _ => {}
        }
        match (self.kind.is_rotation(), self.angle) {
            (true, None) => Err(Error::InvalidGate(format!(
                "{:?} requires an angle",
                self.kind
            ))),
            (true, Some(a)) if !a.is_finite() => Err(Error::InvalidGate(format!(
                "{:?} angle is not finite",
                self.kind
            ))),
            (false, Some(_)) => Err(Error::InvalidGate(format!(
                "{:?} does not take an angle",
                self.kind
            ))),
            _ => Ok(()),
        }
    }

    /// 2×2 matrix of a single-qubit gate.
    fn matrix(&self) -> [[Complex64; 2]; 2] {
        match self.kind {
            GateKind::Rx => {
                let (s, c) = (0.5 * self.angle.unwrap_or(0.0)).sin_cos();
                let c = Complex64::new(c, 0.0);
                let mis = Complex64::new(0.0, -s);
                [[c, mis], [mis, c]]
            }
            GateKind::Ry => {
                let (s, c) = (0.5 * self.angle.unwrap_or(0.0)).sin_cos();
                let c = Complex64::new(c, 0.0);
                let s = Complex64::new(s, 0.0);
                [[c, -s], [s, c]]
            }
            GateKind::Rz => {
                let (s, c) = (0.5 * self.angle.unwrap_or(0.0)).sin_cos();
                [[Complex64::new(c, -s), ZERO], [ZERO, Complex64::new(c, s)]]
            }
            GateKind::PauliX => [[ZERO, ONE], [ONE, ZERO]],
            GateKind::PauliY => [[ZERO, -I], [I, ZERO]],
            GateKind::PauliZ => [[ONE, ZERO], [ZERO, -ONE]],
            GateKind::Cnot => unreachable!("CNOT is not a single-qubit gate"),
        }
    }
}

/// Ordered gate list over a fixed register width.
#[derive(Debug, Clone, PartialEq)]
pub struct GateSequence {
    gates: Vec<GateOp>,
    num_qubits: usize,
}

impl GateSequence {
    pub fn new(num_qubits: usize, gates: Vec<GateOp>) -> Result<Self> {
        for g in &gates {
            g.validate(num_qubits)?;
        }
        Ok(Self { gates, num_qubits })
    }

    pub fn gates(&self) -> &[GateOp] {
        &self.gates
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    /// Positions of parameterized gates, indexed by `param_index`.
    pub fn param_positions(&self, num_params: usize) -> Result<Vec<usize>> {
        let mut positions = vec![usize::MAX; num_params];
        for (pos, g) in self.gates.iter().enumerate() {
            if let Some(k) = g.param_index {
                if k >= num_params || positions[k] != usize::MAX {
                    return Err(Error::InvalidGate(format!(
                        "parameter index {k} duplicated or out of range"
                    )));
                }
                positions[k] = pos;
            }
        }
        if let Some(k) = positions.iter().position(|&p| p == usize::MAX) {
            return Err(Error::InvalidGate(format!("parameter {k} has no gate")));
        }
        Ok(positions)
    }

    /// Applies gates `range` to `state` in order. The state must match the
    /// sequence's register width.
    pub(crate) fn apply_range(&self, state: &mut StateVector, range: std::ops::Range<usize>) {
        debug_assert_eq!(state.num_qubits(), self.num_qubits);
        for g in &self.gates[range] {
            state.apply_unchecked(g);
        }
    }

    /// Applies the inverses of gates `range` in reverse order.
    pub(crate) fn unapply_range(&self, state: &mut StateVector, range: std::ops::Range<usize>) {
        debug_assert_eq!(state.num_qubits(), self.num_qubits);
        for g in self.gates[range].iter().rev() {
            state.apply_inverse_unchecked(g);
        }
    }
}

/// Returns `gate · state`.
pub fn apply_gate(state: &StateVector, gate: &GateOp) -> Result<StateVector> {
    let mut out = state.clone();
    out.apply(gate)?;
    Ok(out)
}

/// Runs `seq` on `initial`, gate 0 first.
pub fn run_sequence(seq: &GateSequence, initial: &StateVector) -> Result<StateVector> {
    if initial.num_qubits() != seq.num_qubits() {
        return Err(Error::DimensionMismatch {
            what: "qubit count",
            expected: seq.num_qubits(),
            got: initial.num_qubits(),
        });
    }
    let mut state = initial.clone();
    seq.apply_range(&mut state, 0..seq.len());
    Ok(state)
}

/// `⟨a|b⟩`, conjugate-linear in `a`.
pub fn inner_product(a: &StateVector, b: &StateVector) -> Result<Complex64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            what: "state dimension",
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(inner_unchecked(a.amplitudes(), b.amplitudes()))
}

#[inline]
pub(crate) fn inner_unchecked(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    let mut re = 0.0;
    let mut im = 0.0;
    for (x, y) in a.iter().zip(b) {
        re += x.re * y.re + x.im * y.im;
        im += x.re * y.im - x.im * y.re;
    }
    Complex64::new(re, im)
}

/// `|⟨a|b⟩|²`.
pub fn fidelity(a: &StateVector, b: &StateVector) -> Result<f64> {
    Ok(inner_product(a, b)?.norm_sqr())
}

/// `⟨Z_q⟩` for every qubit q.
pub fn pauli_z_expectations(state: &StateVector) -> Vec<f64> {
    let n = state.num_qubits();
    let mut out = vec![0.0; n];
    for (i, a) in state.amplitudes().iter().enumerate() {
        let p = a.norm_sqr();
        for (q, e) in out.iter_mut().enumerate() {
            if i >> q & 1 == 0 {
                *e += p;
            } else {
                *e -= p;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI};

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn rx_pi_flips_with_phase() {
        let s = apply_gate(&StateVector::zero_state(1).unwrap(), &GateOp::rx(0, PI)).unwrap();
        assert!(close(s.amplitudes()[0], ZERO, 1e-15));
        assert!(close(s.amplitudes()[1], -I, 1e-15));
    }

    #[test]
    fn rz_on_zero_is_phase() {
        let theta = 0.7;
        let s = apply_gate(&StateVector::zero_state(1).unwrap(), &GateOp::rz(0, theta)).unwrap();
        let expect = Complex64::from_polar(1.0, -theta / 2.0);
        assert!(close(s.amplitudes()[0], expect, 1e-15));
        assert!(close(s.amplitudes()[1], ZERO, 1e-15));
    }

    #[test]
    fn cnot_truth_table() {
        // Ket |q0 q1⟩ = |10⟩ is basis index 0b01; CNOT(0→1) sends it to |11⟩ = 0b11.
        for (input, output) in [(0b00, 0b00), (0b01, 0b11), (0b10, 0b10), (0b11, 0b01)] {
            let s = StateVector::basis_state(2, input).unwrap();
            let out = apply_gate(&s, &GateOp::cnot(0, 1)).unwrap();
            assert_eq!(out.amplitudes()[output], ONE, "input {input:02b}");
        }
    }

    #[test]
    fn invalid_gates_rejected() {
        let s = StateVector::zero_state(2).unwrap();
        assert!(apply_gate(&s, &GateOp::rx(2, 0.1)).is_err());
        assert!(apply_gate(&s, &GateOp::cnot(1, 1)).is_err());
        assert!(apply_gate(&s, &GateOp::cnot(3, 0)).is_err());
        let mut bad = GateOp::pauli_x(0);
        bad.angle = Some(1.0);
        assert!(apply_gate(&s, &bad).is_err());
        let mut bad = GateOp::ry(0, 1.0);
        bad.angle = None;
        assert!(apply_gate(&s, &bad).is_err());
    }

    #[test]
    fn sequence_examples() {
        let zero2 = StateVector::zero_state(2).unwrap();
        let empty = GateSequence::new(2, vec![]).unwrap();
        assert_eq!(run_sequence(&empty, &zero2).unwrap(), zero2);

        let zero1 = StateVector::zero_state(1).unwrap();
        let half = GateSequence::new(1, vec![GateOp::rx(0, FRAC_PI_2), GateOp::rx(0, FRAC_PI_2)])
            .unwrap();
        let out = run_sequence(&half, &zero1).unwrap();
        assert!(close(out.amplitudes()[1], -I, 1e-15));
        assert!(close(out.amplitudes()[0], ZERO, 1e-15));

        let ry = GateSequence::new(1, vec![GateOp::ry(0, FRAC_PI_2)]).unwrap();
        let out = run_sequence(&ry, &zero1).unwrap();
        let h = Complex64::new(FRAC_1_SQRT_2, 0.0);
        assert!(close(out.amplitudes()[0], h, 1e-15));
        assert!(close(out.amplitudes()[1], h, 1e-15));
    }

    #[test]
    fn inner_products() {
        let zero = StateVector::zero_state(1).unwrap();
        let one = StateVector::basis_state(1, 1).unwrap();
        assert_eq!(inner_product(&zero, &one).unwrap(), ZERO);
        assert!(close(inner_product(&zero, &zero).unwrap(), ONE, 1e-15));
        // ⟨0|RX(θ)|0⟩ = cos(θ/2): 2x2 oracle
        for theta in [0.0, 0.3, 1.2, 2.9, -0.8] {
            let s = apply_gate(&zero, &GateOp::rx(0, theta)).unwrap();
            let ip = inner_product(&zero, &s).unwrap();
            assert!(close(ip, Complex64::new((theta / 2.0).cos(), 0.0), 1e-15));
        }
        let two = StateVector::zero_state(2).unwrap();
        assert!(inner_product(&zero, &two).is_err());
    }

    #[test]
    fn z_expectations() {
        let s = StateVector::zero_state(3).unwrap();
        assert_eq!(pauli_z_expectations(&s), vec![1.0, 1.0, 1.0]);
        let eq = apply_gate(&StateVector::zero_state(1).unwrap(), &GateOp::rx(0, FRAC_PI_2))
            .unwrap();
        assert!(pauli_z_expectations(&eq)[0].abs() < 1e-15);
        for theta in [0.1, 0.9, 2.2, 3.1] {
            let s = apply_gate(&StateVector::zero_state(1).unwrap(), &GateOp::rx(0, theta))
                .unwrap();
            assert!((pauli_z_expectations(&s)[0] - theta.cos()).abs() < 1e-14);
        }
    }
}
