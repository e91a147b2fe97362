//! Fubini–Study metric of the ansatz state with respect to its trainable
//! parameters.
//!
//! Two independent routes are provided:
//!
//! * projector form, `G_ij = Re[⟨∂_iψ|∂_jψ⟩ − ⟨∂_iψ|ψ⟩⟨ψ|∂_jψ⟩]`, from
//!   derivative states `|∂_kψ⟩ = U_post (−i/2 P_k) U_pre |0…0⟩`;
//! * covariance form, `G_ij = ¼ Cov_ψ(K_i, K_j)`, with the conjugated
//!   generators `K_k = U_post P_k U_post†` applied to the final state.
//!
//! Inner products between derivative states are unchanged by any unitary
//! applied to all of them, so a block only needs its states propagated to
//! the last parameterized gate of the block.

use std::ops::Range;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ansatz::{build_circuit, AnsatzSpec, FeatureVector, ParameterVector};
use crate::error::{Error, Result};
use crate::linalg::SquareMatrix;
use crate::par;
use crate::simulator::{
    inner_product, inner_unchecked, GateOp, GateSequence, StateVector,
};

const MINUS_HALF_I: Complex64 = Complex64::new(0.0, -0.5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricSource {
    Projector,
    Covariance,
    BlockDiag,
    BatchAvg,
}

/// Grouping of parameters into diagonal blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockScheme {
    /// One block per ansatz layer (`3N` parameters each).
    #[default]
    Layer,
    /// Greedy causal layering in gate order: a parameterized gate opens a
    /// new block when it depends on any gate of the current block. This is
    /// the grouping PennyLane's `metric_tensor(approx="block-diag")` uses.
    Dependency,
}

impl BlockScheme {
    pub fn ranges(self, spec: &AnsatzSpec) -> Vec<Range<usize>> {
        match self {
            BlockScheme::Layer => spec.layer_ranges(),
            BlockScheme::Dependency => {
                let x = FeatureVector::zeros(spec.feature_dim);
                let theta = ParameterVector::zeros(spec.num_params());
                let seq = build_circuit(spec, &x, &theta).expect("validated ansatz");
                dependency_ranges(&seq)
            }
        }
    }
}

/// Parameter groups from greedy causal layering of `seq`. Groups are
/// contiguous because parameter indices follow gate order.
fn dependency_ranges(seq: &GateSequence) -> Vec<Range<usize>> {
    // touched[q]: qubit q is downstream of a gate in the open block
    let mut touched = vec![false; seq.num_qubits()];
    let mut ranges: Vec<Range<usize>> = Vec::new();
    let mut open: Option<Range<usize>> = None;
    for g in seq.gates() {
        match (g.param_index, g.control) {
            (Some(k), _) => {
                open = match open {
                    Some(r) if !touched[g.target] && r.end == k => Some(r.start..k + 1),
                    Some(r) => {
                        ranges.push(r);
                        touched.iter_mut().for_each(|t| *t = false);
                        Some(k..k + 1)
                    }
                    None => Some(k..k + 1),
                };
                touched[g.target] = true;
            }
            (None, Some(c)) => {
                let t = touched[c] || touched[g.target];
                touched[c] = t;
                touched[g.target] = t;
            }
            (None, None) => {}
        }
    }
    ranges.extend(open);
    ranges
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTensor {
    pub entries: SquareMatrix,
    /// Diagonal blocks, or `None` for a full matrix.
    pub block_partition: Option<Vec<Range<usize>>>,
    pub source: MetricSource,
}

impl MetricTensor {
    pub fn full(entries: SquareMatrix, source: MetricSource) -> Self {
        Self {
            entries,
            block_partition: None,
            source,
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.dim()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries.get(i, j)
    }

    /// Diagonal blocks as standalone matrices; a full metric is one block.
    pub fn blocks(&self) -> Vec<(Range<usize>, SquareMatrix)> {
        match &self.block_partition {
            Some(parts) => parts
                .iter()
                .map(|r| (r.clone(), self.entries.block(r.clone())))
                .collect(),
            None => vec![(0..self.dim(), self.entries.clone())],
        }
    }

    /// Assembles a block-diagonal metric from its blocks.
    pub fn from_blocks(
        dim: usize,
        blocks: Vec<(Range<usize>, SquareMatrix)>,
        source: MetricSource,
    ) -> Self {
        let mut entries = SquareMatrix::zeros(dim);
        let mut partition = Vec::with_capacity(blocks.len());
        for (r, b) in blocks {
            entries.write_block(r.start, &b);
            partition.push(r);
        }
        Self {
            entries,
            block_partition: Some(partition),
            source,
        }
    }
}

/// Compiled circuit with parameter-gate positions.
struct Prepared {
    seq: GateSequence,
    positions: Vec<usize>,
}

impl Prepared {
    fn new(spec: &AnsatzSpec, x: &FeatureVector, theta: &ParameterVector) -> Result<Self> {
        let seq = build_circuit(spec, x, theta)?;
        let positions = seq.param_positions(spec.num_params())?;
        Ok(Self { seq, positions })
    }

    fn generator(&self, k: usize) -> GateOp {
        let g = &self.seq.gates()[self.positions[k]];
        GateOp::pauli(g.kind.generator().expect("parameter gates are rotations"), g.target)
    }

    /// States right after each parameterized gate, indexed by parameter.
    fn prefix_states(&self) -> Vec<StateVector> {
        let n = self.seq.num_qubits();
        let mut state = StateVector::zero_state(n).expect("validated register width");
        let mut out = Vec::with_capacity(self.positions.len());
        let mut cursor = 0;
        for &pos in &self.positions {
            self.seq.apply_range(&mut state, cursor..pos + 1);
            cursor = pos + 1;
            out.push(state.clone());
        }
        out
    }

    /// `(−i/2) P_k` applied to the state after gate k, then propagated
    /// through gates up to (excluding) `horizon`.
    fn tangent(&self, after_k: &StateVector, k: usize, horizon: usize) -> StateVector {
        let mut s = after_k.clone();
        s.apply_unchecked(&self.generator(k));
        s.scale(MINUS_HALF_I);
        self.seq.apply_range(&mut s, self.positions[k] + 1..horizon);
        s
    }
}

/// Projector-form entries for each block in `blocks`.
fn projector_blocks(prep: &Prepared, blocks: &[Range<usize>]) -> Vec<SquareMatrix> {
    let prefix = prep.prefix_states();
    blocks
        .iter()
        .map(|block| {
            if block.is_empty() {
                return SquareMatrix::zeros(0);
            }
            let horizon = prep.positions[block.end - 1] + 1;
            let psi = &prefix[block.end - 1];
            let tangents: Vec<StateVector> = par::map_range(block.len(), |i| {
                let k = block.start + i;
                prep.tangent(&prefix[k], k, horizon)
            });
            // ⟨ψ|∂_kψ⟩
            let overlaps: Vec<Complex64> = tangents
                .iter()
                .map(|t| inner_unchecked(psi.amplitudes(), t.amplitudes()))
                .collect();
            let n = block.len();
            let rows: Vec<Vec<f64>> = par::map_range(n, |i| {
                (i..n)
                    .map(|j| {
                        let dd = inner_unchecked(tangents[i].amplitudes(), tangents[j].amplitudes());
                        let cross = overlaps[i].conj() * overlaps[j];
                        (dd - cross).re
                    })
                    .collect()
            });
            let mut m = SquareMatrix::zeros(n);
            for (i, row) in rows.iter().enumerate() {
                for (off, &v) in row.iter().enumerate() {
                    let j = i + off;
                    m.set(i, j, v);
                    m.set(j, i, v);
                }
            }
            m
        })
        .collect()
}

fn check_param(spec: &AnsatzSpec, k: usize) -> Result<()> {
    if k >= spec.num_params() {
        return Err(Error::InvalidArgument(format!(
            "parameter index {k} out of range for {} parameters",
            spec.num_params()
        )));
    }
    Ok(())
}

/// The final state `|ψ(θ)⟩` from the full circuit.
fn final_state(prep: &Prepared) -> StateVector {
    let mut s = StateVector::zero_state(prep.seq.num_qubits()).expect("validated register width");
    prep.seq.apply_range(&mut s, 0..prep.seq.len());
    s
}

/// `|∂_kψ⟩` through the whole circuit (unnormalized, norm ≤ 1/2).
pub fn derivative_state(
    spec: &AnsatzSpec,
    x: &FeatureVector,
    theta: &ParameterVector,
    k: usize,
) -> Result<StateVector> {
    check_param(spec, k)?;
    let prep = Prepared::new(spec, x, theta)?;
    let mut s = StateVector::zero_state(spec.num_qubits)?;
    prep.seq.apply_range(&mut s, 0..prep.positions[k] + 1);
    Ok(prep.tangent(&s, k, prep.seq.len()))
}

/// Full metric from derivative-state overlaps.
pub fn fs_metric_projector(
    spec: &AnsatzSpec,
    x: &FeatureVector,
    theta: &ParameterVector,
) -> Result<MetricTensor> {
    let prep = Prepared::new(spec, x, theta)?;
    let p = spec.num_params();
    let mut blocks = projector_blocks(&prep, std::slice::from_ref(&(0..p)));
    Ok(MetricTensor::full(blocks.pop().unwrap_or_else(|| SquareMatrix::zeros(0)), MetricSource::Projector))
}

/// Full metric from generator covariances in the final state.
pub fn fs_metric_covariance(
    spec: &AnsatzSpec,
    x: &FeatureVector,
    theta: &ParameterVector,
) -> Result<MetricTensor> {
    let prep = Prepared::new(spec, x, theta)?;
    let psi = final_state(&prep);
    let end = prep.seq.len();
    let p = spec.num_params();
    // K_k|ψ⟩ = U_post P_k U_post† |ψ⟩
    let conj: Vec<StateVector> = par::map_range(p, |k| {
        let post = prep.positions[k] + 1..end;
        let mut s = psi.clone();
        prep.seq.unapply_range(&mut s, post.clone());
        s.apply_unchecked(&prep.generator(k));
        prep.seq.apply_range(&mut s, post);
        s
    });
    let means: Vec<f64> = conj
        .iter()
        .map(|s| inner_unchecked(psi.amplitudes(), s.amplitudes()).re)
        .collect();
    let rows: Vec<Vec<f64>> = par::map_range(p, |i| {
        (i..p)
            .map(|j| {
                let second = inner_unchecked(conj[i].amplitudes(), conj[j].amplitudes()).re;
                0.25 * (second - means[i] * means[j])
            })
            .collect()
    });
    let mut m = SquareMatrix::zeros(p);
    for (i, row) in rows.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            m.set(i, i + off, v);
            m.set(i + off, i, v);
        }
    }
    Ok(MetricTensor::full(m, MetricSource::Covariance))
}

/// Per-block projector metrics, without assembling the dense matrix.
pub fn fs_metric_blocks(
    spec: &AnsatzSpec,
    x: &FeatureVector,
    theta: &ParameterVector,
    scheme: BlockScheme,
) -> Result<Vec<(Range<usize>, SquareMatrix)>> {
    let prep = Prepared::new(spec, x, theta)?;
    let ranges = scheme.ranges(spec);
    let blocks = projector_blocks(&prep, &ranges);
    Ok(ranges.into_iter().zip(blocks).collect())
}

/// Block-diagonal approximation: entries across different blocks are zero.
pub fn fs_metric_block_diag(
    spec: &AnsatzSpec,
    x: &FeatureVector,
    theta: &ParameterVector,
) -> Result<MetricTensor> {
    fs_metric_block_diag_with(spec, x, theta, BlockScheme::default())
}

pub fn fs_metric_block_diag_with(
    spec: &AnsatzSpec,
    x: &FeatureVector,
    theta: &ParameterVector,
    scheme: BlockScheme,
) -> Result<MetricTensor> {
    let blocks = fs_metric_blocks(spec, x, theta, scheme)?;
    Ok(MetricTensor::from_blocks(spec.num_params(), blocks, MetricSource::BlockDiag))
}

/// Batch-averaged block metrics at shared parameters, summed in batch order.
pub fn fs_metric_batch_blocks(
    spec: &AnsatzSpec,
    batch: &[FeatureVector],
    theta: &ParameterVector,
    scheme: BlockScheme,
) -> Result<Vec<(Range<usize>, SquareMatrix)>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let per_input = par::try_map_range(batch.len(), |j| {
        fs_metric_blocks(spec, &batch[j], theta, scheme)
    })?;
    let mut iter = per_input.into_iter();
    let mut acc = iter.next().expect("nonempty batch");
    for blocks in iter {
        for ((_, a), (_, b)) in acc.iter_mut().zip(&blocks) {
            a.add_assign(b);
        }
    }
    let inv = 1.0 / batch.len() as f64;
    Ok(acc
        .into_iter()
        .map(|(r, m)| (r, m.scaled(inv)))
        .collect())
}

/// `(1/B) Σ_j G_block(x_j)` at shared `θ`.
pub fn fs_metric_batch_avg(
    spec: &AnsatzSpec,
    batch: &[FeatureVector],
    theta: &ParameterVector,
) -> Result<MetricTensor> {
    let blocks = fs_metric_batch_blocks(spec, batch, theta, BlockScheme::default())?;
    Ok(MetricTensor::from_blocks(spec.num_params(), blocks, MetricSource::BatchAvg))
}

/// `|(1 − |⟨ψ(θ)|ψ(θ+dθ)⟩|²) − dθᵀ G(θ) dθ|` with the full projector metric.
pub fn fidelity_expansion_residual(
    spec: &AnsatzSpec,
    x: &FeatureVector,
    theta: &ParameterVector,
    dtheta: &[f64],
) -> Result<f64> {
    if dtheta.len() != theta.len() {
        return Err(Error::DimensionMismatch {
            what: "parameter displacement",
            expected: theta.len(),
            got: dtheta.len(),
        });
    }
    let shifted: ParameterVector = theta
        .iter()
        .zip(dtheta)
        .map(|(t, d)| t + d)
        .collect::<Vec<_>>()
        .into();
    let a = crate::ansatz::circuit_state(spec, x, theta)?;
    let b = crate::ansatz::circuit_state(spec, x, &shifted)?;
    let ds2 = 1.0 - inner_product(&a, &b)?.norm_sqr();
    let g = fs_metric_projector(spec, x, theta)?;
    Ok((ds2 - g.entries.quadratic_form(dtheta)).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::circuit_state;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(
        rng: &mut ChaCha8Rng,
        spec: &AnsatzSpec,
    ) -> (FeatureVector, ParameterVector) {
        let x = (0..spec.feature_dim)
            .map(|_| rng.gen_range(-2.0..2.0))
            .collect::<Vec<_>>();
        let t = (0..spec.num_params())
            .map(|_| rng.gen_range(-3.2..3.2))
            .collect::<Vec<_>>();
        (x.into(), t.into())
    }

    /// Single-qubit ansatz with one layer, no encoding: RX, RY, RZ on |0⟩.
    fn one_qubit() -> AnsatzSpec {
        AnsatzSpec::new(1, 1, 0)
    }

    #[test]
    fn single_rx_metric_is_quarter() {
        // RX(θ1) on |0⟩ with RY, RZ after: the RX entry is Var(X)/4 = 1/4.
        let spec = one_qubit();
        for t in [0.0, 0.4, 2.0] {
            let theta: ParameterVector = vec![t, 0.0, 0.0].into();
            let g = fs_metric_projector(&spec, &FeatureVector::zeros(0), &theta).unwrap();
            assert!((g.get(0, 0) - 0.25).abs() < 1e-15);
            let c = fs_metric_covariance(&spec, &FeatureVector::zeros(0), &theta).unwrap();
            assert!((c.get(0, 0) - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn rx_then_ry_at_origin_is_diagonal() {
        let spec = one_qubit();
        let theta = ParameterVector::zeros(3);
        let g = fs_metric_projector(&spec, &FeatureVector::zeros(0), &theta).unwrap();
        assert!((g.get(0, 0) - 0.25).abs() < 1e-15);
        assert!((g.get(1, 1) - 0.25).abs() < 1e-15);
        assert!(g.get(0, 1).abs() < 1e-15);
        // RZ acts on |0⟩, an eigenstate of its generator
        assert!(g.get(2, 2).abs() < 1e-15);
    }

    #[test]
    fn derivative_norm_and_phase() {
        let spec = one_qubit();
        let theta: ParameterVector = vec![0.9, 0.0, 0.0].into();
        let d = derivative_state(&spec, &FeatureVector::zeros(0), &theta, 0).unwrap();
        assert!((d.norm_sqr() - 0.25).abs() < 1e-15);
        assert!(d.unnormalized);

        let spec = AnsatzSpec::new(3, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (x, theta) = random_instance(&mut rng, &spec);
        let psi = circuit_state(&spec, &x, &theta).unwrap();
        for k in 0..spec.num_params() {
            let d = derivative_state(&spec, &x, &theta, k).unwrap();
            assert!(d.norm_sqr() <= 0.25 + 1e-14);
            assert!(inner_product(&d, &psi).unwrap().re.abs() < 1e-12);
        }
        assert!(derivative_state(&spec, &x, &theta, spec.num_params()).is_err());
    }

    #[test]
    fn derivative_matches_central_difference() {
        let spec = AnsatzSpec::new(3, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (x, theta) = random_instance(&mut rng, &spec);
        let h = 1e-4;
        for k in 0..spec.num_params() {
            let mut plus = theta.clone();
            plus[k] += h;
            let mut minus = theta.clone();
            minus[k] -= h;
            let a = circuit_state(&spec, &x, &plus).unwrap();
            let b = circuit_state(&spec, &x, &minus).unwrap();
            let d = derivative_state(&spec, &x, &theta, k).unwrap();
            let err: f64 = a
                .amplitudes()
                .iter()
                .zip(b.amplitudes())
                .zip(d.amplitudes())
                .map(|((p, m), d)| ((p - m) / (2.0 * h) - d).norm_sqr())
                .sum::<f64>()
                .sqrt();
            assert!(err <= 1e-6, "k={k} err={err}");
        }
    }

    #[test]
    fn block_diag_structure() {
        let spec = AnsatzSpec::new(3, 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (x, theta) = random_instance(&mut rng, &spec);
        let full = fs_metric_projector(&spec, &x, &theta).unwrap();
        let bd = fs_metric_block_diag(&spec, &x, &theta).unwrap();
        for i in 0..spec.num_params() {
            for j in 0..spec.num_params() {
                if spec.layer_of(i) == spec.layer_of(j) {
                    assert!((bd.get(i, j) - full.get(i, j)).abs() <= 1e-12);
                } else {
                    assert_eq!(bd.get(i, j), 0.0);
                }
            }
        }
        let single = AnsatzSpec::new(3, 1, 3);
        let (x, theta) = random_instance(&mut rng, &single);
        let full = fs_metric_projector(&single, &x, &theta).unwrap();
        let bd = fs_metric_block_diag(&single, &x, &theta).unwrap();
        for (a, b) in full.entries.as_slice().iter().zip(bd.entries.as_slice()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn default_block_layout() {
        let spec = AnsatzSpec::default();
        let bd = fs_metric_block_diag(&spec, &FeatureVector::zeros(8), &vec![0.3; 72].into())
            .unwrap();
        let parts = bd.block_partition.as_ref().unwrap();
        assert_eq!(parts, &vec![0..24, 24..48, 48..72]);
        let nonzero = bd.entries.as_slice().iter().filter(|v| **v != 0.0).count();
        assert!(nonzero <= 3 * 24 * 24);
    }

    #[test]
    fn batch_average() {
        let spec = AnsatzSpec::new(3, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (x, theta) = random_instance(&mut rng, &spec);
        let single = fs_metric_block_diag(&spec, &x, &theta).unwrap();
        let one = fs_metric_batch_avg(&spec, std::slice::from_ref(&x), &theta).unwrap();
        assert_eq!(one.entries, single.entries);
        assert_eq!(one.source, MetricSource::BatchAvg);
        let three = fs_metric_batch_avg(&spec, &[x.clone(), x.clone(), x.clone()], &theta).unwrap();
        for (a, b) in three.entries.as_slice().iter().zip(single.entries.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(matches!(
            fs_metric_batch_avg(&spec, &[], &theta),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn residual_zero_displacement() {
        let spec = AnsatzSpec::new(2, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (x, theta) = random_instance(&mut rng, &spec);
        let r = fidelity_expansion_residual(&spec, &x, &theta, &vec![0.0; spec.num_params()])
            .unwrap();
        assert!(r < 1e-15);
    }

    #[test]
    fn dependency_blocks_default_layout() {
        let ranges = BlockScheme::Dependency.ranges(&AnsatzSpec::default());
        let sizes: Vec<usize> = ranges.iter().map(|r| r.len()).collect();
        // first layer: RX0 | RY0 | RZ0 RX1 | RY1 | ... | RZ6 RX7 | RY7 | RZ7
        let mut first = vec![1, 1];
        first.extend([2, 1].repeat(7));
        first.push(1);
        assert_eq!(&sizes[..first.len()], &first[..]);
        assert_eq!(ranges.len(), 3 * first.len());
        let mut next = 0;
        for r in &ranges {
            assert_eq!(r.start, next);
            next = r.end;
        }
        assert_eq!(next, 72);
    }

    #[test]
    fn dependency_blocks_match_full_metric() {
        let spec = AnsatzSpec::new(3, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (x, theta) = random_instance(&mut rng, &spec);
        let full = fs_metric_projector(&spec, &x, &theta).unwrap();
        let g = fs_metric_block_diag_with(&spec, &x, &theta, BlockScheme::Dependency).unwrap();
        let parts = g.block_partition.clone().unwrap();
        let block_of = |k: usize| parts.iter().position(|r| r.contains(&k)).unwrap();
        for i in 0..spec.num_params() {
            for j in 0..spec.num_params() {
                if block_of(i) == block_of(j) {
                    assert!((g.get(i, j) - full.get(i, j)).abs() < 1e-12);
                } else {
                    assert_eq!(g.get(i, j), 0.0);
                }
            }
        }
    }
}
