//! Symmetric eigendecomposition and spectrum-derived diagnostics of the
//! metric: condition number, spectral entropy, effective dimension, volume
//! element, the `Tr(G)/λ_min` complexity surrogate, degeneracy monitoring,
//! gradient-descent contraction factor, natural-gradient preconditioning,
//! and eigenvalue-perturbation derivatives of `log κ`.
//!
//! Logarithms are natural throughout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsmetric::MetricTensor;
use crate::linalg::SquareMatrix;
use crate::par;

const MAX_SWEEPS: usize = 100;
const OFF_DIAGONAL_TOL: f64 = 1e-12;
const ASYMMETRY_TOL: f64 = 1e-8;

/// Eigenvalues sorted descending with matching orthonormal eigenvectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<Vec<f64>>,
}

fn check_symmetric(m: &SquareMatrix) -> Result<()> {
    let asym = m.max_asymmetry();
    if asym > ASYMMETRY_TOL * m.frobenius_norm().max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

/// Cyclic Jacobi on a symmetric matrix stored row-major in `a`. Leaves the
/// eigenvalues on the diagonal and, if requested, the eigenvectors in the
/// columns of `v`.
fn jacobi_in_place(n: usize, a: &mut [f64], mut v: Option<&mut [f64]>) {
    let frob = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = OFF_DIAGONAL_TOL * frob;
    for _ in 0..MAX_SWEEPS {
        let mut off: f64 = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off = off.max(a[p * n + q].abs());
            }
        }
        if off <= tol {
            return;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    let nkp = c * akp - s * akq;
                    let nkq = s * akp + c * akq;
                    a[k * n + p] = nkp;
                    a[p * n + k] = nkp;
                    a[k * n + q] = nkq;
                    a[q * n + k] = nkq;
                }
                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                if let Some(v) = v.as_deref_mut() {
                    for k in 0..n {
                        let vkp = v[k * n + p];
                        let vkq = v[k * n + q];
                        v[k * n + p] = c * vkp - s * vkq;
                        v[k * n + q] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }
    log::warn!("Jacobi eigensolver hit the {MAX_SWEEPS}-sweep limit");
}

fn eigh_dense(m: &SquareMatrix) -> EigenDecomposition {
    let n = m.dim();
    let mut a = m.as_slice().to_vec();
    let mut v = SquareMatrix::identity(n).as_slice().to_vec();
    jacobi_in_place(n, &mut a, Some(&mut v));
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..n)
        .map(|j| (a[j * n + j], (0..n).map(|k| v[k * n + j]).collect()))
        .collect();
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
    let (eigenvalues, eigenvectors) = pairs.into_iter().unzip();
    EigenDecomposition {
        eigenvalues,
        eigenvectors,
    }
}

/// Eigenvalues only, sorted descending.
pub fn eigvalsh(m: &SquareMatrix) -> Result<Vec<f64>> {
    check_symmetric(m)?;
    let n = m.dim();
    let mut a = m.as_slice().to_vec();
    jacobi_in_place(n, &mut a, None);
    let mut vals: Vec<f64> = (0..n).map(|j| a[j * n + j]).collect();
    vals.sort_by(|x, y| y.total_cmp(x));
    Ok(vals)
}

/// Eigendecomposition of a symmetric matrix.
pub fn eigh_matrix(m: &SquareMatrix) -> Result<EigenDecomposition> {
    check_symmetric(m)?;
    Ok(eigh_dense(m))
}

/// Eigendecomposition of a metric. Block-diagonal metrics are decomposed
/// block by block and merged; eigenvectors are embedded in the full space.
pub fn eigh_symmetric(g: &MetricTensor) -> Result<EigenDecomposition> {
    check_symmetric(&g.entries)?;
    let Some(parts) = &g.block_partition else {
        return Ok(eigh_dense(&g.entries));
    };
    let p = g.dim();
    let blocks = g.blocks();
    let decomposed = par::map_slice(&blocks, |(_, b)| eigh_dense(b));
    let mut pairs = Vec::with_capacity(p);
    for (range, eig) in parts.iter().zip(decomposed) {
        for (val, vec) in eig.eigenvalues.into_iter().zip(eig.eigenvectors) {
            let mut full = vec![0.0; p];
            full[range.clone()].copy_from_slice(&vec);
            pairs.push((val, full));
        }
    }
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
    let (eigenvalues, eigenvectors) = pairs.into_iter().unzip();
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// Eigenvalues of a set of diagonal blocks, merged and sorted descending.
pub fn block_eigenvalues(blocks: &[SquareMatrix]) -> Result<Vec<f64>> {
    let per_block = par::try_map_range(blocks.len(), |i| eigvalsh(&blocks[i]))?;
    let mut vals: Vec<f64> = per_block.into_iter().flatten().collect();
    vals.sort_by(|x, y| y.total_cmp(x));
    Ok(vals)
}

/// Eigenvalue floors used when summarising a spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectralThresholds {
    /// Eigenvalues below this are discarded before κ and friends.
    pub filter_floor: f64,
    /// Eigenvalues below this count toward the degeneracy monitor.
    pub degeneracy_threshold: f64,
}

impl Default for SpectralThresholds {
    fn default() -> Self {
        Self {
            filter_floor: 1e-10,
            degeneracy_threshold: 1e-6,
        }
    }
}

impl SpectralThresholds {
    /// Same floor for filtering and for the degeneracy monitor.
    pub fn uniform(epsilon: f64) -> Self {
        Self {
            filter_floor: epsilon,
            degeneracy_threshold: epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    /// Smallest retained eigenvalue.
    pub lambda_min: f64,
    /// Smallest eigenvalue before filtering.
    pub lambda_min_raw: f64,
    pub lambda_max: f64,
    pub kappa: f64,
    pub log_kappa: f64,
    pub entropy: f64,
    pub effective_dim: f64,
    pub volume: f64,
    pub pac_surrogate: f64,
    pub pac_upper_bound: f64,
    pub degenerate: bool,
    pub num_filtered: usize,
    pub num_retained: usize,
    pub epsilon_floor: f64,
}

impl SpectralSummary {
    pub const CSV_HEADER: [&'static str; 10] = [
        "step",
        "lambda_min",
        "lambda_max",
        "kappa",
        "log_kappa",
        "entropy",
        "d_eff",
        "volume",
        "pac_surrogate",
        "degenerate",
    ];

    /// One CSV row in [`Self::CSV_HEADER`] order.
    pub fn csv_row(&self, step: usize) -> Vec<String> {
        vec![
            step.to_string(),
            self.lambda_min.to_string(),
            self.lambda_max.to_string(),
            self.kappa.to_string(),
            self.log_kappa.to_string(),
            self.entropy.to_string(),
            self.effective_dim.to_string(),
            self.volume.to_string(),
            self.pac_surrogate.to_string(),
            u8::from(self.degenerate).to_string(),
        ]
    }
}

/// Summary of a spectrum given as eigenvalues in any order.
pub fn summarize_eigenvalues(
    eigenvalues: &[f64],
    thresholds: SpectralThresholds,
) -> Result<SpectralSummary> {
    let SpectralThresholds {
        filter_floor,
        degeneracy_threshold,
    } = thresholds;
    if !(filter_floor > 0.0) || !(degeneracy_threshold > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "eigenvalue thresholds must be positive (got {filter_floor}, {degeneracy_threshold})"
        )));
    }
    if let Some(v) = eigenvalues.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("eigenvalue {v}")));
    }
    let retained: Vec<f64> = eigenvalues
        .iter()
        .copied()
        .filter(|&v| v >= filter_floor)
        .collect();
    if retained.is_empty() {
        return Err(Error::DegenerateSpectrum {
            count: eigenvalues.len(),
            floor: filter_floor,
        });
    }
    let lambda_max = retained.iter().copied().fold(f64::MIN, f64::max);
    let lambda_min = retained.iter().copied().fold(f64::MAX, f64::min);
    let lambda_min_raw = eigenvalues.iter().copied().fold(f64::MAX, f64::min);
    let total: f64 = retained.iter().sum();
    let mut entropy = 0.0;
    let mut purity = 0.0;
    let mut log_det = 0.0;
    for &v in &retained {
        let p = v / total;
        entropy -= p * p.ln();
        purity += p * p;
        log_det += v.ln();
    }
    let kappa = lambda_max / lambda_min;
    let below = eigenvalues
        .iter()
        .filter(|&&v| v < degeneracy_threshold)
        .count();
    Ok(SpectralSummary {
        lambda_min,
        lambda_min_raw,
        lambda_max,
        kappa,
        log_kappa: kappa.ln(),
        entropy,
        effective_dim: 1.0 / purity,
        volume: (0.5 * log_det).exp(),
        pac_surrogate: total / lambda_min,
        pac_upper_bound: retained.len() as f64 * kappa,
        degenerate: 2 * below > eigenvalues.len(),
        num_filtered: eigenvalues.len() - retained.len(),
        num_retained: retained.len(),
        epsilon_floor: filter_floor,
    })
}

pub fn spectral_summary(
    eig: &EigenDecomposition,
    thresholds: SpectralThresholds,
) -> Result<SpectralSummary> {
    summarize_eigenvalues(&eig.eigenvalues, thresholds)
}

/// `ρ² = ((κ−1)/(κ+1))²`, the per-step contraction of gradient descent on a
/// quadratic with curvature condition number κ.
pub fn contraction_factor(kappa: f64) -> Result<f64> {
    if !(kappa >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "condition number must be ≥ 1, got {kappa}"
        )));
    }
    if kappa.is_infinite() {
        return Ok(1.0);
    }
    let r = (kappa - 1.0) / (kappa + 1.0);
    Ok(r * r)
}

/// Solves `(G + ridge·I) u = grad` through the eigendecomposition and checks
/// `‖grad‖/λ_max ≤ ‖u‖ ≤ ‖grad‖/λ_min` on the shifted spectrum.
pub fn natural_gradient(g: &MetricTensor, grad: &[f64], ridge: f64) -> Result<Vec<f64>> {
    if grad.len() != g.dim() {
        return Err(Error::DimensionMismatch {
            what: "gradient",
            expected: g.dim(),
            got: grad.len(),
        });
    }
    if !(ridge >= 0.0) {
        return Err(Error::InvalidArgument(format!("ridge must be ≥ 0, got {ridge}")));
    }
    let eig = eigh_symmetric(g)?;
    let floor = SpectralThresholds::default().filter_floor;
    let shifted: Vec<f64> = eig.eigenvalues.iter().map(|v| v + ridge).collect();
    let lo = shifted.iter().copied().fold(f64::MAX, f64::min);
    let hi = shifted.iter().copied().fold(f64::MIN, f64::max);
    if shifted.is_empty() {
        return Ok(Vec::new());
    }
    if lo < floor {
        return Err(Error::SingularMetric(lo));
    }
    let mut u = vec![0.0; grad.len()];
    for (val, vec) in shifted.iter().zip(&eig.eigenvectors) {
        let coeff = vec.iter().zip(grad).map(|(a, b)| a * b).sum::<f64>() / val;
        for (ui, vi) in u.iter_mut().zip(vec) {
            *ui += coeff * vi;
        }
    }
    let gnorm = norm(grad);
    let unorm = norm(&u);
    let (lower, upper) = (gnorm / hi, gnorm / lo);
    let slack = 1e-8 * upper.max(f64::MIN_POSITIVE);
    if unorm < lower - slack || unorm > upper + slack {
        return Err(Error::NormBoundViolated(format!(
            "‖u‖ = {unorm:e} outside [{lower:e}, {upper:e}]"
        )));
    }
    Ok(u)
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogKappaDerivative {
    pub value: f64,
    pub dlambda_max: f64,
    pub dlambda_min: f64,
    /// An extreme eigenvalue is (nearly) degenerate, so first-order
    /// perturbation theory may not apply.
    pub ill_conditioned: bool,
}

/// `d log κ / dλ` for a metric family `G(λ)`, combining
/// `dλ_i/dλ = v_iᵀ (dG/dλ) v_i` for the extreme eigenpairs with `dG/dλ`
/// taken by central difference of step `h`.
pub fn dlogkappa_dlambda<F>(metric_at: F, lambda0: f64, h: f64) -> Result<LogKappaDerivative>
where
    F: Fn(f64) -> Result<MetricTensor>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let g0 = metric_at(lambda0)?;
    let gp = metric_at(lambda0 + h)?;
    let gm = metric_at(lambda0 - h)?;
    if gp.dim() != g0.dim() || gm.dim() != g0.dim() {
        return Err(Error::InvalidArgument("metric dimension changes with λ".into()));
    }
    let eig = eigh_symmetric(&g0)?;
    let floor = SpectralThresholds::default().filter_floor;
    let retained: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] >= floor)
        .collect();
    let (Some(&imax), Some(&imin)) = (retained.first(), retained.last()) else {
        return Err(Error::DegenerateSpectrum {
            count: eig.eigenvalues.len(),
            floor,
        });
    };
    let n = g0.dim();
    let mut dg = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            dg.set(i, j, (gp.get(i, j) - gm.get(i, j)) / (2.0 * h));
        }
    }
    let dmax = dg.quadratic_form(&eig.eigenvectors[imax]);
    let dmin = dg.quadratic_form(&eig.eigenvectors[imin]);
    let vals = &eig.eigenvalues;
    let gap_tol = 1e-6 * g0.entries.frobenius_norm();
    let isolated = |i: usize| {
        let left = i.checked_sub(1).map(|j| vals[j] - vals[i]);
        let right = vals.get(i + 1).map(|v| vals[i] - v);
        left.into_iter().chain(right).all(|gap| gap > gap_tol)
    };
    let ill_conditioned = !isolated(imax) || !isolated(imin);
    if ill_conditioned {
        log::warn!("extreme eigenvalue is nearly degenerate; d log κ/dλ may be unreliable");
    }
    Ok(LogKappaDerivative {
        value: dmax / vals[imax] - dmin / vals[imin],
        dlambda_max: dmax,
        dlambda_min: dmin,
        ill_conditioned,
    })
}
