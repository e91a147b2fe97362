//! Meta-training: minimise `log κ` of the batch-averaged block metric at the
//! generator's output for a representative input.
//!
//! `∂L/∂θ` is taken by central differences over the circuit parameters and
//! chained through the generator with exact backpropagation.

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adamw::{AdamWConfig, AdamWState};
use super::model::{meta_backward, meta_forward, MetaModelParams};
use crate::ansatz::{AnsatzSpec, FeatureVector, ParameterVector};
use crate::error::{Error, Result};
use crate::fsmetric::{fs_metric_batch_blocks, BlockScheme};
use crate::par;
use crate::spectral::{
    block_eigenvalues, norm, summarize_eigenvalues, SpectralSummary, SpectralThresholds,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaConfig {
    pub hidden_dim: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub optimizer: AdamWConfig,
    pub init_sigma: f64,
    pub thresholds: SpectralThresholds,
    /// Central-difference step for `∂L/∂θ`.
    pub fd_step: f64,
    pub block_scheme: BlockScheme,
    /// Abort after this many consecutive degenerate steps.
    pub max_degenerate_steps: usize,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            batch_size: 4,
            steps: 100,
            optimizer: AdamWConfig::default(),
            init_sigma: 0.1,
            thresholds: SpectralThresholds::default(),
            fd_step: 1e-4,
            block_scheme: BlockScheme::Dependency,
            max_degenerate_steps: 10,
        }
    }
}

/// `log κ` of the batch-averaged block metric at fixed `θ`.
pub fn loss_at_theta(
    spec: &AnsatzSpec,
    theta: &ParameterVector,
    batch: &[FeatureVector],
    thresholds: SpectralThresholds,
    scheme: BlockScheme,
) -> Result<(f64, SpectralSummary)> {
    let blocks = fs_metric_batch_blocks(spec, batch, theta, scheme)?;
    let mats: Vec<_> = blocks.into_iter().map(|(_, m)| m).collect();
    let eigenvalues = block_eigenvalues(&mats)?;
    let summary = summarize_eigenvalues(&eigenvalues, thresholds)?;
    Ok((summary.log_kappa, summary))
}

/// Meta-loss for generator `phi`: `θ_rep = M_φ(x_rep)`, then
/// [`loss_at_theta`] over `batch`.
pub fn meta_loss(
    phi: &MetaModelParams,
    x_rep: &FeatureVector,
    batch: &[FeatureVector],
    spec: &AnsatzSpec,
    thresholds: SpectralThresholds,
) -> Result<(f64, SpectralSummary)> {
    let (theta, _) = meta_forward(phi, x_rep)?;
    loss_at_theta(spec, &theta, batch, thresholds, MetaConfig::default().block_scheme)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaGradient {
    pub grad: Vec<f64>,
    /// Components where a probe hit a degenerate spectrum and a one-sided
    /// difference was used.
    pub flagged: Vec<usize>,
}

/// `∂L/∂θ_k ≈ (L(θ + h e_k) − L(θ − h e_k)) / 2h` for every k.
pub fn meta_loss_grad_theta(
    spec: &AnsatzSpec,
    theta: &ParameterVector,
    batch: &[FeatureVector],
    thresholds: SpectralThresholds,
    scheme: BlockScheme,
    h: f64,
) -> Result<ThetaGradient> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {h}")));
    }
    let p = theta.len();
    let probe = |k: usize, sign: f64| -> Result<Option<f64>> {
        let mut shifted = theta.clone();
        shifted[k] += sign * h;
        match loss_at_theta(spec, &shifted, batch, thresholds, scheme) {
            Ok((l, _)) => Ok(Some(l)),
            Err(Error::DegenerateSpectrum { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let probes = par::try_map_range(2 * p, |i| probe(i / 2, if i % 2 == 0 { 1.0 } else { -1.0 }))?;
    let mut center: Option<f64> = None;
    let mut grad = Vec::with_capacity(p);
    let mut flagged = Vec::new();
    for k in 0..p {
        let g = match (probes[2 * k], probes[2 * k + 1]) {
            (Some(plus), Some(minus)) => (plus - minus) / (2.0 * h),
            (plus, minus) => {
                flagged.push(k);
                let c = match center {
                    Some(c) => c,
                    None => {
                        let c = loss_at_theta(spec, theta, batch, thresholds, scheme)?.0;
                        center = Some(c);
                        c
                    }
                };
                match (plus, minus) {
                    (Some(plus), None) => (plus - c) / h,
                    (None, Some(minus)) => (c - minus) / h,
                    _ => 0.0,
                }
            }
        };
        grad.push(g);
    }
    if !flagged.is_empty() {
        log::warn!("degenerate spectrum at {} finite-difference probes", flagged.len());
    }
    Ok(ThetaGradient { grad, flagged })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaTraceRow {
    pub step: usize,
    pub summary: SpectralSummary,
    /// `‖∇_φ L‖₂` of the gradient handed to the optimizer.
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetaTrace {
    pub rows: Vec<MetaTraceRow>,
}

impl MetaTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn csv_header() -> Vec<&'static str> {
        let mut h = SpectralSummary::CSV_HEADER.to_vec();
        h.push("grad_norm");
        h
    }

    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                let mut row = r.summary.csv_row(r.step);
                row.push(r.grad_norm.to_string());
                row
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct MetaTrainOutcome {
    pub params: MetaModelParams,
    pub optimizer: AdamWState,
    pub trace: MetaTrace,
    pub seed: u64,
}

/// Summary filled with NaNs for a step whose spectrum fell entirely below
/// the filter floor.
fn degenerate_summary(thresholds: SpectralThresholds) -> SpectralSummary {
    SpectralSummary {
        lambda_min: f64::NAN,
        lambda_min_raw: f64::NAN,
        lambda_max: f64::NAN,
        kappa: f64::NAN,
        log_kappa: f64::NAN,
        entropy: f64::NAN,
        effective_dim: f64::NAN,
        volume: f64::NAN,
        pac_surrogate: f64::NAN,
        pac_upper_bound: f64::NAN,
        degenerate: true,
        num_filtered: 0,
        num_retained: 0,
        epsilon_floor: thresholds.filter_floor,
    }
}

/// Fresh generator and optimizer for `spec` under `config`.
pub fn init_meta_model<R: Rng + ?Sized>(
    spec: &AnsatzSpec,
    config: &MetaConfig,
    rng: &mut R,
) -> Result<(MetaModelParams, AdamWState)> {
    let phi = MetaModelParams::random_normal(
        spec.feature_dim,
        config.hidden_dim,
        spec.num_params(),
        config.init_sigma,
        rng,
    )?;
    let opt = AdamWState::new(phi.len(), config.optimizer);
    Ok((phi, opt))
}

/// Runs `config.steps` meta-training steps from a seeded initialisation.
pub fn meta_train(
    spec: &AnsatzSpec,
    config: &MetaConfig,
    dataset: &[FeatureVector],
    seed: u64,
) -> Result<MetaTrainOutcome> {
    meta_train_with(spec, config, dataset, seed, |_| {})
}

/// [`meta_train`] with a callback invoked after each recorded step.
pub fn meta_train_with<F>(
    spec: &AnsatzSpec,
    config: &MetaConfig,
    dataset: &[FeatureVector],
    seed: u64,
    mut on_step: F,
) -> Result<MetaTrainOutcome>
where
    F: FnMut(&MetaTraceRow),
{
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("meta-training dataset is empty".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("meta batch size must be positive".into()));
    }
    if let Some(x) = dataset.iter().find(|x| x.len() != spec.feature_dim) {
        return Err(Error::DimensionMismatch {
            what: "meta-training sample",
            expected: spec.feature_dim,
            got: x.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut phi, mut opt) = init_meta_model(spec, config, &mut rng)?;
    let mut trace = MetaTrace::default();
    let mut degenerate_run = 0usize;
    let batch_size = config.batch_size.min(dataset.len());

    for step in 1..=config.steps {
        let x_rep = &dataset[rng.gen_range(0..dataset.len())];
        let batch: Vec<FeatureVector> = sample(&mut rng, dataset.len(), batch_size)
            .into_iter()
            .map(|i| dataset[i].clone())
            .collect();

        let (theta, cache) = meta_forward(&phi, x_rep)?;
        let evaluated = loss_at_theta(spec, &theta, &batch, config.thresholds, config.block_scheme);
        let summary = match evaluated {
            Ok((_, s)) => s,
            Err(Error::DegenerateSpectrum { .. }) => {
                degenerate_run += 1;
                let row = MetaTraceRow {
                    step,
                    summary: degenerate_summary(config.thresholds),
                    grad_norm: f64::NAN,
                };
                on_step(&row);
                trace.rows.push(row);
                if degenerate_run > config.max_degenerate_steps {
                    return Err(Error::BarrenPlateau {
                        steps: degenerate_run,
                        last_step: step,
                    });
                }
                continue;
            }
            Err(e) => return Err(e),
        };
        if summary.degenerate {
            degenerate_run += 1;
            if degenerate_run > config.max_degenerate_steps {
                return Err(Error::BarrenPlateau {
                    steps: degenerate_run,
                    last_step: step,
                });
            }
        } else {
            degenerate_run = 0;
        }

        let dtheta = meta_loss_grad_theta(
            spec,
            &theta,
            &batch,
            config.thresholds,
            config.block_scheme,
            config.fd_step,
        )?;
        let grad = meta_backward(&phi, &cache, &dtheta.grad)?;
        let grad_norm = norm(grad.as_slice());
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite(format!("meta-gradient norm at step {step}")));
        }
        opt.step(phi.as_mut_slice(), grad.as_slice())?;

        let row = MetaTraceRow {
            step,
            summary,
            grad_norm,
        };
        on_step(&row);
        trace.rows.push(row);
    }

    Ok(MetaTrainOutcome {
        params: phi,
        optimizer: opt,
        trace,
        seed,
    })
}
