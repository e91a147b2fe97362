//! Per-λ classifier training and the λ sweep.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::classifier::{
    batch_loss, clip_gradient, forward_batch, grad_readout, grad_theta_task_samples, predict,
    ReadoutParams, Sample,
};
use super::data::Dataset;
use crate::ansatz::{AnsatzSpec, ParameterVector};
use crate::error::{Error, Result};
use crate::par;
use crate::sculpture::{AdamWConfig, AdamWState, MetaModelParams};
use crate::spectral::norm;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DownstreamConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    /// Max L2 norm of the circuit-parameter gradient.
    pub clip_norm: f64,
    pub test_fraction: f64,
    /// Std of the `θ_task` and readout-weight initialisation.
    pub init_sigma: f64,
    pub lambda_grid: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            optimizer: AdamWConfig {
                lr: 0.05,
                ..AdamWConfig::default()
            },
            clip_norm: 1.0,
            test_fraction: 0.2,
            init_sigma: 0.1,
            lambda_grid: (0..=20).map(|i| f64::from(i) * 0.05).collect(),
            seeds: vec![0, 1, 2],
        }
    }
}

impl DownstreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("downstream batch size must be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config(format!("clip norm must be positive, got {}", self.clip_norm)));
        }
        if !(self.init_sigma >= 0.0) {
            return Err(Error::Config(format!("init σ must be non-negative, got {}", self.init_sigma)));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if self.lambda_grid.is_empty() {
            return Err(Error::Config("λ grid is empty".into()));
        }
        if let Some(l) = self.lambda_grid.iter().find(|l| !(0.0..=1.0).contains(*l)) {
            return Err(Error::Config(format!("λ = {l} lies outside [0, 1]")));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no downstream seeds".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the minibatch losses seen during the epoch.
    pub train_loss: f64,
    pub test_accuracy: f64,
    /// Norm of the clipped `θ_task` gradient at the epoch's last step.
    pub theta_grad_norm: f64,
    /// Same gradient before clipping.
    pub theta_grad_norm_raw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaRunRecord {
    pub lambda: f64,
    pub seed: u64,
    pub initial_accuracy: f64,
    pub epochs: Vec<EpochRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

impl LambdaRunRecord {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn final_accuracy(&self) -> f64 {
        self.last().map_or(self.initial_accuracy, |e| e.test_accuracy)
    }

    pub fn final_loss(&self) -> f64 {
        self.last().map_or(f64::NAN, |e| e.train_loss)
    }

    pub fn final_grad_norm(&self) -> f64 {
        self.last().map_or(f64::NAN, |e| e.theta_grad_norm)
    }
}

/// Trainable state of the hybrid classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskModel {
    pub theta_task: ParameterVector,
    pub readout: ReadoutParams,
}

impl TaskModel {
    pub fn init(spec: &AnsatzSpec, sigma: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        let normal = Normal::new(0.0, sigma)
            .map_err(|e| Error::InvalidArgument(format!("init σ = {sigma}: {e}")))?;
        let theta_task: ParameterVector = (0..spec.num_params())
            .map(|_| normal.sample(rng))
            .collect::<Vec<_>>()
            .into();
        let readout = ReadoutParams::random_normal(spec.num_qubits, sigma, rng)?;
        Ok(Self {
            theta_task,
            readout,
        })
    }
}

pub const TASK_CHECKPOINT_FORMAT: &str = "sculpture-task-model";
pub const TASK_CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskCheckpoint {
    pub format: String,
    pub version: u32,
    pub lambda: f64,
    pub seed: u64,
    pub epochs: usize,
    pub theta_task: Vec<f64>,
    pub readout_weights: Vec<Vec<f64>>,
    pub readout_bias: Vec<f64>,
}

impl TaskCheckpoint {
    pub fn new(model: &TaskModel, lambda: f64, seed: u64, epochs: usize) -> Self {
        let n = model.readout.num_inputs().max(1);
        Self {
            format: TASK_CHECKPOINT_FORMAT.into(),
            version: TASK_CHECKPOINT_VERSION,
            lambda,
            seed,
            epochs,
            theta_task: model.theta_task.to_vec(),
            readout_weights: model.readout.weights.chunks(n).map(<[f64]>::to_vec).collect(),
            readout_bias: model.readout.bias.to_vec(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}

/// File name of a run checkpoint inside a sweep directory.
pub fn run_checkpoint_name(lambda: f64, seed: u64) -> String {
    format!("run_lambda{lambda:.4}_seed{seed}.json")
}

fn accuracy(
    spec: &AnsatzSpec,
    model: &TaskModel,
    test: &[&Sample],
    lambda: f64,
) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let records = forward_batch(spec, &model.theta_task, &model.readout, test, lambda)?;
    let correct = records.iter().filter(|r| predict(&r.logits) == r.label).count();
    Ok(correct as f64 / test.len() as f64)
}

/// Generator outputs for every row of `dataset`, computed once.
pub fn precompute_samples(dataset: &Dataset, phi: &MetaModelParams) -> Result<Vec<Sample>> {
    if phi.input_dim() != dataset.feature_dim() {
        return Err(Error::DimensionMismatch {
            what: "generator input width vs dataset features",
            expected: dataset.feature_dim(),
            got: phi.input_dim(),
        });
    }
    par::try_map_range(dataset.features.len(), |i| {
        Sample::new(dataset.features[i].clone(), dataset.labels[i], phi)
    })
}

/// Trains `θ_task` and the readout for one λ and returns the run record and
/// the trained model.
pub fn train_one_lambda(
    spec: &AnsatzSpec,
    config: &DownstreamConfig,
    dataset: &Dataset,
    lambda: f64,
    phi: &MetaModelParams,
    seed: u64,
) -> Result<(LambdaRunRecord, TaskModel)> {
    let samples = precompute_samples(dataset, phi)?;
    train_on_samples(spec, config, dataset, &samples, lambda, seed)
}

fn check_shapes(spec: &AnsatzSpec, dataset: &Dataset, samples: &[Sample]) -> Result<()> {
    if dataset.feature_dim() != spec.feature_dim {
        return Err(Error::DimensionMismatch {
            what: "dataset feature width",
            expected: spec.feature_dim,
            got: dataset.feature_dim(),
        });
    }
    if samples.len() != dataset.features.len() {
        return Err(Error::DimensionMismatch {
            what: "precomputed samples",
            expected: dataset.features.len(),
            got: samples.len(),
        });
    }
    if let Some(s) = samples.iter().find(|s| s.theta_meta.len() != spec.num_params()) {
        return Err(Error::DimensionMismatch {
            what: "generator output width",
            expected: spec.num_params(),
            got: s.theta_meta.len(),
        });
    }
    Ok(())
}

/// [`train_one_lambda`] with generator outputs already attached.
pub fn train_on_samples(
    spec: &AnsatzSpec,
    config: &DownstreamConfig,
    dataset: &Dataset,
    samples: &[Sample],
    lambda: f64,
    seed: u64,
) -> Result<(LambdaRunRecord, TaskModel)> {
    config.validate()?;
    check_shapes(spec, dataset, samples)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = TaskModel::init(spec, config.init_sigma, &mut rng)?;
    let mut theta_opt = AdamWState::new(spec.num_params(), config.optimizer);
    let mut readout_opt = AdamWState::new(model.readout.weights.len() + 2, config.optimizer);

    let test: Vec<&Sample> = dataset.test.iter().map(|&i| &samples[i]).collect();
    let initial_accuracy = accuracy(spec, &model, &test, lambda)?;
    let mut order = dataset.train.clone();
    let mut epochs = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut last_norms = (f64::NAN, f64::NAN);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let records = forward_batch(spec, &model.theta_task, &model.readout, &batch, lambda)?;
            loss_sum += batch_loss(&records)?;
            batches += 1;

            let g_theta = grad_theta_task_samples(
                spec,
                &model.theta_task,
                &model.readout,
                &batch,
                &records,
                lambda,
            )?;
            let raw_norm = norm(&g_theta);
            if !raw_norm.is_finite() {
                return Err(Error::NonFinite(format!("θ gradient at λ={lambda}, epoch {epoch}")));
            }
            let clipped = clip_gradient(&g_theta, config.clip_norm)?;
            last_norms = (norm(&clipped), raw_norm);
            theta_opt.step(&mut model.theta_task, &clipped)?;

            let g_read = grad_readout(&records)?;
            let mut flat: Vec<f64> = model.readout.weights.clone();
            flat.extend_from_slice(&model.readout.bias);
            let mut grad: Vec<f64> = g_read.weights;
            grad.extend_from_slice(&g_read.bias);
            readout_opt.step(&mut flat, &grad)?;
            let nw = model.readout.weights.len();
            model.readout.weights.copy_from_slice(&flat[..nw]);
            model.readout.bias = [flat[nw], flat[nw + 1]];
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            test_accuracy: accuracy(spec, &model, &test, lambda)?,
            theta_grad_norm: last_norms.0,
            theta_grad_norm_raw: last_norms.1,
        };
        log::debug!(
            "λ={lambda} seed={seed} epoch {epoch}: loss {:.4} acc {:.4} |g| {:.4}",
            record.train_loss,
            record.test_accuracy,
            record.theta_grad_norm
        );
        epochs.push(record);
    }
    Ok((
        LambdaRunRecord {
            lambda,
            seed,
            initial_accuracy,
            epochs,
            checkpoint: None,
        },
        model,
    ))
}

/// Which per-epoch quantity a heatmap shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapMetric {
    Loss,
    Accuracy,
    GradNorm,
}

impl HeatmapMetric {
    pub const ALL: [HeatmapMetric; 3] = [HeatmapMetric::Loss, HeatmapMetric::Accuracy, HeatmapMetric::GradNorm];

    pub fn file_name(self) -> &'static str {
        match self {
            HeatmapMetric::Loss => "heatmap_loss.csv",
            HeatmapMetric::Accuracy => "heatmap_accuracy.csv",
            HeatmapMetric::GradNorm => "heatmap_gradnorm.csv",
        }
    }

    fn pick(self, e: &EpochRecord) -> f64 {
        match self {
            HeatmapMetric::Loss => e.train_loss,
            HeatmapMetric::Accuracy => e.test_accuracy,
            HeatmapMetric::GradNorm => e.theta_grad_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    /// Grid-major: all seeds of `grid[0]`, then `grid[1]`, ...
    pub records: Vec<LambdaRunRecord>,
}

impl SweepTable {
    pub fn runs_at(&self, lambda_index: usize) -> &[LambdaRunRecord] {
        let s = self.seeds.len();
        &self.records[lambda_index * s..(lambda_index + 1) * s]
    }

    pub const FINAL_HEADER: [&'static str; 5] =
        ["lambda", "seed", "final_loss", "final_accuracy", "final_grad_norm"];

    pub fn final_rows(&self) -> Vec<Vec<String>> {
        self.records
            .iter()
            .map(|r| {
                vec![
                    r.lambda.to_string(),
                    r.seed.to_string(),
                    r.final_loss().to_string(),
                    r.final_accuracy().to_string(),
                    r.final_grad_norm().to_string(),
                ]
            })
            .collect()
    }

    /// Seed-mean of a per-epoch quantity: `epochs` rows by `grid` columns.
    pub fn heatmap(&self, metric: HeatmapMetric) -> Vec<Vec<f64>> {
        (0..self.epochs)
            .map(|e| {
                (0..self.grid.len())
                    .map(|j| {
                        let runs = self.runs_at(j);
                        runs.iter().map(|r| metric.pick(&r.epochs[e])).sum::<f64>() / runs.len() as f64
                    })
                    .collect()
            })
            .collect()
    }

    pub fn heatmap_header(&self) -> Vec<String> {
        std::iter::once("epoch".to_string())
            .chain(self.grid.iter().map(|l| l.to_string()))
            .collect()
    }

    pub fn heatmap_rows(&self, metric: HeatmapMetric) -> Vec<Vec<String>> {
        self.heatmap(metric)
            .into_iter()
            .enumerate()
            .map(|(e, row)| {
                std::iter::once((e + 1).to_string())
                    .chain(row.into_iter().map(|v| v.to_string()))
                    .collect()
            })
            .collect()
    }

    /// Seed-mean of a final quantity at each grid point.
    pub fn mean_final(&self, f: impl Fn(&LambdaRunRecord) -> f64) -> Vec<f64> {
        (0..self.grid.len())
            .map(|j| {
                let runs = self.runs_at(j);
                runs.iter().map(&f).sum::<f64>() / runs.len() as f64
            })
            .collect()
    }
}

/// One training run per `(λ, seed)`. Run checkpoints go to `checkpoint_dir`
/// when given.
pub fn lambda_sweep(
    spec: &AnsatzSpec,
    config: &DownstreamConfig,
    dataset: &Dataset,
    grid: &[f64],
    phi: &MetaModelParams,
    seeds: &[u64],
    checkpoint_dir: Option<&Path>,
) -> Result<SweepTable> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("λ grid is empty".into()));
    }
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("no seeds".into()));
    }
    let samples = precompute_samples(dataset, phi)?;
    if let Some(dir) = checkpoint_dir {
        fs::create_dir_all(dir)?;
    }
    let runs = par::try_map_range(grid.len() * seeds.len(), |i| {
        let lambda = grid[i / seeds.len()];
        let seed = seeds[i % seeds.len()];
        let (mut record, model) = train_on_samples(spec, config, dataset, &samples, lambda, seed)?;
        if let Some(dir) = checkpoint_dir {
            let path = dir.join(run_checkpoint_name(lambda, seed));
            TaskCheckpoint::new(&model, lambda, seed, config.epochs).save(&path)?;
            record.checkpoint = Some(path);
        }
        log::info!(
            "λ={lambda} seed={seed}: final loss {:.4}, accuracy {:.4}",
            record.final_loss(),
            record.final_accuracy()
        );
        Ok::<_, Error>(record)
    })?;
    Ok(SweepTable {
        grid: grid.to_vec(),
        seeds: seeds.to_vec(),
        epochs: config.epochs,
        records: runs,
    })
}
