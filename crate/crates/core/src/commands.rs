//! The three top-level workflows: meta-training, diagnostics and the λ
//! sweep. Each reads a [`RunConfig`] and writes its artifacts under
//! `paths.out_dir`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::ansatz::{FeatureVector, ParameterVector};
use crate::config::{MetaDataSource, RunConfig};
use crate::downstream::{lambda_sweep, load_diabetes_csv, prepare_dataset, Dataset, HeatmapMetric, SweepTable};
use crate::error::{Error, Result};
use crate::fsmetric::{fs_metric_block_diag_with, fs_metric_blocks, MetricTensor};
use crate::output::{write_csv_artifact, write_sidecar};
use crate::par;
use crate::sculpture::{
    load_checkpoint_for, meta_generate, meta_train_with, save_checkpoint, MetaTrace, MetaTrainOutcome,
    MetaTraceRow,
};
use crate::spectral::{block_eigenvalues, summarize_eigenvalues, SpectralSummary};

pub const META_TRACE_FILE: &str = "meta_trace.csv";
pub const LOGKAPPA_FILE: &str = "logkappa_test.csv";
pub const THETA_MARGINALS_FILE: &str = "theta_marginals.csv";
pub const METRIC_DUMP_CSV: &str = "metric_dump.csv";
pub const METRIC_DUMP_JSON: &str = "metric_dump.json";
pub const FINAL_VS_LAMBDA_FILE: &str = "final_vs_lambda.csv";
pub const RUNS_DIR: &str = "runs";

pub fn load_dataset(config: &RunConfig) -> Result<Dataset> {
    let raw = load_diabetes_csv(&config.paths.dataset)?;
    if raw.feature_dim() != config.ansatz.feature_dim {
        return Err(Error::Data {
            path: config.paths.dataset.clone(),
            message: format!(
                "{} feature columns, config expects {}",
                raw.feature_dim(),
                config.ansatz.feature_dim
            ),
        });
    }
    prepare_dataset(&raw, config.downstream.test_fraction, config.split_seed)
}

/// Inputs for meta-training: standardized train rows, or standard-normal
/// vectors drawn from `config.seed`.
pub fn meta_training_inputs(config: &RunConfig) -> Result<Vec<FeatureVector>> {
    match config.meta_data {
        MetaDataSource::Dataset => Ok(load_dataset(config)?.train_features()),
        MetaDataSource::Synthetic => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_da7a);
            Ok((0..config.synthetic_samples)
                .map(|_| {
                    FeatureVector(
                        (0..config.ansatz.feature_dim)
                            .map(|_| StandardNormal.sample(&mut rng))
                            .collect(),
                    )
                })
                .collect())
        }
    }
}

fn prepare_out_dir(config: &RunConfig) -> Result<&Path> {
    let dir = config.paths.out_dir.as_path();
    fs::create_dir_all(dir)?;
    Ok(dir)
}

#[derive(Debug, Clone)]
pub struct MetaTrainReport {
    pub outcome: MetaTrainOutcome,
    pub trace_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

impl MetaTrainReport {
    /// Summary of the last step that produced a finite spectrum.
    pub fn final_summary(&self) -> Option<&SpectralSummary> {
        self.outcome
            .trace
            .rows
            .iter()
            .rev()
            .map(|r| &r.summary)
            .find(|s| s.log_kappa.is_finite())
    }
}

pub fn cmd_meta_train(config: &RunConfig) -> Result<MetaTrainReport> {
    cmd_meta_train_with(config, |_| {})
}

pub fn cmd_meta_train_with<F>(config: &RunConfig, on_step: F) -> Result<MetaTrainReport>
where
    F: FnMut(&MetaTraceRow),
{
    config.validate()?;
    let inputs = meta_training_inputs(config)?;
    let out = prepare_out_dir(config)?;
    let outcome = meta_train_with(&config.ansatz, &config.meta, &inputs, config.seed, on_step)?;

    let trace_path = out.join(META_TRACE_FILE);
    write_csv_artifact(
        &trace_path,
        &MetaTrace::csv_header(),
        &outcome.trace.csv_rows(),
        "meta-train",
        config,
    )?;
    let checkpoint_path = config.checkpoint_path();
    if let Some(dir) = checkpoint_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_checkpoint(&outcome.params, &outcome.optimizer, config.seed, &checkpoint_path)?;
    write_sidecar(&checkpoint_path, "meta-train", config)?;
    Ok(MetaTrainReport {
        outcome,
        trace_path,
        checkpoint_path,
    })
}

/// Where the circuit parameters come from in `diagnose`.
#[derive(Debug, Clone, PartialEq)]
pub enum ThetaSource {
    /// `θ(x)` from the generator checkpoint.
    Checkpoint,
    Zero,
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputSource {
    TestSplit,
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnoseOptions {
    pub theta: ThetaSource,
    pub inputs: InputSource,
    /// Row index whose metric is written to the dump files.
    pub dump_metric: Option<usize>,
}

impl Default for DiagnoseOptions {
    fn default() -> Self {
        Self {
            theta: ThetaSource::Checkpoint,
            inputs: InputSource::TestSplit,
            dump_metric: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnoseRow {
    pub index: usize,
    pub theta: ParameterVector,
    pub summary: SpectralSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnoseReport {
    pub rows: Vec<DiagnoseRow>,
    pub logkappa_path: PathBuf,
    pub marginals_path: PathBuf,
    pub dump_paths: Option<(PathBuf, PathBuf)>,
}

impl DiagnoseReport {
    pub fn fraction_below(&self, log_kappa: f64) -> f64 {
        let n = self.rows.iter().filter(|r| r.summary.log_kappa < log_kappa).count();
        n as f64 / self.rows.len().max(1) as f64
    }
}

#[derive(Serialize)]
struct MetricDump<'a> {
    dim: usize,
    source: crate::fsmetric::MetricSource,
    block_partition: Option<Vec<[usize; 2]>>,
    matrix: Vec<&'a [f64]>,
}

fn dump_metric(metric: &MetricTensor, out: &Path, config: &RunConfig) -> Result<(PathBuf, PathBuf)> {
    let n = metric.dim();
    let rows: Vec<Vec<String>> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| vec![i.to_string(), j.to_string(), metric.get(i, j).to_string()])
        .collect();
    let csv_path = out.join(METRIC_DUMP_CSV);
    write_csv_artifact(&csv_path, &["row", "col", "value"], &rows, "diagnose", config)?;
    let dump = MetricDump {
        dim: n,
        source: metric.source,
        block_partition: metric
            .block_partition
            .as_ref()
            .map(|parts| parts.iter().map(|r| [r.start, r.end]).collect()),
        matrix: (0..n).map(|i| metric.entries.row(i)).collect(),
    };
    let json_path = out.join(METRIC_DUMP_JSON);
    let mut text = serde_json::to_string_pretty(&dump)?;
    text.push('\n');
    fs::write(&json_path, text)?;
    write_sidecar(&json_path, "diagnose", config)?;
    Ok((csv_path, json_path))
}

pub fn cmd_diagnose(config: &RunConfig, options: &DiagnoseOptions) -> Result<DiagnoseReport> {
    config.validate()?;
    let spec = &config.ansatz;
    let p = spec.num_params();
    let inputs: Vec<FeatureVector> = match options.inputs {
        InputSource::TestSplit => load_dataset(config)?.test_features(),
        InputSource::Zero => vec![FeatureVector::zeros(spec.feature_dim)],
    };
    if inputs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let thetas: Vec<ParameterVector> = match &options.theta {
        ThetaSource::Checkpoint => {
            let path = config.checkpoint_path();
            let ckpt = load_checkpoint_for(&path, spec)?;
            par::try_map_range(inputs.len(), |i| meta_generate(&ckpt.params, &inputs[i]))?
        }
        ThetaSource::Zero => vec![ParameterVector::zeros(p); inputs.len()],
        ThetaSource::Explicit(v) => {
            if v.len() != p {
                return Err(Error::DimensionMismatch {
                    what: "explicit θ",
                    expected: p,
                    got: v.len(),
                });
            }
            vec![ParameterVector(v.clone()); inputs.len()]
        }
    };
    let scheme = config.meta.block_scheme;
    let thresholds = config.meta.thresholds;
    let summaries = par::try_map_range(inputs.len(), |i| {
        let blocks = fs_metric_blocks(spec, &inputs[i], &thetas[i], scheme)?;
        let mats: Vec<_> = blocks.into_iter().map(|(_, m)| m).collect();
        summarize_eigenvalues(&block_eigenvalues(&mats)?, thresholds)
    })?;
    let rows: Vec<DiagnoseRow> = summaries
        .into_iter()
        .zip(thetas)
        .enumerate()
        .map(|(index, (summary, theta))| DiagnoseRow {
            index,
            theta,
            summary,
        })
        .collect();

    let out = prepare_out_dir(config)?;
    let logkappa_path = out.join(LOGKAPPA_FILE);
    let lk_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let s = &r.summary;
            vec![
                r.index.to_string(),
                s.log_kappa.to_string(),
                s.lambda_min.to_string(),
                s.lambda_max.to_string(),
                s.kappa.to_string(),
                s.entropy.to_string(),
                s.effective_dim.to_string(),
                u8::from(s.degenerate).to_string(),
            ]
        })
        .collect();
    write_csv_artifact(
        &logkappa_path,
        &["index", "log_kappa", "lambda_min", "lambda_max", "kappa", "entropy", "d_eff", "degenerate"],
        &lk_rows,
        "diagnose",
        config,
    )?;

    let marginals_path = out.join(THETA_MARGINALS_FILE);
    let mut header = vec!["index".to_string()];
    header.extend((0..p).map(|k| format!("theta_{k}")));
    let th_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            std::iter::once(r.index.to_string())
                .chain(r.theta.iter().map(|v| v.to_string()))
                .collect()
        })
        .collect();
    write_csv_artifact(&marginals_path, &header, &th_rows, "diagnose", config)?;

    let dump_paths = match options.dump_metric {
        Some(i) if i >= rows.len() => {
            return Err(Error::InvalidArgument(format!(
                "metric dump index {i} out of range ({} inputs)",
                rows.len()
            )))
        }
        Some(i) => {
            let metric = fs_metric_block_diag_with(spec, &inputs[i], &rows[i].theta, scheme)?;
            Some(dump_metric(&metric, out, config)?)
        }
        None => None,
    };
    Ok(DiagnoseReport {
        rows,
        logkappa_path,
        marginals_path,
        dump_paths,
    })
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub table: SweepTable,
    pub final_path: PathBuf,
    pub heatmap_paths: Vec<PathBuf>,
}

pub fn cmd_sweep(config: &RunConfig) -> Result<SweepReport> {
    config.validate()?;
    let spec = &config.ansatz;
    let ckpt = load_checkpoint_for(&config.checkpoint_path(), spec)?;
    let dataset = load_dataset(config)?;
    let out = prepare_out_dir(config)?;
    let d = &config.downstream;
    let table = lambda_sweep(
        spec,
        d,
        &dataset,
        &d.lambda_grid,
        &ckpt.params,
        &d.seeds,
        Some(&out.join(RUNS_DIR)),
    )?;
    let final_path = out.join(FINAL_VS_LAMBDA_FILE);
    write_csv_artifact(&final_path, &SweepTable::FINAL_HEADER, &table.final_rows(), "sweep", config)?;
    let mut heatmap_paths = Vec::new();
    for metric in HeatmapMetric::ALL {
        let path = out.join(metric.file_name());
        write_csv_artifact(&path, &table.heatmap_header(), &table.heatmap_rows(metric), "sweep", config)?;
        heatmap_paths.push(path);
    }
    Ok(SweepReport {
        table,
        final_path,
        heatmap_paths,
    })
}
