//! JSON persistence of the generator and its optimizer state.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adamw::{AdamWConfig, AdamWState};
use super::model::{Activation, MetaModelParams};
use crate::ansatz::AnsatzSpec;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "sculpture-meta-model";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OptimizerRecord {
    step_count: u64,
    hyper: AdamWConfig,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    seed: u64,
    step: u64,
    input_dim: usize,
    hidden_dim: usize,
    num_params: usize,
    activation: Activation,
    w1: Vec<Vec<f64>>,
    b1: Vec<f64>,
    w2: Vec<Vec<f64>>,
    b2: Vec<f64>,
    optimizer: OptimizerRecord,
}

/// A loaded checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: MetaModelParams,
    pub optimizer: AdamWState,
    pub seed: u64,
    pub step: u64,
}

impl Checkpoint {
    /// Rejects checkpoints whose shape does not fit `spec`.
    pub fn check_against(&self, spec: &AnsatzSpec, path: &Path) -> Result<()> {
        let (d, p) = (self.params.input_dim(), self.params.output_dim());
        if d != spec.feature_dim || p != spec.num_params() {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                message: format!(
                    "shape (d={d}, p={p}) does not match config (d={}, p={})",
                    spec.feature_dim,
                    spec.num_params()
                ),
            });
        }
        Ok(())
    }
}

fn rows(values: &[f64], width: usize) -> Vec<Vec<f64>> {
    if width == 0 {
        return Vec::new();
    }
    values.chunks(width).map(<[f64]>::to_vec).collect()
}

pub fn save_checkpoint(
    params: &MetaModelParams,
    optimizer: &AdamWState,
    seed: u64,
    path: &Path,
) -> Result<()> {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        seed,
        step: optimizer.step_count,
        input_dim: params.input_dim(),
        hidden_dim: params.hidden_dim(),
        num_params: params.output_dim(),
        activation: params.activation(),
        w1: rows(params.w1(), params.input_dim()),
        b1: params.b1().to_vec(),
        w2: rows(params.w2(), params.hidden_dim()),
        b2: params.b2().to_vec(),
        optimizer: OptimizerRecord {
            step_count: optimizer.step_count,
            hyper: optimizer.hyper,
            first_moment: optimizer.first_moment.clone(),
            second_moment: optimizer.second_moment.clone(),
        },
    };
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bad = |message: String| Error::Checkpoint {
        path: path.to_path_buf(),
        message,
    };
    let text = fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    match raw.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(CHECKPOINT_VERSION) => {}
        Some(v) => {
            return Err(bad(format!(
                "unsupported checkpoint version {v} (expected {CHECKPOINT_VERSION})"
            )))
        }
        None => return Err(bad("missing version field".into())),
    }
    let file: CheckpointFile = serde_json::from_value(raw).map_err(|e| bad(e.to_string()))?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(bad(format!("unexpected format tag {:?}", file.format)));
    }
    let (d, h, p) = (file.input_dim, file.hidden_dim, file.num_params);
    let shape_ok = file.w1.len() == h
        && file.w1.iter().all(|r| r.len() == d)
        && file.b1.len() == h
        && file.w2.len() == p
        && file.w2.iter().all(|r| r.len() == h)
        && file.b2.len() == p;
    if !shape_ok {
        return Err(bad(format!("weight arrays do not match shape (d={d}, hidden={h}, p={p})")));
    }
    let mut flat = Vec::new();
    flat.extend(file.w1.into_iter().flatten());
    flat.extend(file.b1);
    flat.extend(file.w2.into_iter().flatten());
    flat.extend(file.b2);
    let params = MetaModelParams::from_flat(d, h, p, file.activation, flat)?;
    if !params.is_finite() {
        return Err(bad("non-finite weights".into()));
    }
    let o = file.optimizer;
    if o.first_moment.len() != params.len() || o.second_moment.len() != params.len() {
        return Err(bad("optimizer moments do not match the parameter count".into()));
    }
    Ok(Checkpoint {
        params,
        optimizer: AdamWState {
            first_moment: o.first_moment,
            second_moment: o.second_moment,
            step_count: o.step_count,
            hyper: o.hyper,
        },
        seed: file.seed,
        step: file.step,
    })
}

/// Loads and checks the shape against `spec`.
pub fn load_checkpoint_for(path: &Path, spec: &AnsatzSpec) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    ckpt.check_against(spec, path)?;
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> (MetaModelParams, AdamWState) {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let phi = MetaModelParams::random_normal(3, 5, 6, 0.37, &mut rng).unwrap();
        let mut opt = AdamWState::new(phi.len(), AdamWConfig::default());
        let mut p = phi.clone();
        let g: Vec<f64> = (0..phi.len()).map(|i| (i as f64).sin() / 3.0).collect();
        opt.step(p.as_mut_slice(), &g).unwrap();
        (p, opt)
    }

    #[test]
    fn roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let (phi, opt) = sample();
        save_checkpoint(&phi, &opt, 5, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.params, phi);
        assert_eq!(back.optimizer, opt);
        assert_eq!((back.seed, back.step), (5, 1));
        let first = std::fs::read(&path).unwrap();
        save_checkpoint(&back.params, &back.optimizer, back.seed, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn wrong_shape_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let (phi, opt) = sample();
        save_checkpoint(&phi, &opt, 0, &path).unwrap();
        let spec = AnsatzSpec::new(2, 1, 3);
        assert!(load_checkpoint_for(&path, &spec).is_ok());
        let spec = AnsatzSpec::new(2, 1, 4);
        assert!(load_checkpoint_for(&path, &spec).is_err());
        let spec = AnsatzSpec::new(3, 1, 3);
        assert!(load_checkpoint_for(&path, &spec).is_err());
    }

    #[test]
    fn version_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let (phi, opt) = sample();
        save_checkpoint(&phi, &opt, 0, &path).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"version\": 1", "\"version\": 7");
        std::fs::write(&path, text).unwrap();
        let err = load_checkpoint(&path).unwrap_err().to_string();
        assert!(err.contains("version 7"), "{err}");
    }

    #[test]
    fn missing_and_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_checkpoint(&dir.path().join("absent.json")).is_err());
        let path = dir.path().join("junk.json");
        std::fs::write(&path, "{ not json").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
