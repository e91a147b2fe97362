//! Hybrid classifier on the diabetes data and the λ sweep.

mod classifier;
mod data;
mod train;

pub use classifier::{
    batch_loss, circuit_features, classifier_forward, clip_gradient, cross_entropy,
    expectation_jacobian, forward_batch, grad_readout, grad_theta_task, grad_theta_task_samples,
    predict, softmax, ForwardRecord, ReadoutParams, Sample, NUM_CLASSES,
};
pub use data::{load_diabetes_csv, prepare_dataset, Dataset, RawTable, Standardization, LABEL_COLUMN};
pub use train::{
    lambda_sweep, precompute_samples, run_checkpoint_name, train_on_samples, train_one_lambda,
    DownstreamConfig, EpochRecord, HeatmapMetric, LambdaRunRecord, SweepTable, TaskCheckpoint,
    TaskModel, TASK_CHECKPOINT_FORMAT, TASK_CHECKPOINT_VERSION,
};
