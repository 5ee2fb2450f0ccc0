//! NLL training loop for the neural process: Adam over task batches with
//! fresh training tasks each epoch, a fixed-seed validation set, and
//! checkpointing on the validation mean NLL.

use rayon::prelude::*;

use crate::adam::Adam;
use crate::environment::SyntheticEnvironment;
use crate::error::{Error, Result};
use crate::np::model::NpModel;
use crate::np::params::GradVec;
use crate::rng::stream;
use crate::tasks::{sample_task_with_field, Normalizer, Task, TaskConfig};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Tasks per gradient step; gradients are averaged over the batch.
    pub batch_size: usize,
    pub max_epochs: usize,
    pub tasks_per_epoch: usize,
    /// Size of the fixed validation task set.
    pub val_tasks: usize,
    /// Early stop after this many epochs without validation improvement.
    pub patience: usize,
    pub task: TaskConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 2,
            max_epochs: 150,
            tasks_per_epoch: 24,
            val_tasks: 16,
            patience: 150,
            task: TaskConfig {
                nc_min: 3,
                nc_max: 50,
                nt_min: 200,
                nt_max: 400,
            },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_nll: f64,
    pub val_nll: f64,
    pub checkpointed: bool,
}

/// Cache of realized truth fields, keyed by date.
struct FieldCache<'a> {
    env: &'a SyntheticEnvironment,
    fields: std::collections::HashMap<u32, ndarray::Array1<f64>>,
}

impl<'a> FieldCache<'a> {
    fn new(env: &'a SyntheticEnvironment) -> Self {
        FieldCache {
            env,
            fields: std::collections::HashMap::new(),
        }
    }

    fn get(&mut self, tau: u32) -> &ndarray::Array1<f64> {
        self.fields
            .entry(tau)
            .or_insert_with(|| self.env.truth_field(tau))
    }
}

fn sample_normalized_task(
    env: &SyntheticEnvironment,
    cache: &mut FieldCache,
    normalizer: &Normalizer,
    dates: &[u32],
    cfg: &TaskConfig,
    seed: u64,
    tag: &str,
    index: u64,
) -> Result<Task> {
    let mut rng = stream(seed, tag, &[index]);
    let tau = dates[(crate::rng::derive_seed(seed, tag, &[index, 1]) % dates.len() as u64) as usize];
    let field = cache.get(tau).clone();
    let task = sample_task_with_field(env, tau, &field, &mut rng, cfg)?;
    Ok(normalizer.normalize_task(&task))
}

/// Train the model, returning the best-validation checkpoint and the epoch
/// history. Training tasks are resampled every epoch ("infinitely growing"
/// task stream); validation tasks are fixed-seed and reused.
pub fn np_train(
    model: NpModel,
    env: &SyntheticEnvironment,
    normalizer: &Normalizer,
    train_dates: &[u32],
    val_dates: &[u32],
    cfg: &TrainConfig,
) -> Result<(NpModel, Vec<EpochStats>)> {
    if train_dates.is_empty() || val_dates.is_empty() {
        return Err(Error::InvalidConfig(
            "np_train needs non-empty train and validation date splits".into(),
        ));
    }
    if cfg.batch_size == 0 || cfg.tasks_per_epoch == 0 || cfg.val_tasks == 0 {
        return Err(Error::InvalidConfig(
            "np_train batch/epoch sizes must be positive".into(),
        ));
    }
    let mut cache = FieldCache::new(env);
    let val_set: Vec<Task> = (0..cfg.val_tasks)
        .map(|i| {
            sample_normalized_task(
                env,
                &mut cache,
                normalizer,
                val_dates,
                &cfg.task,
                cfg.seed,
                "np-val",
                i as u64,
            )
        })
        .collect::<Result<_>>()?;

    let mut model = model;
    let mut adam = Adam::new(model.n_params(), cfg.learning_rate);
    let mut best_params = model.params.data.clone();
    let mut best_val = mean_val_nll(&model, &val_set)?;
    let mut best_epoch = None::<usize>;
    let mut since_best = 0usize;
    let mut history = Vec::new();

    for epoch in 0..cfg.max_epochs {
        let mut train_acc = 0.0;
        let mut n_tasks = 0usize;
        let mut step = 0u64;
        while n_tasks < cfg.tasks_per_epoch {
            let b = cfg.batch_size.min(cfg.tasks_per_epoch - n_tasks);
            let batch: Vec<Task> = (0..b)
                .map(|i| {
                    sample_normalized_task(
                        env,
                        &mut cache,
                        normalizer,
                        train_dates,
                        &cfg.task,
                        cfg.seed,
                        "np-train",
                        // Fresh stream per (epoch, step, slot).
                        ((epoch as u64) << 32) ^ (step << 8) ^ i as u64,
                    )
                })
                .collect::<Result<_>>()?;
            let results: Vec<Result<(f64, GradVec)>> = batch
                .par_iter()
                .map(|t| model.loss_and_gradients(t))
                .collect();
            let mut grad = GradVec::zeros_like(&model.params);
            let mut batch_loss = 0.0;
            for r in results {
                let (l, g) = r?;
                batch_loss += l;
                grad.add_scaled(&g, 1.0 / b as f64);
            }
            batch_loss /= b as f64;
            if !batch_loss.is_finite() {
                return Err(Error::OptimizationDiverged(format!(
                    "non-finite loss at epoch {epoch}"
                )));
            }
            adam.step(&mut model.params.data, &grad.data);
            train_acc += batch_loss * b as f64;
            n_tasks += b;
            step += 1;
        }
        let val = mean_val_nll(&model, &val_set)?;
        if !val.is_finite() {
            return Err(Error::OptimizationDiverged(format!(
                "non-finite validation NLL at epoch {epoch}"
            )));
        }
        let improved = val < best_val;
        if improved {
            best_val = val;
            best_params.copy_from_slice(&model.params.data);
            best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
        }
        history.push(EpochStats {
            epoch,
            train_nll: train_acc / n_tasks as f64,
            val_nll: val,
            checkpointed: improved,
        });
        if since_best >= cfg.patience {
            break;
        }
    }
    let _ = best_epoch;
    model.params.data.copy_from_slice(&best_params);
    Ok((model, history))
}

/// Mean per-target NLL over a task set, forward passes in parallel.
pub fn mean_val_nll(model: &NpModel, tasks: &[Task]) -> Result<f64> {
    let losses: Vec<Result<f64>> = tasks.par_iter().map(|t| model.loss(t)).collect();
    let mut acc = 0.0;
    for l in losses {
        acc += l?;
    }
    Ok(acc / tasks.len() as f64)
}
