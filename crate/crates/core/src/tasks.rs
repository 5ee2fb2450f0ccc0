//! Task data model: context sets, target sets, normalization, and the
//! per-date task sampler over the synthetic environment.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::environment::SyntheticEnvironment;
use crate::error::{Error, Result};
use crate::gaussian::{DenseGaussian, GaussianPredictive, LowRankDiagGaussian};

/// Whether a context set is scattered points or a full regular grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    OffGrid,
    /// Row-major grid of `rows x cols` nodes over `[-1, 1]^2`.
    Grid { rows: usize, cols: usize },
}

/// One data stream: `n` locations with `n x channels` values.
#[derive(Debug, Clone)]
pub struct ContextSet {
    pub locations: Array2<f64>,
    pub values: Array2<f64>,
    pub modality: Modality,
}

impl ContextSet {
    pub fn new(locations: Array2<f64>, values: Array2<f64>, modality: Modality) -> Result<Self> {
        if locations.nrows() != values.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "context set has {} locations but {} value rows",
                locations.nrows(),
                values.nrows()
            )));
        }
        if locations.ncols() != 2 {
            return Err(Error::ShapeMismatch(
                "context locations must be n x 2".into(),
            ));
        }
        if let Modality::Grid { rows, cols } = modality {
            if rows * cols != locations.nrows() {
                return Err(Error::ShapeMismatch(format!(
                    "grid modality {}x{} does not match {} locations",
                    rows,
                    cols,
                    locations.nrows()
                )));
            }
        }
        Ok(ContextSet {
            locations,
            values,
            modality,
        })
    }

    pub fn len(&self) -> usize {
        self.locations.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.values.ncols()
    }

    /// Empty off-grid set with the given channel count.
    pub fn empty(channels: usize) -> Self {
        ContextSet {
            locations: Array2::zeros((0, 2)),
            values: Array2::zeros((0, channels)),
            modality: Modality::OffGrid,
        }
    }

    /// Single-channel values as a vector (observation sets).
    pub fn scalar_values(&self) -> ArrayView1<'_, f64> {
        self.values.column(0)
    }
}

/// One date's prediction problem: observation context, auxiliary grid
/// context, and the target set.
///
/// Convention: `contexts[0]` is the scattered observation set (possibly
/// empty) and `contexts[1]` is the auxiliary grid set, which is always
/// present.
#[derive(Debug, Clone)]
pub struct Task {
    pub date_index: u32,
    pub contexts: Vec<ContextSet>,
    pub target_locations: Array2<f64>,
    pub target_values: Option<Array1<f64>>,
}

impl Task {
    pub fn observations(&self) -> &ContextSet {
        &self.contexts[0]
    }

    pub fn auxiliary(&self) -> Result<&ContextSet> {
        self.contexts
            .get(1)
            .ok_or_else(|| Error::ShapeMismatch("task is missing the auxiliary context".into()))
    }

    pub fn n_targets(&self) -> usize {
        self.target_locations.nrows()
    }

    /// Replace the observation context with one extended by `(x, y)`.
    pub fn with_extra_observation(&self, x: [f64; 2], y: f64) -> Task {
        let obs = self.observations();
        let n = obs.len();
        let mut locations = Array2::zeros((n + 1, 2));
        let mut values = Array2::zeros((n + 1, obs.channels().max(1)));
        if n > 0 {
            locations.slice_mut(ndarray::s![..n, ..]).assign(&obs.locations);
            values.slice_mut(ndarray::s![..n, ..]).assign(&obs.values);
        }
        locations[[n, 0]] = x[0];
        locations[[n, 1]] = x[1];
        values[[n, 0]] = y;
        let mut contexts = self.contexts.clone();
        contexts[0] = ContextSet {
            locations,
            values,
            modality: Modality::OffGrid,
        };
        Task {
            date_index: self.date_index,
            contexts,
            target_locations: self.target_locations.clone(),
            target_values: self.target_values.clone(),
        }
    }
}

/// Bounds for the per-task context/target counts.
#[derive(Debug, Clone, Copy)]
pub struct TaskConfig {
    pub nc_min: usize,
    pub nc_max: usize,
    pub nt_min: usize,
    pub nt_max: usize,
}

impl TaskConfig {
    fn validate(&self, n_cells: usize) -> Result<()> {
        if self.nc_min > self.nc_max || self.nt_min > self.nt_max {
            return Err(Error::InvalidConfig(
                "task count bounds are inverted".into(),
            ));
        }
        if self.nc_max > n_cells || self.nt_max > n_cells {
            return Err(Error::InvalidConfig(format!(
                "task count bounds exceed the {} grid cells",
                n_cells
            )));
        }
        if self.nt_min == 0 {
            return Err(Error::InvalidConfig("tasks need at least one target".into()));
        }
        Ok(())
    }
}

/// Draw `count` distinct cell indices from `0..n_cells` (partial
/// Fisher-Yates over a scratch index table).
fn sample_distinct(rng: &mut ChaCha8Rng, n_cells: usize, count: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n_cells).collect();
    for k in 0..count {
        let j = rng.random_range(k..n_cells);
        idx.swap(k, j);
    }
    idx.truncate(count);
    idx
}

/// Sample one task for date `tau`: observation context points and target
/// points drawn uniformly at random over grid cells of the realized field,
/// plus the auxiliary grid context.
pub fn sample_task(
    env: &SyntheticEnvironment,
    tau: u32,
    rng: &mut ChaCha8Rng,
    cfg: &TaskConfig,
) -> Result<Task> {
    let field = env.truth_field(tau);
    sample_task_with_field(env, tau, &field, rng, cfg)
}

/// As [`sample_task`], reusing an already-realized field for the date.
pub fn sample_task_with_field(
    env: &SyntheticEnvironment,
    tau: u32,
    field: &Array1<f64>,
    rng: &mut ChaCha8Rng,
    cfg: &TaskConfig,
) -> Result<Task> {
    let n_cells = env.n_cells();
    cfg.validate(n_cells)?;
    if field.len() != n_cells {
        return Err(Error::ShapeMismatch(format!(
            "field has {} values for {} cells",
            field.len(),
            n_cells
        )));
    }
    let n_c = rng.random_range(cfg.nc_min..=cfg.nc_max);
    let n_t = rng.random_range(cfg.nt_min..=cfg.nt_max);
    let ctx_idx = sample_distinct(rng, n_cells, n_c);
    let tgt_idx = sample_distinct(rng, n_cells, n_t);

    let obs = ContextSet::new(
        env.locations_of(&ctx_idx),
        Array2::from_shape_fn((n_c, 1), |(i, _)| field[ctx_idx[i]]),
        Modality::OffGrid,
    )?;
    let aux = auxiliary_context(env, tau);
    let target_values = Array1::from_iter(tgt_idx.iter().map(|&i| field[i]));

    Ok(Task {
        date_index: tau,
        contexts: vec![obs, aux],
        target_locations: env.locations_of(&tgt_idx),
        target_values: Some(target_values),
    })
}

/// The auxiliary grid context: elevation analog, mask, cos/sin of the day
/// of year, and the two coordinate channels, in that order.
pub fn auxiliary_context(env: &SyntheticEnvironment, tau: u32) -> ContextSet {
    let g = env.grid_size();
    let n = g * g;
    let angle = 2.0 * std::f64::consts::PI * f64::from(tau % 365) / 365.0;
    let (cos_d, sin_d) = (angle.cos(), angle.sin());
    let mut values = Array2::<f64>::zeros((n, 6));
    for i in 0..n {
        values[[i, 0]] = env.elevation()[i];
        values[[i, 1]] = if env.mask()[i] { 1.0 } else { 0.0 };
        values[[i, 2]] = cos_d;
        values[[i, 3]] = sin_d;
        values[[i, 4]] = env.grid_locations()[[i, 0]];
        values[[i, 5]] = env.grid_locations()[[i, 1]];
    }
    ContextSet {
        locations: env.grid_locations().to_owned(),
        values,
        modality: Modality::Grid { rows: g, cols: g },
    }
}

/// Per-channel affine normalization to zero mean and unit variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizer {
    pub mean: f64,
    pub std: f64,
}

impl Normalizer {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !(std > 0.0) || !std.is_finite() || !mean.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "normalizer needs finite mean and positive std, got mean {mean}, std {std}"
            )));
        }
        Ok(Normalizer { mean, std })
    }

    pub fn identity() -> Self {
        Normalizer { mean: 0.0, std: 1.0 }
    }

    /// Fit to a sample (population moments).
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidConfig("cannot fit normalizer to no data".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Normalizer::new(mean, var.sqrt())
    }

    pub fn normalize(&self, values: &Array1<f64>) -> Array1<f64> {
        values.mapv(|v| (v - self.mean) / self.std)
    }

    pub fn denormalize(&self, values: &Array1<f64>) -> Array1<f64> {
        values.mapv(|v| v * self.std + self.mean)
    }

    /// Normalize a task's observation values and target values in place
    /// (auxiliary channels are already normalized by construction).
    pub fn normalize_task(&self, task: &Task) -> Task {
        let mut out = task.clone();
        let obs = &mut out.contexts[0];
        obs.values.mapv_inplace(|v| (v - self.mean) / self.std);
        if let Some(tv) = &mut out.target_values {
            tv.mapv_inplace(|v| (v - self.mean) / self.std);
        }
        out
    }

    /// Map a predictive made in normalized space back to natural units.
    pub fn denormalize_predictive(&self, pred: &GaussianPredictive) -> GaussianPredictive {
        let s = self.std;
        match pred {
            GaussianPredictive::Dense(g) => GaussianPredictive::Dense(DenseGaussian {
                mean: g.mean.mapv(|v| v * s + self.mean),
                cov: g.cov.mapv(|v| v * s * s),
            }),
            GaussianPredictive::LowRank(g) => GaussianPredictive::LowRank(LowRankDiagGaussian {
                mean: g.mean.mapv(|v| v * s + self.mean),
                factor: g.factor.mapv(|v| v * s),
                diag: g.diag.mapv(|v| v * s * s),
            }),
        }
    }
}

/// Export a task as CSV rows `(set_id, x1, x2, channel values...)`.
/// Set 0.. are the context sets; the final set id is the target set.
pub fn task_to_csv(task: &Task) -> (Vec<String>, Vec<Vec<String>>) {
    use crate::report::fmt_f64;
    let max_ch = task
        .contexts
        .iter()
        .map(ContextSet::channels)
        .max()
        .unwrap_or(1)
        .max(1);
    let mut header = vec!["set_id".to_string(), "x1".to_string(), "x2".to_string()];
    for c in 0..max_ch {
        header.push(format!("value{c}"));
    }
    let mut rows = Vec::new();
    for (sid, cs) in task.contexts.iter().enumerate() {
        for i in 0..cs.len() {
            let mut row = vec![
                sid.to_string(),
                fmt_f64(cs.locations[[i, 0]]),
                fmt_f64(cs.locations[[i, 1]]),
            ];
            for c in 0..max_ch {
                row.push(if c < cs.channels() {
                    fmt_f64(cs.values[[i, c]])
                } else {
                    String::new()
                });
            }
            rows.push(row);
        }
    }
    let tgt_id = task.contexts.len();
    for i in 0..task.n_targets() {
        let mut row = vec![
            tgt_id.to_string(),
            fmt_f64(task.target_locations[[i, 0]]),
            fmt_f64(task.target_locations[[i, 1]]),
        ];
        for c in 0..max_ch {
            row.push(if c == 0 {
                task.target_values
                    .as_ref()
                    .map(|tv| fmt_f64(tv[i]))
                    .unwrap_or_default()
            } else {
                String::new()
            });
        }
        rows.push(row);
    }
    (header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{build_environment, EnvironmentConfig};
    use crate::rng::stream;
    use approx::assert_abs_diff_eq;

    fn small_env() -> SyntheticEnvironment {
        let cfg = EnvironmentConfig {
            grid_size: 12,
            ..EnvironmentConfig::default()
        };
        build_environment(&cfg, 0).unwrap()
    }

    #[test]
    fn sample_task_exact_counts_with_degenerate_bounds() {
        let env = small_env();
        let cfg = TaskConfig {
            nc_min: 5,
            nc_max: 5,
            nt_min: 7,
            nt_max: 7,
        };
        let mut rng = stream(1, "task", &[]);
        let task = sample_task(&env, 3, &mut rng, &cfg).unwrap();
        assert_eq!(task.observations().len(), 5);
        assert_eq!(task.n_targets(), 7);
        assert_eq!(task.contexts.len(), 2);
    }

    #[test]
    fn sample_task_deterministic_given_rng_state() {
        let env = small_env();
        let cfg = TaskConfig {
            nc_min: 2,
            nc_max: 9,
            nt_min: 4,
            nt_max: 11,
        };
        let t1 = sample_task(&env, 5, &mut stream(9, "task", &[]), &cfg).unwrap();
        let t2 = sample_task(&env, 5, &mut stream(9, "task", &[]), &cfg).unwrap();
        assert_eq!(t1.observations().locations, t2.observations().locations);
        assert_eq!(t1.observations().values, t2.observations().values);
        assert_eq!(t1.target_locations, t2.target_locations);
        assert_eq!(t1.target_values, t2.target_values);
    }

    #[test]
    fn sample_task_rejects_inverted_bounds() {
        let env = small_env();
        let cfg = TaskConfig {
            nc_min: 5,
            nc_max: 2,
            nt_min: 4,
            nt_max: 6,
        };
        assert!(matches!(
            sample_task(&env, 0, &mut stream(0, "task", &[]), &cfg),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn task_shapes_and_domain_bounds() {
        let env = small_env();
        let cfg = TaskConfig {
            nc_min: 1,
            nc_max: 20,
            nt_min: 5,
            nt_max: 30,
        };
        for i in 0..20 {
            let task = sample_task(&env, i, &mut stream(i as u64, "t", &[]), &cfg).unwrap();
            for cs in &task.contexts {
                assert_eq!(cs.locations.nrows(), cs.values.nrows());
                for loc in cs.locations.rows() {
                    assert!(loc[0] >= -1.0 && loc[0] <= 1.0);
                    assert!(loc[1] >= -1.0 && loc[1] <= 1.0);
                }
            }
            assert_eq!(
                task.target_values.as_ref().unwrap().len(),
                task.n_targets()
            );
        }
    }

    #[test]
    fn auxiliary_channels_identities() {
        let env = small_env();
        for tau in [0u32, 91, 300] {
            let aux = auxiliary_context(&env, tau);
            assert_eq!(aux.channels(), 6);
            for i in 0..aux.len() {
                let c = aux.values[[i, 2]];
                let s = aux.values[[i, 3]];
                assert!((c * c + s * s - 1.0).abs() < 1e-12);
            }
        }
        let aux0 = auxiliary_context(&env, 0);
        for i in 0..aux0.len() {
            assert_abs_diff_eq!(aux0.values[[i, 2]], 1.0, epsilon = 1e-15);
            assert_abs_diff_eq!(aux0.values[[i, 3]], 0.0, epsilon = 1e-15);
        }
        // Grid corner (0,0) carries coordinates (-1, -1).
        assert_abs_diff_eq!(aux0.values[[0, 4]], -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(aux0.values[[0, 5]], -1.0, epsilon = 1e-15);
    }

    #[test]
    fn normalizer_roundtrip_and_fit() {
        let norm = Normalizer::new(3.0, 2.0).unwrap();
        let v = Array1::from_elem(1, 3.0);
        assert_abs_diff_eq!(norm.normalize(&v)[0], 0.0, epsilon = 1e-15);

        let mut rng = stream(5, "norm", &[]);
        let vals = Array1::from_iter((0..1000).map(|_| rng.random::<f64>() * 10.0 - 4.0));
        let rt = norm.denormalize(&norm.normalize(&vals));
        for (a, b) in rt.iter().zip(vals.iter()) {
            assert!((a - b).abs() < 1e-12);
        }

        let fitted = Normalizer::fit(vals.as_slice().unwrap()).unwrap();
        let z = fitted.normalize(&vals);
        let m = z.mean().unwrap();
        let sd = (z.mapv(|v| v * v).mean().unwrap() - m * m).sqrt();
        assert!(m.abs() < 1e-10);
        assert!((sd - 1.0).abs() < 1e-10);
    }

    #[test]
    fn normalizer_rejects_bad_std() {
        assert!(matches!(
            Normalizer::new(0.0, 0.0),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn task_csv_has_all_sets() {
        let env = small_env();
        let cfg = TaskConfig {
            nc_min: 3,
            nc_max: 3,
            nt_min: 4,
            nt_max: 4,
        };
        let task = sample_task(&env, 1, &mut stream(2, "csv", &[]), &cfg).unwrap();
        let (header, rows) = task_to_csv(&task);
        assert_eq!(header[0], "set_id");
        let n_cells = env.n_cells();
        assert_eq!(rows.len(), 3 + n_cells + 4);
    }
}
