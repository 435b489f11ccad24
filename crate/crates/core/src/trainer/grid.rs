use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::run::{local_test_auc, student_test_auc, train_fpd, train_jpl, train_local, train_teacher};
use super::{TrainConfig, TrainError};
use crate::data::PartitionedDataset;
use crate::models::TeacherModel;

pub const LR_GRID: [f64; 2] = [1e-3, 5e-4];
pub const LAMBDA_GRID: [f64; 2] = [1e-4, 1e-5];
pub const ALPHA_GRID: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
pub const BETA_GRID: [f64; 3] = [0.25, 0.5, 1.0];
pub const TAU_GRID: [f64; 3] = [0.1, 0.2, 0.5];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Local,
    Fpd,
    Jpl,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Local => "local",
            Method::Fpd => "fpd",
            Method::Jpl => "jpl",
        })
    }
}

impl FromStr for Method {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "local" => Ok(Method::Local),
            "fpd" => Ok(Method::Fpd),
            "jpl" => Ok(Method::Jpl),
            other => Err(TrainError::Config(format!("unknown method `{other}`"))),
        }
    }
}

/// Values to sweep. Empty axes keep the base config's value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub methods: Vec<Method>,
    pub lr: Vec<f64>,
    pub lambda: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub tau: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            methods: vec![Method::Local, Method::Fpd, Method::Jpl],
            lr: LR_GRID.to_vec(),
            lambda: LAMBDA_GRID.to_vec(),
            alpha: ALPHA_GRID.to_vec(),
            beta: BETA_GRID.to_vec(),
            tau: TAU_GRID.to_vec(),
        }
    }
}

fn check_axis(name: &str, values: &[f64], allowed: &[f64]) -> Result<(), TrainError> {
    match values.iter().find(|v| !allowed.contains(v)) {
        Some(v) => Err(TrainError::Config(format!("{name} = {v} is not in the grid {allowed:?}"))),
        None => Ok(()),
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.methods.is_empty() {
            return Err(TrainError::Config("grid has no methods".into()));
        }
        check_axis("lr", &self.lr, &LR_GRID)?;
        check_axis("lambda", &self.lambda, &LAMBDA_GRID)?;
        check_axis("alpha", &self.alpha, &ALPHA_GRID)?;
        check_axis("beta", &self.beta, &BETA_GRID)?;
        check_axis("tau", &self.tau, &TAU_GRID)
    }

    /// Configs for `method`, varying only the axes the method reads.
    pub fn configs(&self, method: Method, base: &TrainConfig) -> Vec<TrainConfig> {
        let or_base = |v: &[f64], b: f64| if v.is_empty() { vec![b] } else { v.to_vec() };
        let w = &base.weights;
        let lrs = or_base(&self.lr, base.lr);
        let lambdas = or_base(&self.lambda, w.lambda);
        let (alphas, betas, taus) = match method {
            Method::Local => (vec![w.alpha], vec![w.beta], vec![w.tau]),
            Method::Fpd => (or_base(&self.alpha, w.alpha), or_base(&self.beta, w.beta), vec![w.tau]),
            Method::Jpl => (
                or_base(&self.alpha, w.alpha),
                or_base(&self.beta, w.beta),
                or_base(&self.tau, w.tau),
            ),
        };
        let mut out = Vec::new();
        for &lr in &lrs {
            for &lambda in &lambdas {
                for &alpha in &alphas {
                    for &beta in &betas {
                        for &tau in &taus {
                            let mut c = base.clone();
                            c.lr = lr;
                            c.weights.lambda = lambda;
                            c.weights.alpha = alpha;
                            c.weights.beta = beta;
                            c.weights.tau = tau;
                            out.push(c);
                        }
                    }
                }
            }
        }
        out
    }
}

/// One leaderboard line. `seed` is `None` on the per-config mean row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub method: String,
    pub config: String,
    pub lr: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub seed: Option<u64>,
    pub val_auc: Option<f64>,
    pub test_auc: Option<f64>,
    pub wall_ms: u64,
    pub error: Option<String>,
    pub selected: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Leaderboard {
    pub rows: Vec<LeaderboardRow>,
}

impl Leaderboard {
    /// Mean row chosen for `method`, if any configuration succeeded.
    pub fn selected(&self, method: Method) -> Option<&LeaderboardRow> {
        let name = method.to_string();
        self.rows.iter().find(|r| r.selected && r.method == name)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), TrainError> {
        let io = |e: csv::Error| TrainError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e),
        };
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        for r in &self.rows {
            w.serialize(r).map_err(io)?;
        }
        w.flush().map_err(|source| TrainError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read_csv(path: &Path) -> Result<Self, TrainError> {
        let io = |e: csv::Error| TrainError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e),
        };
        let mut r = csv::Reader::from_path(path).map_err(io)?;
        let rows = r.deserialize().collect::<Result<Vec<_>, _>>().map_err(io)?;
        Ok(Self { rows })
    }
}

/// Teacher shared by every method of a grid, picked by validation AUC over
/// the `lr` x `lambda` axes on the first seed.
pub fn select_teacher(
    ds: &PartitionedDataset,
    grid: &GridSpec,
    base: &TrainConfig,
) -> Result<(TeacherModel, TrainConfig), TrainError> {
    let mut best: Option<(f64, TeacherModel, TrainConfig)> = None;
    for cfg in grid.configs(Method::Local, base) {
        let run = train_teacher(ds, &cfg)?;
        if best.as_ref().is_none_or(|b| run.best_val_auc > b.0) {
            best = Some((run.best_val_auc, run.teacher, cfg));
        }
    }
    let (_, t, c) = best.expect("grid yields at least one config");
    Ok((t, c))
}

fn train_one(
    method: Method,
    teacher: &TeacherModel,
    ds: &PartitionedDataset,
    cfg: &TrainConfig,
) -> Result<(f64, f64), TrainError> {
    match method {
        Method::Local => {
            let r = train_local(ds, cfg)?;
            Ok((r.best_val_auc, local_test_auc(&r.model, ds)?))
        }
        Method::Fpd => {
            let r = train_fpd(teacher, ds, cfg)?;
            Ok((r.best_val_auc, local_test_auc(&r.model, ds)?))
        }
        Method::Jpl => {
            let r = train_jpl(teacher, ds, cfg)?;
            Ok((r.best_val_auc, student_test_auc(&r.student, ds)?))
        }
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Trains every configuration of every method under every seed and marks,
/// per method, the mean row with the highest validation AUC. Per-run
/// failures are recorded in the row rather than aborting the grid.
pub fn run_grid(
    ds: &PartitionedDataset,
    teacher: &TeacherModel,
    grid: &GridSpec,
    base: &TrainConfig,
    seeds: &[u64],
) -> Result<Leaderboard, TrainError> {
    grid.validate()?;
    if seeds.is_empty() {
        return Err(TrainError::Config("grid needs at least one seed".into()));
    }
    let mut rows = Vec::new();
    for &method in &grid.methods {
        let mut best: Option<(f64, usize)> = None;
        for cfg in grid.configs(method, base) {
            let row = |seed, val_auc, test_auc, wall_ms, error| LeaderboardRow {
                method: method.to_string(),
                config: cfg.hash(),
                lr: cfg.lr,
                lambda: cfg.weights.lambda,
                alpha: cfg.weights.alpha,
                beta: cfg.weights.beta,
                tau: cfg.weights.tau,
                seed,
                val_auc,
                test_auc,
                wall_ms,
                error,
                selected: false,
            };
            let (mut vals, mut tests, mut wall) = (Vec::new(), Vec::new(), 0);
            for &seed in seeds {
                let c = TrainConfig { seed, ..cfg.clone() };
                let start = Instant::now();
                let result = train_one(method, teacher, ds, &c);
                let ms = start.elapsed().as_millis() as u64;
                wall += ms;
                rows.push(match result {
                    Ok((v, t)) => {
                        vals.push(v);
                        tests.push(t);
                        row(Some(seed), Some(v), Some(t), ms, None)
                    }
                    Err(e) => row(Some(seed), None, None, ms, Some(e.to_string())),
                });
            }
            let failed = vals.len() < seeds.len();
            let val = mean(&vals).filter(|_| !failed);
            let error = failed.then(|| "one or more seeds failed".to_string());
            rows.push(row(None, val, mean(&tests).filter(|_| !failed), wall, error));
            if let Some(v) = val {
                if best.is_none_or(|(b, _)| v > b) {
                    best = Some((v, rows.len() - 1));
                }
            }
        }
        if let Some((_, i)) = best {
            rows[i].selected = true;
        }
    }
    Ok(Leaderboard { rows })
}
