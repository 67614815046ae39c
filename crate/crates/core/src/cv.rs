//! K-fold cross-validation and column-order stability for CSV data.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, StandardizeMode, Standardization};
use crate::error::{Error, Result};
use crate::robust;
use crate::selection::{self, CandidateResult, Method, SelectorConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Median absolute prediction error.
    #[default]
    Mape,
    /// Mean squared prediction error.
    Mse,
}

impl Metric {
    /// Scores raw-scale predictions against raw-scale responses.
    pub fn score(self, predicted: &[f64], observed: &[f64]) -> f64 {
        let errors = predicted.iter().zip(observed).map(|(p, y)| y - p);
        match self {
            Self::Mape => robust::median(&errors.map(f64::abs).collect::<Vec<_>>()),
            Self::Mse => errors.map(|e| e * e).sum::<f64>() / observed.len() as f64,
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mape" => Ok(Self::Mape),
            "mse" => Ok(Self::Mse),
            other => Err(Error::InvalidConfig(format!("unknown metric `{other}`"))),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mape => "MAPE",
            Self::Mse => "MSE",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvSpec {
    pub folds: usize,
    pub seed: u64,
    pub metric: Metric,
    pub standardize: StandardizeMode,
}

impl Default for CvSpec {
    fn default() -> Self {
        Self {
            folds: 10,
            seed: 0,
            metric: Metric::Mape,
            standardize: StandardizeMode::Classical,
        }
    }
}

/// Fold label of every row. Rows are shuffled by `seed` and the shuffled
/// sequence is cut into `folds` contiguous blocks whose sizes differ by at
/// most one, so the split depends on `(n, folds, seed)` only.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 folds, got {folds}")));
    }
    if folds > n {
        return Err(Error::InvalidConfig(format!("{folds} folds for {n} rows")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (pos, &row) in perm.iter().enumerate() {
        fold[row] = pos * folds / n;
    }
    Ok(fold)
}

fn derived_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

/// A selection on standardized data together with its transform.
#[derive(Clone, Debug)]
pub struct Fitted {
    pub selection: selection::Selection,
    pub transform: Standardization,
}

impl Fitted {
    /// Raw-scale intercept and slopes over all `raw_p` columns.
    pub fn raw_model(&self, raw_p: usize) -> (f64, Vec<f64>) {
        self.transform
            .raw_coefficients(self.selection.intercept(), &self.selection.slopes(), raw_p)
    }

    /// Raw column indices of the selected columns, in order of entry.
    pub fn raw_selected(&self) -> Vec<usize> {
        self.selection
            .selected
            .iter()
            .map(|&k| self.transform.columns[k])
            .collect()
    }
}

/// Standardizes `data`, then selects with columns visited in `order` (raw
/// column indices; columns dropped by standardization are skipped).
pub fn fit(data: &Dataset, method: Method, cfg: &SelectorConfig, mode: StandardizeMode, order: Option<&[usize]>, seed: u64) -> Result<Fitted> {
    let (std, transform) = data::standardize(data, mode)?;
    let order: Vec<usize> = match order {
        None => (0..std.p()).collect(),
        Some(raw) => {
            let mut position = vec![usize::MAX; data.p()];
            for (k, &j) in transform.columns.iter().enumerate() {
                position[j] = k;
            }
            raw.iter()
                .map(|&j| position[j])
                .filter(|&k| k != usize::MAX)
                .collect()
        }
    };
    let selection = selection::select(method, &std, &order, cfg, seed)?;
    Ok(Fitted {
        selection,
        transform,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelReport {
    pub method: Method,
    pub response: String,
    pub n: usize,
    pub p: usize,
    /// Names of the selected columns in order of entry.
    pub selected: Vec<String>,
    /// Standardized-scale intercept followed by one slope per selected column.
    pub coefficients: Vec<f64>,
    pub t_values: Vec<f64>,
    pub scale: f64,
    pub standardize: StandardizeMode,
    pub metric: Metric,
    /// One value per fold; empty when no cross-validation was run.
    pub fold_metrics: Vec<f64>,
    pub wall_time_s: f64,
    /// Candidate trace of the full-data fit, indexed by raw column.
    #[serde(skip)]
    pub trace: Vec<CandidateResult>,
}

impl ModelReport {
    pub fn median_metric(&self) -> Option<f64> {
        (!self.fold_metrics.is_empty()).then(|| robust::median(&self.fold_metrics))
    }
}

/// Selection on the full data set, without cross-validation.
pub fn model_report(data: &Dataset, method: Method, cfg: &SelectorConfig, mode: StandardizeMode, seed: u64) -> Result<ModelReport> {
    let start = Instant::now();
    let fitted = fit(data, method, cfg, mode, None, seed)?;
    let sel = &fitted.selection;
    Ok(ModelReport {
        method,
        response: data.response.clone(),
        n: data.n(),
        p: data.p(),
        selected: fitted
            .raw_selected()
            .iter()
            .map(|&j| data.names[j].clone())
            .collect(),
        coefficients: sel.coefficients.clone(),
        t_values: sel.t_values.clone(),
        scale: sel.scale,
        standardize: mode,
        metric: Metric::default(),
        fold_metrics: Vec::new(),
        wall_time_s: start.elapsed().as_secs_f64(),
        trace: sel
            .trace
            .iter()
            .map(|r| CandidateResult {
                index: fitted.transform.columns[r.index],
                ..r.clone()
            })
            .collect(),
    })
}

/// Held-out metric of every fold, in fold order.
pub fn fold_metrics(data: &Dataset, method: Method, cfg: &SelectorConfig, cv: &CvSpec) -> Result<Vec<f64>> {
    let assignment = fold_assignment(data.n(), cv.folds, cv.seed)?;
    (0..cv.folds)
        .into_par_iter()
        .map(|f| {
            let (train, test): (Vec<usize>, Vec<usize>) = (0..data.n()).partition(|&i| assignment[i] != f);
            let train = data.rows(&train);
            let test = data.rows(&test);
            let fitted = fit(&train, method, cfg, cv.standardize, None, derived_seed(cv.seed, f as u64))?;
            let (b0, beta) = fitted.raw_model(data.p());
            let pred = data::predict(&test.x, b0, &beta);
            Ok(cv.metric.score(&pred, test.response_values()))
        })
        .collect()
}

/// Cross-validated report: per-fold metrics plus the model chosen on the
/// full data.
pub fn cross_validate(data: &Dataset, method: Method, cfg: &SelectorConfig, cv: &CvSpec) -> Result<ModelReport> {
    let start = Instant::now();
    let folds = fold_metrics(data, method, cfg, cv)?;
    let mut report = model_report(data, method, cfg, cv.standardize, cv.seed)?;
    report.metric = cv.metric;
    report.fold_metrics = folds;
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(report)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StabilityReport {
    pub method: Method,
    pub n_orders: usize,
    /// `size_histogram[s]` orders produced a model with `s` columns.
    pub size_histogram: Vec<usize>,
    /// `(column name, orders that selected it)` for every column selected at
    /// least once, most frequent first.
    pub counts: Vec<(String, usize)>,
}

/// Repeats selection under `n_orders` seeded random column orders.
pub fn order_stability(data: &Dataset, method: Method, cfg: &SelectorConfig, mode: StandardizeMode, n_orders: usize, seed: u64) -> Result<StabilityReport> {
    if n_orders == 0 {
        return Err(Error::InvalidConfig("need at least one order".into()));
    }
    let runs = (0..n_orders)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut order: Vec<usize> = (0..data.p()).collect();
            order.shuffle(&mut rng);
            let fitted = fit(data, method, cfg, mode, Some(&order), rng.next_u64())?;
            Ok(fitted.raw_selected())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut size_histogram = vec![0; data.p() + 1];
    let mut per_column = vec![0; data.p()];
    for sel in &runs {
        size_histogram[sel.len()] += 1;
        for &j in sel {
            per_column[j] += 1;
        }
    }
    while size_histogram.len() > 1 && size_histogram.last() == Some(&0) {
        size_histogram.pop();
    }
    let mut counts: Vec<(String, usize)> = per_column
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(j, &c)| (data.names[j].clone(), c))
        .collect();
    counts.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(StabilityReport {
        method,
        n_orders,
        size_histogram,
        counts,
    })
}
