//! Monte Carlo comparison of the selectors on contaminated linear models.
//!
//! Each replication draws a training and a test half, optionally contaminates
//! the training half, standardizes it, runs every requested selector and
//! scores the chosen model on the clean test half.

pub mod generate;

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, StandardizeMode};
use crate::error::{Error, Result};
use crate::selection::{self, Method, SelectorConfig};

pub use generate::{
    contaminate, derive_sigma, generate, Contamination, Generated, Layout, RowSelection,
};

/// Constant in the denominator of the marginal false discovery rate.
pub const DEFAULT_ETA: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationSpec {
    /// Label used in reports.
    pub name: String,
    /// Rows in each of the training and test halves.
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub theta: f64,
    pub r2: f64,
    pub contamination: Contamination,
    pub contamination_rate: f64,
    pub row_selection: RowSelection,
    pub replications: usize,
    pub seed: u64,
    pub standardize: StandardizeMode,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            name: String::new(),
            n: 1000,
            p: 100,
            k: 5,
            theta: 0.85,
            r2: 0.80,
            contamination: Contamination::None,
            contamination_rate: 0.05,
            row_selection: RowSelection::Bernoulli,
            replications: 200,
            seed: 0,
            standardize: StandardizeMode::Classical,
        }
    }
}

impl SimulationSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.k == 0 || 3 * self.k > self.p {
            return bad(format!("need 1 ≤ k and 3k ≤ p, got k={} p={}", self.k, self.p));
        }
        if !(0.0..1.0).contains(&self.theta) {
            return bad(format!("theta {} outside [0, 1)", self.theta));
        }
        if !(self.r2 > 0.0 && self.r2 < 1.0) {
            return bad(format!("r2 {} outside (0, 1)", self.r2));
        }
        if !(0.0..0.5).contains(&self.contamination_rate) {
            return bad(format!("contamination rate {} outside [0, 0.5)", self.contamination_rate));
        }
        if self.n < 3 {
            return bad(format!("n = {}", self.n));
        }
        if self.replications == 0 {
            return bad("no replications".into());
        }
        Ok(())
    }

    /// Population t-ratio of one target in the true model with `n` rows.
    pub fn implied_t(&self) -> f64 {
        let (k, th) = (self.k as f64, self.theta);
        // variance of one target given the other k − 1
        let cond = if self.k == 1 {
            1.0
        } else {
            (1.0 - th) * (1.0 + (k - 1.0) * th) / (1.0 + (k - 2.0) * th)
        };
        (self.n as f64 * cond).sqrt() / derive_sigma(self.k, th, self.r2)
    }

    fn label(&self) -> String {
        if self.name.is_empty() {
            format!(
                "n={} p={} k={} theta={} r2={} {:?}",
                self.n, self.p, self.k, self.theta, self.r2, self.contamination
            )
        } else {
            self.name.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    Correct,
    Extra,
    Missing1,
    Missing2,
    Missing3,
    Other,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Correct => "Correct",
            Self::Extra => "Extra",
            Self::Missing1 => "Missing 1",
            Self::Missing2 => "Missing 2",
            Self::Missing3 => "Missing 3",
            Self::Other => "Other",
        })
    }
}

/// Places a selected set relative to the true set.
pub fn classify(selected: &[usize], truth: &[usize]) -> Category {
    let s: BTreeSet<usize> = selected.iter().copied().collect();
    let t: BTreeSet<usize> = truth.iter().copied().collect();
    if s == t {
        Category::Correct
    } else if t.is_subset(&s) {
        Category::Extra
    } else if s.is_subset(&t) {
        match t.len() - s.len() {
            1 => Category::Missing1,
            2 => Category::Missing2,
            3 => Category::Missing3,
            _ => Category::Other,
        }
    } else {
        Category::Other
    }
}

/// `E(V) / (E(V) + E(S) + η)`.
pub fn mfdr(false_discoveries: f64, true_discoveries: f64, eta: f64) -> f64 {
    assert!(eta > 0.0, "eta must be positive");
    false_discoveries / (false_discoveries + true_discoveries + eta)
}

/// Mean squared prediction error of a raw-scale model on `test`.
pub fn oos_mse(test: &Dataset, intercept: f64, beta: &[f64]) -> f64 {
    let pred = data::predict(&test.x, intercept, beta);
    let n = test.n() as f64;
    pred.iter()
        .zip(test.y.iter())
        .map(|(p, y)| (y - p) * (y - p))
        .sum::<f64>()
        / n
}

/// One selector on one replication.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub replication: usize,
    pub method: Method,
    pub category: Category,
    pub oos_mse: f64,
    /// Selected raw column indices, sorted.
    pub selected: Vec<usize>,
    pub n_false: usize,
    pub n_true: usize,
    pub runtime_s: f64,
}

/// Everything drawn for one replication, shared by all selectors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Replication {
    pub index: usize,
    pub truth: Vec<usize>,
    pub contaminated_rows: usize,
    /// Test MSE of the generating coefficients.
    pub oracle_mse: f64,
    pub runs: Vec<RunReport>,
}

/// Aggregate over replications for one selector, as percentages except for
/// times and errors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Summary {
    pub config: String,
    pub method: Method,
    pub replications: usize,
    pub correct: f64,
    pub extra: f64,
    pub missing1: f64,
    pub missing2: f64,
    pub missing3: f64,
    pub other: f64,
    pub mfdr: f64,
    pub mean_false: f64,
    pub mean_true: f64,
    pub mean_time_s: f64,
    pub mse_mean: f64,
    pub mse_q10: f64,
    pub mse_q25: f64,
    pub mse_median: f64,
    pub mse_q75: f64,
    pub mse_q90: f64,
    pub oracle_mse_mean: f64,
    pub oracle_mse_median: f64,
    pub implied_t: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub spec: SimulationSpec,
    pub replications: Vec<Replication>,
    pub summaries: Vec<Summary>,
}

fn replication_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

fn run_method(method: Method, gen: &Generated, train: &Dataset, spec: &SimulationSpec, cfg: &SelectorConfig, seed: u64) -> Result<RunReport> {
    let start = Instant::now();
    let (std, transform) = data::standardize(train, spec.standardize)?;
    let order: Vec<usize> = (0..std.p()).collect();
    let fit = selection::select(method, &std, &order, cfg, seed)?;
    let runtime_s = start.elapsed().as_secs_f64();
    let (b0, beta) = transform.raw_coefficients(fit.intercept(), &fit.slopes(), train.p());
    let mut selected: Vec<usize> = fit.selected.iter().map(|&k| transform.columns[k]).collect();
    selected.sort_unstable();
    let truth = gen.layout.truth();
    let n_true = selected.iter().filter(|j| truth.binary_search(j).is_ok()).count();
    Ok(RunReport {
        replication: 0,
        method,
        category: classify(&selected, &truth),
        oos_mse: oos_mse(&gen.test, b0, &beta),
        n_false: selected.len() - n_true,
        n_true,
        selected,
        runtime_s,
    })
}

/// Runs one replication: draw, contaminate, and score each method.
pub fn run_replication(spec: &SimulationSpec, methods: &[Method], cfg: &SelectorConfig, rep: usize) -> Result<Replication> {
    let mut rng = replication_rng(spec.seed, rep);
    let gen = generate(spec, &mut rng)?;
    let (train, rows) = contaminate(
        &gen.train,
        &gen.layout,
        spec.contamination,
        spec.contamination_rate,
        spec.row_selection,
        gen.sigma,
        &mut rng,
    );
    let selector_seed = rng.next_u64();
    let mut beta = vec![0.0; spec.p];
    for &t in &gen.layout.targets {
        beta[t] = 1.0;
    }
    let oracle_mse = oos_mse(&gen.test, 0.0, &beta);
    let runs = methods
        .iter()
        .map(|&m| {
            let mut r = run_method(m, &gen, &train, spec, cfg, selector_seed)?;
            r.replication = rep;
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Replication {
        index: rep,
        truth: gen.layout.truth(),
        contaminated_rows: rows.len(),
        oracle_mse,
        runs,
    })
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn summarize(spec: &SimulationSpec, method: Method, reps: &[Replication]) -> Summary {
    let runs: Vec<&RunReport> = reps
        .iter()
        .flat_map(|r| r.runs.iter().filter(|x| x.method == method))
        .collect();
    let count = runs.len() as f64;
    let pct = |c: Category| 100.0 * runs.iter().filter(|r| r.category == c).count() as f64 / count;
    let mean = |f: &dyn Fn(&RunReport) -> f64| runs.iter().map(|r| f(r)).sum::<f64>() / count;
    let mean_false = mean(&|r| r.n_false as f64);
    let mean_true = mean(&|r| r.n_true as f64);
    let mut mse: Vec<f64> = runs.iter().map(|r| r.oos_mse).collect();
    mse.sort_by(f64::total_cmp);
    let mut oracle: Vec<f64> = reps.iter().map(|r| r.oracle_mse).collect();
    oracle.sort_by(f64::total_cmp);
    Summary {
        config: spec.label(),
        method,
        replications: runs.len(),
        correct: pct(Category::Correct),
        extra: pct(Category::Extra),
        missing1: pct(Category::Missing1),
        missing2: pct(Category::Missing2),
        missing3: pct(Category::Missing3),
        other: pct(Category::Other),
        mfdr: mfdr(mean_false, mean_true, DEFAULT_ETA),
        mean_false,
        mean_true,
        mean_time_s: mean(&|r| r.runtime_s),
        mse_mean: mse.iter().sum::<f64>() / count,
        mse_q10: quantile(&mse, 0.10),
        mse_q25: quantile(&mse, 0.25),
        mse_median: quantile(&mse, 0.50),
        mse_q75: quantile(&mse, 0.75),
        mse_q90: quantile(&mse, 0.90),
        oracle_mse_mean: oracle.iter().sum::<f64>() / oracle.len() as f64,
        oracle_mse_median: quantile(&oracle, 0.5),
        implied_t: spec.implied_t(),
    }
}

/// Runs every replication of `spec` (in parallel) and aggregates per method
/// in replication order.
pub fn run_experiment(spec: &SimulationSpec, methods: &[Method], cfg: &SelectorConfig) -> Result<ExperimentResult> {
    spec.validate()?;
    cfg.validate()?;
    if methods.is_empty() {
        return Err(Error::InvalidConfig("no methods requested".into()));
    }
    let replications = (0..spec.replications)
        .into_par_iter()
        .map(|rep| run_replication(spec, methods, cfg, rep))
        .collect::<Result<Vec<_>>>()?;
    let summaries = methods.iter().map(|&m| summarize(spec, m, &replications)).collect();
    Ok(ExperimentResult {
        spec: spec.clone(),
        replications,
        summaries,
    })
}

fn default_methods() -> Vec<Method> {
    vec![Method::Robust, Method::Classical]
}

/// Contents of a simulation config file.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ExperimentFile {
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub selector: SelectorConfig,
    #[serde(default)]
    pub experiment: Vec<SimulationSpec>,
}

impl ExperimentFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: Self = toml::from_str(text)?;
        if file.experiment.is_empty() {
            return Err(Error::InvalidConfig("config lists no [[experiment]]".into()));
        }
        for e in &file.experiment {
            e.validate()?;
        }
        file.selector.validate()?;
        Ok(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

/// Table columns, in output order.
pub const TABLE_HEADER: [&str; 17] = [
    "Config",
    "Method",
    "%Correct",
    "%Extra",
    "%Missing 1",
    "%Missing 2",
    "%Missing 3",
    "%Other",
    "%mFDR",
    "Time",
    "MSE mean",
    "MSE q10",
    "MSE q25",
    "MSE median",
    "MSE q75",
    "MSE q90",
    "Oracle MSE",
];

fn table_row(s: &Summary) -> Vec<String> {
    let f1 = |v: f64| format!("{v:.1}");
    let f3 = |v: f64| format!("{v:.3}");
    vec![
        s.config.clone(),
        s.method.to_string(),
        f1(s.correct),
        f1(s.extra),
        f1(s.missing1),
        f1(s.missing2),
        f1(s.missing3),
        f1(s.other),
        f1(100.0 * s.mfdr),
        format!("{:.4}", s.mean_time_s),
        f3(s.mse_mean),
        f3(s.mse_q10),
        f3(s.mse_q25),
        f3(s.mse_median),
        f3(s.mse_q75),
        f3(s.mse_q90),
        f3(s.oracle_mse_mean),
    ]
}

/// Writes one delimited row per summary under [`TABLE_HEADER`].
pub fn write_table<W: Write>(out: W, summaries: &[Summary], delimiter: u8) -> Result<()> {
    let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(out);
    w.write_record(TABLE_HEADER)?;
    for s in summaries {
        w.write_record(table_row(s))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn categories() {
        let truth = [1, 4, 7, 9];
        assert_eq!(classify(&[9, 7, 4, 1], &truth), Category::Correct);
        assert_eq!(classify(&[1, 4, 7, 9, 12], &truth), Category::Extra);
        assert_eq!(classify(&[1, 4, 9], &truth), Category::Missing1);
        assert_eq!(classify(&[1, 9], &truth), Category::Missing2);
        assert_eq!(classify(&[9], &truth), Category::Missing3);
        assert_eq!(classify(&[], &truth), Category::Other);
        assert_eq!(classify(&[1, 4, 7, 12], &truth), Category::Other);
        assert_eq!(classify(&[], &[]), Category::Correct);
    }

    #[test]
    fn mfdr_examples() {
        assert_eq!(mfdr(1.0, 5.0, 10.0), 0.0625);
        assert_eq!(mfdr(0.0, 5.0, 10.0), 0.0);
    }

    #[test]
    fn spec_validation() {
        assert!(SimulationSpec::default().validate().is_ok());
        let bad = [
            SimulationSpec { k: 40, ..Default::default() },
            SimulationSpec { theta: 1.0, ..Default::default() },
            SimulationSpec { r2: 1.0, ..Default::default() },
            SimulationSpec { contamination_rate: 0.5, ..Default::default() },
            SimulationSpec { replications: 0, ..Default::default() },
        ];
        for s in bad {
            assert!(s.validate().is_err(), "{s:?}");
        }
    }

    #[test]
    fn implied_t_for_highly_correlated_targets() {
        let s = SimulationSpec::default();
        // conditional variance (0.15 · 4.4 / 3.55) and σ² = 5.5
        let want = (1000.0 * 0.15 * 4.4 / 3.55 / 5.5_f64).sqrt();
        assert!((s.implied_t() - want).abs() < 1e-12);
    }

    #[test]
    fn oracle_and_zero_model_errors() {
        let spec = SimulationSpec {
            n: 50_000,
            p: 15,
            replications: 1,
            ..Default::default()
        };
        let g = generate(&spec, &mut replication_rng(7, 0)).unwrap();
        let mut beta = vec![0.0; spec.p];
        for &t in &g.layout.targets {
            beta[t] = 1.0;
        }
        let s2 = g.sigma * g.sigma;
        let oracle = oos_mse(&g.test, 0.0, &beta);
        assert!((oracle / s2 - 1.0).abs() < 0.03, "{oracle} vs {s2}");
        let zero = oos_mse(&g.test, 0.0, &vec![0.0; spec.p]);
        let var_y = 22.0 + s2;
        assert!((zero / var_y - 1.0).abs() < 0.05, "{zero} vs {var_y}");
    }

    #[test]
    fn single_replication_reports_one_run_per_method() {
        let spec = SimulationSpec {
            n: 200,
            p: 30,
            replications: 1,
            seed: 3,
            ..Default::default()
        };
        let res = run_experiment(&spec, &[Method::Robust, Method::Classical], &SelectorConfig::default()).unwrap();
        assert_eq!(res.replications.len(), 1);
        assert_eq!(res.replications[0].runs.len(), 2);
        assert_eq!(res.summaries.len(), 2);
        assert!(res.summaries.iter().all(|s| s.replications == 1));
    }

    #[test]
    fn replications_are_reproducible() {
        let spec = SimulationSpec {
            n: 150,
            p: 24,
            replications: 3,
            seed: 9,
            contamination: Contamination::Both,
            ..Default::default()
        };
        let cfg = SelectorConfig::default();
        let a = run_replication(&spec, &[Method::Robust], &cfg, 2).unwrap();
        let b = run_replication(&spec, &[Method::Robust], &cfg, 2).unwrap();
        assert_eq!(a.runs[0].selected, b.runs[0].selected);
        assert_eq!(a.oracle_mse, b.oracle_mse);
        let c = run_replication(&spec, &[Method::Robust], &cfg, 1).unwrap();
        assert_ne!(a.oracle_mse, c.oracle_mse);
    }

    #[test]
    fn config_file_round_trip() {
        let text = r#"
methods = ["robust"]

[selector]
subsample = 150

[[experiment]]
name = "clean"
n = 300
p = 30
r2 = 0.8
theta = 0.85
replications = 2

[[experiment]]
name = "dirty"
n = 300
p = 30
contamination = "both"
row_selection = "fixed_count"
replications = 2
"#;
        let f = ExperimentFile::from_toml(text).unwrap();
        assert_eq!(f.methods, vec![Method::Robust]);
        assert_eq!(f.selector.subsample, 150);
        assert_eq!(f.experiment.len(), 2);
        assert_eq!(f.experiment[1].contamination, Contamination::Both);
        assert_eq!(f.experiment[1].row_selection, RowSelection::FixedCount);
        assert_eq!(f.experiment[1].k, 5);
        assert!(ExperimentFile::from_toml("methods = []").is_err());
    }

    #[test]
    fn table_has_header_and_one_row_per_summary() {
        let spec = SimulationSpec {
            n: 120,
            p: 15,
            replications: 2,
            ..Default::default()
        };
        let res = run_experiment(&spec, &[Method::Classical], &SelectorConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_table(&mut buf, &res.summaries, b',').unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("Config,Method,%Correct,%Extra,%Missing 1"));
    }
}
