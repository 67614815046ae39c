//! Synthetic linear models with correlated targets, correlated and
//! independent noise covariates, and optional contamination of the
//! training rows.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::Result;

use super::SimulationSpec;

/// Noise loading of the correlated noise covariates; gives a correlation of
/// `1/√(1 + λ²) ≈ 0.3` with the partner target.
pub const LAMBDA: f64 = 3.18;
/// Mean of the error distribution on response-contaminated rows, in units of σ.
pub const RESPONSE_SHIFT: f64 = 30.0;
/// Variance of the targets on leverage-contaminated rows.
pub const LEVERAGE_VARIANCE: f64 = 5.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Contamination {
    #[default]
    None,
    ResponseOnly,
    LeverageOnly,
    Both,
}

impl Contamination {
    fn response(self) -> bool {
        matches!(self, Self::ResponseOnly | Self::Both)
    }

    fn leverage(self) -> bool {
        matches!(self, Self::LeverageOnly | Self::Both)
    }
}

/// How contaminated rows are picked.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowSelection {
    /// Each row independently with probability `rate`.
    #[default]
    Bernoulli,
    /// Exactly `round(rate · n)` rows.
    FixedCount,
}

/// Where the generating columns ended up after the random relabelling.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    /// Column positions of the targets, in generation order.
    pub targets: Vec<usize>,
    /// `(noise column, target column)` for every correlated noise covariate.
    pub partners: Vec<(usize, usize)>,
    /// `permutation[j]` is the generation-order index of column `j`.
    pub permutation: Vec<usize>,
}

impl Layout {
    /// True model as a sorted index set.
    pub fn truth(&self) -> Vec<usize> {
        let mut t = self.targets.clone();
        t.sort_unstable();
        t
    }
}

#[derive(Clone, Debug)]
pub struct Generated {
    pub train: Dataset,
    pub test: Dataset,
    pub layout: Layout,
    pub sigma: f64,
}

/// `σ` giving a theoretical `R²` when the response is the sum of `k`
/// unit-variance targets with pairwise correlation `θ`.
pub fn derive_sigma(k: usize, theta: f64, r2: f64) -> f64 {
    let k = k as f64;
    let var_sum = k + k * (k - 1.0) * theta;
    (var_sum * (1.0 - r2) / r2).sqrt()
}

/// Design and response in generation order: targets, then `2k` correlated
/// noise covariates, then independent noise.
pub fn generate_unpermuted<R: Rng + ?Sized>(spec: &SimulationSpec, sigma: f64, rows: usize, rng: &mut R) -> (DMatrix<f64>, DVector<f64>) {
    let (k, p) = (spec.k, spec.p);
    let (a, b) = (spec.theta.sqrt(), (1.0 - spec.theta).sqrt());
    let mut x = DMatrix::zeros(rows, p);
    let mut y = DVector::zeros(rows);
    for i in 0..rows {
        let shared: f64 = rng.sample(StandardNormal);
        let mut sum = 0.0;
        for t in 0..k {
            let e: f64 = rng.sample(StandardNormal);
            let v = a * shared + b * e;
            x[(i, t)] = v;
            sum += v;
        }
        for c in k..3 * k {
            let e: f64 = rng.sample(StandardNormal);
            x[(i, c)] = x[(i, (c - k) % k)] + LAMBDA * e;
        }
        for c in 3 * k..p {
            x[(i, c)] = rng.sample(StandardNormal);
        }
        let eps: f64 = rng.sample(StandardNormal);
        y[i] = sum + sigma * eps;
    }
    (x, y)
}

fn names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

/// Draws a training and a test half of `spec.n` rows each and relabels the
/// columns with one random permutation shared by both halves. The training
/// half is returned clean; see [`contaminate`].
pub fn generate<R: Rng + ?Sized>(spec: &SimulationSpec, rng: &mut R) -> Result<Generated> {
    spec.validate()?;
    let sigma = derive_sigma(spec.k, spec.theta, spec.r2);
    let (x_train, y_train) = generate_unpermuted(spec, sigma, spec.n, rng);
    let (x_test, y_test) = generate_unpermuted(spec, sigma, spec.n, rng);

    let mut permutation: Vec<usize> = (0..spec.p).collect();
    permutation.shuffle(rng);
    let mut position = vec![0; spec.p];
    for (j, &g) in permutation.iter().enumerate() {
        position[g] = j;
    }
    let targets = (0..spec.k).map(|t| position[t]).collect();
    let partners = (spec.k..3 * spec.k)
        .map(|c| (position[c], position[(c - spec.k) % spec.k]))
        .collect();
    let layout = Layout {
        targets,
        partners,
        permutation,
    };
    let train = Dataset::new(permute_columns(&x_train, &layout.permutation), y_train, names(spec.p), "y")?;
    let test = Dataset::new(permute_columns(&x_test, &layout.permutation), y_test, names(spec.p), "y")?;
    Ok(Generated {
        train,
        test,
        layout,
        sigma,
    })
}

/// Column `j` of the result is column `permutation[j]` of `x`.
pub fn permute_columns(x: &DMatrix<f64>, permutation: &[usize]) -> DMatrix<f64> {
    x.select_columns(permutation)
}

/// Inverse of [`permute_columns`].
pub fn unpermute_columns(x: &DMatrix<f64>, permutation: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    for (j, &g) in permutation.iter().enumerate() {
        out.set_column(g, &x.column(j));
    }
    out
}

/// Rows picked for contamination.
pub fn contaminated_rows<R: Rng + ?Sized>(n: usize, rate: f64, selection: RowSelection, rng: &mut R) -> Vec<usize> {
    match selection {
        RowSelection::Bernoulli => (0..n).filter(|_| rng.random::<f64>() < rate).collect(),
        RowSelection::FixedCount => {
            let count = ((rate * n as f64).round() as usize).min(n);
            let mut rows = rand::seq::index::sample(rng, n, count).into_vec();
            rows.sort_unstable();
            rows
        }
    }
}

/// Contaminates a training set produced by [`generate`].
///
/// On each picked row, response contamination moves the error mean to
/// `30σ`; leverage contamination inflates the target variance to 5 while
/// keeping their correlation, and the correlated noise covariates and the
/// response follow the new targets through the generating equations.
/// Returns the new dataset and the contaminated rows.
pub fn contaminate<R: Rng + ?Sized>(
    train: &Dataset,
    layout: &Layout,
    scheme: Contamination,
    rate: f64,
    selection: RowSelection,
    sigma: f64,
    rng: &mut R,
) -> (Dataset, Vec<usize>) {
    if scheme == Contamination::None {
        return (train.clone(), Vec::new());
    }
    let rows = contaminated_rows(train.n(), rate, selection, rng);
    let mut out = train.clone();
    let inflate = LEVERAGE_VARIANCE.sqrt() - 1.0;
    for &i in &rows {
        if scheme.leverage() {
            let mut shift = 0.0;
            for &t in &layout.targets {
                let extra = inflate * train.x[(i, t)];
                out.x[(i, t)] += extra;
                shift += extra;
            }
            for &(c, t) in &layout.partners {
                out.x[(i, c)] += inflate * train.x[(i, t)];
            }
            out.y[i] += shift;
        }
        if scheme.response() {
            out.y[i] += RESPONSE_SHIFT * sigma;
        }
    }
    (out, rows)
}
