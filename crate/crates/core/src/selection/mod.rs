//! Streamwise VIF selectors.
//!
//! Both selectors make one pass over the candidate columns. Each candidate is
//! scored against the current model, tested at the α-investing level, and
//! either appended to the model or skipped for good. The robust selector
//! works with Tukey-weighted data throughout; the classical selector is the
//! unweighted baseline with the same control flow.

pub mod efficiency;
pub mod evaluate;
pub mod investing;

use std::fmt;
use std::str::FromStr;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{self, NormalFactor};
use crate::robust::{self, RobustnessConfig};

pub use efficiency::compute_ec;
pub use evaluate::{
    evaluate_candidate, evaluate_classical, two_sided_p, CandidateStat, ScaleMode, Stage,
};
pub use investing::{alpha_step, AlphaInvesting};

/// Default subsample size for the partial-variance estimate.
pub const DEFAULT_SUBSAMPLE: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Robust,
    Classical,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "robust" | "r" => Ok(Self::Robust),
            "classical" | "c" => Ok(Self::Classical),
            other => Err(Error::InvalidConfig(format!("unknown method `{other}`"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Robust => "robust",
            Self::Classical => "classical",
        })
    }
}

/// Which weights scale the candidate column in the robust statistic.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateWeighting {
    /// Weights from the candidate's own marginal fit.
    #[default]
    Marginal,
    /// The current model's weights `w_iS⁰`.
    Stage,
}

/// `Unit` forces every weight in the robust selector to one.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    #[default]
    Robust,
    Unit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectorConfig {
    pub robustness: RobustnessConfig,
    pub subsample: usize,
    pub initial_wealth: f64,
    pub payout: f64,
    pub candidate_weights: CandidateWeighting,
    pub weights: WeightMode,
    pub scale: ScaleMode,
    /// Stop scanning once the level drops below this (off by default).
    pub min_alpha: Option<f64>,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            robustness: RobustnessConfig::default(),
            subsample: DEFAULT_SUBSAMPLE,
            initial_wealth: investing::DEFAULT_INITIAL_WEALTH,
            payout: investing::DEFAULT_PAYOUT,
            candidate_weights: CandidateWeighting::Marginal,
            weights: WeightMode::Robust,
            scale: ScaleMode::Mad,
            min_alpha: None,
        }
    }
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<()> {
        self.robustness.validate()?;
        if self.subsample < 2 {
            return Err(Error::InvalidConfig(format!("subsample size {}", self.subsample)));
        }
        if !(self.initial_wealth > 0.0) {
            return Err(Error::InvalidConfig(format!("initial wealth {}", self.initial_wealth)));
        }
        if !(self.payout > 0.0) {
            return Err(Error::InvalidConfig(format!("payout {}", self.payout)));
        }
        Ok(())
    }
}

/// One trace record per visited candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    /// Column index in the dataset.
    pub index: usize,
    pub gamma: f64,
    pub sigma: f64,
    pub rho: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub accepted: bool,
    pub wealth_after: f64,
    /// Candidate could not be scored (collinear, zero norm or zero scale).
    pub degenerate: bool,
}

/// Outcome of a selection run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Selection {
    pub method: Method,
    /// Selected column indices in order of entry.
    pub selected: Vec<usize>,
    /// Intercept followed by one slope per selected column.
    pub coefficients: Vec<f64>,
    pub t_values: Vec<f64>,
    /// Residual scale of the final fit.
    pub scale: f64,
    pub trace: Vec<CandidateResult>,
}

impl Selection {
    /// `(standardized column, slope)` pairs.
    pub fn slopes(&self) -> Vec<(usize, f64)> {
        self.selected
            .iter()
            .copied()
            .zip(self.coefficients[1..].iter().copied())
            .collect()
    }

    pub fn intercept(&self) -> f64 {
        self.coefficients[0]
    }
}

trait Streamer {
    fn evaluate(&mut self, j: usize, rng: &mut ChaCha8Rng) -> Result<CandidateStat>;
    fn accept(&mut self, j: usize) -> Result<()>;
}

fn is_skippable(err: &Error) -> bool {
    matches!(
        err,
        Error::DegenerateCandidate(_) | Error::ZeroScale | Error::RankDeficient { .. }
    )
}

fn run_stream<S: Streamer>(streamer: &mut S, order: &[usize], cfg: &SelectorConfig, seed: u64) -> Result<(Vec<usize>, Vec<CandidateResult>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut investing = AlphaInvesting::new(cfg.initial_wealth, cfg.payout);
    let mut selected = Vec::new();
    let mut trace = Vec::with_capacity(order.len());
    for &j in order {
        if let Some(floor) = cfg.min_alpha {
            if investing.alpha() < floor {
                debug!("level below {floor:e}; stopping after {} candidates", trace.len());
                break;
            }
        }
        let level = investing.alpha();
        let (stat, degenerate) = match streamer.evaluate(j, &mut rng) {
            Ok(stat) => (stat, false),
            Err(e) if is_skippable(&e) => {
                debug!("candidate {j} skipped: {e}");
                let nan = f64::NAN;
                (
                    CandidateStat {
                        gamma: nan,
                        sigma: nan,
                        rho: nan,
                        t_stat: nan,
                    },
                    true,
                )
            }
            Err(e) => return Err(e),
        };
        let p_value = if degenerate { 1.0 } else { two_sided_p(stat.t_stat) };
        let accepted = !degenerate && p_value < level;
        investing.advance(accepted);
        if accepted {
            streamer.accept(j)?;
            selected.push(j);
        }
        trace.push(CandidateResult {
            index: j,
            gamma: stat.gamma,
            sigma: stat.sigma,
            rho: stat.rho,
            t_stat: stat.t_stat,
            p_value,
            alpha: level,
            accepted,
            wealth_after: investing.wealth,
            degenerate,
        });
    }
    Ok((selected, trace))
}

fn design_for(data: &Dataset, columns: &[usize]) -> DMatrix<f64> {
    let n = data.n();
    DMatrix::from_fn(n, columns.len() + 1, |i, k| {
        if k == 0 {
            1.0
        } else {
            data.x[(i, columns[k - 1])]
        }
    })
}

fn validate_order(data: &Dataset, order: &[usize]) -> Result<()> {
    if data.p() == 0 {
        return Err(Error::EmptyData);
    }
    if let Some(bad) = order.iter().find(|&&j| j >= data.p()) {
        return Err(Error::DimensionMismatch(format!("column {bad} out of range")));
    }
    Ok(())
}

struct RobustStreamer<'a> {
    data: &'a Dataset,
    cfg: &'a SelectorConfig,
    efficiency: f64,
    /// Marginal weights per column; `None` when the marginal fit failed.
    marginal: Vec<Option<Vec<f64>>>,
    marginal_sqrt: Vec<Option<Vec<f64>>>,
    columns: Vec<usize>,
    stage: Stage,
}

impl<'a> RobustStreamer<'a> {
    fn new(data: &'a Dataset, cfg: &'a SelectorConfig) -> Result<Self> {
        let n = data.n();
        let y = data.response_values();
        let marginal: Vec<Option<Vec<f64>>> = match cfg.weights {
            WeightMode::Unit => vec![Some(vec![1.0; n]); data.p()],
            WeightMode::Robust => robust::marginal_fits(&data.x, y, &cfg.robustness)
                .into_iter()
                .enumerate()
                .map(|(j, fit)| match fit {
                    Ok(f) => Some(f.weights),
                    Err(e) => {
                        warn!("marginal fit for column {j} failed: {e}");
                        None
                    }
                })
                .collect(),
        };
        let marginal_sqrt = marginal
            .iter()
            .map(|w| w.as_ref().map(|w| w.iter().map(|v| v.sqrt()).collect()))
            .collect();
        let mut this = Self {
            data,
            cfg,
            efficiency: compute_ec(cfg.robustness.c_tukey),
            marginal,
            marginal_sqrt,
            columns: Vec::new(),
            stage: Stage::new(y, DMatrix::from_element(n, 1, 1.0), vec![1.0; n])?,
        };
        this.stage = this.build_stage()?;
        Ok(this)
    }

    /// Stage weights for the current columns: the initial estimator followed
    /// by any configured refinement passes.
    fn stage_weights(&self, design: &DMatrix<f64>) -> Result<Vec<f64>> {
        let n = self.data.n();
        if self.cfg.weights == WeightMode::Unit {
            return Ok(vec![1.0; n]);
        }
        let y = self.data.response_values();
        let weights: Vec<&[f64]> = self
            .columns
            .iter()
            .map(|&j| self.marginal[j].as_deref().expect("selected columns have weights"))
            .collect();
        let init = robust::initial_estimator(y, design, &weights, &self.cfg.robustness)?;
        let mut w = init.weights;
        if self.cfg.robustness.refine_steps > 0 {
            let mut beta = linalg::weighted_ls(design, y, &w)?;
            for _ in 0..self.cfg.robustness.refine_steps {
                let step = robust::refine_step(y, design, &beta, &self.cfg.robustness)?;
                w = step.weights;
                beta = step.coefficients;
            }
        }
        Ok(w)
    }

    fn build_stage(&self) -> Result<Stage> {
        let design = design_for(self.data, &self.columns);
        let weights = self.stage_weights(&design)?;
        Stage::new(self.data.response_values(), design, weights)
    }

    fn final_fit(&self) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let y = self.data.response_values();
        let design = &self.stage.design;
        let w = &self.stage.weights;
        let xw = &self.stage.weighted_design;
        let factor = NormalFactor::new(xw)?;
        let yw = DVector::from_iterator(y.len(), y.iter().zip(&self.stage.sqrt_weights).map(|(a, b)| a * b));
        let beta = factor.solve_ls(xw, &yw);
        let resid: Vec<f64> = y
            .iter()
            .zip((design * &beta).iter())
            .map(|(a, b)| a - b)
            .collect();
        let scale = match self.cfg.scale {
            ScaleMode::Mad => robust::robust_scale(&resid)?,
            ScaleMode::RootMeanSquare => {
                let q = design.ncols();
                let rss: f64 = resid.iter().zip(w).map(|(r, wi)| wi * r * r).sum();
                (rss / (y.len().saturating_sub(q).max(1)) as f64).sqrt()
            }
        };
        let inv = factor.inverse();
        let t = beta
            .iter()
            .enumerate()
            .map(|(k, b)| b / (scale * scale * inv[(k, k)] / self.efficiency).sqrt())
            .collect();
        Ok((beta.iter().copied().collect(), t, scale))
    }
}

impl Streamer for RobustStreamer<'_> {
    fn evaluate(&mut self, j: usize, rng: &mut ChaCha8Rng) -> Result<CandidateStat> {
        let sqrt_w = match self.cfg.candidate_weights {
            CandidateWeighting::Marginal => self.marginal_sqrt[j]
                .as_deref()
                .ok_or_else(|| Error::DegenerateCandidate(format!("no marginal fit for column {j}")))?,
            CandidateWeighting::Stage => {
                if self.marginal[j].is_none() {
                    return Err(Error::DegenerateCandidate(format!("no marginal fit for column {j}")));
                }
                &self.stage.sqrt_weights
            }
        };
        evaluate_candidate(
            &self.stage,
            self.data.column(j),
            sqrt_w,
            self.efficiency,
            self.cfg.scale,
            self.cfg.subsample,
            rng,
        )
    }

    fn accept(&mut self, j: usize) -> Result<()> {
        self.columns.push(j);
        self.stage = self.build_stage()?;
        Ok(())
    }
}

/// Robust VIF selection over the columns in their stored order.
pub fn select_robust(data: &Dataset, cfg: &SelectorConfig, seed: u64) -> Result<Selection> {
    let order: Vec<usize> = (0..data.p()).collect();
    select_robust_ordered(data, &order, cfg, seed)
}

/// Robust VIF selection visiting columns in `order`.
pub fn select_robust_ordered(data: &Dataset, order: &[usize], cfg: &SelectorConfig, seed: u64) -> Result<Selection> {
    cfg.validate()?;
    validate_order(data, order)?;
    let mut streamer = RobustStreamer::new(data, cfg)?;
    let (selected, trace) = run_stream(&mut streamer, order, cfg, seed)?;
    let (coefficients, t_values, scale) = streamer.final_fit()?;
    Ok(Selection {
        method: Method::Robust,
        selected,
        coefficients,
        t_values,
        scale,
        trace,
    })
}

struct ClassicalStreamer<'a> {
    data: &'a Dataset,
    columns: Vec<usize>,
    design: DMatrix<f64>,
    residuals: Vec<f64>,
    subsample: usize,
}

impl<'a> ClassicalStreamer<'a> {
    fn new(data: &'a Dataset, subsample: usize) -> Result<Self> {
        let mut this = Self {
            data,
            columns: Vec::new(),
            design: design_for(data, &[]),
            residuals: Vec::new(),
            subsample,
        };
        this.refit()?;
        Ok(this)
    }

    fn refit(&mut self) -> Result<()> {
        self.design = design_for(self.data, &self.columns);
        let y = self.data.response_values();
        let beta = NormalFactor::new(&self.design)?
            .solve_ls(&self.design, &DVector::from_column_slice(y));
        let fitted = &self.design * beta;
        self.residuals = y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect();
        Ok(())
    }

    fn final_fit(&self) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let y = self.data.response_values();
        let factor = NormalFactor::new(&self.design)?;
        let beta = factor.solve_ls(&self.design, &DVector::from_column_slice(y));
        let q = self.design.ncols();
        let rss: f64 = self.residuals.iter().map(|r| r * r).sum();
        let scale = (rss / (y.len().saturating_sub(q).max(1)) as f64).sqrt();
        let inv = factor.inverse();
        let t = beta
            .iter()
            .enumerate()
            .map(|(k, b)| b / (scale * scale * inv[(k, k)]).sqrt())
            .collect();
        Ok((beta.iter().copied().collect(), t, scale))
    }
}

impl Streamer for ClassicalStreamer<'_> {
    fn evaluate(&mut self, j: usize, rng: &mut ChaCha8Rng) -> Result<CandidateStat> {
        evaluate_classical(&self.design, &self.residuals, self.data.column(j), self.subsample, rng)
    }

    fn accept(&mut self, j: usize) -> Result<()> {
        self.columns.push(j);
        self.refit()
    }
}

/// Classical VIF selection over the columns in their stored order.
pub fn select_classical(data: &Dataset, cfg: &SelectorConfig, seed: u64) -> Result<Selection> {
    let order: Vec<usize> = (0..data.p()).collect();
    select_classical_ordered(data, &order, cfg, seed)
}

pub fn select_classical_ordered(data: &Dataset, order: &[usize], cfg: &SelectorConfig, seed: u64) -> Result<Selection> {
    cfg.validate()?;
    validate_order(data, order)?;
    let mut streamer = ClassicalStreamer::new(data, cfg.subsample)?;
    let (selected, trace) = run_stream(&mut streamer, order, cfg, seed)?;
    let (coefficients, t_values, scale) = streamer.final_fit()?;
    Ok(Selection {
        method: Method::Classical,
        selected,
        coefficients,
        t_values,
        scale,
        trace,
    })
}

/// Dispatches on `method`.
pub fn select(method: Method, data: &Dataset, order: &[usize], cfg: &SelectorConfig, seed: u64) -> Result<Selection> {
    match method {
        Method::Robust => select_robust_ordered(data, order, cfg, seed),
        Method::Classical => select_classical_ordered(data, order, cfg, seed),
    }
}
