//! Robust building blocks: MAD scale, Tukey and Huber weights, marginal
//! Huber fits, the coordinate-wise initial estimator and its refinement.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, NormalFactor};

/// Consistency factor of the MAD at the normal model.
pub const MAD_CONSISTENCY: f64 = 1.483;
/// Factor applied to the mean absolute deviation when the MAD is zero.
pub const MEAN_DEVIATION_FALLBACK: f64 = 1.4826;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobustnessConfig {
    /// Tukey biweight cutoff (95% efficiency at 4.685).
    pub c_tukey: f64,
    /// Huber cutoff used by the marginal fits.
    pub c_huber: f64,
    pub irls_tol: f64,
    pub irls_max_iter: usize,
    /// Extra reweighting steps after the one-step estimator.
    pub refine_steps: usize,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self {
            c_tukey: 4.685,
            c_huber: 1.345,
            irls_tol: 1e-8,
            irls_max_iter: 50,
            refine_steps: 0,
        }
    }
}

impl RobustnessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_tukey > 0.0 && self.c_tukey.is_finite()) {
            return Err(Error::InvalidConfig(format!("c_tukey = {}", self.c_tukey)));
        }
        if !(self.c_huber > 0.0 && self.c_huber.is_finite()) {
            return Err(Error::InvalidConfig(format!("c_huber = {}", self.c_huber)));
        }
        if !(self.irls_tol > 0.0) {
            return Err(Error::InvalidConfig(format!("irls_tol = {}", self.irls_tol)));
        }
        if self.irls_max_iter == 0 {
            return Err(Error::InvalidConfig("irls_max_iter = 0".into()));
        }
        Ok(())
    }
}

/// The two middle order statistics of `v` (equal for odd lengths),
/// reordering it in place.
fn middle_pair(v: &mut [f64]) -> (f64, f64) {
    let n = v.len();
    let (lower, upper, _) = v.select_nth_unstable_by(n / 2, f64::total_cmp);
    let hi = *upper;
    if n % 2 == 1 {
        (hi, hi)
    } else {
        (lower.iter().copied().fold(f64::NEG_INFINITY, f64::max), hi)
    }
}

fn midpoint((lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        hi
    } else {
        0.5 * (lo + hi)
    }
}

/// Median of `v`, reordering it in place. Panics on an empty slice.
pub fn median_in_place(v: &mut [f64]) -> f64 {
    assert!(!v.is_empty(), "median of empty slice");
    midpoint(middle_pair(v))
}

pub fn median(v: &[f64]) -> f64 {
    median_in_place(&mut v.to_vec())
}

/// Middle order statistics of a vector and of its absolute deviations,
/// plus a bound on how far each entry of the next vector can be from its
/// counterpart in this one.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ScaleHint {
    middle: (f64, f64),
    dev_middle: (f64, f64),
    shift: f64,
}

/// Location and scale of one vector.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ScaleEstimate {
    pub scale: f64,
    middle: (f64, f64),
    dev_middle: (f64, f64),
}

impl ScaleEstimate {
    /// Hint for a vector whose entries each differ from this one by at most `shift`.
    pub fn hint(&self, shift: f64) -> Option<ScaleHint> {
        shift.is_finite().then_some(ScaleHint {
            middle: self.middle,
            dev_middle: self.dev_middle,
            shift,
        })
    }
}

/// Reusable buffer for MAD computations.
#[derive(Clone, Debug, Default)]
pub(crate) struct ScaleWorkspace {
    window: Vec<f64>,
}

/// Middle order statistics of `f(vᵢ)` found among the values inside
/// `[lo, hi]`, or `None` when the window does not hold both.
fn windowed_middle(v: &[f64], f: impl Fn(f64) -> f64, lo: f64, hi: f64, window: &mut Vec<f64>) -> Option<(f64, f64)> {
    let n = v.len();
    window.clear();
    let (mut below, mut above) = (0usize, 0usize);
    for &x in v {
        let x = f(x);
        below += (x < lo) as usize;
        above += (x > hi) as usize;
        if x >= lo && x <= hi {
            window.push(x);
        }
    }
    let len = window.len();
    let (k1, k2) = ((n - 1) / 2, n / 2);
    if below + above + len != n || below > k1 || below + len <= k2 {
        return None;
    }
    let (lower, upper, _) = window.select_nth_unstable_by(k2 - below, f64::total_cmp);
    let hi_v = *upper;
    if k1 == k2 {
        Some((hi_v, hi_v))
    } else {
        Some((lower.iter().copied().fold(f64::NEG_INFINITY, f64::max), hi_v))
    }
}

impl ScaleWorkspace {
    fn middle_of(&mut self, v: &[f64], f: impl Fn(f64) -> f64 + Copy, window: Option<(f64, f64)>) -> (f64, f64) {
        if let Some((lo, hi)) = window {
            if let Some(m) = windowed_middle(v, f, lo, hi, &mut self.window) {
                return m;
            }
        }
        self.window.clear();
        self.window.extend(v.iter().map(|&x| f(x)));
        middle_pair(&mut self.window)
    }

    /// MAD of `v` with the mean-absolute-deviation fallback. With a hint,
    /// both medians are searched for near their previous values first; the
    /// result is identical either way.
    pub fn scale(&mut self, v: &[f64], hint: Option<ScaleHint>) -> Result<ScaleEstimate> {
        if v.len() < 2 {
            return Err(Error::DimensionMismatch(format!("MAD of {} values", v.len())));
        }
        // each order statistic moves no further than the largest entrywise shift
        let widen = |(lo, hi): (f64, f64), r: f64| {
            let r = r * (1.0 + 1e-9) + 1e-12 * (lo.abs() + hi.abs());
            (lo - r, hi + r)
        };
        let middle = self.middle_of(v, |x| x, hint.map(|h| widen(h.middle, h.shift)));
        let median = midpoint(middle);
        let dev_window = hint.map(|h| {
            let moved = (median - midpoint(h.middle)).abs();
            widen(h.dev_middle, h.shift + moved)
        });
        let dev_middle = self.middle_of(v, |x| (x - median).abs(), dev_window);
        let estimate = |scale| ScaleEstimate {
            scale,
            middle,
            dev_middle,
        };
        let scale = MAD_CONSISTENCY * midpoint(dev_middle);
        if scale > 0.0 {
            return Ok(estimate(scale));
        }
        let mean_dev = v.iter().map(|x| (x - median).abs()).sum::<f64>() / v.len() as f64;
        let scale = MEAN_DEVIATION_FALLBACK * mean_dev;
        if scale > 0.0 && scale.is_finite() {
            Ok(estimate(scale))
        } else {
            Err(Error::ZeroScale)
        }
    }
}

/// `1.483 · med|vᵢ − med(v)|`.
pub fn mad(v: &[f64]) -> Result<f64> {
    if v.len() < 2 {
        return Err(Error::DimensionMismatch(format!("MAD of {} values", v.len())));
    }
    let mut ws = ScaleWorkspace::default();
    let m = midpoint(ws.middle_of(v, |x| x, None));
    let s = MAD_CONSISTENCY * midpoint(ws.middle_of(v, |x| (x - m).abs(), None));
    if s > 0.0 {
        Ok(s)
    } else {
        Err(Error::ZeroScale)
    }
}

/// MAD with the mean-absolute-deviation fallback for semi-degenerate input.
pub fn robust_scale(v: &[f64]) -> Result<f64> {
    Ok(ScaleWorkspace::default().scale(v, None)?.scale)
}

/// Tukey's biweight: `((r/c)² − 1)²` inside `[−c, c]`, zero outside.
#[inline]
pub fn tukey_weight(r: f64, c: f64) -> f64 {
    if r.abs() <= c {
        let u = r / c;
        let t = u * u - 1.0;
        t * t
    } else {
        0.0
    }
}

/// Huber's weight `min{1, c/|r|}`.
#[inline]
pub fn huber_weight(r: f64, c: f64) -> f64 {
    let a = r.abs();
    if a <= c {
        1.0
    } else {
        c / a
    }
}

/// Huber M-fit of `y = β₀ + β x` on a single covariate.
#[derive(Clone, Debug)]
pub struct MarginalFit {
    pub intercept: f64,
    pub slope: f64,
    /// MAD of the residuals at the returned estimate; zero only for an exact fit.
    pub scale: f64,
    /// Tukey weights at the standardized residuals of the returned estimate.
    pub weights: Vec<f64>,
    pub iterations: usize,
    /// False when the iteration cap was hit; the fields hold the last iterate.
    pub converged: bool,
}

impl MarginalFit {
    pub fn ensure_converged(&self) -> Result<&Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NoConvergence {
                iterations: self.iterations,
                last_change: f64::NAN,
            })
        }
    }
}

fn weighted_line(y: &[f64], x: &[f64], w: &[f64]) -> Option<(f64, f64)> {
    let (mut sw, mut swx, mut swy) = (0.0, 0.0, 0.0);
    for ((yi, xi), wi) in y.iter().zip(x).zip(w) {
        sw += wi;
        swx += wi * xi;
        swy += wi * yi;
    }
    if !(sw > 0.0) {
        return None;
    }
    let (mx, my) = (swx / sw, swy / sw);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for ((yi, xi), wi) in y.iter().zip(x).zip(w) {
        let dx = xi - mx;
        sxx += wi * dx * dx;
        sxy += wi * dx * (yi - my);
    }
    if !(sxx > linalg::RCOND_FLOOR * sw * (1.0 + mx * mx)) {
        return None;
    }
    let slope = sxy / sxx;
    Some((my - slope * mx, slope))
}

/// Fits one marginal model by IRLS with Huber weights, rescaling by the MAD
/// of the current residuals on every pass.
pub fn marginal_m_fit(y: &[f64], x: &[f64], cfg: &RobustnessConfig) -> Result<MarginalFit> {
    let n = y.len();
    if x.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "response has {} rows, covariate has {}",
            n,
            x.len()
        )));
    }
    if n < 3 {
        return Err(Error::DimensionMismatch(format!("{n} rows for a marginal fit")));
    }
    let ones = vec![1.0; n];
    let (mut b0, mut b1) = weighted_line(y, x, &ones)
        .ok_or_else(|| Error::DegenerateCandidate("constant covariate".into()))?;

    let y_size = y.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    if y.iter().zip(x).all(|(yi, xi)| (yi - b0 - b1 * xi).abs() <= 1e-12 * y_size) {
        return Ok(MarginalFit {
            intercept: b0,
            slope: b1,
            scale: 0.0,
            weights: ones,
            iterations: 0,
            converged: true,
        });
    }

    let x_max = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut resid = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut ws = ScaleWorkspace::default();
    let mut hint = None;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.irls_max_iter {
        iterations += 1;
        for i in 0..n {
            resid[i] = y[i] - b0 - b1 * x[i];
        }
        let est = ws.scale(&resid, hint)?;
        for i in 0..n {
            w[i] = huber_weight(resid[i] / est.scale, cfg.c_huber);
        }
        let (n0, n1) = weighted_line(y, x, &w).ok_or(Error::RankDeficient { rcond: 0.0 })?;
        let (d0, d1) = ((n0 - b0).abs(), (n1 - b1).abs());
        b0 = n0;
        b1 = n1;
        hint = est.hint(d0 + d1 * x_max);
        if d0.max(d1) < cfg.irls_tol {
            converged = true;
            break;
        }
    }

    for i in 0..n {
        resid[i] = y[i] - b0 - b1 * x[i];
    }
    let scale = ws.scale(&resid, hint)?.scale;
    let weights = resid
        .iter()
        .map(|r| tukey_weight(r / scale, cfg.c_tukey))
        .collect();
    Ok(MarginalFit {
        intercept: b0,
        slope: b1,
        scale,
        weights,
        iterations,
        converged,
    })
}

/// Norm of the Huber score `Σ w(rᵢ) rᵢ (1, xᵢ)` at a marginal estimate, with
/// residuals standardized by their MAD.
pub fn marginal_score_norm(y: &[f64], x: &[f64], intercept: f64, slope: f64, c_huber: f64) -> Result<f64> {
    let resid: Vec<f64> = y.iter().zip(x).map(|(yi, xi)| yi - intercept - slope * xi).collect();
    let sigma = robust_scale(&resid)?;
    let (mut s0, mut s1) = (0.0, 0.0);
    for (r, xi) in resid.iter().zip(x) {
        let r = r / sigma;
        let psi = huber_weight(r, c_huber) * r;
        s0 += psi;
        s1 += psi * xi;
    }
    Ok(s0.hypot(s1))
}

/// Marginal fits for every column of `x`. Columns are independent; the
/// result is ordered by column regardless of scheduling.
pub fn marginal_fits(x: &DMatrix<f64>, y: &[f64], cfg: &RobustnessConfig) -> Vec<Result<MarginalFit>> {
    (0..x.ncols())
        .into_par_iter()
        .map(|j| {
            let fit = marginal_m_fit(y, x.column(j).as_slice(), cfg);
            if let Ok(f) = &fit {
                if !f.converged {
                    warn!("marginal fit for column {j} hit the iteration cap");
                }
            }
            fit
        })
        .collect()
}

/// Coordinate-wise initial estimate and the weights it induces.
#[derive(Clone, Debug)]
pub struct InitialEstimate {
    pub coefficients: DVector<f64>,
    /// Tukey weights `w_iS⁰` at the standardized residuals.
    pub weights: Vec<f64>,
    pub scale: f64,
}

/// `β⁰ = [(Xʷ₀)ᵀXʷ₀]⁻¹ (Xʷ²₀)ᵀ y` where the non-intercept columns of `xs` are
/// scaled by `√w_j` and `w_j` respectively. Column 0 of `xs` is the
/// intercept and carries unit weights; `marginal_weights[k]` belongs to
/// column `k + 1`.
pub fn initial_estimator(
    y: &[f64],
    xs: &DMatrix<f64>,
    marginal_weights: &[&[f64]],
    cfg: &RobustnessConfig,
) -> Result<InitialEstimate> {
    let n = xs.nrows();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "response has {} rows, design has {}",
            y.len(),
            n
        )));
    }
    if xs.ncols() != marginal_weights.len() + 1 {
        return Err(Error::DimensionMismatch(format!(
            "{} design columns but {} weight vectors",
            xs.ncols(),
            marginal_weights.len()
        )));
    }
    for w in marginal_weights {
        linalg::check_weights(w, n)?;
    }
    let q = xs.ncols();
    let mut xw = xs.clone();
    let mut xw2 = xs.clone();
    for (k, w) in marginal_weights.iter().enumerate() {
        for i in 0..n {
            xw[(i, k + 1)] *= w[i].sqrt();
            xw2[(i, k + 1)] *= w[i];
        }
    }
    let rhs = xw2.tr_mul(&DVector::from_column_slice(y));
    let coefficients = NormalFactor::new(&xw)?.solve(&rhs);
    debug_assert_eq!(coefficients.len(), q);

    let fitted = xs * &coefficients;
    let resid: Vec<f64> = y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect();
    let scale = robust_scale(&resid)?;
    let weights = resid
        .iter()
        .map(|r| tukey_weight(r / scale, cfg.c_tukey))
        .collect();
    Ok(InitialEstimate {
        coefficients,
        weights,
        scale,
    })
}

/// One reweighting pass: Tukey weights at the residuals of `beta` (scaled
/// by their MAD), then weighted LS.
pub fn refine_step(
    y: &[f64],
    xs: &DMatrix<f64>,
    beta: &DVector<f64>,
    cfg: &RobustnessConfig,
) -> Result<InitialEstimate> {
    let fitted = xs * beta;
    let resid: Vec<f64> = y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect();
    let scale = robust_scale(&resid)?;
    let weights: Vec<f64> = resid
        .iter()
        .map(|r| tukey_weight(r / scale, cfg.c_tukey))
        .collect();
    let coefficients = linalg::weighted_ls(xs, y, &weights)?;
    Ok(InitialEstimate {
        coefficients,
        weights,
        scale,
    })
}

/// `steps` reweighting passes starting from `beta`; zero steps return it unchanged.
pub fn refine(
    y: &[f64],
    xs: &DMatrix<f64>,
    beta: &DVector<f64>,
    steps: usize,
    cfg: &RobustnessConfig,
) -> Result<DVector<f64>> {
    let mut current = beta.clone();
    for _ in 0..steps {
        current = refine_step(y, xs, &current, cfg)?.coefficients;
    }
    Ok(current)
}
