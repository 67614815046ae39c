//! Per-candidate statistics: the robust five-step evaluation and the
//! classical VIF t-ratio.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, projection_quadform, select_rows};
use crate::robust;

/// Smallest admissible `ρ`; anything at or below is weighted-collinear with the stage.
pub const RHO_FLOOR: f64 = 1e-10;

/// Residual scale used in the t-ratio denominator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    /// MAD of the stage-model residuals.
    #[default]
    Mad,
    /// `√(Σe²/n)` of the stage-model residuals.
    RootMeanSquare,
}

/// Current model at stage `S`: the design `X_S` (intercept first), the weights
/// `w_iS⁰`, and the weighted residuals `r_Sʷ`.
#[derive(Clone, Debug)]
pub struct Stage {
    pub design: DMatrix<f64>,
    pub weights: Vec<f64>,
    pub sqrt_weights: Vec<f64>,
    pub weighted_design: DMatrix<f64>,
    pub residuals: DVector<f64>,
    /// Location and scale of `residuals`, when they have any spread.
    residual_scale: Option<robust::ScaleEstimate>,
}

impl Stage {
    pub fn new(y: &[f64], design: DMatrix<f64>, weights: Vec<f64>) -> Result<Self> {
        let residuals = linalg::weighted_residuals(&design, y, &weights)?;
        let sqrt_weights: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
        let weighted_design = linalg::scale_rows(&design, &sqrt_weights);
        let residual_scale = robust::ScaleWorkspace::default()
            .scale(residuals.as_slice(), None)
            .ok();
        Ok(Self {
            design,
            weights,
            sqrt_weights,
            weighted_design,
            residuals,
            residual_scale,
        })
    }

    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    pub fn q(&self) -> usize {
        self.design.ncols()
    }
}

/// Statistics for one candidate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CandidateStat {
    pub gamma: f64,
    pub sigma: f64,
    pub rho: f64,
    pub t_stat: f64,
}

/// Subsample row indices without replacement, or `None` to use every row.
pub fn draw_subsample<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize) -> Option<Vec<usize>> {
    if m >= n {
        None
    } else {
        Some(rand::seq::index::sample(rng, n, m).into_vec())
    }
}

fn partial_r2(xw: &DMatrix<f64>, zw: &[f64], rows: Option<&[usize]>) -> Result<f64> {
    match rows {
        None => projection_quadform(xw, zw),
        Some(rows) => {
            let xs = select_rows(xw, rows);
            let zs: Vec<f64> = rows.iter().map(|&i| zw[i]).collect();
            projection_quadform(&xs, &zs)
        }
    }
}

fn floor_rho(r2: f64) -> Result<f64> {
    let rho = (1.0 - r2).clamp(0.0, 1.0);
    if rho <= RHO_FLOOR {
        Err(Error::DegenerateCandidate(format!(
            "partial variance ratio {rho:.3e} at or below floor"
        )))
    } else {
        Ok(rho)
    }
}

/// Robust evaluation of candidate `z` at `stage`.
///
/// `z_sqrt_weights` are `√w_ij` (the marginal weights by default). The
/// statistic is `T_w = ρ^{-1/2} γ̂ / √(σ̂² (Σ zʷ²)⁻¹ e_c⁻¹)` where `γ̂` and
/// `σ̂` use every row and only `ρ` is estimated on a subsample of size
/// `min(m, n)`.
pub fn evaluate_candidate<R: Rng + ?Sized>(
    stage: &Stage,
    z: &[f64],
    z_sqrt_weights: &[f64],
    efficiency: f64,
    scale: ScaleMode,
    subsample: usize,
    rng: &mut R,
) -> Result<CandidateStat> {
    let n = stage.n();
    if z.len() != n || z_sqrt_weights.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "candidate has {} rows and {} weights, stage has {}",
            z.len(),
            z_sqrt_weights.len(),
            n
        )));
    }
    let zw: Vec<f64> = z.iter().zip(z_sqrt_weights).map(|(a, b)| a * b).collect();
    let zz: f64 = zw.iter().map(|v| v * v).sum();
    if !(zz > linalg::DEGENERATE_NORM * n as f64) {
        return Err(Error::DegenerateCandidate(format!("weighted candidate norm {zz:.3e}")));
    }
    let r = stage.residuals.as_slice();
    let gamma = zw.iter().zip(r).map(|(a, b)| a * b).sum::<f64>() / zz;
    let stage_resid: Vec<f64> = r.iter().zip(&zw).map(|(ri, zi)| ri - zi * gamma).collect();
    let sigma = match scale {
        ScaleMode::Mad => {
            let zw_max = zw.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            let hint = stage
                .residual_scale
                .and_then(|e| e.hint(gamma.abs() * zw_max));
            robust::ScaleWorkspace::default().scale(&stage_resid, hint)?.scale
        }
        ScaleMode::RootMeanSquare => root_mean_square(&stage_resid)?,
    };

    let rows = draw_subsample(rng, n, subsample);
    let rho = floor_rho(partial_r2(&stage.weighted_design, &zw, rows.as_deref())?)?;

    let t_stat = gamma / rho.sqrt() / (sigma * sigma / zz / efficiency).sqrt();
    Ok(CandidateStat {
        gamma,
        sigma,
        rho,
        t_stat,
    })
}

pub(crate) fn root_mean_square(v: &[f64]) -> Result<f64> {
    let s = (v.iter().map(|e| e * e).sum::<f64>() / v.len() as f64).sqrt();
    if s > 0.0 && s.is_finite() {
        Ok(s)
    } else {
        Err(Error::ZeroScale)
    }
}

/// Classical VIF statistic `T_γ = γ̂ / (ρ^{1/2} σ̂)` with the candidate
/// normalized to unit length, `σ̂` the root mean square of the stage-model
/// residuals and `ρ` estimated on a subsample. `residuals` are the plain LS
/// residuals of `y` on `design`.
pub fn evaluate_classical<R: Rng + ?Sized>(
    design: &DMatrix<f64>,
    residuals: &[f64],
    z: &[f64],
    subsample: usize,
    rng: &mut R,
) -> Result<CandidateStat> {
    let n = design.nrows();
    if z.len() != n || residuals.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "candidate has {} rows, stage has {}",
            z.len(),
            n
        )));
    }
    let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm * norm > linalg::DEGENERATE_NORM * n as f64) {
        return Err(Error::DegenerateCandidate(format!("candidate norm {norm:.3e}")));
    }
    let unit: Vec<f64> = z.iter().map(|v| v / norm).collect();
    // slope on the unit-length candidate; γ̂ on the raw scale is this over ‖z‖
    let gamma_unit: f64 = unit.iter().zip(residuals).map(|(a, b)| a * b).sum();
    let stage_resid: Vec<f64> = residuals
        .iter()
        .zip(&unit)
        .map(|(r, u)| r - u * gamma_unit)
        .collect();
    let sigma = root_mean_square(&stage_resid)?;

    let rows = draw_subsample(rng, n, subsample);
    let rho = floor_rho(partial_r2(design, z, rows.as_deref())?)?;

    Ok(CandidateStat {
        gamma: gamma_unit / norm,
        sigma,
        rho,
        t_stat: gamma_unit / (rho.sqrt() * sigma),
    })
}

/// Two-sided normal p-value `2(1 − Φ(|t|))`.
pub fn two_sided_p(t: f64) -> f64 {
    if t.is_nan() {
        return 1.0;
    }
    libm::erfc(t.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selection::efficiency::compute_ec;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn p_values() {
        assert_eq!(two_sided_p(0.0), 1.0);
        assert_abs_diff_eq!(two_sided_p(1.959963984540054), 0.05, epsilon = 1e-12);
        assert_abs_diff_eq!(two_sided_p(-1.959963984540054), 0.05, epsilon = 1e-12);
        assert!(two_sided_p(40.0) >= 0.0);
    }

    #[test]
    fn orthogonal_candidate_has_unit_rho() {
        // z orthogonal to the intercept under unit weights
        let n = 8;
        let y: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        let stage = Stage::new(&y, DMatrix::from_element(n, 1, 1.0), vec![1.0; n]).unwrap();
        let z: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ec = compute_ec(4.685);
        let stat = evaluate_candidate(&stage, &z, &[1.0; 8], ec, ScaleMode::Mad, 200, &mut rng).unwrap();
        assert_abs_diff_eq!(stat.rho, 1.0, epsilon = 1e-14);
        let expected = stat.gamma / (stat.sigma * stat.sigma / n as f64 / ec).sqrt();
        assert_abs_diff_eq!(stat.t_stat, expected, epsilon = 1e-12);
    }

    #[test]
    fn zero_gamma_gives_zero_statistic() {
        let n = 6;
        let y = [1.0, 1.0, -1.0, -1.0, 2.0, -2.0];
        let stage = Stage::new(&y, DMatrix::from_element(n, 1, 1.0), vec![1.0; n]).unwrap();
        // orthogonal to both the intercept and the residuals
        let z = [1.0, -1.0, 1.0, -1.0, 0.0, 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let stat = evaluate_candidate(&stage, &z, &[1.0; 6], 0.95, ScaleMode::Mad, 200, &mut rng).unwrap();
        assert_eq!(stat.t_stat, 0.0);
        assert_eq!(two_sided_p(stat.t_stat), 1.0);
    }

    #[test]
    fn collinear_candidate_is_degenerate() {
        let n = 10;
        let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let design = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { x[i] });
        let y: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let stage = Stage::new(&y, design, vec![1.0; n]).unwrap();
        let z: Vec<f64> = x.iter().map(|v| 2.0 * v - 1.0).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = evaluate_candidate(&stage, &z, &[1.0; 10], 0.95, ScaleMode::Mad, 200, &mut rng);
        assert!(matches!(err, Err(Error::DegenerateCandidate(_))));
    }

    #[test]
    fn unit_weight_reduction_to_classical() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 300;
        let design = DMatrix::from_fn(n, 3, |_, j| if j == 0 { 1.0 } else { rng.sample(StandardNormal) });
        let y: Vec<f64> = (0..n).map(|i| design[(i, 1)] + rng.sample::<f64, _>(StandardNormal)).collect();
        let z: Vec<f64> = (0..n).map(|i| 0.4 * design[(i, 2)] + rng.sample::<f64, _>(StandardNormal)).collect();
        let ones = vec![1.0; n];
        let stage = Stage::new(&y, design.clone(), ones.clone()).unwrap();
        let ec = compute_ec(4.685);
        let robust = evaluate_candidate(&stage, &z, &ones, ec, ScaleMode::RootMeanSquare, n, &mut rng).unwrap();
        let resid = linalg::weighted_residuals(&design, &y, &ones).unwrap();
        let classical = evaluate_classical(&design, resid.as_slice(), &z, n, &mut rng).unwrap();
        assert!((robust.t_stat - ec.sqrt() * classical.t_stat).abs() < 1e-8);
    }
}
