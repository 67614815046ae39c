//! Dense least-squares kernel.
//!
//! Everything here works on small column counts (the selected set plus an
//! intercept) and many rows, so normal equations are the primary route: the
//! Gram matrix is factored by Cholesky and only falls back to an SVD of the
//! weighted design when the Cholesky factor looks ill-conditioned.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Reciprocal condition estimate below which a factorization is rejected.
pub const RCOND_FLOOR: f64 = 1e-12;

/// Relative floor on `zᵀz` for a usable candidate column.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Validates a weight vector against a row count.
pub fn check_weights(w: &[f64], n: usize) -> Result<()> {
    if w.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} rows",
            w.len(),
            n
        )));
    }
    if let Some(bad) = w.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::DimensionMismatch(format!("invalid weight {bad}")));
    }
    Ok(())
}

/// `diag(s) x`.
pub fn scale_rows(x: &DMatrix<f64>, s: &[f64]) -> DMatrix<f64> {
    let mut out = x.clone();
    for mut col in out.column_iter_mut() {
        for (v, si) in col.iter_mut().zip(s) {
            *v *= si;
        }
    }
    out
}

/// Copies the listed rows of `x` into a new matrix, in the listed order.
pub fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

fn cholesky_rcond(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
    for i in 0..l.nrows() {
        let d = l[(i, i)].abs();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if hi == 0.0 || !lo.is_finite() {
        return 0.0;
    }
    (lo / hi).powi(2)
}

/// Factored normal equations `xwᵀ xw`, reusable for several right-hand sides.
pub enum NormalFactor {
    Cholesky(Cholesky<f64, Dyn>),
    /// Thin SVD factors of `xw`.
    Spectral {
        u: DMatrix<f64>,
        s: DVector<f64>,
        v: DMatrix<f64>,
        s2: DVector<f64>,
    },
}

impl NormalFactor {
    pub fn new(xw: &DMatrix<f64>) -> Result<Self> {
        let gram = xw.tr_mul(xw);
        if let Some(chol) = gram.cholesky() {
            if cholesky_rcond(&chol) >= RCOND_FLOOR {
                return Ok(Self::Cholesky(chol));
            }
        }
        let svd = xw.clone().svd(true, true);
        let s = &svd.singular_values;
        let smax = s.max();
        let smin = s.min();
        let rcond = if smax > 0.0 { smin / smax } else { 0.0 };
        if !(rcond >= RCOND_FLOOR) {
            return Err(Error::RankDeficient { rcond });
        }
        let s2 = s.map(|x| x * x);
        let s = s.clone();
        let v = svd.v_t.expect("requested V").transpose();
        let u = svd.u.expect("requested U");
        Ok(Self::Spectral { u, s, v, s2 })
    }

    /// Solves `(xwᵀ xw) β = rhs`.
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::Cholesky(chol) => chol.solve(rhs),
            Self::Spectral { v, s2, .. } => {
                let mut t = v.tr_mul(rhs);
                t.component_div_assign(s2);
                v * t
            }
        }
    }

    /// Least-squares coefficients of `yw` on the factored `xw`. The spectral
    /// route works from `Uᵀyw` and never squares the condition number.
    pub fn solve_ls(&self, xw: &DMatrix<f64>, yw: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::Cholesky(chol) => chol.solve(&xw.tr_mul(yw)),
            Self::Spectral { u, s, v, .. } => {
                let mut t = u.tr_mul(yw);
                t.component_div_assign(s);
                v * t
            }
        }
    }

    /// `(xwᵀ xw)⁻¹`.
    pub fn inverse(&self) -> DMatrix<f64> {
        match self {
            Self::Cholesky(chol) => chol.inverse(),
            Self::Spectral { v, s2, .. } => {
                let scaled = DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] / s2[j]);
                scaled * v.transpose()
            }
        }
    }
}

/// Weighted least squares `β = (XʷᵀXʷ)⁻¹Xʷᵀyʷ` with `Xʷ = diag(√w)X`.
pub fn weighted_ls(x: &DMatrix<f64>, y: &[f64], w: &[f64]) -> Result<DVector<f64>> {
    let (xw, yw) = weighted_system(x, y, w)?;
    let factor = NormalFactor::new(&xw)?;
    Ok(factor.solve_ls(&xw, &yw))
}

/// Residuals `yʷ − Xʷβ` of the weighted fit, on the weighted scale.
pub fn weighted_residuals(x: &DMatrix<f64>, y: &[f64], w: &[f64]) -> Result<DVector<f64>> {
    let (xw, yw) = weighted_system(x, y, w)?;
    let factor = NormalFactor::new(&xw)?;
    let beta = factor.solve_ls(&xw, &yw);
    Ok(yw - xw * beta)
}

fn weighted_system(x: &DMatrix<f64>, y: &[f64], w: &[f64]) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "response has {} rows, design has {}",
            y.len(),
            n
        )));
    }
    check_weights(w, n)?;
    if x.ncols() == 0 || x.ncols() > n {
        return Err(Error::DimensionMismatch(format!(
            "design is {}x{}",
            n,
            x.ncols()
        )));
    }
    let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let xw = scale_rows(x, &sw);
    let yw = DVector::from_iterator(n, y.iter().zip(&sw).map(|(a, b)| a * b));
    Ok((xw, yw))
}

/// Fraction of `zs` explained by the column space of `xs`: `zᵀHz / zᵀz`,
/// clamped to `[0, 1]`.
pub fn projection_quadform(xs: &DMatrix<f64>, zs: &[f64]) -> Result<f64> {
    let m = xs.nrows();
    if zs.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "candidate has {} rows, design has {}",
            zs.len(),
            m
        )));
    }
    if xs.ncols() == 0 || xs.ncols() > m {
        return Err(Error::DimensionMismatch(format!(
            "subsample design is {}x{}",
            m,
            xs.ncols()
        )));
    }
    let zz: f64 = zs.iter().map(|v| v * v).sum();
    if !(zz > DEGENERATE_NORM * m as f64) {
        return Err(Error::DegenerateCandidate(format!(
            "candidate norm {zz:.3e} on {m} rows"
        )));
    }
    let z = DVector::from_column_slice(zs);
    let quad = match NormalFactor::new(xs)? {
        NormalFactor::Spectral { u, .. } => u.tr_mul(&z).norm_squared(),
        factor => {
            let b = xs.tr_mul(&z);
            b.dot(&factor.solve(&b))
        }
    };
    Ok((quad / zz).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng as _, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, q: usize, intercept: bool) -> DMatrix<f64> {
        DMatrix::from_fn(n, q, |_, j| {
            if intercept && j == 0 {
                1.0
            } else {
                rng.sample(StandardNormal)
            }
        })
    }

    /// Independent route: explicit `diag(√w)` and a dense inverse.
    fn brute_wls(x: &DMatrix<f64>, y: &[f64], w: &[f64]) -> DVector<f64> {
        let d = DMatrix::from_diagonal(&DVector::from_iterator(w.len(), w.iter().map(|v| v.sqrt())));
        let xw = &d * x;
        let yw = &d * DVector::from_column_slice(y);
        let inv = (xw.transpose() * &xw).try_inverse().unwrap();
        inv * xw.transpose() * yw
    }

    #[test]
    fn intercept_only_gives_mean() {
        let x = DMatrix::from_element(3, 1, 1.0);
        let beta = weighted_ls(&x, &[1.0, 2.0, 3.0], &[1.0; 3]).unwrap();
        assert_abs_diff_eq!(beta[0], 2.0, epsilon = 1e-14);
        let r = weighted_residuals(&x, &[1.0, 2.0, 3.0], &[1.0; 3]).unwrap();
        assert_abs_diff_eq!(r[0], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(r[1], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(r[2], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_matrix(&mut rng, 50, 5, true);
        let y: Vec<f64> = (0..50).map(|_| rng.sample(StandardNormal)).collect();
        let w: Vec<f64> = (0..50).map(|_| rng.random_range(0.01..=1.0)).collect();
        let beta = weighted_ls(&x, &y, &w).unwrap();
        let oracle = brute_wls(&x, &y, &w);
        for (a, b) in beta.iter().zip(oracle.iter()) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
        }
    }

    #[test]
    fn exact_fit_has_zero_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_matrix(&mut rng, 30, 3, true);
        let y = &x * DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let w: Vec<f64> = (0..30).map(|_| rng.random_range(0.1..=1.0)).collect();
        let r = weighted_residuals(&x, y.as_slice(), &w).unwrap();
        assert!(r.amax() < 1e-12);
    }

    #[test]
    fn residuals_orthogonal_to_weighted_design() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_matrix(&mut rng, 80, 4, true);
        let y: Vec<f64> = (0..80).map(|_| rng.sample(StandardNormal)).collect();
        let w: Vec<f64> = (0..80).map(|_| rng.random_range(0.0..=1.0)).collect();
        let r = weighted_residuals(&x, &y, &w).unwrap();
        let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
        let xw = scale_rows(&x, &sw);
        let ynorm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(xw.tr_mul(&r).amax() <= 1e-10 * ynorm);
    }

    #[test]
    fn collinear_design_is_rank_deficient() {
        let x = DMatrix::from_fn(10, 2, |i, _| i as f64);
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert!(matches!(
            weighted_ls(&x, &y, &[1.0; 10]),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn zero_weights_reduce_rank() {
        let x = DMatrix::from_fn(4, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let err = weighted_ls(&x, &[0.0, 1.0, 2.0, 3.0], &[1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(err, Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn near_collinear_falls_back_to_svd() {
        // Gram condition ~1e14: Cholesky is refused, the SVD route still solves it.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 60;
        let a: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let e: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let x = DMatrix::from_fn(n, 3, |i, j| match j {
            0 => 1.0,
            1 => a[i],
            _ => a[i] + 1e-7 * e[i],
        });
        let xw = x.clone();
        assert!(matches!(NormalFactor::new(&xw).unwrap(), NormalFactor::Spectral { .. }));
        let y: Vec<f64> = (0..n).map(|i| 1.0 + 2.0 * a[i] + 1e-7 * e[i]).collect();
        let beta = weighted_ls(&x, &y, &vec![1.0; n]).unwrap();
        assert_abs_diff_eq!(beta[0], 1.0, epsilon = 1e-5);
        assert_abs_diff_eq!(beta[1], 1.0, epsilon = 1e-3);
        assert_abs_diff_eq!(beta[2], 1.0, epsilon = 1e-3);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let x = DMatrix::from_element(3, 1, 1.0);
        assert!(matches!(
            weighted_ls(&x, &[1.0, 2.0], &[1.0; 3]),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            weighted_ls(&x, &[1.0, 2.0, 3.0], &[1.0, -1.0, 1.0]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn quadform_edge_cases() {
        let xs = DMatrix::from_fn(4, 2, |i, j| match (i, j) {
            (_, 0) => 1.0,
            (i, _) => [1.0, -1.0, 1.0, -1.0][i],
        });
        // orthogonal to both columns
        assert_abs_diff_eq!(projection_quadform(&xs, &[1.0, 1.0, -1.0, -1.0]).unwrap(), 0.0, epsilon = 1e-15);
        // in the span
        assert_abs_diff_eq!(projection_quadform(&xs, &[1.0, -1.0, 1.0, -1.0]).unwrap(), 1.0, epsilon = 1e-15);
        assert!(matches!(
            projection_quadform(&xs, &[0.0; 4]),
            Err(Error::DegenerateCandidate(_))
        ));
    }

    #[test]
    fn quadform_matches_explicit_hat_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let xs = random_matrix(&mut rng, 200, 4, true);
        let z: Vec<f64> = (0..200).map(|_| rng.sample(StandardNormal)).collect();
        let h = &xs * (xs.transpose() * &xs).try_inverse().unwrap() * xs.transpose();
        let zv = DVector::from_column_slice(&z);
        let oracle = (zv.transpose() * h * &zv)[0] / zv.dot(&zv);
        assert_abs_diff_eq!(projection_quadform(&xs, &z).unwrap(), oracle, epsilon = 1e-10);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn weight_scaling_leaves_beta_unchanged(seed in 0u64..10_000, k in 0.01f64..100.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = random_matrix(&mut rng, 40, 3, true);
                let y: Vec<f64> = (0..40).map(|_| rng.sample(StandardNormal)).collect();
                let w: Vec<f64> = (0..40).map(|_| rng.random_range(0.05..=1.0)).collect();
                let scaled: Vec<f64> = w.iter().map(|v| v * k).collect();
                let a = weighted_ls(&x, &y, &w).unwrap();
                let b = weighted_ls(&x, &y, &scaled).unwrap();
                for (u, v) in a.iter().zip(b.iter()) {
                    prop_assert!((u - v).abs() <= 1e-10 * u.abs().max(1.0));
                }
            }

            #[test]
            fn unit_weights_reproduce_ols(seed in 0u64..10_000) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = random_matrix(&mut rng, 30, 4, true);
                let y: Vec<f64> = (0..30).map(|_| rng.sample(StandardNormal)).collect();
                let beta = weighted_ls(&x, &y, &[1.0; 30]).unwrap();
                let ols = x.clone().svd(true, true).solve(&DVector::from_column_slice(&y), 1e-14).unwrap();
                for (u, v) in beta.iter().zip(ols.iter()) {
                    prop_assert!((u - v).abs() <= 1e-10 * v.abs().max(1.0));
                }
            }

            #[test]
            fn quadform_is_scale_invariant(seed in 0u64..10_000, k in prop_oneof![-50.0f64..-0.02, 0.02f64..50.0]) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let xs = random_matrix(&mut rng, 25, 3, true);
                let z: Vec<f64> = (0..25).map(|_| rng.sample(StandardNormal)).collect();
                let zk: Vec<f64> = z.iter().map(|v| v * k).collect();
                let a = projection_quadform(&xs, &z).unwrap();
                let b = projection_quadform(&xs, &zk).unwrap();
                prop_assert!((a - b).abs() <= 1e-12);
                prop_assert!((0.0..=1.0).contains(&a));
            }
        }
    }
}
