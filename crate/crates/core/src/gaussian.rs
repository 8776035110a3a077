//! Multivariate Gaussian primitives: jittered Cholesky factorization, log
//! densities, sampling, and a stable log-sum-exp.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{DgmmError, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Relative jitter levels tried, in order, when a plain factorization fails.
const JITTER_LEVELS: [f64; 2] = [1e-8, 1e-6];

/// Lower Cholesky factor of `cov`.
///
/// A plain factorization is accepted when every squared pivot is at least
/// `1e-8 * mean(diag)`. Otherwise `eps * mean(diag) * I` is added with
/// `eps = 1e-8`, then `1e-6`, before giving up.
pub fn cholesky_lower(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = cov.nrows();
    if d == 0 || cov.ncols() != d {
        return Err(DgmmError::DimensionMismatch {
            expected: d,
            found: cov.ncols(),
        });
    }
    let mean_diag = cov.diagonal().mean();
    if !mean_diag.is_finite() || mean_diag <= 0.0 {
        return Err(DgmmError::NotPositiveDefinite);
    }
    let floor = JITTER_LEVELS[0] * mean_diag;
    if let Some(ch) = cov.clone().cholesky() {
        let l = ch.unpack();
        if l.diagonal().iter().all(|&v| v * v >= floor) {
            return Ok(l);
        }
    }
    for eps in JITTER_LEVELS {
        let mut jittered = cov.clone();
        for i in 0..d {
            jittered[(i, i)] += eps * mean_diag;
        }
        if let Some(ch) = jittered.cholesky() {
            return Ok(ch.unpack());
        }
    }
    Err(DgmmError::NotPositiveDefinite)
}

/// Inverse of a symmetric positive definite matrix through its (jittered)
/// Cholesky factor.
pub fn spd_inverse(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let l = cholesky_lower(cov)?;
    let d = l.nrows();
    let mut inv_l = DMatrix::identity(d, d);
    if !l.solve_lower_triangular_mut(&mut inv_l) {
        return Err(DgmmError::NotPositiveDefinite);
    }
    let inv = inv_l.transpose() * &inv_l;
    Ok(symmetrize(inv))
}

/// `(a + a^T) / 2`.
pub fn symmetrize(mut a: DMatrix<f64>) -> DMatrix<f64> {
    let d = a.nrows();
    for i in 0..d {
        for j in (i + 1)..d {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

/// Numerically stable `log(sum(exp(v)))`.
pub fn log_sum_exp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(DgmmError::Empty("log_sum_exp of an empty vector".into()));
    }
    Ok(log_sum_exp_unchecked(v))
}

pub(crate) fn log_sum_exp_unchecked(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max == f64::INFINITY || max.is_nan() {
        return max;
    }
    let sum: f64 = v.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// A multivariate normal distribution with a cached Cholesky factor.
#[derive(Debug, Clone)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    /// Strict lower triangle of `chol`, packed row by row.
    packed: Vec<f64>,
    inv_diag: Vec<f64>,
    log_norm: f64,
}

impl Gaussian {
    /// Builds `N(mean, cov)`. The covariance must be square, finite, and
    /// symmetric to a relative tolerance of `1e-10`.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(DgmmError::Empty("Gaussian mean".into()));
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(DgmmError::DimensionMismatch {
                expected: d,
                found: cov.nrows(),
            });
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(DgmmError::NonFinite("Gaussian parameters".into()));
        }
        let scale = cov.amax().max(f64::MIN_POSITIVE);
        for i in 0..d {
            for j in (i + 1)..d {
                if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-10 * scale {
                    return Err(DgmmError::InvalidParams(format!(
                        "covariance is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let chol = cholesky_lower(&cov)?;
        let log_det: f64 = 2.0 * chol.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let log_norm = -0.5 * (d as f64 * LN_2PI + log_det);
        let packed = (0..d).flat_map(|i| (0..i).map(move |j| (i, j))).map(|ij| chol[ij]).collect();
        let inv_diag = chol.diagonal().iter().map(|v| 1.0 / v).collect();
        Ok(Self {
            mean,
            cov,
            chol,
            packed,
            inv_diag,
            log_norm,
        })
    }

    /// Standard normal `N(0, I_d)`.
    pub fn standard(d: usize) -> Result<Self> {
        Self::new(DVector::zeros(d), DMatrix::identity(d, d))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Lower Cholesky factor of the (possibly jittered) covariance.
    pub fn cholesky(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// `log N(x; mean, cov)`.
    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(DgmmError::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DgmmError::NonFinite("log_density input".into()));
        }
        Ok(self.log_density_slice(x.as_slice()))
    }

    /// Unchecked hot-path variant; `x.len()` must equal `dim()`.
    pub(crate) fn log_density_slice(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let mut v = [0.0f64; 16];
        let mut heap;
        let buf: &mut [f64] = if d <= v.len() {
            &mut v[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        let mut quad = 0.0;
        let mut at = 0;
        for i in 0..d {
            let row = &self.packed[at..at + i];
            at += i;
            let dot: f64 = row.iter().zip(&buf[..i]).map(|(l, b)| l * b).sum();
            let w = (x[i] - self.mean[i] - dot) * self.inv_diag[i];
            buf[i] = w;
            quad += w * w;
        }
        self.log_norm - 0.5 * quad
    }

    /// `log N(x_i; mean, cov)` for every column `x_i` of `xt` (`dim x n`).
    pub(crate) fn log_density_columns(&self, xt: &DMatrix<f64>, out: &mut [f64]) {
        let mut w = xt.clone();
        for mut col in w.column_iter_mut() {
            col -= &self.mean;
        }
        self.chol.solve_lower_triangular_unchecked_mut(&mut w);
        for (o, col) in out.iter_mut().zip(w.column_iter()) {
            *o = self.log_norm - 0.5 * col.norm_squared();
        }
    }

    /// Draws `m` i.i.d. vectors.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, m: usize) -> Result<Vec<DVector<f64>>> {
        if m == 0 {
            return Err(DgmmError::InvalidArgument(
                "sample count must be at least 1".into(),
            ));
        }
        let d = self.dim();
        Ok((0..m)
            .map(|_| {
                let mut out = DVector::zeros(d);
                self.sample_into(rng, out.as_mut_slice());
                out
            })
            .collect())
    }

    /// Writes one draw into `out` (length `dim()`).
    pub(crate) fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let d = self.dim();
        let mut e = [0.0f64; 16];
        let mut heap;
        let noise: &mut [f64] = if d <= e.len() {
            &mut e[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        for v in noise.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        out.copy_from_slice(self.mean.as_slice());
        // column-wise so the inner loop runs over contiguous storage
        let l = self.chol.as_slice();
        for (j, &e) in noise.iter().enumerate() {
            let col = &l[j * d + j..(j + 1) * d];
            for (o, c) in out[j..].iter_mut().zip(col) {
                *o += c * e;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn column_densities_match_single_evaluations() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = DMatrix::from_fn(4, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
        let g = Gaussian::new(
            DVector::from_fn(4, |_, _| rng.sample::<f64, _>(StandardNormal)),
            &a * a.transpose() + DMatrix::identity(4, 4),
        )
        .unwrap();
        let xt = DMatrix::from_fn(4, 9, |_, _| 2.0 * rng.sample::<f64, _>(StandardNormal));
        let mut out = vec![0.0; 9];
        g.log_density_columns(&xt, &mut out);
        for (i, v) in out.iter().enumerate() {
            let x: Vec<f64> = xt.column(i).iter().copied().collect();
            assert!((v - g.log_density_slice(&x)).abs() < 1e-12);
        }
    }

    #[test]
    fn standard_normal_at_mode() {
        let g = Gaussian::standard(2).unwrap();
        let v = g.log_density(&DVector::zeros(2)).unwrap();
        assert!(close(v, -(2.0 * std::f64::consts::PI).ln(), 1e-12));
        assert!(close(v, -1.837877, 1e-6));
    }

    #[test]
    fn one_dimensional_closed_form() {
        let g = Gaussian::new(DVector::zeros(1), DMatrix::from_element(1, 1, 4.0)).unwrap();
        let v = g.log_density(&DVector::from_element(1, 2.0)).unwrap();
        let expected = -0.5 * (2.0 * std::f64::consts::PI * 4.0).ln() - 0.5;
        assert!(close(v, expected, 1e-12));
        assert!(close(v, -2.112086, 1e-6));
    }

    #[test]
    fn two_by_two_matches_explicit_inverse() {
        let mean = DVector::from_vec(vec![1.0, 2.0]);
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let g = Gaussian::new(mean, cov).unwrap();
        // explicit 2x2 algebra
        let (a, b, c) = (2.0, 0.5, 1.0);
        let det: f64 = a * c - b * b;
        let (dx, dy) = (0.0 - 1.0, 0.0 - 2.0);
        let quad = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det;
        let expected = -(2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln() - 0.5 * quad;
        let v = g.log_density(&DVector::zeros(2)).unwrap();
        assert!(close(v, expected, 1e-12), "{v} vs {expected}");
    }

    #[test]
    fn translation_invariance() {
        let cov = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.5, -0.2, 0.1, -0.2, 0.7]);
        let mu = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        let x = DVector::from_vec(vec![1.0, 0.2, -0.4]);
        let g1 = Gaussian::new(mu.clone(), cov.clone()).unwrap();
        let g0 = Gaussian::new(DVector::zeros(3), cov).unwrap();
        let a = g1.log_density(&x).unwrap();
        let b = g0.log_density(&(&x - &mu)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn density_errors() {
        let g = Gaussian::standard(2).unwrap();
        assert!(matches!(
            g.log_density(&DVector::zeros(3)),
            Err(DgmmError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            g.log_density(&DVector::from_vec(vec![f64::NAN, 0.0])),
            Err(DgmmError::NonFinite(_))
        ));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.3, 1.0]);
        assert!(Gaussian::new(DVector::zeros(2), asym).is_err());
    }

    #[test]
    fn monte_carlo_integral_is_one() {
        // uniform proposal over a broad box
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g1 = Gaussian::new(DVector::from_element(1, 0.3), DMatrix::from_element(1, 1, 0.8)).unwrap();
        let g2 = Gaussian::new(
            DVector::from_vec(vec![0.2, -0.1]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 0.6]),
        )
        .unwrap();
        let half: f64 = 8.0;
        let n = 200_000;
        for g in [&g1, &g2] {
            let d = g.dim();
            let vol = (2.0 * half).powi(d as i32);
            let mut acc = 0.0;
            let mut x = vec![0.0; d];
            for _ in 0..n {
                for v in x.iter_mut() {
                    *v = rng.random_range(-half..half);
                }
                acc += g.log_density_slice(&x).exp();
            }
            let integral = acc / n as f64 * vol;
            assert!((integral - 1.0).abs() < 0.02, "d={d}: {integral}");
        }
    }

    #[test]
    fn sample_moments() {
        let g = Gaussian::standard(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs = g.sample(&mut rng, 10_000).unwrap();
        let n = xs.len() as f64;
        let mean = xs.iter().fold(DVector::zeros(2), |a, x| a + x) / n;
        let cov = xs
            .iter()
            .fold(DMatrix::zeros(2, 2), |a, x| a + (x - &mean) * (x - &mean).transpose())
            / (n - 1.0);
        assert!(mean.amax() < 0.05);
        assert!((cov - DMatrix::<f64>::identity(2, 2)).amax() < 0.1);
    }

    #[test]
    fn sample_recovers_parameters_at_large_m() {
        let mu = DVector::from_vec(vec![1.0, -2.0]);
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, -0.6, -0.6, 0.5]);
        let g = Gaussian::new(mu.clone(), cov.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let m = 100_000;
        let xs = g.sample(&mut rng, m).unwrap();
        let n = m as f64;
        let mean = xs.iter().fold(DVector::zeros(2), |a, x| a + x) / n;
        let emp = xs
            .iter()
            .fold(DMatrix::zeros(2, 2), |a, x| a + (x - &mean) * (x - &mean).transpose())
            / (n - 1.0);
        for i in 0..2 {
            let se = (cov[(i, i)] / n).sqrt();
            assert!((mean[i] - mu[i]).abs() < 4.0 * se);
            for j in 0..2 {
                let se = ((cov[(i, i)] * cov[(j, j)] + cov[(i, j)].powi(2)) / n).sqrt();
                assert!((emp[(i, j)] - cov[(i, j)]).abs() < 4.0 * se);
            }
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let g = Gaussian::standard(3).unwrap();
        let a = g.sample(&mut ChaCha8Rng::seed_from_u64(1), 5).unwrap();
        let b = g.sample(&mut ChaCha8Rng::seed_from_u64(1), 5).unwrap();
        assert_eq!(a, b);
        assert!(g.sample(&mut ChaCha8Rng::seed_from_u64(1), 0).is_err());
    }

    #[test]
    fn degenerate_covariances() {
        // rank-deficient: draws come from the floored covariance
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let g = Gaussian::new(DVector::zeros(2), singular).unwrap();
        let xs = g.sample(&mut ChaCha8Rng::seed_from_u64(3), 100).unwrap();
        assert!(xs.iter().all(|x| x.iter().all(|v| v.is_finite())));
        // zero variance is rejected
        assert!(matches!(
            Gaussian::new(DVector::zeros(2), DMatrix::zeros(2, 2)),
            Err(DgmmError::NotPositiveDefinite)
        ));
    }

    #[test]
    fn log_sum_exp_cases() {
        let v = log_sum_exp(&[0.3f64.ln(), 0.7f64.ln()]).unwrap();
        assert!(v.abs() < 1e-15);
        let v = log_sum_exp(&[-1000.0, -1000.0]).unwrap();
        assert!(close(v, -1000.0 + 2f64.ln(), 1e-12));
        assert_eq!(log_sum_exp(&[0.0, f64::NEG_INFINITY]).unwrap(), 0.0);
        assert_eq!(
            log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]).unwrap(),
            f64::NEG_INFINITY
        );
        assert!(log_sum_exp(&[]).is_err());
    }

    #[test]
    fn inverse_via_cholesky() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let inv = spd_inverse(&a).unwrap();
        assert!((&a * &inv - DMatrix::<f64>::identity(3, 3)).amax() < 1e-12);
    }
}
