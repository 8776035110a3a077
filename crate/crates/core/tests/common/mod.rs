//! Helpers shared by the integration tests: random models and an
//! independent dense-algebra evaluation of the collapsed mixture.
#![allow(dead_code)]

use dgmm::{DgmmParams, DgmmSpec, LayerComponent, Path};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Random spec with `p <= p_max`, `h <= h_max`, `k_l <= k_max`.
pub fn random_spec<R: Rng>(rng: &mut R, p_max: usize, h_max: usize, k_max: usize) -> DgmmSpec {
    let h = rng.random_range(1..=h_max.min(p_max - 1));
    let p = rng.random_range(h + 1..=p_max);
    // strictly decreasing chain below p
    let mut pool: Vec<usize> = (1..p).collect();
    let mut r = Vec::with_capacity(h);
    for _ in 0..h {
        let i = rng.random_range(0..pool.len());
        r.push(pool.swap_remove(i));
    }
    r.sort_unstable_by(|a, b| b.cmp(a));
    let k = (0..h).map(|_| rng.random_range(1..=k_max)).collect();
    DgmmSpec::new(p, k, r).unwrap()
}

pub fn random_params<R: Rng>(spec: &DgmmSpec, rng: &mut R) -> DgmmParams {
    let layers = (1..=spec.depth())
        .map(|l| {
            let k = spec.components(l);
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let (d, r) = (spec.dim(l - 1), spec.dim(l));
            let mut comps: Vec<LayerComponent> = raw
                .iter()
                .map(|w| LayerComponent {
                    weight: w / total,
                    eta: DVector::from_fn(d, |_, _| normal(rng)),
                    lambda: DMatrix::from_fn(d, r, |_, _| 0.7 * normal(rng)),
                    psi: DVector::from_fn(d, |_, _| rng.random_range(0.2..1.0)),
                })
                .collect();
            // make the weights sum to one exactly enough for validation
            let s: f64 = comps.iter().map(|c| c.weight).sum();
            comps[0].weight += 1.0 - s;
            comps
        })
        .collect();
    DgmmParams::new(spec.clone(), layers).unwrap()
}

/// Mean and covariance of `z(level)` along the sub-path `path[level..]`,
/// by direct expansion from the innermost layer.
pub fn dense_marginal(params: &DgmmParams, path: &Path, level: usize) -> (DVector<f64>, DMatrix<f64>) {
    let spec = params.spec();
    let h = spec.depth();
    let mut mean = DVector::zeros(spec.dim(h));
    let mut cov = DMatrix::identity(spec.dim(h), spec.dim(h));
    for l in (level + 1..=h).rev() {
        let c = &params.layer(l)[path.0[l - 1]];
        mean = &c.eta + &c.lambda * &mean;
        cov = &c.lambda * &cov * c.lambda.transpose() + DMatrix::from_diagonal(&c.psi);
    }
    (mean, cov)
}

pub fn path_weight(params: &DgmmParams, path: &Path) -> f64 {
    path.0
        .iter()
        .enumerate()
        .map(|(l, &s)| params.layer(l + 1)[s].weight)
        .product()
}

/// Log density through an LU determinant and explicit inverse.
pub fn dense_log_density(mean: &DVector<f64>, cov: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    let d = mean.len() as f64;
    let det = cov.clone().lu().determinant();
    let inv = cov.clone().try_inverse().unwrap();
    let e = x - mean;
    let quad = (e.transpose() * inv * &e)[(0, 0)];
    -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + det.ln() + quad)
}

/// Log-likelihood of the flat mixture over every path.
pub fn dense_log_likelihood(params: &DgmmParams, data: &DMatrix<f64>) -> f64 {
    let spec = params.spec();
    let comps: Vec<(f64, DVector<f64>, DMatrix<f64>)> = (0..spec.n_paths())
        .map(|i| {
            let path = Path::from_index(spec, i);
            let (m, c) = dense_marginal(params, &path, 0);
            (path_weight(params, &path), m, c)
        })
        .collect();
    data.row_iter()
        .map(|row| {
            let x = row.transpose();
            let terms: Vec<f64> = comps
                .iter()
                .map(|(w, m, c)| w.ln() + dense_log_density(m, c, &x))
                .collect();
            let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln()
        })
        .sum()
}
