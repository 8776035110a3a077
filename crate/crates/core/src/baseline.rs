//! Flat full-covariance Gaussian mixture fitted by EM, used as a reference
//! point for the deep model.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{DgmmError, Result};
use crate::gaussian::{log_sum_exp_unchecked, symmetrize, Gaussian};
use crate::kmeans::kmeans;
use crate::model::checked_rows;
use crate::sem::derive_seed;
use crate::selection::bic;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmConfig {
    pub n_starts: usize,
    pub max_iters: usize,
    /// Stop when the log-likelihood gains less than `tol * |loglik|`.
    pub tol: f64,
    pub seed: u64,
    /// Added to every covariance diagonal after each M-step.
    pub reg: f64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            n_starts: 10,
            max_iters: 500,
            tol: 1e-8,
            seed: 0,
            reg: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub weights: Vec<f64>,
    pub components: Vec<Gaussian>,
    pub loglik: f64,
    pub n_params: usize,
    pub bic: f64,
    /// One-based MAP labels.
    pub labels: Vec<usize>,
    pub iterations: usize,
}

pub fn gmm_param_count(p: usize, k: usize) -> usize {
    k * (p + p * (p + 1) / 2) + k - 1
}

/// E-step: responsibilities (n x k) and log-likelihood.
fn responsibilities(rows: &[f64], p: usize, weights: &[f64], comps: &[Gaussian]) -> (DMatrix<f64>, f64) {
    let n = rows.len() / p;
    let k = comps.len();
    let log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    let mut resp = DMatrix::zeros(n, k);
    let mut buf = vec![0.0; k];
    let mut ll = 0.0;
    for i in 0..n {
        let x = &rows[i * p..(i + 1) * p];
        for j in 0..k {
            buf[j] = log_w[j] + comps[j].log_density_slice(x);
        }
        let norm = log_sum_exp_unchecked(&buf);
        ll += norm;
        for j in 0..k {
            resp[(i, j)] = (buf[j] - norm).exp();
        }
    }
    (resp, ll)
}

fn m_step(data: &DMatrix<f64>, resp: &DMatrix<f64>, reg: f64) -> Result<(Vec<f64>, Vec<Gaussian>)> {
    let (n, p) = (data.nrows(), data.ncols());
    let mut weights = Vec::with_capacity(resp.ncols());
    let mut comps = Vec::with_capacity(resp.ncols());
    for j in 0..resp.ncols() {
        let r = resp.column(j);
        let nj = r.sum().max(1e-12);
        let mean: DVector<f64> = data.tr_mul(&r) / nj;
        let mut centered = data.clone();
        for i in 0..n {
            let w = r[i].sqrt();
            for c in 0..p {
                centered[(i, c)] = (centered[(i, c)] - mean[c]) * w;
            }
        }
        let mut cov = symmetrize(centered.tr_mul(&centered) / nj);
        for c in 0..p {
            cov[(c, c)] += reg;
        }
        weights.push(nj / n as f64);
        comps.push(Gaussian::new(mean, cov)?);
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok((weights, comps))
}

fn run_start(data: &DMatrix<f64>, rows: &[f64], k: usize, config: &GmmConfig, seed: u64) -> Result<GmmFit> {
    let (n, p) = (data.nrows(), data.ncols());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let km = kmeans(rows, p, k, 25, &mut rng);
    let mut resp = DMatrix::zeros(n, k);
    for (i, &c) in km.labels.iter().enumerate() {
        resp[(i, c)] = 1.0;
    }
    let (mut weights, mut comps) = m_step(data, &resp, config.reg)?;
    let mut prev = f64::NEG_INFINITY;
    let mut iterations = 0;
    let mut ll = prev;
    for it in 0..config.max_iters {
        let (r, cur) = responsibilities(rows, p, &weights, &comps);
        ll = cur;
        iterations = it + 1;
        if !ll.is_finite() {
            return Err(DgmmError::FitFailed("non-finite log-likelihood".into()));
        }
        if ll - prev < config.tol * ll.abs() {
            break;
        }
        prev = ll;
        (weights, comps) = m_step(data, &r, config.reg)?;
    }
    let (resp, _) = responsibilities(rows, p, &weights, &comps);
    let labels = (0..n)
        .map(|i| {
            let row = resp.row(i);
            let mut best = 0;
            for j in 1..k {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best + 1
        })
        .collect();
    let n_params = gmm_param_count(p, k);
    Ok(GmmFit {
        weights,
        components: comps,
        loglik: ll,
        n_params,
        bic: bic(ll, n_params, n),
        labels,
        iterations,
    })
}

/// Best of `n_starts` k-means initialized EM runs.
pub fn fit_gmm(data: &DMatrix<f64>, k: usize, config: &GmmConfig) -> Result<GmmFit> {
    if k == 0 || config.n_starts == 0 {
        return Err(DgmmError::InvalidArgument("k and n_starts must be positive".into()));
    }
    if data.nrows() <= k {
        return Err(DgmmError::InvalidArgument(format!(
            "{} observations are too few for {k} components",
            data.nrows()
        )));
    }
    let rows = checked_rows(data, data.ncols())?;
    let mut best: Option<GmmFit> = None;
    let mut last_err = None;
    for s in 0..config.n_starts {
        match run_start(data, &rows, k, config, derive_seed(config.seed, s as u64)) {
            Ok(f) if best.as_ref().is_none_or(|b| f.loglik > b.loglik) => best = Some(f),
            Ok(_) => {}
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| DgmmError::FitFailed("no start succeeded".into())))
}
