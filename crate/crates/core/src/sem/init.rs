//! Starting values: k-means++ clustering at each layer, probabilistic PCA
//! within each cluster, and posterior-mean scores passed to the next layer.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::error::{DgmmError, Result};
use crate::gaussian::spd_inverse;
use crate::kmeans::kmeans;
use crate::model::{DgmmParams, DgmmSpec, LayerComponent, PSI_FLOOR};
use crate::sem::steps::row_major;

const LLOYD_ITERS: usize = 25;

fn covariance(rows: &[f64], dim: usize, members: &[usize], mean: &DVector<f64>) -> DMatrix<f64> {
    let mut cov = DMatrix::zeros(dim, dim);
    for &i in members {
        let x = &rows[i * dim..(i + 1) * dim];
        for a in 0..dim {
            let da = x[a] - mean[a];
            for b in 0..=a {
                cov[(a, b)] += da * (x[b] - mean[b]);
            }
        }
    }
    let n = members.len().max(1) as f64;
    for a in 0..dim {
        for b in 0..=a {
            cov[(a, b)] /= n;
            cov[(b, a)] = cov[(a, b)];
        }
    }
    cov
}

fn mean_of(rows: &[f64], dim: usize, members: &[usize]) -> DVector<f64> {
    let mut m = DVector::zeros(dim);
    for &i in members {
        for a in 0..dim {
            m[a] += rows[i * dim + a];
        }
    }
    m / members.len().max(1) as f64
}

/// Factor-analytic fit of a covariance by probabilistic PCA: the top `r`
/// eigen-directions scaled by the square root of their excess variance,
/// with residual variances as `psi`.
fn ppca(cov: &DMatrix<f64>, r: usize) -> (DMatrix<f64>, DVector<f64>) {
    let d = cov.nrows();
    let eig = SymmetricEigen::new(cov.clone());
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let noise = if d > r {
        order[r..].iter().map(|&i| eig.eigenvalues[i].max(0.0)).sum::<f64>() / (d - r) as f64
    } else {
        0.0
    };
    let scale_floor = 1e-3 * cov.trace().max(0.0) / d as f64;
    let lambda = DMatrix::from_fn(d, r, |a, j| {
        let ev = eig.eigenvalues[order[j]];
        eig.eigenvectors[(a, order[j])] * (ev - noise).max(scale_floor).sqrt()
    });
    let fitted = &lambda * lambda.transpose();
    let psi = DVector::from_fn(d, |a, _| {
        (cov[(a, a)] - fitted[(a, a)]).max(scale_floor).max(PSI_FLOOR)
    });
    (lambda, psi)
}

/// Initializes one layer from `rows` (row-major, `dim` columns); returns
/// the components and the row-major scores for the next layer.
fn init_layer<R: Rng + ?Sized>(
    rows: &[f64],
    dim: usize,
    k: usize,
    r: usize,
    rng: &mut R,
) -> Result<(Vec<LayerComponent>, Vec<f64>)> {
    let n = rows.len() / dim;
    let km = kmeans(rows, dim, k, LLOYD_ITERS, rng);
    let everyone: Vec<usize> = (0..n).collect();
    let global_mean = mean_of(rows, dim, &everyone);
    let global_cov = covariance(rows, dim, &everyone, &global_mean);

    let mut comps = Vec::with_capacity(k);
    let mut scores = vec![0.0; n * r];
    for j in 0..k {
        let members: Vec<usize> = (0..n).filter(|&i| km.labels[i] == j).collect();
        let eta = if members.is_empty() {
            DVector::from_row_slice(km.center(j))
        } else {
            mean_of(rows, dim, &members)
        };
        let cov = if members.len() > r + 1 {
            covariance(rows, dim, &members, &eta)
        } else {
            global_cov.clone()
        };
        let (lambda, psi) = ppca(&cov, r);

        // posterior mean of the latent under this component
        let mut lt_psi_inv = lambda.transpose();
        for (col, &p) in psi.iter().enumerate() {
            lt_psi_inv.column_mut(col).scale_mut(1.0 / p);
        }
        let post_cov = spd_inverse(&(DMatrix::identity(r, r) + &lt_psi_inv * &lambda))?;
        let gain = post_cov * lt_psi_inv;
        for &i in &members {
            let x = DVector::from_row_slice(&rows[i * dim..(i + 1) * dim]) - &eta;
            let z = &gain * x;
            scores[i * r..(i + 1) * r].copy_from_slice(z.as_slice());
        }
        comps.push(LayerComponent {
            weight: 1.0 / k as f64,
            eta,
            lambda,
            psi,
        });
    }
    Ok((comps, scores))
}

/// Starting parameters for one chain. Requires at least `max(k_l) + 1`
/// observations.
pub fn init_params<R: Rng + ?Sized>(spec: &DgmmSpec, data: &DMatrix<f64>, rng: &mut R) -> Result<DgmmParams> {
    let n = data.nrows();
    if data.ncols() != spec.p() {
        return Err(DgmmError::DimensionMismatch {
            expected: spec.p(),
            found: data.ncols(),
        });
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(DgmmError::NonFinite("data".into()));
    }
    let k_max = spec.k().iter().copied().max().unwrap_or(1);
    if n < k_max + 1 {
        return Err(DgmmError::InvalidArgument(format!(
            "{n} observations cannot initialize {k_max} components"
        )));
    }
    let mut rows = row_major(data);
    let mut dim = spec.p();
    let mut layers = Vec::with_capacity(spec.depth());
    for l in 1..=spec.depth() {
        let r = spec.dim(l);
        let (comps, scores) = init_layer(&rows, dim, spec.components(l), r, rng)?;
        layers.push(comps);
        rows = scores;
        dim = r;
    }
    DgmmParams::new(spec.clone(), layers)
}
