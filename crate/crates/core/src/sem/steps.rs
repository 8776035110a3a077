//! Stochastic, expectation, and maximization steps for one layer.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{DgmmError, Result};
use crate::gaussian::spd_inverse;
use crate::model::{conditional_maps, sub_path_moments, ConditionalMap, DgmmParams, LayerComponent, PSI_FLOOR};

/// Latent draws, `n x m x dim`, stored contiguously per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Draws {
    pub n: usize,
    pub m: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl Draws {
    pub fn draw(&self, i: usize, rep: usize) -> &[f64] {
        let at = (i * self.m + rep) * self.dim;
        &self.values[at..at + self.dim]
    }
}

/// Per-observation first and second conditional moments of a latent layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub n: usize,
    pub dim: usize,
    /// Row-major `n x dim`.
    pub first: Vec<f64>,
    /// `n` consecutive row-major `dim x dim` blocks.
    pub second: Vec<f64>,
}

impl Moments {
    fn zeros(n: usize, dim: usize) -> Self {
        Self {
            n,
            dim,
            first: vec![0.0; n * dim],
            second: vec![0.0; n * dim * dim],
        }
    }

    pub fn first_at(&self, i: usize) -> DVector<f64> {
        DVector::from_row_slice(&self.first[i * self.dim..(i + 1) * self.dim])
    }

    pub fn second_at(&self, i: usize) -> DMatrix<f64> {
        let d2 = self.dim * self.dim;
        DMatrix::from_row_slice(self.dim, self.dim, &self.second[i * d2..(i + 1) * d2])
    }
}

/// Row-major copy of a matrix.
pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return None;
    }
    let mut target = rng.random::<f64>() * total;
    let mut last = None;
    for (t, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            if target < w {
                return Some(t);
            }
            target -= w;
            last = Some(t);
        }
    }
    last
}

pub(crate) fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Result<usize> {
    categorical(weights, rng)
        .ok_or_else(|| DgmmError::DegeneratePosterior("posterior row has no mass".into()))
}

/// Draws `m` replicates per observation from the conditional posterior of
/// one component, after drawing each observation's sub-path from
/// `tail_post` (row-major `n x tails`).
pub(crate) fn sample_component<R: Rng + ?Sized>(
    maps: &[ConditionalMap],
    z_prev: &[f64],
    dim_prev: usize,
    tail_post: &[f64],
    m: usize,
    rng: &mut R,
) -> Result<Draws> {
    let n = z_prev.len() / dim_prev;
    let tails = maps.len();
    let dim = maps[0].offset.len();
    let mut values = vec![0.0; n * m * dim];
    let mut rho = vec![0.0; dim];
    for i in 0..n {
        let t = sample_index(&tail_post[i * tails..(i + 1) * tails], rng)?;
        let map = &maps[t];
        map.mean_at(&z_prev[i * dim_prev..(i + 1) * dim_prev], &mut rho);
        for rep in 0..m {
            let at = (i * m + rep) * dim;
            let out = &mut values[at..at + dim];
            map.noise.sample_into(rng, out);
            for (o, r) in out.iter_mut().zip(&rho) {
                *o += r;
            }
        }
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(DgmmError::NonFinite("latent draws".into()));
    }
    Ok(Draws { n, m, dim, values })
}

/// Sampling and moment accumulation in one pass, for the fitting loop.
/// Consumes the generator exactly like [`sample_component`] and returns
/// the per-observation first moments with `sum_i w_i E[z z^T]`, without
/// storing the draws.
///
/// With `z = rho + L e`, the replicate average of `z z^T` is
/// `rho rho^T + (rho v^T + v rho^T) / m + L (sum e e^T) L^T / m` where
/// `v = L sum e`, so `L` is applied once per observation and the noise
/// outer products are pooled per sub-path into one matrix product.
pub(crate) fn sample_weighted_moments<R: Rng + ?Sized>(
    maps: &[ConditionalMap],
    z_prev: &[f64],
    dim_prev: usize,
    tail_post: &[f64],
    w: &[f64],
    m: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = z_prev.len() / dim_prev;
    let tails = maps.len();
    let d = maps[0].offset.len();
    let scale = 1.0 / m as f64;
    let mut first = vec![0.0; n * d];
    // lower triangle, row-major
    let mut common = vec![0.0; d * d];
    // noise draws scaled by sqrt(w_i / m), one row per draw, per sub-path
    let mut pooled: Vec<Vec<f64>> = vec![Vec::new(); tails];
    let mut rho = vec![0.0; d];
    let mut sum_e = vec![0.0; d];
    let mut v = vec![0.0; d];
    for i in 0..n {
        let t = sample_index(&tail_post[i * tails..(i + 1) * tails], rng)?;
        let map = &maps[t];
        map.mean_at(&z_prev[i * dim_prev..(i + 1) * dim_prev], &mut rho);
        rho.iter_mut().zip(map.noise.mean().iter()).for_each(|(r, mu)| *r += mu);
        sum_e.iter_mut().for_each(|x| *x = 0.0);
        let root = (w[i] * scale).sqrt();
        let rows = &mut pooled[t];
        for _ in 0..m {
            for s in sum_e.iter_mut() {
                let x: f64 = rng.sample(StandardNormal);
                *s += x;
                rows.push(root * x);
            }
        }
        let l = map.noise.cholesky();
        for a in 0..d {
            v[a] = (0..=a).map(|b| l[(a, b)] * sum_e[b]).sum();
        }
        let wi = w[i];
        let f = &mut first[i * d..(i + 1) * d];
        for a in 0..d {
            f[a] = rho[a] + v[a] * scale;
            for b in 0..=a {
                common[a * d + b] += wi * (rho[a] * rho[b] + (rho[a] * v[b] + v[a] * rho[b]) * scale);
            }
        }
    }
    let mut out = DMatrix::zeros(d, d);
    for a in 0..d {
        for b in 0..=a {
            out[(a, b)] = common[a * d + b];
            out[(b, a)] = common[a * d + b];
        }
    }
    for (map, rows) in maps.iter().zip(pooled) {
        if rows.is_empty() {
            continue;
        }
        // column-major d x draws, i.e. the transpose of the draw matrix
        let et = DMatrix::from_vec(d, rows.len() / d, rows);
        let gram = &et * et.transpose();
        let l = map.noise.cholesky();
        out += l * gram * l.transpose();
    }
    if first.iter().chain(out.iter()).any(|v| !v.is_finite()) {
        return Err(DgmmError::NonFinite("latent draws".into()));
    }
    Ok((first, out))
}

fn check_layer(params: &DgmmParams, l: usize, component: usize) -> Result<()> {
    let h = params.spec().depth();
    if l == 0 || l > h {
        return Err(DgmmError::InvalidArgument(format!("layer {l} outside 1..={h}")));
    }
    if component >= params.spec().components(l) {
        return Err(DgmmError::InvalidArgument(format!(
            "component {} outside layer {l}",
            component + 1
        )));
    }
    Ok(())
}

fn check_rows(m: &DMatrix<f64>, rows: usize, cols: usize, what: &str) -> Result<()> {
    if m.nrows() != rows {
        return Err(DgmmError::DimensionMismatch {
            expected: rows,
            found: m.nrows(),
        });
    }
    if m.ncols() != cols {
        return Err(DgmmError::InvalidArgument(format!(
            "{what} must have {cols} columns, found {}",
            m.ncols()
        )));
    }
    Ok(())
}

/// S-step for component `component` of layer `l`: for every observation a
/// sub-path is drawn from its row of `tail_posteriors`, then `m` replicates
/// of `z(l)` are drawn from the conditional posterior given `z(l-1)`.
pub fn s_step<R: Rng + ?Sized>(
    params: &DgmmParams,
    l: usize,
    component: usize,
    z_prev: &DMatrix<f64>,
    tail_posteriors: &DMatrix<f64>,
    rng: &mut R,
    m: usize,
) -> Result<Draws> {
    check_layer(params, l, component)?;
    let spec = params.spec();
    if m == 0 {
        return Err(DgmmError::InvalidArgument("replicate count must be at least 1".into()));
    }
    check_rows(z_prev, z_prev.nrows(), spec.dim(l - 1), "z_prev")?;
    check_rows(tail_posteriors, z_prev.nrows(), spec.n_tails(l), "tail_posteriors")?;
    let levels = sub_path_moments(params);
    let maps = conditional_maps(params, l, &levels[l])?;
    sample_component(
        &maps[component],
        &row_major(z_prev),
        spec.dim(l - 1),
        &row_major(tail_posteriors),
        m,
        rng,
    )
}

/// Monte-Carlo E-step: averages of draws and of their outer products.
pub fn e_step_moments(draws: &Draws) -> Moments {
    let (n, m, dim) = (draws.n, draws.m, draws.dim);
    let mut out = Moments::zeros(n, dim);
    let scale = 1.0 / m as f64;
    for i in 0..n {
        let first = &mut out.first[i * dim..(i + 1) * dim];
        let second = &mut out.second[i * dim * dim..(i + 1) * dim * dim];
        let chunk = &draws.values[i * m * dim..(i + 1) * m * dim];
        for z in chunk.chunks_exact(dim) {
            for (a, &za) in z.iter().enumerate() {
                first[a] += za;
                // lower triangle only; mirrored below
                let row = &mut second[a * dim..a * dim + a + 1];
                for (s, &zb) in row.iter_mut().zip(&z[..=a]) {
                    *s += za * zb;
                }
            }
        }
        first.iter_mut().for_each(|v| *v *= scale);
        for a in 0..dim {
            for b in 0..=a {
                let v = second[a * dim + b] * scale;
                second[a * dim + b] = v;
                second[b * dim + a] = v;
            }
        }
    }
    out
}

/// Closed-form moments: `E[z] = sum_t w_t rho_t` and
/// `E[z z^T] = sum_t w_t (xi_t + rho_t rho_t^T)` over sub-paths `t`.
pub(crate) fn exact_component_moments(
    maps: &[ConditionalMap],
    z_prev: &[f64],
    dim_prev: usize,
    tail_post: &[f64],
) -> Moments {
    let n = z_prev.len() / dim_prev;
    let tails = maps.len();
    let dim = maps[0].offset.len();
    let mut out = Moments::zeros(n, dim);
    let mut rho = vec![0.0; dim];
    for i in 0..n {
        let weights = &tail_post[i * tails..(i + 1) * tails];
        let total: f64 = weights.iter().sum();
        let x = &z_prev[i * dim_prev..(i + 1) * dim_prev];
        for (t, map) in maps.iter().enumerate() {
            let w = if total > 0.0 { weights[t] / total } else { 1.0 / tails as f64 };
            if w == 0.0 {
                continue;
            }
            map.mean_at(x, &mut rho);
            let xi = map.xi();
            for a in 0..dim {
                out.first[i * dim + a] += w * rho[a];
                for b in 0..dim {
                    out.second[(i * dim + a) * dim + b] += w * (xi[(a, b)] + rho[a] * rho[b]);
                }
            }
        }
    }
    out
}

/// Exact-moment alternative to [`s_step`] + [`e_step_moments`].
pub fn exact_moments(
    params: &DgmmParams,
    l: usize,
    component: usize,
    z_prev: &DMatrix<f64>,
    tail_posteriors: &DMatrix<f64>,
) -> Result<Moments> {
    check_layer(params, l, component)?;
    let spec = params.spec();
    check_rows(z_prev, z_prev.nrows(), spec.dim(l - 1), "z_prev")?;
    check_rows(tail_posteriors, z_prev.nrows(), spec.n_tails(l), "tail_posteriors")?;
    let levels = sub_path_moments(params);
    let maps = conditional_maps(params, l, &levels[l])?;
    Ok(exact_component_moments(
        &maps[component],
        &row_major(z_prev),
        spec.dim(l - 1),
        &row_major(tail_posteriors),
    ))
}

/// Closed-form update of one component given weights `w` (length `n`).
pub(crate) fn update_component(
    old: &LayerComponent,
    z_prev: &[f64],
    moments: &Moments,
    w: &[f64],
) -> Result<LayerComponent> {
    let r = moments.dim;
    let mut second = DMatrix::zeros(r, r);
    for (i, &wi) in w.iter().enumerate() {
        if wi == 0.0 {
            continue;
        }
        let ee = &moments.second[i * r * r..(i + 1) * r * r];
        for a in 0..r {
            for b in 0..r {
                second[(a, b)] += wi * ee[a * r + b];
            }
        }
    }
    update_from_sums(old, z_prev, &moments.first, &second, w)
}

/// Closed-form update from per-observation first moments (row-major
/// `n x r`) and the weighted sum of second moments `sum_i w_i E[z z^T]`.
pub(crate) fn update_from_sums(
    old: &LayerComponent,
    z_prev: &[f64],
    first: &[f64],
    second: &DMatrix<f64>,
    w: &[f64],
) -> Result<LayerComponent> {
    let d = old.eta.len();
    let r = second.nrows();
    let n = w.len();
    let total: f64 = w.iter().sum();
    if !(total > 1e-10) {
        return Ok(LayerComponent {
            weight: total.max(0.0) / n as f64,
            ..old.clone()
        });
    }
    let old_rows = row_major(&old.lambda);

    // eta from the current loadings
    let mut eta = vec![0.0; d];
    for i in 0..n {
        if w[i] == 0.0 {
            continue;
        }
        let x = &z_prev[i * d..(i + 1) * d];
        let e = &first[i * r..(i + 1) * r];
        for a in 0..d {
            let le: f64 = old_rows[a * r..(a + 1) * r].iter().zip(e).map(|(l, e)| l * e).sum();
            eta[a] += w[i] * (x[a] - le);
        }
    }
    eta.iter_mut().for_each(|v| *v /= total);

    // lambda from the updated eta
    let mut cross = vec![0.0; d * r];
    for i in 0..n {
        if w[i] == 0.0 {
            continue;
        }
        let x = &z_prev[i * d..(i + 1) * d];
        let e = &first[i * r..(i + 1) * r];
        for a in 0..d {
            let c = w[i] * (x[a] - eta[a]);
            for (acc, &eb) in cross[a * r..(a + 1) * r].iter_mut().zip(e) {
                *acc += c * eb;
            }
        }
    }
    let cross = DMatrix::from_row_slice(d, r, &cross);
    let second = crate::gaussian::symmetrize(second.clone());
    let lambda: DMatrix<f64> = &cross * spd_inverse(&second)?;
    let rows = row_major(&lambda);

    // diagonal psi from the updated eta and lambda
    let mut psi = vec![0.0; d];
    for i in 0..n {
        if w[i] == 0.0 {
            continue;
        }
        let x = &z_prev[i * d..(i + 1) * d];
        let e = &first[i * r..(i + 1) * r];
        for a in 0..d {
            let res = x[a] - eta[a];
            let le: f64 = rows[a * r..(a + 1) * r].iter().zip(e).map(|(l, e)| l * e).sum();
            psi[a] += w[i] * (res * res - res * le);
        }
    }
    psi.iter_mut().for_each(|v| *v = (*v / total).max(PSI_FLOOR));

    Ok(LayerComponent {
        weight: total / n as f64,
        eta: DVector::from_vec(eta),
        lambda,
        psi: DVector::from_vec(psi),
    })
}

/// Renormalizes weights so they sum to one.
pub(crate) fn normalize_weights(comps: &mut [LayerComponent]) {
    let total: f64 = comps.iter().map(|c| c.weight).sum();
    if total > 0.0 {
        comps.iter_mut().for_each(|c| c.weight /= total);
    }
}

/// M-step for layer `l`: updates `eta`, then `lambda`, then `psi`, then
/// the weight of every component. `moments[j]` holds the conditional
/// moments under component `j`; `responsibilities` is `n x k_l` with rows
/// summing to one.
pub fn m_step_layer(
    params: &DgmmParams,
    l: usize,
    z_prev: &DMatrix<f64>,
    moments: &[Moments],
    responsibilities: &DMatrix<f64>,
) -> Result<Vec<LayerComponent>> {
    let spec = params.spec();
    check_layer(params, l, 0)?;
    let k = spec.components(l);
    let n = z_prev.nrows();
    check_rows(z_prev, n, spec.dim(l - 1), "z_prev")?;
    check_rows(responsibilities, n, k, "responsibilities")?;
    if moments.len() != k || moments.iter().any(|m| m.n != n || m.dim != spec.dim(l)) {
        return Err(DgmmError::InvalidArgument(format!(
            "expected {k} moment sets of {n} x {}",
            spec.dim(l)
        )));
    }
    let rows = row_major(z_prev);
    let mut out = params
        .layer(l)
        .iter()
        .enumerate()
        .map(|(j, old)| {
            let w: Vec<f64> = responsibilities.column(j).iter().copied().collect();
            update_component(old, &rows, &moments[j], &w)
        })
        .collect::<Result<Vec<_>>>()?;
    normalize_weights(&mut out);
    Ok(out)
}
