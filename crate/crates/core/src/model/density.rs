use nalgebra::{DMatrix, DVector};

use super::{DgmmParams, DgmmSpec, Path};
use crate::error::{DgmmError, Result};
use crate::gaussian::{log_sum_exp_unchecked, spd_inverse, symmetrize, Gaussian};

/// All paths through the network with their weights `pi_s = prod_l pi_{s_l}`.
#[derive(Debug, Clone)]
pub struct PathTable {
    pub paths: Vec<Path>,
    pub weights: Vec<f64>,
}

impl PathTable {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

/// The Gaussian obtained by integrating out every latent layer along a path.
#[derive(Debug, Clone)]
pub struct CollapsedComponent {
    pub path: Path,
    pub weight: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Mixture component of the marginal of `z(level)`, indexed by the sub-path
/// `(s_{level+1}, ..., s_h)`.
#[derive(Debug, Clone)]
pub struct SubPathComponent {
    pub level: usize,
    pub sub_path: Path,
    pub weight: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

pub fn enumerate_paths(params: &DgmmParams) -> PathTable {
    let spec = params.spec();
    let n = spec.n_paths();
    let mut paths = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for idx in 0..n {
        let path = Path::from_index(spec, idx);
        let w = path
            .0
            .iter()
            .enumerate()
            .map(|(l, &s)| params.layer(l + 1)[s].weight)
            .product();
        paths.push(path);
        weights.push(w);
    }
    PathTable { paths, weights }
}

/// Mean and covariance of `y` given a path, by nesting the affine maps from
/// the innermost layer outwards. The innermost latent `z(h) ~ N(0, I)`
/// contributes the full loading-product Gram term.
pub fn collapse_path(params: &DgmmParams, path: &Path) -> Result<CollapsedComponent> {
    let spec = params.spec();
    path.validate(spec)?;
    let h = spec.depth();
    let rh = spec.dim(h);
    let mut mean = DVector::zeros(rh);
    let mut cov = DMatrix::identity(rh, rh);
    let mut weight = 1.0;
    for l in (1..=h).rev() {
        let c = &params.layer(l)[path.0[l - 1]];
        (mean, cov) = push_through(c, &mean, &cov);
        weight *= c.weight;
    }
    Ok(CollapsedComponent {
        path: path.clone(),
        weight,
        mean,
        cov,
    })
}

fn push_through(
    c: &super::LayerComponent,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let m = &c.eta + &c.lambda * mean;
    let mut s = &c.lambda * cov * c.lambda.transpose();
    for i in 0..s.nrows() {
        s[(i, i)] += c.psi[i];
    }
    (m, symmetrize(s))
}

/// Moments of `z(level)` for every sub-path `(s_{level+1}, ..., s_h)` in
/// lexicographic order: `(weight, mean, cov)`. Level `h` is the standard
/// normal prior.
pub(crate) fn sub_path_moments(
    params: &DgmmParams,
) -> Vec<Vec<(f64, DVector<f64>, DMatrix<f64>)>> {
    let spec = params.spec();
    let h = spec.depth();
    let rh = spec.dim(h);
    let mut levels = vec![Vec::new(); h + 1];
    levels[h] = vec![(1.0, DVector::zeros(rh), DMatrix::identity(rh, rh))];
    for level in (0..h).rev() {
        let layer = params.layer(level + 1);
        let below = &levels[level + 1];
        let mut out = Vec::with_capacity(layer.len() * below.len());
        for c in layer {
            for (w, m, s) in below {
                let (mm, ss) = push_through(c, m, s);
                out.push((c.weight * w, mm, ss));
            }
        }
        levels[level] = out;
    }
    levels
}

/// Marginal mixture of `z(level)` for `0 <= level < h`. Level 0 is the
/// collapsed mixture over all paths.
pub fn marginal_components(params: &DgmmParams, level: usize) -> Result<Vec<SubPathComponent>> {
    let spec = params.spec();
    let h = spec.depth();
    if level >= h {
        return Err(DgmmError::InvalidArgument(format!(
            "marginal level {level} outside 0..{h}"
        )));
    }
    let mut levels = sub_path_moments(params);
    let comps = std::mem::take(&mut levels[level]);
    let tail_k = &spec.k()[level..];
    Ok(comps
        .into_iter()
        .enumerate()
        .map(|(idx, (weight, mean, cov))| SubPathComponent {
            level,
            sub_path: decode(tail_k, idx),
            weight,
            mean,
            cov,
        })
        .collect())
}

fn decode(k: &[usize], mut index: usize) -> Path {
    let mut s = vec![0; k.len()];
    for l in (0..k.len()).rev() {
        s[l] = index % k[l];
        index /= k[l];
    }
    Path(s)
}

/// The collapsed model as a flat Gaussian mixture with cached factorizations.
#[derive(Debug, Clone)]
pub struct CollapsedMixture {
    pub log_weights: Vec<f64>,
    pub components: Vec<Gaussian>,
}

impl CollapsedMixture {
    pub fn new(params: &DgmmParams) -> Result<Self> {
        let mut levels = sub_path_moments(params);
        let flat = std::mem::take(&mut levels[0]);
        let mut log_weights = Vec::with_capacity(flat.len());
        let mut components = Vec::with_capacity(flat.len());
        for (w, m, s) in flat {
            log_weights.push(w.ln());
            components.push(Gaussian::new(m, s)?);
        }
        Ok(Self {
            log_weights,
            components,
        })
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Fills `out[s] = log pi_s + log N(x; mu_s, Sigma_s)`.
    pub(crate) fn log_joint(&self, x: &[f64], out: &mut [f64]) {
        for (s, (lw, g)) in self.log_weights.iter().zip(&self.components).enumerate() {
            out[s] = if *lw == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                lw + g.log_density_slice(x)
            };
        }
    }

    /// Path posteriors (`n x |paths|`) and the total log-likelihood.
    pub fn posteriors(&self, data: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
        checked_rows(data, self.components[0].dim())?;
        let n = data.nrows();
        let k = self.len();
        let xt = data.transpose();
        // column s holds log w_s + log N(y_i; path s)
        let mut post = DMatrix::from_element(n, k, f64::NEG_INFINITY);
        for (s, (lw, g)) in self.log_weights.iter().zip(&self.components).enumerate() {
            if *lw == f64::NEG_INFINITY {
                continue;
            }
            let col = &mut post.as_mut_slice()[s * n..(s + 1) * n];
            g.log_density_columns(&xt, col);
            col.iter_mut().for_each(|v| *v += lw);
        }
        let mut buf = vec![0.0; k];
        let mut total = 0.0;
        for i in 0..n {
            for s in 0..k {
                buf[s] = post[(i, s)];
            }
            let lse = log_sum_exp_unchecked(&buf);
            if !lse.is_finite() {
                return Err(DgmmError::DegeneratePosterior(format!(
                    "observation {} has log-density {lse}",
                    i + 1
                )));
            }
            total += lse;
            for s in 0..k {
                post[(i, s)] = (buf[s] - lse).exp();
            }
        }
        Ok((post, total))
    }

    pub fn log_likelihood(&self, data: &DMatrix<f64>) -> Result<f64> {
        let t = checked_rows(data, self.components[0].dim())?;
        let p = data.ncols();
        let mut buf = vec![0.0; self.len()];
        let mut total = 0.0;
        for row in t.chunks_exact(p) {
            self.log_joint(row, &mut buf);
            total += log_sum_exp_unchecked(&buf);
        }
        Ok(total)
    }
}

/// Row-major copy of `data` after checking its width and finiteness.
pub(crate) fn checked_rows(data: &DMatrix<f64>, p: usize) -> Result<Vec<f64>> {
    if data.ncols() != p {
        return Err(DgmmError::DimensionMismatch {
            expected: p,
            found: data.ncols(),
        });
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(DgmmError::NonFinite("data".into()));
    }
    Ok(data.transpose().as_slice().to_vec())
}

/// `sum_i log sum_s pi_s N(y_i; mu_s, Sigma_s)`.
pub fn log_likelihood(params: &DgmmParams, data: &DMatrix<f64>) -> Result<f64> {
    CollapsedMixture::new(params)?.log_likelihood(data)
}

/// Posterior probabilities of every path for a single observation.
pub fn path_posterior(params: &DgmmParams, y: &DVector<f64>) -> Result<Vec<f64>> {
    let data = DMatrix::from_row_slice(1, y.len(), y.as_slice());
    let (post, _) = path_posteriors(params, &data)?;
    Ok(post.row(0).iter().copied().collect())
}

/// Posterior path probabilities for every row of `data`, plus the
/// log-likelihood.
pub fn path_posteriors(params: &DgmmParams, data: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    CollapsedMixture::new(params)?.posteriors(data)
}

/// Affine form of the conditional posterior of `z(l)` given `z(l-1)` and a
/// path: mean `gain * z_prev + offset`, covariance `xi`.
#[derive(Debug, Clone)]
pub struct ConditionalMap {
    pub gain: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub noise: Gaussian,
}

impl ConditionalMap {
    pub fn xi(&self) -> &DMatrix<f64> {
        self.noise.cov()
    }

    pub fn mean_at(&self, z_prev: &[f64], out: &mut [f64]) {
        let (r, d) = self.gain.shape();
        for a in 0..r {
            let mut s = self.offset[a];
            for b in 0..d {
                s += self.gain[(a, b)] * z_prev[b];
            }
            out[a] = s;
        }
    }
}

/// Conditional maps for every component of layer `l` and every sub-path of
/// level `l`, indexed `[component][tail]`.
pub(crate) fn conditional_maps(
    params: &DgmmParams,
    l: usize,
    tails: &[(f64, DVector<f64>, DMatrix<f64>)],
) -> Result<Vec<Vec<ConditionalMap>>> {
    let tail_parts = tails
        .iter()
        .map(|(_, mu, sigma)| {
            let prec = spd_inverse(sigma)?;
            let shift = &prec * mu;
            Ok((prec, shift))
        })
        .collect::<Result<Vec<_>>>()?;
    params
        .layer(l)
        .iter()
        .map(|c| {
            let lt_psi_inv = {
                let mut m = c.lambda.transpose();
                for (col, &psi) in c.psi.iter().enumerate() {
                    m.column_mut(col).scale_mut(1.0 / psi);
                }
                m
            };
            let info = &lt_psi_inv * &c.lambda;
            let eta_term = &lt_psi_inv * &c.eta;
            tail_parts
                .iter()
                .map(|(prec, shift)| {
                    let xi = spd_inverse(&(prec + &info))?;
                    let gain = &xi * &lt_psi_inv;
                    let offset = &xi * (shift - &eta_term);
                    let noise = Gaussian::new(DVector::zeros(xi.nrows()), xi)?;
                    Ok(ConditionalMap {
                        gain,
                        offset,
                        noise,
                    })
                })
                .collect()
        })
        .collect()
}

/// Conditional posterior `N(rho, xi)` of `z(l)` given `z(l-1) = z_prev` and
/// the path, with the prior of `z(l)` given by the path's sub-path below
/// level `l`.
pub fn conditional_posterior(
    params: &DgmmParams,
    l: usize,
    z_prev: &DVector<f64>,
    path: &Path,
) -> Result<Gaussian> {
    let spec = params.spec();
    let h = spec.depth();
    if l == 0 || l > h {
        return Err(DgmmError::InvalidArgument(format!(
            "layer {l} outside 1..={h}"
        )));
    }
    path.validate(spec)?;
    if z_prev.len() != spec.dim(l - 1) {
        return Err(DgmmError::DimensionMismatch {
            expected: spec.dim(l - 1),
            found: z_prev.len(),
        });
    }
    let levels = sub_path_moments(params);
    let tail_index = tail_index(spec, path, l);
    let tail = &levels[l][tail_index];
    let single = ConditionalMap::single(params, l, path.0[l - 1], tail)?;
    let mut rho = DVector::zeros(spec.dim(l));
    single.mean_at(z_prev.as_slice(), rho.as_mut_slice());
    Gaussian::new(rho, single.noise.cov().clone())
}

impl ConditionalMap {
    fn single(
        params: &DgmmParams,
        l: usize,
        component: usize,
        tail: &(f64, DVector<f64>, DMatrix<f64>),
    ) -> Result<Self> {
        let mut maps = conditional_maps(params, l, std::slice::from_ref(tail))?;
        Ok(maps.swap_remove(component).swap_remove(0))
    }
}

/// Index of the sub-path `(s_{l+1}, ..., s_h)` of `path`.
pub(crate) fn tail_index(spec: &DgmmSpec, path: &Path, l: usize) -> usize {
    path.0[l..]
        .iter()
        .zip(&spec.k()[l..])
        .fold(0, |acc, (&s, &k)| acc * k + s)
}

/// Cluster labels (1-based) from the first-layer component with the largest
/// marginal posterior; ties go to the lowest index.
pub fn classify(params: &DgmmParams, data: &DMatrix<f64>) -> Result<Vec<usize>> {
    let (post, _) = path_posteriors(params, data)?;
    Ok(labels_from_posteriors(params.spec(), &post))
}

pub(crate) fn labels_from_posteriors(spec: &DgmmSpec, post: &DMatrix<f64>) -> Vec<usize> {
    let k1 = spec.components(1);
    let tails = spec.n_tails(1);
    (0..post.nrows())
        .map(|i| {
            let mut best = 0;
            let mut best_mass = f64::NEG_INFINITY;
            for s1 in 0..k1 {
                let mass: f64 = (0..tails).map(|t| post[(i, s1 * tails + t)]).sum();
                if mass > best_mass {
                    best_mass = mass;
                    best = s1;
                }
            }
            best + 1
        })
        .collect()
}
