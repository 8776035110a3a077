//! Model architecture and parameters.
//!
//! Layers are numbered `1..=h` as in the generative model: layer `l` maps the
//! latent variable `z(l)` (dimension `r_l`) to `z(l-1)` (dimension `r_{l-1}`),
//! with `z(0)` the observed data. Components inside a layer and entries of a
//! [`Path`] are zero-based; cluster labels reported to users are one-based.

mod density;
mod io;

pub use density::{
    classify, collapse_path, conditional_posterior, enumerate_paths, log_likelihood,
    marginal_components, path_posterior, path_posteriors, CollapsedComponent, CollapsedMixture,
    ConditionalMap, PathTable, SubPathComponent,
};
pub use io::{load_params, read_params, save_params, write_params};

pub(crate) use density::{
    checked_rows, conditional_maps, labels_from_posteriors, sub_path_moments, tail_index,
};

use nalgebra::{DMatrix, DVector};
use std::fmt;

use crate::error::{DgmmError, Result};

/// Lower bound applied to every diagonal entry of `Psi`.
pub const PSI_FLOOR: f64 = 1e-6;

/// Architecture of a deep mixture: component counts and latent dimensions
/// per layer, plus the observed dimension.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DgmmSpec {
    p: usize,
    k: Vec<usize>,
    r: Vec<usize>,
}

impl DgmmSpec {
    pub fn new(p: usize, k: Vec<usize>, r: Vec<usize>) -> Result<Self> {
        if k.is_empty() {
            return Err(DgmmError::InvalidSpec("at least one layer is required".into()));
        }
        if k.len() != r.len() {
            return Err(DgmmError::InvalidSpec(format!(
                "component chain has {} layers but dimension chain has {}",
                k.len(),
                r.len()
            )));
        }
        if let Some(l) = k.iter().position(|&c| c == 0) {
            return Err(DgmmError::InvalidSpec(format!(
                "layer {} has zero components",
                l + 1
            )));
        }
        let mut prev = p;
        for &dim in &r {
            if dim == 0 || dim >= prev {
                return Err(DgmmError::InvalidSpec(format!(
                    "latent dimensions must satisfy p > r1 > ... > rh >= 1 (p = {p}, r = {r:?})"
                )));
            }
            prev = dim;
        }
        k.iter()
            .try_fold(1usize, |acc, &c| acc.checked_mul(c))
            .ok_or_else(|| DgmmError::InvalidSpec("number of paths overflows".into()))?;
        Ok(Self { p, k, r })
    }

    /// Observed dimension.
    pub fn p(&self) -> usize {
        self.p
    }

    /// Number of layers `h`.
    pub fn depth(&self) -> usize {
        self.k.len()
    }

    pub fn k(&self) -> &[usize] {
        &self.k
    }

    pub fn r(&self) -> &[usize] {
        &self.r
    }

    /// Components at layer `l` (1-based).
    pub fn components(&self, l: usize) -> usize {
        self.k[l - 1]
    }

    /// Dimension of `z(level)`; level 0 is the data.
    pub fn dim(&self, level: usize) -> usize {
        if level == 0 {
            self.p
        } else {
            self.r[level - 1]
        }
    }

    /// Total number of paths `prod k_l`.
    pub fn n_paths(&self) -> usize {
        self.k.iter().product()
    }

    /// Number of sub-paths `(s_{l+1}, ..., s_h)` below level `l`; 1 at `l = h`.
    pub fn n_tails(&self, level: usize) -> usize {
        self.k[level..].iter().product()
    }
}

impl fmt::Display for DgmmSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[usize]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        write!(
            f,
            "h={} p={} k=({}) r=({})",
            self.depth(),
            self.p,
            join(&self.k),
            join(&self.r)
        )
    }
}

/// One linear-Gaussian component of a layer:
/// `z(l-1) = eta + lambda z(l) + u`, `u ~ N(0, diag(psi))`, chosen with
/// probability `weight`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerComponent {
    pub weight: f64,
    pub eta: DVector<f64>,
    pub lambda: DMatrix<f64>,
    pub psi: DVector<f64>,
}

impl LayerComponent {
    pub fn psi_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.psi)
    }
}

/// Full parameter set of a deep mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct DgmmParams {
    spec: DgmmSpec,
    layers: Vec<Vec<LayerComponent>>,
}

impl DgmmParams {
    /// Validates shapes against `spec`, positivity of `psi`, and that the
    /// weights of every layer form a probability vector (within `1e-10`).
    pub fn new(spec: DgmmSpec, layers: Vec<Vec<LayerComponent>>) -> Result<Self> {
        if layers.len() != spec.depth() {
            return Err(DgmmError::InvalidParams(format!(
                "expected {} layers, found {}",
                spec.depth(),
                layers.len()
            )));
        }
        for (idx, comps) in layers.iter().enumerate() {
            let l = idx + 1;
            if comps.len() != spec.components(l) {
                return Err(DgmmError::InvalidParams(format!(
                    "layer {l}: expected {} components, found {}",
                    spec.components(l),
                    comps.len()
                )));
            }
            let (rows, cols) = (spec.dim(l - 1), spec.dim(l));
            let mut total = 0.0;
            for (j, c) in comps.iter().enumerate() {
                let shape_ok = c.eta.len() == rows
                    && c.lambda.nrows() == rows
                    && c.lambda.ncols() == cols
                    && c.psi.len() == rows;
                if !shape_ok {
                    return Err(DgmmError::InvalidParams(format!(
                        "layer {l} component {}: shapes do not match {rows}x{cols}",
                        j + 1
                    )));
                }
                let finite = c.weight.is_finite()
                    && c.eta.iter().chain(c.lambda.iter()).chain(c.psi.iter()).all(|v| v.is_finite());
                if !finite {
                    return Err(DgmmError::NonFinite(format!("layer {l} component {}", j + 1)));
                }
                if c.psi.iter().any(|&v| v <= 0.0) {
                    return Err(DgmmError::InvalidParams(format!(
                        "layer {l} component {}: psi must be positive",
                        j + 1
                    )));
                }
                if !(0.0..=1.0).contains(&c.weight) {
                    return Err(DgmmError::InvalidParams(format!(
                        "layer {l} component {}: weight {} outside [0, 1]",
                        j + 1,
                        c.weight
                    )));
                }
                total += c.weight;
            }
            if (total - 1.0).abs() > 1e-10 {
                return Err(DgmmError::InvalidParams(format!(
                    "layer {l}: weights sum to {total}"
                )));
            }
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &DgmmSpec {
        &self.spec
    }

    /// Components of layer `l` (1-based).
    pub fn layer(&self, l: usize) -> &[LayerComponent] {
        &self.layers[l - 1]
    }

    pub fn layers(&self) -> &[Vec<LayerComponent>] {
        &self.layers
    }

    pub(crate) fn layer_mut(&mut self, l: usize) -> &mut Vec<LayerComponent> {
        &mut self.layers[l - 1]
    }
}

/// One component index per layer, `(s_1, ..., s_h)`, zero-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Path(pub Vec<usize>);

impl Path {
    /// Decodes a lexicographic path index (first layer most significant).
    pub fn from_index(spec: &DgmmSpec, mut index: usize) -> Self {
        let k = spec.k();
        let mut s = vec![0; k.len()];
        for l in (0..k.len()).rev() {
            s[l] = index % k[l];
            index /= k[l];
        }
        Path(s)
    }

    /// Lexicographic index of this path.
    pub fn index(&self, spec: &DgmmSpec) -> usize {
        self.0
            .iter()
            .zip(spec.k())
            .fold(0, |acc, (&s, &k)| acc * k + s)
    }

    pub fn validate(&self, spec: &DgmmSpec) -> Result<()> {
        if self.0.len() != spec.depth() {
            return Err(DgmmError::DimensionMismatch {
                expected: spec.depth(),
                found: self.0.len(),
            });
        }
        for (l, (&s, &k)) in self.0.iter().zip(spec.k()).enumerate() {
            if s >= k {
                return Err(DgmmError::InvalidArgument(format!(
                    "path entry {} at layer {} exceeds {} components",
                    s + 1,
                    l + 1,
                    k
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|s| (s + 1).to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}
