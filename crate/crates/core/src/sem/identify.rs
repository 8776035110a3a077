//! Rotation constraint on factor loadings: `lambda^T psi^-1 lambda` diagonal
//! with non-increasing entries.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::model::{DgmmParams, LayerComponent};

/// Which layers receive the rotation.
///
/// Right-multiplying `lambda` by an orthogonal matrix leaves the density
/// unchanged only when the latent it multiplies is rotation invariant. That
/// holds for the innermost layer, whose latent is `N(0, I)`. Interior layers
/// feed on a mixture shared by all their components, so rotating them
/// changes the model; `AllLayers` is kept for experimentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IdentifiabilityScope {
    #[default]
    InnermostLayer,
    AllLayers,
}

/// `lambda^T diag(psi)^-1 lambda`.
pub fn scaled_gram(c: &LayerComponent) -> DMatrix<f64> {
    let mut scaled = c.lambda.clone();
    for (row, &psi) in c.psi.iter().enumerate() {
        scaled.row_mut(row).scale_mut(1.0 / psi.sqrt());
    }
    scaled.transpose() * scaled
}

/// Rotates the loading columns onto the eigenvectors of
/// `lambda^T psi^-1 lambda`, sorted by decreasing eigenvalue, with the first
/// non-negligible entry of each column made non-negative.
pub fn rotate_component(c: &mut LayerComponent) {
    let r = c.lambda.ncols();
    if r == 0 {
        return;
    }
    let eig = SymmetricEigen::new(scaled_gram(c));
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let rotation = DMatrix::from_fn(r, r, |i, j| eig.eigenvectors[(i, order[j])]);
    let mut lambda = &c.lambda * rotation;
    for mut col in lambda.column_iter_mut() {
        let scale = col.amax();
        if let Some(first) = col.iter().copied().find(|v| v.abs() > 1e-12 * scale) {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
    c.lambda = lambda;
}

/// Applies the rotation constraint to every component of the innermost layer.
pub fn enforce_identifiability(params: &DgmmParams) -> DgmmParams {
    enforce_identifiability_with(params, IdentifiabilityScope::InnermostLayer)
}

pub fn enforce_identifiability_with(params: &DgmmParams, scope: IdentifiabilityScope) -> DgmmParams {
    let mut out = params.clone();
    let h = params.spec().depth();
    let first = match scope {
        IdentifiabilityScope::InnermostLayer => h,
        IdentifiabilityScope::AllLayers => 1,
    };
    for l in first..=h {
        for c in out.layer_mut(l) {
            rotate_component(c);
        }
    }
    out
}
