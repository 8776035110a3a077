//! Posterior of the first latent layer given one observation, along each
//! path, and the path posterior that weights them.
//!
//! cargo run --example conditional_posterior

use dgmm::model::{conditional_posterior, enumerate_paths, path_posterior};
use dgmm::{DgmmParams, DgmmSpec, LayerComponent};
use nalgebra::{dmatrix, dvector};

fn main() -> dgmm::Result<()> {
    let spec = DgmmSpec::new(2, vec![2], vec![1])?;
    let layer = vec![
        LayerComponent {
            weight: 0.5,
            eta: dvector![-1.5, 0.0],
            lambda: dmatrix![1.0; 0.5],
            psi: dvector![0.2, 0.2],
        },
        LayerComponent {
            weight: 0.5,
            eta: dvector![1.5, 0.0],
            lambda: dmatrix![0.3; -1.0],
            psi: dvector![0.2, 0.2],
        },
    ];
    let params = DgmmParams::new(spec, vec![layer])?;
    let y = dvector![-1.0, 0.4];

    let weights = path_posterior(&params, &y)?;
    for (path, w) in enumerate_paths(&params).paths.iter().zip(weights) {
        let post = conditional_posterior(&params, 1, &y, path)?;
        println!(
            "path {path}  P(path | y) = {w:.4}  z | y, path ~ N({:.4}, {:.4})",
            post.mean()[0],
            post.cov()[(0, 0)]
        );
    }
    Ok(())
}
