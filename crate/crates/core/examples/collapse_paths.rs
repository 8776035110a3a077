//! Builds a small two-layer model by hand, lists every path with its
//! collapsed Gaussian, and checks that the deep log-likelihood equals the
//! flat mixture over those Gaussians.
//!
//! cargo run --example collapse_paths

use dgmm::gaussian::{log_sum_exp, Gaussian};
use dgmm::model::{collapse_path, enumerate_paths, log_likelihood};
use dgmm::{DgmmParams, DgmmSpec, LayerComponent};
use nalgebra::{dmatrix, dvector, DMatrix};

fn main() -> dgmm::Result<()> {
    let spec = DgmmSpec::new(3, vec![2, 2], vec![2, 1])?;
    let first = vec![
        LayerComponent {
            weight: 0.6,
            eta: dvector![-2.0, 0.0, 0.5],
            lambda: dmatrix![1.0, 0.0; 0.3, 0.8; 0.0, 0.2],
            psi: dvector![0.2, 0.3, 0.4],
        },
        LayerComponent {
            weight: 0.4,
            eta: dvector![2.0, 1.0, -0.5],
            lambda: dmatrix![0.5, 0.1; -0.4, 0.6; 0.2, 0.0],
            psi: dvector![0.5, 0.2, 0.3],
        },
    ];
    let second = vec![
        LayerComponent {
            weight: 0.5,
            eta: dvector![1.0, -1.0],
            lambda: dmatrix![0.7; 0.2],
            psi: dvector![0.3, 0.3],
        },
        LayerComponent {
            weight: 0.5,
            eta: dvector![-1.0, 1.0],
            lambda: dmatrix![-0.2; 0.9],
            psi: dvector![0.4, 0.2],
        },
    ];
    let params = DgmmParams::new(spec, vec![first, second])?;

    let table = enumerate_paths(&params);
    let mut flat = Vec::new();
    for path in &table.paths {
        let c = collapse_path(&params, path)?;
        println!("path {}  weight {:.3}  mean {:.3?}", c.path, c.weight, c.mean.as_slice());
        flat.push((c.weight, Gaussian::new(c.mean, c.cov)?));
    }

    let data = DMatrix::from_row_slice(4, 3, &[-2.0, 0.5, 0.3, 2.1, 1.2, -0.4, 0.0, 0.0, 0.0, 1.0, -1.0, 2.0]);
    let deep = log_likelihood(&params, &data)?;
    let mut by_hand = 0.0;
    for row in data.row_iter() {
        let y = row.transpose();
        let terms: Vec<f64> = flat
            .iter()
            .map(|(w, g)| Ok(w.ln() + g.log_density(&y)?))
            .collect::<dgmm::Result<_>>()?;
        by_hand += log_sum_exp(&terms)?;
    }
    println!("deep loglik {deep:.12}");
    println!("flat loglik {by_hand:.12}");
    Ok(())
}
