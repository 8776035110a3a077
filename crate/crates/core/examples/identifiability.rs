//! Rotating the innermost loadings leaves the density unchanged; the
//! constraint picks the rotation that makes Lambda' Psi^-1 Lambda diagonal.
//!
//! cargo run --example identifiability

use dgmm::model::log_likelihood;
use dgmm::sem::{enforce_identifiability, scaled_gram};
use dgmm::{DgmmParams, DgmmSpec, LayerComponent};
use nalgebra::{dmatrix, dvector, DMatrix};

fn main() -> dgmm::Result<()> {
    let spec = DgmmSpec::new(4, vec![1], vec![2])?;
    let layer = vec![LayerComponent {
        weight: 1.0,
        eta: dvector![0.0, 1.0, -1.0, 0.5],
        lambda: dmatrix![0.9, 0.4; 0.2, 1.1; -0.5, 0.3; 0.7, -0.6],
        psi: dvector![0.3, 0.5, 0.2, 0.4],
    }];
    let params = DgmmParams::new(spec, vec![layer])?;
    let data = DMatrix::from_row_slice(3, 4, &[0.1, 1.2, -0.8, 0.3, -1.0, 0.2, 0.4, 1.5, 0.6, 0.9, -1.7, -0.2]);

    let rotated = enforce_identifiability(&params);
    println!("gram before\n{:.4}", scaled_gram(&params.layer(1)[0]));
    println!("gram after\n{:.4}", scaled_gram(&rotated.layer(1)[0]));
    println!("loglik before {:.12}", log_likelihood(&params, &data)?);
    println!("loglik after  {:.12}", log_likelihood(&rotated, &data)?);
    Ok(())
}
