use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::model::{DgmmParams, DgmmSpec, LayerComponent};

pub(crate) fn random_params<R: Rng>(spec: &DgmmSpec, rng: &mut R) -> DgmmParams {
    let layers = (1..=spec.depth())
        .map(|l| {
            let (rows, cols) = (spec.dim(l - 1), spec.dim(l));
            let raw: Vec<f64> = (0..spec.components(l)).map(|_| rng.random_range(0.2..1.0)).collect();
            let total: f64 = raw.iter().sum();
            raw.iter()
                .map(|w| LayerComponent {
                    weight: w / total,
                    eta: DVector::from_fn(rows, |_, _| rng.sample::<f64, _>(StandardNormal)),
                    lambda: DMatrix::from_fn(rows, cols, |_, _| 0.7 * rng.sample::<f64, _>(StandardNormal)),
                    psi: DVector::from_fn(rows, |_, _| rng.random_range(0.2..1.0)),
                })
                .collect()
        })
        .collect();
    DgmmParams::new(spec.clone(), layers).unwrap()
}

pub(crate) fn random_data<R: Rng>(n: usize, p: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| 2.0 * rng.sample::<f64, _>(StandardNormal))
}
