//! Fits a two-layer model to the smiley data and reports clustering quality.
//!
//! cargo run --release --example fit_smiley -- [seed]

use dgmm::data::generate_smiley;
use dgmm::metrics::{adjusted_rand_index, misclassification_rate};
use dgmm::{fit, DgmmSpec, FitConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() -> dgmm::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ds = generate_smiley(1000, 0.45, 0.35, 0.5, &mut rng)?;
    let truth = ds.labels.clone().expect("smiley has labels");

    let spec = DgmmSpec::new(3, vec![4, 1], vec![2, 1])?;
    let config = FitConfig { seed, ..FitConfig::default() };
    let timer = Instant::now();
    let result = fit(&spec, &ds.x, &config)?;

    println!("spec        {spec}");
    println!("loglik      {:.3}", result.loglik);
    println!("bic         {:.3}", result.bic);
    println!("iterations  {}", result.loglik_trace.len());
    println!("best start  {}", result.best_start + 1);
    println!("ari         {:.4}", adjusted_rand_index(&truth, &result.labels)?);
    println!("m.r.        {:.4}", misclassification_rate(&truth, &result.labels)?);
    println!("elapsed     {:.2?}", timer.elapsed());
    Ok(())
}
