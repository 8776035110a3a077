//! Chooses the number of second-layer components by BIC on smiley data and
//! prints the score table.
//!
//! cargo run --release --example select_architecture

use dgmm::data::generate_smiley;
use dgmm::metrics::adjusted_rand_index;
use dgmm::selection::write_score_table;
use dgmm::{model_search, FitConfig, SearchSpace};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> dgmm::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ds = generate_smiley(1000, 0.45, 0.35, 0.5, &mut rng)?;
    let truth = ds.labels.as_deref();

    let space = SearchSpace {
        depths: vec![2],
        deep_k: vec![1..=5],
        r_chains: Some(vec![vec![2, 1]]),
    };
    let config = FitConfig { seed: 5, ..FitConfig::default() };
    let search = model_search(&ds.x, 4, &space, &config, truth)?;

    write_score_table(std::io::stdout().lock(), &search.table)?;
    println!();
    println!("selected {}", search.best.spec);
    if let Some(t) = truth {
        println!("ari      {:.4}", adjusted_rand_index(t, &search.best.fit.labels)?);
    }
    Ok(())
}
