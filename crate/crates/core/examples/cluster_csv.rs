//! Clusters a labelled CSV file with the deep model and with a flat Gaussian
//! mixture, then compares both against the labels.
//!
//! cargo run --release --example cluster_csv -- data.csv class 3 2

use dgmm::baseline::{fit_gmm, GmmConfig};
use dgmm::data::{load_csv, standardize, LabelColumn, LoadOptions};
use dgmm::metrics::{adjusted_rand_index, misclassification_rate};
use dgmm::{model_search, FitConfig, SearchSpace};
use std::time::Instant;

fn main() -> dgmm::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.len() < 2 {
        eprintln!("usage: cluster_csv <file.csv> <label column> [k1] [h]");
        std::process::exit(2);
    }
    let k1: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3);
    let h: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(2);

    let options = LoadOptions {
        label_column: Some(LabelColumn::Name(args[1].clone())),
        ..LoadOptions::default()
    };
    let ds = standardize(&load_csv(&args[0], &options)?);
    let truth = ds.labels.clone().expect("label column was requested");
    println!("n = {}, p = {}", ds.n(), ds.p());

    let timer = Instant::now();
    let space = SearchSpace {
        depths: vec![h],
        ..SearchSpace::default()
    };
    let config = FitConfig::default();
    let search = model_search(&ds.x, k1, &space, &config, Some(&truth))?;
    let labels = &search.best.fit.labels;
    println!(
        "deep  {}  ari {:.4}  m.r. {:.4}  ({} candidates, {:.1?})",
        search.best.spec,
        adjusted_rand_index(&truth, labels)?,
        misclassification_rate(&truth, labels)?,
        search.table.len(),
        timer.elapsed()
    );

    let gmm = fit_gmm(&ds.x, k1, &GmmConfig::default())?;
    println!(
        "flat  k={k1}  ari {:.4}  m.r. {:.4}",
        adjusted_rand_index(&truth, &gmm.labels)?,
        misclassification_rate(&truth, &gmm.labels)?
    );
    Ok(())
}
