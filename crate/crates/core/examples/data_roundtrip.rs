//! Generates smiley data, writes it as CSV, reads it back with its label
//! column, standardizes it, and round-trips a fitted parameter file.
//!
//! cargo run --example data_roundtrip

use dgmm::data::{generate_smiley, load_csv, save_csv, standardize, LabelColumn, LoadOptions};
use dgmm::model::{read_params, write_params};
use dgmm::sem::init_params;
use dgmm::DgmmSpec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> dgmm::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ds = generate_smiley(200, 0.45, 0.35, 0.5, &mut rng)?;
    let path = std::env::temp_dir().join("dgmm-smiley-example.csv");
    save_csv(&path, &ds)?;

    let options = LoadOptions {
        label_column: Some(LabelColumn::Name("class".into())),
        ..LoadOptions::default()
    };
    let back = load_csv(&path, &options)?;
    println!("read {} rows, {} features; identical = {}", back.n(), back.p(), back.x == ds.x);

    let scaled = standardize(&back);
    let info = scaled.standardization.as_ref().expect("just standardized");
    println!("means {:.3?}", info.means);
    println!("sds   {:.3?}", info.sds);

    let spec = DgmmSpec::new(3, vec![4, 1], vec![2, 1])?;
    let params = init_params(&spec, &scaled.x, &mut rng)?;
    let mut text = Vec::new();
    write_params(&mut text, &params)?;
    let again = read_params(text.as_slice())?;
    println!("parameter file: {} bytes, round trip exact = {}", text.len(), again == params);
    std::fs::remove_file(&path)?;
    Ok(())
}
