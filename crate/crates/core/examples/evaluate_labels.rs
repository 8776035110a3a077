//! Adjusted Rand index and misclassification rate on small labelings.
//!
//! cargo run --example evaluate_labels

use dgmm::metrics::{adjusted_rand_index, misclassification_rate, ContingencyTable};

fn main() -> dgmm::Result<()> {
    let cases: [(&[usize], &[usize]); 4] = [
        (&[1, 1, 2, 2], &[1, 2, 1, 2]),
        (&[1, 1, 1, 2], &[1, 2, 2, 2]),
        (&[1, 1, 2, 2, 3, 3], &[3, 3, 1, 1, 2, 2]),
        (&[1, 1, 1, 2, 2, 2], &[1, 1, 2, 2, 3, 3]),
    ];
    for (truth, pred) in cases {
        let table = ContingencyTable::new(truth, pred)?;
        println!("true {truth:?}  pred {pred:?}");
        println!("  table {:?}", table.counts());
        println!(
            "  ari {:.4}  m.r. {:.4}",
            adjusted_rand_index(truth, pred)?,
            misclassification_rate(truth, pred)?
        );
    }
    Ok(())
}
