//! Parameter counting, BIC, and grid search over architectures.

use nalgebra::DMatrix;
use rayon::prelude::*;
use std::io::Write;
use std::ops::RangeInclusive;
use std::time::Instant;

use crate::error::{DgmmError, Result};
use crate::metrics::adjusted_rand_index;
use crate::model::DgmmSpec;
use crate::sem::{derive_seed, fit, FitConfig, FitResult};

/// Free parameters: per component `eta`, `lambda` less its rotational
/// freedom, and diagonal `psi`; plus `k_l - 1` weights per layer.
pub fn count_params(spec: &DgmmSpec) -> usize {
    (1..=spec.depth())
        .map(|l| {
            let (prev, r, k) = (spec.dim(l - 1), spec.dim(l), spec.components(l));
            k * (prev + prev * r - r * (r - 1) / 2 + prev) + (k - 1)
        })
        .sum()
}

/// `-2 loglik + n_params ln(n)`; lower is better.
pub fn bic(loglik: f64, n_params: usize, n: usize) -> f64 {
    -2.0 * loglik + n_params as f64 * (n as f64).ln()
}

/// Candidate architectures for [`model_search`]. `k1` is fixed by the caller.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchSpace {
    pub depths: Vec<usize>,
    /// Component ranges for layers `2, 3, ...`; the last range is reused for
    /// deeper layers.
    pub deep_k: Vec<RangeInclusive<usize>>,
    /// Restrict to these dimension chains; `None` means every strictly
    /// decreasing chain below `p`.
    pub r_chains: Option<Vec<Vec<usize>>>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            depths: vec![1, 2, 3],
            deep_k: vec![1..=5],
            r_chains: None,
        }
    }
}

/// Strictly decreasing chains `p > r1 > ... > rh >= 1`, largest first.
pub fn dimension_chains(p: usize, h: usize) -> Vec<Vec<usize>> {
    fn rec(upper: usize, left: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left == 0 {
            out.push(prefix.clone());
            return;
        }
        for r in (left..upper).rev() {
            prefix.push(r);
            rec(r, left - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if h >= 1 {
        rec(p, h, &mut Vec::new(), &mut out);
    }
    out
}

/// Every admissible spec of the search space, in a fixed order.
pub fn admissible_specs(p: usize, k1: usize, space: &SearchSpace) -> Vec<DgmmSpec> {
    let mut out = Vec::new();
    for &h in &space.depths {
        if h == 0 {
            continue;
        }
        let chains = match &space.r_chains {
            Some(chains) => chains.iter().filter(|c| c.len() == h).cloned().collect(),
            None => dimension_chains(p, h),
        };
        let ranges: Vec<RangeInclusive<usize>> = (2..=h)
            .map(|l| {
                space
                    .deep_k
                    .get(l - 2)
                    .or(space.deep_k.last())
                    .cloned()
                    .unwrap_or(1..=1)
            })
            .collect();
        let mut k_chains = vec![vec![k1]];
        for range in &ranges {
            k_chains = k_chains
                .into_iter()
                .flat_map(|prefix| {
                    range.clone().map(move |k| {
                        let mut next = prefix.clone();
                        next.push(k);
                        next
                    })
                })
                .collect();
        }
        for r in &chains {
            for k in &k_chains {
                if let Ok(spec) = DgmmSpec::new(p, k.clone(), r.clone()) {
                    out.push(spec);
                }
            }
        }
    }
    out
}

/// Stable FNV-1a hash of a spec, used to derive per-spec seeds.
pub fn spec_hash(spec: &DgmmSpec) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |v: usize| {
        for b in (v as u64).to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    feed(spec.p());
    feed(spec.depth());
    spec.k().iter().chain(spec.r()).for_each(|&v| feed(v));
    h
}

/// One row of the score table.
#[derive(Debug, Clone)]
pub struct ScoreRow {
    pub spec: DgmmSpec,
    pub loglik: Option<f64>,
    pub n_params: usize,
    pub bic: Option<f64>,
    pub ari: Option<f64>,
    pub runtime_s: f64,
    pub error: Option<String>,
}

/// The selected model.
#[derive(Debug, Clone)]
pub struct ModelScore {
    pub spec: DgmmSpec,
    pub loglik: f64,
    pub n_params: usize,
    pub bic: f64,
    pub fit: FitResult,
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub best: ModelScore,
    /// Sorted by ascending BIC; failed fits last.
    pub table: Vec<ScoreRow>,
}

/// Fits every admissible spec with `k_1 = k1` and returns the minimum-BIC
/// model with the full score table. Individual failures are recorded in the
/// table; an error is returned only when nothing could be fitted.
pub fn model_search(
    data: &DMatrix<f64>,
    k1: usize,
    space: &SearchSpace,
    config: &FitConfig,
    truth: Option<&[usize]>,
) -> Result<SearchResult> {
    let specs = admissible_specs(data.ncols(), k1, space);
    if specs.is_empty() {
        return Err(DgmmError::InvalidSpec(format!(
            "no admissible architecture for p = {} in the search space",
            data.ncols()
        )));
    }
    let results: Vec<(ScoreRow, Option<FitResult>)> = specs
        .par_iter()
        .map(|spec| {
            let timer = Instant::now();
            let cfg = FitConfig {
                seed: derive_seed(config.seed, spec_hash(spec)),
                ..config.clone()
            };
            let outcome = fit(spec, data, &cfg);
            let runtime_s = timer.elapsed().as_secs_f64();
            match outcome {
                Ok(f) => {
                    let ari = truth.and_then(|t| adjusted_rand_index(t, &f.labels).ok());
                    (
                        ScoreRow {
                            spec: spec.clone(),
                            loglik: Some(f.loglik),
                            n_params: f.n_params,
                            bic: Some(f.bic),
                            ari,
                            runtime_s,
                            error: None,
                        },
                        Some(f),
                    )
                }
                Err(e) => (
                    ScoreRow {
                        spec: spec.clone(),
                        loglik: None,
                        n_params: count_params(spec),
                        bic: None,
                        ari: None,
                        runtime_s,
                        error: Some(e.to_string()),
                    },
                    None,
                ),
            }
        })
        .collect();

    let mut best: Option<(usize, f64)> = None;
    for (idx, (row, _)) in results.iter().enumerate() {
        if let Some(b) = row.bic {
            if best.is_none_or(|(_, cur)| b < cur) {
                best = Some((idx, b));
            }
        }
    }
    let Some((best_idx, _)) = best else {
        let reasons: Vec<String> = results
            .iter()
            .map(|(r, _)| format!("{}: {}", r.spec, r.error.as_deref().unwrap_or("unknown")))
            .collect();
        return Err(DgmmError::FitFailed(format!("every candidate failed: {}", reasons.join("; "))));
    };

    let mut table = Vec::with_capacity(results.len());
    let mut best_score = None;
    for (idx, (row, fit)) in results.into_iter().enumerate() {
        if idx == best_idx {
            let fit = fit.expect("best row has a fit");
            best_score = Some(ModelScore {
                spec: row.spec.clone(),
                loglik: fit.loglik,
                n_params: fit.n_params,
                bic: fit.bic,
                fit,
            });
        }
        table.push(row);
    }
    table.sort_by(|a, b| match (a.bic, b.bic) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    Ok(SearchResult {
        best: best_score.expect("best index is valid"),
        table,
    })
}

fn chain(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Writes the score table as CSV.
pub fn write_score_table<W: Write>(w: W, table: &[ScoreRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| DgmmError::Io(std::io::Error::other(e));
    out.write_record(["h", "k", "r", "loglik", "n_params", "bic", "ari", "runtime_s", "error"])
        .map_err(io)?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    for row in table {
        out.write_record([
            row.spec.depth().to_string(),
            chain(row.spec.k()),
            chain(row.spec.r()),
            opt(row.loglik),
            row.n_params.to_string(),
            opt(row.bic),
            opt(row.ari),
            format!("{:.3}", row.runtime_s),
            row.error.clone().unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    out.flush()?;
    Ok(())
}
