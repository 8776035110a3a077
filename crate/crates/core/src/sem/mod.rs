//! Stochastic EM fitting with multistart.
//!
//! Each iteration of a chain:
//!
//! 1. computes the collapsed path posteriors of every observation;
//! 2. for each layer `l = 1..=h`, draws `z(l)` replicates from the
//!    conditional posterior given `z(l-1)` (the data at `l = 1`), averages
//!    them into first and second moments, and updates the layer in closed
//!    form;
//! 3. applies the rotation constraint and records the log-likelihood.
//!
//! Estimates are the average of the iterates after burn-in.

mod identify;
mod init;
mod steps;

pub use identify::{
    enforce_identifiability, enforce_identifiability_with, rotate_component, scaled_gram, IdentifiabilityScope,
};
pub use init::init_params;
pub use steps::{e_step_moments, exact_moments, m_step_layer, s_step, Draws, Moments};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::time::{Duration, Instant};

use crate::error::{DgmmError, Result};
use crate::model::{
    conditional_maps, sub_path_moments, CollapsedMixture, DgmmParams, DgmmSpec, LayerComponent, Path, PSI_FLOOR,
};
use crate::selection::{bic, count_params};
use steps::{
    exact_component_moments, normalize_weights, row_major, sample_index, sample_weighted_moments, update_component,
    update_from_sums,
};

/// Responsibilities at or below this are treated as zero in the M-step.
const NEGLIGIBLE: f64 = 1e-10;

/// How the E-step obtains the conditional moments of each latent layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EStepMode {
    /// Averages of the S-step replicates.
    #[default]
    MonteCarlo,
    /// Closed-form Gaussian moments; draws only propagate `z` downwards.
    ExactMoments,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Replicates drawn per observation and component in the S-step.
    pub m_replicates: usize,
    pub max_iters: usize,
    pub burn_in: usize,
    pub n_starts: usize,
    pub seed: u64,
    /// Relative change of the windowed mean log-likelihood that stops a chain.
    pub tol: f64,
    /// Width of the stopping window.
    pub window: usize,
    pub e_step_mode: EStepMode,
    pub identifiability: IdentifiabilityScope,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            m_replicates: 10,
            max_iters: 200,
            burn_in: 20,
            n_starts: 10,
            seed: 0,
            tol: 1e-4,
            window: 20,
            e_step_mode: EStepMode::MonteCarlo,
            identifiability: IdentifiabilityScope::InnermostLayer,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_replicates == 0 {
            return Err(DgmmError::InvalidArgument("m_replicates must be at least 1".into()));
        }
        if self.n_starts == 0 {
            return Err(DgmmError::InvalidArgument("n_starts must be at least 1".into()));
        }
        if self.burn_in >= self.max_iters {
            return Err(DgmmError::InvalidArgument(format!(
                "burn_in ({}) must be smaller than max_iters ({})",
                self.burn_in, self.max_iters
            )));
        }
        if !(self.tol >= 0.0) || self.window == 0 {
            return Err(DgmmError::InvalidArgument("tol must be >= 0 and window >= 1".into()));
        }
        Ok(())
    }
}

/// Passed to the progress hook after every iteration of every chain.
#[derive(Debug, Clone)]
pub struct IterationReport {
    pub start: usize,
    pub iteration: usize,
    pub loglik: f64,
    pub layer_timings: Vec<Duration>,
}

/// Outcome of one start.
#[derive(Debug, Clone)]
pub struct ChainSummary {
    pub start: usize,
    pub seed: u64,
    pub iterations: usize,
    pub loglik: Option<f64>,
    /// Some component carries no more observations than its input
    /// dimension, so its covariance is held up only by the Psi floor.
    pub degenerate: bool,
    pub error: Option<String>,
}

/// Flags spurious maximizers: a component whose expected count `n * pi`
/// does not exceed the dimension of the layer it models.
pub fn is_degenerate(params: &DgmmParams, n: usize) -> bool {
    let spec = params.spec();
    params.layers().iter().enumerate().any(|(l, layer)| {
        let d = spec.dim(l) as f64;
        layer.len() > 1 && layer.iter().any(|c| c.weight * n as f64 <= d)
    })
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Last iterate of the winning chain.
    pub params: DgmmParams,
    /// Post-burn-in average of the winning chain; used for everything below.
    pub averaged_params: DgmmParams,
    /// Log-likelihood of the parameters entering each iteration.
    pub loglik_trace: Vec<f64>,
    /// One-based first-layer labels.
    pub labels: Vec<usize>,
    /// `n x |paths|`.
    pub path_posteriors: DMatrix<f64>,
    pub loglik: f64,
    pub n_params: usize,
    pub bic: f64,
    pub converged: bool,
    pub best_start: usize,
    pub chains: Vec<ChainSummary>,
}

/// Derives an independent seed for a start (splitmix64).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn fit(spec: &DgmmSpec, data: &DMatrix<f64>, config: &FitConfig) -> Result<FitResult> {
    fit_with_progress(spec, data, config, &|_| {})
}

pub fn fit_with_progress(
    spec: &DgmmSpec,
    data: &DMatrix<f64>,
    config: &FitConfig,
    progress: &(dyn Fn(&IterationReport) + Sync),
) -> Result<FitResult> {
    config.validate()?;
    if data.ncols() != spec.p() {
        return Err(DgmmError::DimensionMismatch {
            expected: spec.p(),
            found: data.ncols(),
        });
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(DgmmError::NonFinite("data".into()));
    }
    if data.nrows() <= spec.components(1) {
        return Err(DgmmError::InvalidArgument(format!(
            "need more than k1 = {} observations, found {}",
            spec.components(1),
            data.nrows()
        )));
    }

    let outcomes: Vec<(ChainSummary, Option<Chain>)> = (0..config.n_starts)
        .into_par_iter()
        .map(|start| {
            let seed = derive_seed(config.seed, start as u64);
            match run_chain(spec, data, config, start, seed, progress) {
                Ok(chain) => (
                    ChainSummary {
                        start,
                        seed,
                        iterations: chain.trace.len(),
                        loglik: Some(chain.loglik),
                        degenerate: is_degenerate(&chain.averaged, data.nrows()),
                        error: None,
                    },
                    Some(chain),
                ),
                Err(e) => (
                    ChainSummary {
                        start,
                        seed,
                        iterations: 0,
                        loglik: None,
                        degenerate: false,
                        error: Some(e.to_string()),
                    },
                    None,
                ),
            }
        })
        .collect();

    // Highest likelihood wins, but a degenerate chain only when every
    // chain is degenerate.
    let mut best: Option<(bool, Chain)> = None;
    let mut chains = Vec::with_capacity(outcomes.len());
    for (summary, chain) in outcomes {
        if let Some(chain) = chain {
            let ok = !summary.degenerate;
            if best
                .as_ref()
                .is_none_or(|(b_ok, b)| (ok, chain.loglik) > (*b_ok, b.loglik))
            {
                best = Some((ok, chain));
            }
        }
        chains.push(summary);
    }
    let best = best.map(|(_, c)| c);
    let Some(best) = best else {
        let diagnostics: Vec<String> = chains
            .iter()
            .map(|c| format!("start {}: {}", c.start + 1, c.error.as_deref().unwrap_or("unknown")))
            .collect();
        return Err(DgmmError::FitFailed(format!(
            "all {} chains failed: {}",
            chains.len(),
            diagnostics.join("; ")
        )));
    };

    let n_params = count_params(spec);
    let labels = crate::model::labels_from_posteriors(spec, &best.posteriors);
    Ok(FitResult {
        bic: bic(best.loglik, n_params, data.nrows()),
        params: best.last,
        averaged_params: best.averaged,
        loglik_trace: best.trace,
        labels,
        path_posteriors: best.posteriors,
        loglik: best.loglik,
        n_params,
        converged: best.converged,
        best_start: best.start,
        chains,
    })
}

struct Chain {
    start: usize,
    last: DgmmParams,
    averaged: DgmmParams,
    trace: Vec<f64>,
    posteriors: DMatrix<f64>,
    loglik: f64,
    converged: bool,
}

/// Running sum of parameters for post-burn-in averaging.
struct ParamSum {
    layers: Vec<Vec<LayerComponent>>,
    count: usize,
}

impl ParamSum {
    fn new(params: &DgmmParams) -> Self {
        let layers = params
            .layers()
            .iter()
            .map(|layer| {
                layer
                    .iter()
                    .map(|c| LayerComponent {
                        weight: 0.0,
                        eta: DVector::zeros(c.eta.len()),
                        lambda: DMatrix::zeros(c.lambda.nrows(), c.lambda.ncols()),
                        psi: DVector::zeros(c.psi.len()),
                    })
                    .collect()
            })
            .collect();
        Self { layers, count: 0 }
    }

    fn add(&mut self, params: &DgmmParams) {
        for (acc, layer) in self.layers.iter_mut().zip(params.layers()) {
            for (a, c) in acc.iter_mut().zip(layer) {
                a.weight += c.weight;
                a.eta += &c.eta;
                a.lambda += &c.lambda;
                a.psi += &c.psi;
            }
        }
        self.count += 1;
    }

    fn mean(&self, spec: &DgmmSpec) -> Result<DgmmParams> {
        let scale = 1.0 / self.count.max(1) as f64;
        let mut layers = self.layers.clone();
        for layer in layers.iter_mut() {
            for c in layer.iter_mut() {
                c.weight *= scale;
                c.eta *= scale;
                c.lambda *= scale;
                c.psi.iter_mut().for_each(|v| *v = (*v * scale).max(PSI_FLOOR));
            }
            normalize_weights(layer);
        }
        DgmmParams::new(spec.clone(), layers)
    }
}

fn window_converged(trace: &[f64], window: usize, tol: f64) -> bool {
    if trace.len() < 2 * window {
        return false;
    }
    let len = trace.len();
    let recent = trace[len - window..].iter().sum::<f64>() / window as f64;
    let before = trace[len - 2 * window..len - window].iter().sum::<f64>() / window as f64;
    (recent - before).abs() <= tol * recent.abs()
}

fn run_chain(
    spec: &DgmmSpec,
    data: &DMatrix<f64>,
    config: &FitConfig,
    start: usize,
    seed: u64,
    progress: &(dyn Fn(&IterationReport) + Sync),
) -> Result<Chain> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = init_params(spec, data, &mut rng)?;
    let data_rows = row_major(data);
    let n = data.nrows();
    let h = spec.depth();
    let mut trace = Vec::with_capacity(config.max_iters);
    let mut sum = ParamSum::new(&params);
    let mut converged = false;

    for iteration in 0..config.max_iters {
        let mixture = CollapsedMixture::new(&params)?;
        let (post, loglik) = mixture.posteriors(data)?;
        if !loglik.is_finite() {
            return Err(DgmmError::FitFailed(format!("non-finite log-likelihood at iteration {iteration}")));
        }
        trace.push(loglik);

        let n_paths = spec.n_paths();
        let post_rows = row_major(&post);
        let sampled: Vec<Path> = (0..n)
            .map(|i| sample_index(&post_rows[i * n_paths..(i + 1) * n_paths], &mut rng).map(|idx| Path::from_index(spec, idx)))
            .collect::<Result<_>>()?;

        let levels = sub_path_moments(&params);
        let mut z_prev = data_rows.clone();
        let mut updated = Vec::with_capacity(h);
        let mut layer_timings = Vec::with_capacity(h);
        for l in 1..=h {
            let timer = Instant::now();
            let k = spec.components(l);
            let tails = spec.n_tails(l);
            let dim_prev = spec.dim(l - 1);
            let dim = spec.dim(l);
            let maps = conditional_maps(&params, l, &levels[l])?;

            // joint posterior of (s_l, sub-path) for every observation
            let block = k * tails;
            let mut joint = vec![0.0; n * block];
            for i in 0..n {
                let row = &post_rows[i * n_paths..(i + 1) * n_paths];
                let out = &mut joint[i * block..(i + 1) * block];
                for (idx, &p) in row.iter().enumerate() {
                    out[idx % block] += p;
                }
            }

            let mut comps = Vec::with_capacity(k);
            for (j, old) in params.layer(l).iter().enumerate() {
                // observations with negligible responsibility contribute
                // nothing measurable and are skipped
                let mut active = Vec::new();
                let mut resp = Vec::new();
                let mut resp_total = 0.0;
                let mut tail_post = Vec::new();
                let mut z_act = Vec::new();
                for i in 0..n {
                    let q = &joint[i * block + j * tails..i * block + (j + 1) * tails];
                    let total: f64 = q.iter().sum();
                    resp_total += total;
                    if total <= NEGLIGIBLE {
                        continue;
                    }
                    active.push(i);
                    resp.push(total);
                    tail_post.extend(q.iter().map(|v| v / total));
                    z_act.extend_from_slice(&z_prev[i * dim_prev..(i + 1) * dim_prev]);
                }
                if active.is_empty() {
                    comps.push(LayerComponent {
                        weight: resp_total / n as f64,
                        ..old.clone()
                    });
                    continue;
                }
                let mut c = match config.e_step_mode {
                    EStepMode::MonteCarlo => {
                        let (first, second) = sample_weighted_moments(
                            &maps[j],
                            &z_act,
                            dim_prev,
                            &tail_post,
                            &resp,
                            config.m_replicates,
                            &mut rng,
                        )?;
                        update_from_sums(old, &z_act, &first, &second, &resp)?
                    }
                    EStepMode::ExactMoments => {
                        let moments = exact_component_moments(&maps[j], &z_act, dim_prev, &tail_post);
                        update_component(old, &z_act, &moments, &resp)?
                    }
                };
                c.weight = resp_total / n as f64;
                comps.push(c);
            }
            normalize_weights(&mut comps);
            updated.push(comps);

            // propagate one draw along each observation's sampled path
            if l < h {
                let mut z_next = vec![0.0; n * dim];
                let mut rho = vec![0.0; dim];
                for (i, path) in sampled.iter().enumerate() {
                    let map = &maps[path.0[l - 1]][crate::model::tail_index(spec, path, l)];
                    map.mean_at(&z_prev[i * dim_prev..(i + 1) * dim_prev], &mut rho);
                    let out = &mut z_next[i * dim..(i + 1) * dim];
                    map.noise.sample_into(&mut rng, out);
                    out.iter_mut().zip(&rho).for_each(|(o, r)| *o += r);
                }
                z_prev = z_next;
            }
            layer_timings.push(timer.elapsed());
        }

        let next = DgmmParams::new(spec.clone(), updated)?;
        params = enforce_identifiability_with(&next, config.identifiability);
        if iteration >= config.burn_in {
            sum.add(&params);
        }
        progress(&IterationReport {
            start,
            iteration,
            loglik,
            layer_timings,
        });
        if iteration >= config.burn_in + config.window && window_converged(&trace, config.window, config.tol) {
            converged = true;
            break;
        }
    }

    let averaged = sum.mean(spec)?;
    let (posteriors, loglik) = CollapsedMixture::new(&averaged)?.posteriors(data)?;
    Ok(Chain {
        start,
        last: params,
        averaged,
        trace,
        posteriors,
        loglik,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(FitConfig::default().validate().is_ok());
        let bad = FitConfig {
            burn_in: 200,
            ..FitConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = FitConfig {
            m_replicates: 0,
            ..FitConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn tiny_components_are_degenerate() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = DgmmSpec::new(5, vec![2, 2], vec![2, 1]).unwrap();
        let mut params = crate::testutil::random_params(&spec, &mut rng);
        for (c, w) in params.layer_mut(1).iter_mut().zip([0.5, 0.5]) {
            c.weight = w;
        }
        assert!(!is_degenerate(&params, 100));
        // five observations cannot pin down a five-dimensional component
        assert!(is_degenerate(&params, 10));
        let layer = params.layer_mut(1);
        layer[0].weight = 0.97;
        layer[1].weight = 0.03;
        assert!(is_degenerate(&params, 100));
        assert!(!is_degenerate(&params, 1000));
    }

    #[test]
    fn window_rule() {
        let flat = vec![-100.0; 40];
        assert!(window_converged(&flat, 20, 1e-4));
        let rising: Vec<f64> = (0..40).map(|i| -100.0 + i as f64).collect();
        assert!(!window_converged(&rising, 20, 1e-4));
        assert!(!window_converged(&flat[..30], 20, 1e-4));
    }

    #[test]
    fn derived_seeds_differ() {
        let a: Vec<u64> = (0..10).map(|s| derive_seed(7, s)).collect();
        let mut b = a.clone();
        b.sort();
        b.dedup();
        assert_eq!(a.len(), b.len());
    }
}
