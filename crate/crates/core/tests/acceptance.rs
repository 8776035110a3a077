//! Acceptance suite. Each test prints one `criterion N ... PASS|FAIL` line
//! straight to stdout so the verdicts stay visible under output capture.

mod common;

use common::{dense_log_likelihood, dense_marginal, normal, random_params, random_spec};
use dgmm::baseline::{fit_gmm, GmmConfig};
use dgmm::data::{generate_smiley, load_csv, standardize, LabelColumn, LoadOptions};
use dgmm::metrics::{adjusted_rand_index, misclassification_rate};
use dgmm::model::{collapse_path, conditional_posterior, enumerate_paths, log_likelihood};
use dgmm::sem::{derive_seed, enforce_identifiability, scaled_gram};
use dgmm::{fit, model_search, DgmmSpec, FitConfig, Path, SearchSpace};
use nalgebra::{dvector, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

/// Serializes the timed criteria so their runtimes are not inflated by
/// tests running alongside.
static HEAVY: Mutex<()> = Mutex::new(());

fn heavy() -> std::sync::MutexGuard<'static, ()> {
    HEAVY.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(id: u32, name: &str, pass: bool, detail: String) {
    let line = format!(
        "criterion {id:>2} {name}: {} ({detail})\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "criterion {id} failed: {detail}");
}

fn random_points(n: usize, p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| 2.0 * normal(rng))
}

/// Early and late means of a trace.
fn trend(trace: &[f64]) -> (f64, f64) {
    let k = 10.min(trace.len());
    let first = trace[..k].iter().sum::<f64>() / k as f64;
    let last = trace[trace.len() - k..].iter().sum::<f64>() / k as f64;
    (first, last)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn label_csv(labels: &[usize]) -> Vec<u8> {
    let mut s = String::from("class\n");
    for l in labels {
        s.push_str(&l.to_string());
        s.push('\n');
    }
    s.into_bytes()
}

#[test]
fn criterion_01_flat_mixture_equivalence() {
    let timer = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let spec = random_spec(&mut rng, 6, 3, 3);
        let params = random_params(&spec, &mut rng);
        let data = random_points(100, spec.p(), &mut rng);
        let deep = log_likelihood(&params, &data).unwrap();
        let flat = dense_log_likelihood(&params, &data);
        worst = worst.max((deep - flat).abs());
    }
    let secs = timer.elapsed().as_secs_f64();
    verdict(
        1,
        "flat-mixture oracle equivalence",
        worst < 1e-10 && secs < 10.0,
        format!("max |deep - flat| = {worst:.2e} over 50 models, {secs:.2}s"),
    );
}

#[test]
fn criterion_02_generative_moments() {
    let timer = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let draws = 1_000_000usize;
    let (mut checks, mut misses, mut worst_z): (usize, usize, f64) = (0, 0, 0.0);
    for _ in 0..10 {
        let p = rng.random_range(3..=4);
        let r1 = rng.random_range(2..p);
        let r2 = rng.random_range(1..r1);
        let spec = DgmmSpec::new(p, vec![rng.random_range(1..=2), rng.random_range(1..=2)], vec![r1, r2]).unwrap();
        let params = random_params(&spec, &mut rng);
        for path in enumerate_paths(&params).paths {
            let target = collapse_path(&params, &path).unwrap();
            let (c1, c2) = (&params.layer(1)[path.0[0]], &params.layer(2)[path.0[1]]);
            let sd1 = c1.psi.map(f64::sqrt);
            let sd2 = c2.psi.map(f64::sqrt);
            let mut sum = DVector::<f64>::zeros(p);
            let mut cross = DMatrix::<f64>::zeros(p, p);
            let mut z2 = DVector::zeros(r2);
            let mut y = DVector::zeros(p);
            for _ in 0..draws {
                z2.iter_mut().for_each(|v| *v = normal(&mut rng));
                let mut z1 = &c2.eta + &c2.lambda * &z2;
                for a in 0..r1 {
                    z1[a] += sd2[a] * normal(&mut rng);
                }
                y.copy_from(&c1.eta);
                y.gemv(1.0, &c1.lambda, &z1, 1.0);
                for a in 0..p {
                    y[a] += sd1[a] * normal(&mut rng);
                }
                sum += &y;
                cross.ger(1.0, &y, &y, 1.0);
            }
            let nf = draws as f64;
            let mean = &sum / nf;
            let cov = (&cross - &mean * mean.transpose() * nf) / (nf - 1.0);
            let s = &target.cov;
            for a in 0..p {
                let z = (mean[a] - target.mean[a]) / (s[(a, a)] / nf).sqrt();
                checks += 1;
                worst_z = worst_z.max(z.abs());
                misses += usize::from(z.abs() > 3.0);
                for b in 0..=a {
                    let se = ((s[(a, a)] * s[(b, b)] + s[(a, b)].powi(2)) / nf).sqrt();
                    let z = (cov[(a, b)] - s[(a, b)]) / se;
                    checks += 1;
                    worst_z = worst_z.max(z.abs());
                    misses += usize::from(z.abs() > 3.0);
                }
            }
        }
    }
    let secs = timer.elapsed().as_secs_f64();
    verdict(
        2,
        "generative-moment consistency",
        misses == 0 && secs < 120.0,
        format!("{misses} of {checks} moments beyond 3 s.e., max |z| = {worst_z:.2}, {secs:.1}s"),
    );
}

#[test]
fn criterion_03_conditional_posterior() {
    let timer = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let spec = random_spec(&mut rng, 6, 3, 3);
        let params = random_params(&spec, &mut rng);
        let l = rng.random_range(1..=spec.depth());
        let path = Path::from_index(&spec, rng.random_range(0..spec.n_paths()));
        let x = DVector::from_fn(spec.dim(l - 1), |_, _| 2.0 * normal(&mut rng));
        let got = conditional_posterior(&params, l, &x, &path).unwrap();

        // joint Gaussian of (z(l), z(l-1)) and its Schur complement
        let (mu, sigma) = dense_marginal(&params, &path, l);
        let c = &params.layer(l)[path.0[l - 1]];
        let cross = &sigma * c.lambda.transpose();
        let s = &c.lambda * &cross + DMatrix::from_diagonal(&c.psi);
        let s_inv = s.try_inverse().unwrap();
        let gain = &cross * &s_inv;
        let mean = &mu + &gain * (&x - &c.eta - &c.lambda * &mu);
        let cov = &sigma - &gain * cross.transpose();
        worst = worst
            .max((got.mean() - mean).amax())
            .max((got.cov() - cov).amax());
    }
    let secs = timer.elapsed().as_secs_f64();
    verdict(
        3,
        "conditional posterior vs Schur complement",
        worst < 1e-8 && secs < 5.0,
        format!("max-norm error {worst:.2e} over 100 instances, {secs:.2}s"),
    );
}

#[test]
fn criterion_04_identifiability() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (mut worst_ll, mut worst_off): (f64, f64) = (0.0, 0.0);
    let mut ordered = true;
    for _ in 0..50 {
        let spec = random_spec(&mut rng, 6, 3, 3);
        let params = random_params(&spec, &mut rng);
        let data = random_points(100, spec.p(), &mut rng);
        let rotated = enforce_identifiability(&params);
        let before = log_likelihood(&params, &data).unwrap();
        let after = log_likelihood(&rotated, &data).unwrap();
        worst_ll = worst_ll.max((before - after).abs());
        // the rotation is only density-preserving at the innermost layer
        for c in rotated.layer(spec.depth()) {
            let g = scaled_gram(c);
            for a in 0..g.nrows() {
                for b in 0..g.ncols() {
                    if a != b {
                        worst_off = worst_off.max(g[(a, b)].abs());
                    }
                }
                if a > 0 && g[(a, a)] > g[(a - 1, a - 1)] {
                    ordered = false;
                }
            }
        }
    }
    verdict(
        4,
        "identifiability invariance (innermost layer)",
        worst_ll < 1e-9 && worst_off < 1e-8 && ordered,
        format!("max |dloglik| = {worst_ll:.2e}, max off-diagonal {worst_off:.2e}, diagonal non-increasing = {ordered}"),
    );
}

struct FaRun {
    err: f64,
    scale: f64,
    secs: f64,
    trend: (f64, f64),
}

fn fa_run() -> &'static FaRun {
    static RUN: OnceLock<FaRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let _guard = heavy();
        let mut rng = ChaCha8Rng::seed_from_u64(505);
        let lambda = dvector![0.9, -0.7, 0.5];
        let eta = dvector![1.0, -1.0, 0.5];
        let psi: DVector<f64> = dvector![0.3, 0.4, 0.5];
        let n = 5000;
        let mut data = DMatrix::zeros(n, 3);
        for i in 0..n {
            let z = normal(&mut rng);
            for a in 0..3 {
                data[(i, a)] = eta[a] + lambda[a] * z + psi[a].sqrt() * normal(&mut rng);
            }
        }
        let truth = &lambda * lambda.transpose() + DMatrix::from_diagonal(&psi);
        let spec = DgmmSpec::new(3, vec![1], vec![1]).unwrap();
        let timer = Instant::now();
        let fitted = fit(&spec, &data, &FitConfig { seed: 505, ..FitConfig::default() }).unwrap();
        let secs = timer.elapsed().as_secs_f64();
        let got = collapse_path(&fitted.averaged_params, &Path(vec![0])).unwrap();
        FaRun {
            err: (got.cov - &truth).amax(),
            scale: truth.amax(),
            secs,
            trend: trend(&fitted.loglik_trace),
        }
    })
}

#[test]
fn criterion_05_factor_analysis_recovery() {
    let run = fa_run();
    verdict(
        5,
        "factor-analysis recovery",
        run.err <= 0.1 * run.scale && run.secs < 30.0,
        format!(
            "max-norm covariance error {:.4} vs bound {:.4}, fit {:.2}s",
            run.err,
            0.1 * run.scale,
            run.secs
        ),
    );
}

const SMILEY_SEED: u64 = 20_061;
const SMILEY_REPLICATES: usize = 25;

struct SmileyRun {
    ari: Vec<f64>,
    mr: Vec<f64>,
    selected: Vec<DgmmSpec>,
    trends: Vec<(f64, f64)>,
    first_labels: Vec<u8>,
    secs: f64,
}

fn smiley_replicate(rep: usize) -> (dgmm::selection::SearchResult, Vec<usize>) {
    let seed = derive_seed(SMILEY_SEED, rep as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ds = generate_smiley(1000, 0.45, 0.35, 0.5, &mut rng).unwrap();
    let truth = ds.labels.clone().unwrap();
    let space = SearchSpace {
        depths: vec![2],
        deep_k: vec![1..=5],
        r_chains: Some(vec![vec![2, 1]]),
    };
    let config = FitConfig { seed, ..FitConfig::default() };
    (model_search(&ds.x, 4, &space, &config, Some(&truth)).unwrap(), truth)
}

fn smiley_run() -> &'static SmileyRun {
    static RUN: OnceLock<SmileyRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let _guard = heavy();
        let timer = Instant::now();
        let mut run = SmileyRun {
            ari: Vec::new(),
            mr: Vec::new(),
            selected: Vec::new(),
            trends: Vec::new(),
            first_labels: Vec::new(),
            secs: 0.0,
        };
        for rep in 0..SMILEY_REPLICATES {
            let (search, truth) = smiley_replicate(rep);
            let labels = &search.best.fit.labels;
            run.ari.push(adjusted_rand_index(&truth, labels).unwrap());
            run.mr.push(misclassification_rate(&truth, labels).unwrap());
            run.selected.push(search.best.spec.clone());
            run.trends.push(trend(&search.best.fit.loglik_trace));
            if rep == 0 {
                run.first_labels = label_csv(labels);
            }
        }
        run.secs = timer.elapsed().as_secs_f64();
        run
    })
}

#[test]
fn criterion_06_smiley_benchmark() {
    let run = smiley_run();
    let ari = median(&mut run.ari.clone());
    let mr = median(&mut run.mr.clone());
    let mut k2 = [0usize; 6];
    run.selected.iter().for_each(|s| k2[s.k()[1]] += 1);
    verdict(
        6,
        "smiley benchmark",
        ari >= 0.70 && mr <= 0.12 && run.secs < 1800.0,
        format!(
            "median ARI {ari:.3}, median m.r. {mr:.3} over {} replicates, selected k2 counts {:?}, {:.0}s",
            run.ari.len(),
            &k2[1..],
            run.secs
        ),
    );
}

fn wine_csv() -> Option<std::path::PathBuf> {
    if let Ok(p) = std::env::var("DGMM_WINE_CSV") {
        return Some(p.into());
    }
    // scikit-learn ships the 13-attribute UCI table with a count header line
    let roots = ["/usr/local/lib", "/usr/lib", "/opt/conda/lib"];
    for root in roots {
        let Ok(entries) = std::fs::read_dir(root) else { continue };
        for e in entries.flatten() {
            let name = e.file_name().to_string_lossy().into_owned();
            if !name.starts_with("python3") {
                continue;
            }
            for sub in ["dist-packages", "site-packages"] {
                let file = e.path().join(sub).join("sklearn/datasets/data/wine_data.csv");
                if file.exists() {
                    let text = std::fs::read_to_string(&file).ok()?;
                    let mut body: Vec<&str> = text.lines().skip(1).collect();
                    body.retain(|l| !l.trim().is_empty());
                    let width = body.first()?.split(',').count();
                    let mut out = (1..width).map(|j| format!("v{j}")).collect::<Vec<_>>().join(",");
                    out.push_str(",class\n");
                    for l in body {
                        out.push_str(l);
                        out.push('\n');
                    }
                    let dest = std::env::temp_dir().join("dgmm-acceptance-wine.csv");
                    std::fs::write(&dest, out).ok()?;
                    return Some(dest);
                }
            }
        }
    }
    None
}

struct WineRun {
    p: usize,
    deep_ari: f64,
    deep_mr: f64,
    flat_ari: f64,
    best: DgmmSpec,
    candidates: usize,
    trend: (f64, f64),
    secs: f64,
}

fn wine_run() -> Option<&'static WineRun> {
    static RUN: OnceLock<Option<WineRun>> = OnceLock::new();
    RUN.get_or_init(|| {
        let path = wine_csv()?;
        let _guard = heavy();
        let options = LoadOptions {
            label_column: Some(LabelColumn::Name("class".into())),
            ..LoadOptions::default()
        };
        let ds = standardize(&load_csv(&path, &options).unwrap());
        let truth = ds.labels.clone().unwrap();
        let seed = 7;
        let timer = Instant::now();
        let space = SearchSpace {
            depths: vec![2],
            deep_k: vec![1..=5],
            r_chains: None,
        };
        let config = FitConfig { seed, ..FitConfig::default() };
        let search = model_search(&ds.x, 3, &space, &config, Some(&truth)).unwrap();
        let secs = timer.elapsed().as_secs_f64();
        let flat = fit_gmm(&ds.x, 3, &GmmConfig { seed, ..GmmConfig::default() }).unwrap();
        let labels = &search.best.fit.labels;
        Some(WineRun {
            p: ds.p(),
            deep_ari: adjusted_rand_index(&truth, labels).unwrap(),
            deep_mr: misclassification_rate(&truth, labels).unwrap(),
            flat_ari: adjusted_rand_index(&truth, &flat.labels).unwrap(),
            best: search.best.spec.clone(),
            candidates: search.table.len(),
            trend: trend(&search.best.fit.loglik_trace),
            secs,
        })
    })
    .as_ref()
}

#[test]
fn criterion_07_wine() {
    let Some(run) = wine_run() else {
        verdict(7, "wine reproduction", false, "no wine CSV found; set DGMM_WINE_CSV".into());
        return;
    };
    let in_time = run.secs < 900.0;
    let detail = format!(
        "p = {}, {} candidates, selected {}, deep ARI {:.3} (m.r. {:.3}), flat GMM ARI {:.3}, {:.0}s",
        run.p, run.candidates, run.best, run.deep_ari, run.deep_mr, run.flat_ari, run.secs
    );
    if run.p == 27 {
        verdict(7, "wine reproduction", run.deep_ari >= 0.95 && in_time, detail);
    } else {
        verdict(
            7,
            "wine property check (13-attribute variant)",
            run.deep_ari >= run.flat_ari && in_time,
            detail,
        );
    }
}

#[test]
fn criterion_08_sem_trend() {
    let mut failures = Vec::new();
    let fa = fa_run();
    if fa.trend.1 < fa.trend.0 {
        failures.push("factor analysis".to_string());
    }
    let smiley = smiley_run();
    for (i, t) in smiley.trends.iter().enumerate() {
        if t.1 < t.0 {
            failures.push(format!("smiley replicate {}", i + 1));
        }
    }
    let mut runs = 1 + smiley.trends.len();
    if let Some(w) = wine_run() {
        runs += 1;
        if w.trend.1 < w.trend.0 {
            failures.push("wine".into());
        }
    }
    verdict(
        8,
        "SEM log-likelihood trend",
        failures.is_empty(),
        format!("{} of {runs} retained chains decreased: {failures:?}", failures.len()),
    );
}

/// Exhaustive oracle: best matching over every partial injective map from
/// predicted labels to true labels.
fn brute_force_mr(truth: &[usize], pred: &[usize], k: usize) -> f64 {
    fn rec(p: usize, k: usize, used: &mut [bool], map: &mut [Option<usize>], t: &[usize], q: &[usize], best: &mut usize) {
        if p == k {
            let hits = t.iter().zip(q).filter(|(a, b)| map[**b] == Some(**a)).count();
            *best = (*best).max(hits);
            return;
        }
        map[p] = None;
        rec(p + 1, k, used, map, t, q, best);
        for c in 0..k {
            if !used[c] {
                used[c] = true;
                map[p] = Some(c);
                rec(p + 1, k, used, map, t, q, best);
                used[c] = false;
            }
        }
        map[p] = None;
    }
    let mut best = 0;
    rec(0, k, &mut vec![false; k], &mut vec![None; k], truth, pred, &mut best);
    1.0 - best as f64 / truth.len() as f64
}

/// Pair-counting oracle for the adjusted Rand index.
fn pair_count_ari(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut both, mut in_a, mut in_b) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let sa = a[i] == a[j];
            let sb = b[i] == b[j];
            both += f64::from(u8::from(sa && sb));
            in_a += f64::from(u8::from(sa));
            in_b += f64::from(u8::from(sb));
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let expected = in_a * in_b / pairs;
    let max = 0.5 * (in_a + in_b);
    if max == expected {
        return 1.0;
    }
    (both - expected) / (max - expected)
}

#[test]
fn criterion_09_metric_suite() {
    let timer = Instant::now();
    let mut hand = adjusted_rand_index(&[1, 1, 2, 2], &[1, 2, 1, 2]).unwrap() == -0.5;
    hand &= misclassification_rate(&[1, 1, 1, 2], &[1, 2, 2, 2]).unwrap() == 0.5;
    hand &= adjusted_rand_index(&[1, 2, 2, 3], &[1, 2, 2, 3]).unwrap() == 1.0;
    hand &= misclassification_rate(&[1, 1, 2, 2], &[2, 2, 1, 1]).unwrap() == 0.0;

    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let (mut mr_mismatch, mut ari_worst): (usize, f64) = (0, 0.0);
    for _ in 0..1000 {
        let n = rng.random_range(2..=8);
        let k = rng.random_range(1..=3);
        let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let b: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        if misclassification_rate(&a, &b).unwrap() != brute_force_mr(&a, &b, k) {
            mr_mismatch += 1;
        }
        ari_worst = ari_worst.max((adjusted_rand_index(&a, &b).unwrap() - pair_count_ari(&a, &b)).abs());
    }
    let secs = timer.elapsed().as_secs_f64();
    verdict(
        9,
        "metric unit suite",
        hand && mr_mismatch == 0 && ari_worst < 1e-12 && secs < 5.0,
        format!("hand values exact = {hand}, m.r. mismatches {mr_mismatch}/1000, ARI max deviation {ari_worst:.1e}, {secs:.2}s"),
    );
}

#[test]
fn criterion_10_determinism() {
    let first = &smiley_run().first_labels;
    let _guard = heavy();
    let (again, _) = smiley_replicate(0);
    let bytes = label_csv(&again.best.fit.labels);
    verdict(
        10,
        "determinism",
        &bytes == first,
        format!("{} label bytes, identical = {}", bytes.len(), &bytes == first),
    );
}
