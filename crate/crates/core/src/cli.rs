//! Command-line front end. Exit codes: 0 success, 2 usage or validation
//! error, 1 runtime failure.

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::ops::RangeInclusive;
use std::path::{Path as FsPath, PathBuf};
use std::time::Instant;

use crate::data::{
    generate_smiley, load_csv, load_labels, save_csv, standardize, Dataset, LabelColumn, LoadOptions,
};
use crate::error::{DgmmError, Result};
use crate::metrics::{adjusted_rand_index, misclassification_rate};
use crate::model::{classify, load_params, path_posteriors, save_params, DgmmSpec, Path};
use crate::selection::{model_search, write_score_table, SearchSpace};
use crate::sem::{fit, EStepMode, FitConfig, FitResult};

#[derive(Debug, Parser)]
#[command(name = "dgmm", version, about = "Deep Gaussian mixture models")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one architecture.
    Fit(FitArgs),
    /// Label new data with a fitted parameter file.
    Predict(PredictArgs),
    /// Search architectures by BIC.
    Select(SelectArgs),
    /// Generate a synthetic dataset.
    Generate {
        #[command(subcommand)]
        what: GenerateCommand,
    },
    /// Compare two label files.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Label column (name, or one-based position).
    #[arg(long)]
    pub labels: Option<String>,
    #[arg(long)]
    pub no_header: bool,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    /// Center and scale every column before fitting.
    #[arg(long)]
    pub standardize: bool,
}

#[derive(Debug, Args)]
pub struct SemArgs {
    #[arg(long, default_value_t = 10)]
    pub starts: usize,
    #[arg(long, default_value_t = 200)]
    pub iters: usize,
    #[arg(long, default_value_t = 20)]
    pub burn_in: usize,
    /// Monte-Carlo replicates per observation.
    #[arg(long, default_value_t = 10)]
    pub replicates: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Use closed-form conditional moments instead of replicate averages.
    #[arg(long)]
    pub exact_moments: bool,
}

impl SemArgs {
    fn config(&self, seed: u64) -> FitConfig {
        FitConfig {
            m_replicates: self.replicates,
            max_iters: self.iters,
            burn_in: self.burn_in,
            n_starts: self.starts,
            seed,
            tol: self.tol,
            e_step_mode: if self.exact_moments {
                EStepMode::ExactMoments
            } else {
                EStepMode::MonteCarlo
            },
            ..FitConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Number of layers; must match the chains when given.
    #[arg(long)]
    pub h: Option<usize>,
    /// Components per layer, e.g. 4,1.
    #[arg(long)]
    pub k: String,
    /// Latent dimensions per layer, e.g. 2,1.
    #[arg(long)]
    pub r: String,
    #[command(flatten)]
    pub sem: SemArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub params: PathBuf,
    /// Standardization file written by `fit --standardize`.
    #[arg(long)]
    pub standardization: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub k1: usize,
    /// Depth or inclusive depth range, e.g. 2 or 1..3.
    #[arg(long, default_value = "1..3")]
    pub h: String,
    #[arg(long, default_value = "1..5")]
    pub k2: String,
    #[arg(long, default_value = "1..5")]
    pub k3: String,
    /// Restrict to these dimension chains (repeatable), e.g. 2,1.
    #[arg(long)]
    pub r: Vec<String>,
    #[command(flatten)]
    pub sem: SemArgs,
    /// Refit the winner with this many starts.
    #[arg(long)]
    pub refit_starts: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum GenerateCommand {
    /// Four-class face in two dimensions plus a noise coordinate.
    Smiley {
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0.45)]
        sd_eyes: f64,
        #[arg(long, default_value_t = 0.35)]
        sd_mouth: f64,
        #[arg(long, default_value_t = 0.5)]
        sd_noise: f64,
        /// Output CSV; defaults to smiley.csv in a fresh output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long = "true")]
    pub truth: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
}

/// Parses `4,1` into a per-layer chain.
pub fn parse_chain(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| DgmmError::InvalidArgument(format!("'{text}' is not a comma-separated list of integers")))
        })
        .collect()
}

/// Parses `3` or an inclusive range `1..5`.
pub fn parse_range(text: &str) -> Result<RangeInclusive<usize>> {
    let bad = || DgmmError::InvalidArgument(format!("'{text}' is not an integer or a range like 1..5"));
    let (lo, hi) = match text.split_once("..") {
        Some((a, b)) => (a.trim(), b.trim().trim_start_matches('=')),
        None => (text.trim(), text.trim()),
    };
    let lo: usize = lo.parse().map_err(|_| bad())?;
    let hi: usize = hi.parse().map_err(|_| bad())?;
    if lo > hi {
        return Err(bad());
    }
    Ok(lo..=hi)
}

/// Key/value record of one run, written as `manifest.txt`.
#[derive(Debug, Default)]
struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    fn new(command: &str, args: &[OsString]) -> Self {
        let mut m = Self::default();
        m.set("command", command);
        let echo: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
        m.set("args", echo.join(" "));
        m.set("version", env!("CARGO_PKG_VERSION"));
        m
    }

    fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string().replace('\n', " ");
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    fn fingerprint(&mut self, prefix: &str, path: &FsPath) -> Result<()> {
        let bytes = std::fs::read(path)?;
        let digest = Sha256::digest(&bytes);
        let mut hex = String::with_capacity(64);
        for b in digest {
            let _ = write!(hex, "{b:02x}");
        }
        self.set(&format!("{prefix}_path"), path.display());
        self.set(&format!("{prefix}_bytes"), bytes.len());
        self.set(&format!("{prefix}_sha256"), hex);
        Ok(())
    }

    fn write(&self, dir: &FsPath) -> Result<()> {
        let mut text = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(text, "{k}={v}");
        }
        std::fs::write(dir.join("manifest.txt"), text)?;
        Ok(())
    }
}

fn output_dir(requested: Option<&PathBuf>, command: &str) -> Result<PathBuf> {
    let dir = match requested {
        Some(d) => d.clone(),
        None => {
            let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
            let base = PathBuf::from("out").join(format!("{stamp}-{command}"));
            let mut dir = base.clone();
            let mut i = 1;
            while dir.exists() {
                i += 1;
                dir = PathBuf::from(format!("{}-{i}", base.display()));
            }
            dir
        }
    };
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn load_dataset(args: &DataArgs) -> Result<Dataset> {
    if !args.delimiter.is_ascii() {
        return Err(DgmmError::InvalidArgument("the delimiter must be an ASCII character".into()));
    }
    let label_column = args.labels.as_ref().map(|l| {
        if args.no_header {
            match l.parse::<usize>() {
                Ok(i) if i >= 1 => LabelColumn::Index(i - 1),
                _ => LabelColumn::Name(l.clone()),
            }
        } else {
            LabelColumn::Name(l.clone())
        }
    });
    let options = LoadOptions {
        has_header: !args.no_header,
        label_column,
        delimiter: args.delimiter as u8,
    };
    let ds = load_csv(&args.data, &options)?;
    Ok(if args.standardize { standardize(&ds) } else { ds })
}

fn write_labels(path: &FsPath, labels: &[usize]) -> Result<()> {
    let mut text = String::with_capacity(labels.len() * 3 + 6);
    text.push_str("class\n");
    for l in labels {
        let _ = writeln!(text, "{l}");
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn write_trace(path: &FsPath, trace: &[f64]) -> Result<()> {
    let mut text = String::from("iteration,loglik\n");
    for (i, v) in trace.iter().enumerate() {
        let _ = writeln!(text, "{},{v:?}", i + 1);
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn write_standardization(path: &FsPath, ds: &Dataset) -> Result<()> {
    if let Some(s) = &ds.standardization {
        let mut text = String::from("column,mean,sd,constant\n");
        for j in 0..s.means.len() {
            let _ = writeln!(text, "{},{:?},{:?},{}", j + 1, s.means[j], s.sds[j], s.constant[j]);
        }
        std::fs::write(path, text)?;
    }
    Ok(())
}

fn apply_standardization(path: &FsPath, x: &mut DMatrix<f64>) -> Result<()> {
    let opts = LoadOptions::default();
    let table = load_csv(path, &opts)?;
    if table.p() < 3 || table.n() != x.ncols() {
        return Err(DgmmError::InvalidArgument(format!(
            "{} does not describe {} columns",
            path.display(),
            x.ncols()
        )));
    }
    for j in 0..x.ncols() {
        let (mean, sd) = (table.x[(j, 1)], table.x[(j, 2)]);
        x.column_mut(j).iter_mut().for_each(|v| *v = (*v - mean) / sd);
    }
    Ok(())
}

fn report<W: Write>(out: &mut W, result: &FitResult, truth: Option<&[usize]>) -> Result<Vec<(String, String)>> {
    let mut lines = vec![
        ("loglik".to_string(), format!("{:.6}", result.loglik)),
        ("bic".to_string(), format!("{:.6}", result.bic)),
        ("n_params".to_string(), result.n_params.to_string()),
        ("iterations".to_string(), result.loglik_trace.len().to_string()),
        ("converged".to_string(), result.converged.to_string()),
    ];
    if let Some(t) = truth {
        lines.push(("ari".into(), format!("{:.6}", adjusted_rand_index(t, &result.labels)?)));
        lines.push(("misclassification".into(), format!("{:.6}", misclassification_rate(t, &result.labels)?)));
    }
    for (k, v) in &lines {
        writeln!(out, "{k}: {v}")?;
    }
    Ok(lines)
}

fn write_fit_artifacts(dir: &FsPath, ds: &Dataset, result: &FitResult) -> Result<()> {
    save_params(dir.join("params.txt"), &result.averaged_params)?;
    write_labels(&dir.join("labels.csv"), &result.labels)?;
    write_trace(&dir.join("trace.csv"), &result.loglik_trace)?;
    write_standardization(&dir.join("standardization.csv"), ds)
}

fn cmd_fit<W: Write>(cli: &Cli, args: &FitArgs, raw: &[OsString], out: &mut W) -> Result<()> {
    let k = parse_chain(&args.k)?;
    let r = parse_chain(&args.r)?;
    if let Some(h) = args.h {
        if h != k.len() || h != r.len() {
            return Err(DgmmError::InvalidSpec(format!(
                "--h {h} does not match --k ({} layers) and --r ({} layers)",
                k.len(),
                r.len()
            )));
        }
    }
    let ds = load_dataset(&args.data)?;
    let spec = DgmmSpec::new(ds.p(), k, r)?;
    let config = args.sem.config(cli.seed);
    config.validate()?;

    let timer = Instant::now();
    let result = fit(&spec, &ds.x, &config)?;
    let elapsed = timer.elapsed().as_secs_f64();

    let dir = output_dir(args.out.as_ref(), "fit")?;
    write_fit_artifacts(&dir, &ds, &result)?;
    writeln!(out, "spec: {spec}")?;
    let lines = report(out, &result, ds.labels.as_deref())?;
    writeln!(out, "output: {}", dir.display())?;

    let mut m = Manifest::new("fit", raw);
    m.fingerprint("data", &args.data.data)?;
    m.set("seed", cli.seed);
    m.set("spec", &spec);
    m.set("config", format!("{config:?}"));
    m.set("n", ds.n());
    for (k, v) in lines {
        m.set(&k, v);
    }
    m.set("elapsed_s", format!("{elapsed:.3}"));
    m.write(&dir)
}

fn cmd_predict<W: Write>(args: &PredictArgs, raw: &[OsString], out: &mut W) -> Result<()> {
    let params = load_params(&args.params)?;
    let mut ds = load_dataset(&args.data)?;
    if let Some(path) = &args.standardization {
        apply_standardization(path, &mut ds.x)?;
    }
    if ds.p() != params.spec().p() {
        return Err(DgmmError::DimensionMismatch {
            expected: params.spec().p(),
            found: ds.p(),
        });
    }
    let labels = classify(&params, &ds.x)?;
    let (post, ll) = path_posteriors(&params, &ds.x)?;

    let dir = output_dir(args.out.as_ref(), "predict")?;
    write_labels(&dir.join("labels.csv"), &labels)?;
    let mut text = String::new();
    let names: Vec<String> = (0..post.ncols())
        .map(|i| format!("\"{}\"", Path::from_index(params.spec(), i)))
        .collect();
    let _ = writeln!(text, "{}", names.join(","));
    for i in 0..post.nrows() {
        let row: Vec<String> = post.row(i).iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(text, "{}", row.join(","));
    }
    std::fs::write(dir.join("posteriors.csv"), text)?;

    writeln!(out, "loglik: {ll:.6}")?;
    if let Some(t) = &ds.labels {
        writeln!(out, "ari: {:.6}", adjusted_rand_index(t, &labels)?)?;
        writeln!(out, "misclassification: {:.6}", misclassification_rate(t, &labels)?)?;
    }
    writeln!(out, "output: {}", dir.display())?;

    let mut m = Manifest::new("predict", raw);
    m.fingerprint("data", &args.data.data)?;
    m.fingerprint("params", &args.params)?;
    m.set("spec", params.spec());
    m.set("loglik", format!("{ll:?}"));
    m.write(&dir)
}

fn cmd_select<W: Write>(cli: &Cli, args: &SelectArgs, raw: &[OsString], out: &mut W) -> Result<()> {
    let depths = parse_range(&args.h)?;
    let r_chains = if args.r.is_empty() {
        None
    } else {
        Some(args.r.iter().map(|c| parse_chain(c)).collect::<Result<Vec<_>>>()?)
    };
    let space = SearchSpace {
        depths: depths.collect(),
        deep_k: vec![parse_range(&args.k2)?, parse_range(&args.k3)?],
        r_chains,
    };
    if args.k1 == 0 {
        return Err(DgmmError::InvalidSpec("--k1 must be at least 1".into()));
    }
    let ds = load_dataset(&args.data)?;
    let config = args.sem.config(cli.seed);
    config.validate()?;

    let timer = Instant::now();
    let search = model_search(&ds.x, args.k1, &space, &config, ds.labels.as_deref())?;
    let mut best = search.best.fit.clone();
    if let Some(starts) = args.refit_starts {
        let cfg = FitConfig { n_starts: starts, ..config.clone() };
        cfg.validate()?;
        best = fit(&search.best.spec, &ds.x, &cfg)?;
    }
    let elapsed = timer.elapsed().as_secs_f64();

    let dir = output_dir(args.out.as_ref(), "select")?;
    let file = std::fs::File::create(dir.join("scores.csv"))?;
    write_score_table(std::io::BufWriter::new(file), &search.table)?;
    write_fit_artifacts(&dir, &ds, &best)?;

    writeln!(out, "candidates: {}", search.table.len())?;
    writeln!(out, "best: {}", search.best.spec)?;
    let lines = report(out, &best, ds.labels.as_deref())?;
    writeln!(out, "output: {}", dir.display())?;

    let mut m = Manifest::new("select", raw);
    m.fingerprint("data", &args.data.data)?;
    m.set("seed", cli.seed);
    m.set("config", format!("{config:?}"));
    m.set("search_space", format!("{space:?}"));
    m.set("candidates", search.table.len());
    m.set("best_spec", &search.best.spec);
    for (k, v) in lines {
        m.set(&k, v);
    }
    m.set("elapsed_s", format!("{elapsed:.3}"));
    m.write(&dir)
}

fn cmd_generate<W: Write>(cli: &Cli, what: &GenerateCommand, raw: &[OsString], out: &mut W) -> Result<()> {
    let GenerateCommand::Smiley { n, sd_eyes, sd_mouth, sd_noise, out: target } = what;
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    let ds = generate_smiley(*n, *sd_eyes, *sd_mouth, *sd_noise, &mut rng)?;
    let path = match target {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            p.clone()
        }
        None => output_dir(None, "generate")?.join("smiley.csv"),
    };
    save_csv(&path, &ds)?;
    writeln!(out, "wrote {} rows to {}", ds.n(), path.display())?;

    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(FsPath::new("."));
    let mut m = Manifest::new("generate", raw);
    m.set("seed", cli.seed);
    m.fingerprint("output", &path)?;
    m.write(dir)
}

fn cmd_evaluate<W: Write>(args: &EvaluateArgs, out: &mut W) -> Result<()> {
    let truth = load_labels(&args.truth)?;
    let pred = load_labels(&args.pred)?;
    if truth.len() != pred.len() {
        return Err(DgmmError::DimensionMismatch {
            expected: truth.len(),
            found: pred.len(),
        });
    }
    writeln!(out, "ari: {:.6}", adjusted_rand_index(&truth, &pred)?)?;
    writeln!(out, "misclassification: {:.6}", misclassification_rate(&truth, &pred)?)?;
    Ok(())
}

/// Runs a parsed command, writing the human-readable summary to `out`.
pub fn execute<W: Write>(cli: &Cli, raw: &[OsString], out: &mut W) -> Result<()> {
    match &cli.command {
        Command::Fit(a) => cmd_fit(cli, a, raw, out),
        Command::Predict(a) => cmd_predict(a, raw, out),
        Command::Select(a) => cmd_select(cli, a, raw, out),
        Command::Generate { what } => cmd_generate(cli, what, raw, out),
        Command::Evaluate(a) => cmd_evaluate(a, out),
    }
}

/// Entry point shared by the binary; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let raw: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&raw) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return 2;
        }
        // Only the first call in a process can configure the global pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match execute(&cli, &raw[1.min(raw.len())..], &mut out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                2
            } else {
                1
            }
        }
    }
}
