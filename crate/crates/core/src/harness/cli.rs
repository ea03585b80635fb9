//! Command-line front end. Exit codes: 0 success, 1 usage, 2 data or
//! format error, 3 numerical failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forward::{axis_angles, AtomSet, FibreOrientation, Fodf};
use crate::healpix::GridResolution;
use crate::net::{train, NetParams, SphericalUNet};

use super::config::Config;
use super::io::{self, EvalRow, PatternStack, SignalSet};
use super::metrics::{acc, fodf_atom_values, jsd_values, matched_errors};
use super::peaks::extract_fodf_peaks;
use super::pipeline::Pipeline;
use super::synthetic::{derive_seed, generate_synthetic, random_spec, SyntheticSpec};

#[derive(Debug, Parser)]
#[command(name = "slifodf", version, about = "Fibre orientation distributions from scattering patterns")]
struct Cli {
    /// Configuration file (TOML); missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Kernel-bank cache file, reused when its header matches.
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    /// Worker threads (overrides the config; 0 uses all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic pattern stack and its groundtruth sidecar.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// JSON list of fibre configurations; random configurations otherwise.
        #[arg(long)]
        specs: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Project every pattern of a stack onto the sphere.
    Project {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-pattern direct solve.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the network on a stack and write a checkpoint.
    Train {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch loss table (CSV).
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Predict fODFs with a trained checkpoint.
    Predict {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare an fODF file with groundtruth or with another fODF file.
    Eval {
        #[arg(long)]
        estimate: PathBuf,
        /// Pattern stack whose sidecar holds the groundtruth.
        #[arg(long, conflicts_with = "reference", required_unless_present = "reference")]
        truth: Option<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Machine-readable table.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Print the default configuration.
    Defaults,
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(w) = cli.workers {
        config.workers = w;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    pool.install(|| dispatch(&cli, &config))
}

fn pipeline(config: &Config, cache: Option<&Path>) -> Result<Pipeline> {
    match cache {
        Some(p) => Pipeline::with_cache(config, p),
        None => Pipeline::new(config),
    }
}

fn dispatch(cli: &Cli, config: &Config) -> Result<()> {
    let cache = cli.cache.as_deref();
    match &cli.command {
        Command::Defaults => {
            print!("{}", config.to_toml());
            Ok(())
        }
        Command::Synth { out, specs, count, seed } => {
            let pl = pipeline(config, cache)?;
            let specs: Vec<SyntheticSpec> = match specs {
                Some(p) => {
                    let text = std::fs::read_to_string(p)?;
                    let raw: Vec<SyntheticSpec> =
                        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))?;
                    raw.into_iter().map(|s| SyntheticSpec::new(s.fibres, s.noise, s.seed)).collect::<Result<_>>()?
                }
                None => {
                    let n = count.unwrap_or(config.synth_count);
                    let seed = seed.unwrap_or(config.seed);
                    (0..n).map(|i| random_spec(&pl, derive_seed(seed, i as u64))).collect()
                }
            };
            let stack = synthesize(&pl, &specs)?;
            io::write_stack(out, &stack)?;
            eprintln!("wrote {} patterns to {}", stack.len(), out.display());
            Ok(())
        }
        Command::Project { input, out } => {
            let pl = pipeline(config, cache)?;
            let stack = io::read_stack(input)?;
            let signals = stack.patterns.par_iter().map(|p| pl.project(p)).collect::<Result<Vec<_>>>()?;
            let set = SignalSet { n_side: pl.mask.n_side(), pixels: pl.mask.pixels().to_vec(), signals };
            io::write_signals(out, &set)
        }
        Command::Fit { input, out } => {
            let pl = pipeline(config, cache)?;
            let stack = io::read_stack(input)?;
            let fodfs = stack.patterns.par_iter().map(|p| pl.fit(p).map(|r| r.fodf)).collect::<Result<Vec<_>>>()?;
            io::write_fodfs(out, &fodfs)
        }
        Command::Train { input, out, history } => {
            let pl = pipeline(config, cache)?;
            let stack = io::read_stack(input)?;
            let data = stack.patterns.par_iter().map(|p| pl.project(p)).collect::<Result<Vec<_>>>()?;
            let net = pl.network()?;
            let report = train(&net, net.init_params(config.seed), &data, &pl.objective(), &config.train_config())?;
            for (e, h) in report.history.iter().enumerate() {
                eprintln!("epoch {e:>3}  loss {:.6}  (r {:.6}  s {:.6}  n {:.6})", h.l_total, h.l_r, h.l_s, h.l_n);
            }
            if let Some(path) = history {
                write_history(path, &report.history)?;
            }
            net.write_checkpoint(&report.params, out)
        }
        Command::Predict { input, checkpoint, out } => {
            let pl = pipeline(config, cache)?;
            let net = pl.network()?;
            let params: NetParams = net.read_checkpoint(checkpoint)?;
            let stack = io::read_stack(input)?;
            let fodfs = predict_stack(&pl, &net, &params, &stack)?;
            io::write_fodfs(out, &fodfs)
        }
        Command::Eval { estimate, truth, reference, csv } => {
            let atoms = AtomSet::new(GridResolution::new(config.n_side_fodf)?);
            let est = io::read_fodfs(estimate)?;
            let rows = match (truth, reference) {
                (Some(t), _) => {
                    let stack = io::read_stack(t)?;
                    if stack.len() != est.len() {
                        return Err(Error::Shape(format!("{} fODFs for {} patterns", est.len(), stack.len())));
                    }
                    stack.groundtruth.iter().map(|(&i, spec)| eval_truth(i, &est[i], spec, &atoms, config)).collect::<Vec<_>>()
                }
                (None, Some(r)) => {
                    let other = io::read_fodfs(r)?;
                    if other.len() != est.len() {
                        return Err(Error::Shape(format!("{} fODFs against {}", est.len(), other.len())));
                    }
                    est.iter().zip(&other).enumerate().map(|(i, (a, b))| eval_pair(i, a, b, &atoms, config)).collect()
                }
                (None, None) => unreachable!("clap requires one comparison target"),
            };
            print_table(&rows);
            if let Some(path) = csv {
                io::write_eval_csv(path, &rows)?;
            }
            Ok(())
        }
    }
}

/// Render specs into a stack; intensities are rounded to the stored float32
/// precision so that the stack round-trips exactly.
pub fn synthesize(pl: &Pipeline, specs: &[SyntheticSpec]) -> Result<PatternStack> {
    let patterns = specs
        .par_iter()
        .map(|s| {
            let (p, _) = generate_synthetic(s, pl)?;
            let data = p.data().iter().map(|&v| v as f32 as f64).collect();
            crate::projection::ScatteringPattern::new(p.width(), p.height(), data)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut stack = PatternStack::new(patterns)?;
    stack.groundtruth = specs.iter().cloned().enumerate().collect();
    Ok(stack)
}

/// Network predictions for every pattern, in stack order.
pub fn predict_stack(pl: &Pipeline, net: &SphericalUNet, params: &NetParams, stack: &PatternStack) -> Result<Vec<Fodf>> {
    stack.patterns.par_iter().map(|p| pl.predict(net, params, p)).collect()
}

fn mean_angle_deg(truth: &[FibreOrientation], est: &[FibreOrientation]) -> f64 {
    if truth.is_empty() {
        return f64::NAN;
    }
    let errs = matched_errors(truth, est);
    errs.iter().sum::<f64>().to_degrees() / errs.len() as f64
}

/// Metrics of an estimate against a synthetic groundtruth; undefined
/// metrics are reported as NaN.
pub fn eval_truth(index: usize, est: &Fodf, spec: &SyntheticSpec, atoms: &AtomSet, config: &Config) -> EvalRow {
    let truth_sh = spec.sh_coeffs(est.sh.l_max());
    let truth_vals: Vec<f64> = atoms
        .axes()
        .iter()
        .map(|&a| {
            let (t, p) = axis_angles(a);
            truth_sh.eval_at(t, p)
        })
        .collect();
    let peaks = extract_fodf_peaks(est, atoms, config.top_k, config.min_separation_deg.to_radians(), config.peak_threshold);
    let fibres: Vec<FibreOrientation> = spec.fibres.iter().map(|f| f.orientation).collect();
    EvalRow {
        index,
        acc: acc(&est.sh, &truth_sh).unwrap_or(f64::NAN),
        jsd: jsd_values(&fodf_atom_values(est, atoms), &truth_vals).unwrap_or(f64::NAN),
        angular_error_deg: mean_angle_deg(&fibres, &peaks),
    }
}

/// Metrics of one estimate against another; peak errors use the
/// reference's peaks as truth.
pub fn eval_pair(index: usize, est: &Fodf, reference: &Fodf, atoms: &AtomSet, config: &Config) -> EvalRow {
    let sep = config.min_separation_deg.to_radians();
    let pe = extract_fodf_peaks(est, atoms, config.top_k, sep, config.peak_threshold);
    let pr = extract_fodf_peaks(reference, atoms, config.top_k, sep, config.peak_threshold);
    EvalRow {
        index,
        acc: acc(&est.sh, &reference.sh).unwrap_or(f64::NAN),
        jsd: jsd_values(&fodf_atom_values(est, atoms), &fodf_atom_values(reference, atoms)).unwrap_or(f64::NAN),
        angular_error_deg: mean_angle_deg(&pr, &pe),
    }
}

fn nan_mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.filter(|x| x.is_finite()).fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn print_table(rows: &[EvalRow]) {
    println!("{:>6} {:>8} {:>8} {:>10}", "index", "acc", "jsd", "ang_deg");
    for r in rows {
        println!("{:>6} {:>8.4} {:>8.4} {:>10.3}", r.index, r.acc, r.jsd, r.angular_error_deg);
    }
    println!(
        "{:>6} {:>8.4} {:>8.4} {:>10.3}",
        "mean",
        nan_mean(rows.iter().map(|r| r.acc)),
        nan_mean(rows.iter().map(|r| r.jsd)),
        nan_mean(rows.iter().map(|r| r.angular_error_deg))
    );
}

fn write_history(path: &Path, history: &[crate::estimation::LossBreakdown]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    w.write_record(["epoch", "l_total", "l_r", "l_s", "l_n"]).map_err(|e| Error::Format(e.to_string()))?;
    for (e, h) in history.iter().enumerate() {
        w.write_record([e.to_string(), h.l_total.to_string(), h.l_r.to_string(), h.l_s.to_string(), h.l_n.to_string()])
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
