mod config;
mod dataset;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use canon_core::eval::{
    evaluate_suite, format_sweep_csv, predict_map, sweep, write_suite_csv, write_suite_json, PointEmbedder,
    RawCoordinates, SweepAxis, TestSuite,
};
use canon_core::geom::io::{load_cloud, save_map};
use canon_core::geom::{gen_dataset, Partiality, DEFAULT_KNN};
use canon_core::gradcheck::run_suite;
use canon_core::train::{fit, load_checkpoint, save_checkpoint, write_log, Checkpoint, FitOptions};

use config::{resolve, TrainOptions, Usage};
use dataset::{load_dataset, write_dataset, Generator};

/// Learned canonical embeddings for non-rigid point cloud correspondence.
#[derive(Parser, Debug)]
#[command(name = "canonmatch", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic shape pairs with ground-truth maps
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        pairs: usize,
        /// Points per generated shape
        #[arg(long, default_value_t = 1000)]
        points: usize,
        #[arg(long, default_value_t = Partiality::None)]
        partial: Partiality,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train an encoder and write a checkpoint and training log
    Train {
        #[arg(long)]
        data: PathBuf,
        /// JSON file with flat keys named like the flags
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint manifest path (layer files are written next to it)
        #[arg(long)]
        out: PathBuf,
        /// Training log CSV (default: <out stem>.log.csv)
        #[arg(long)]
        log: Option<PathBuf>,
        /// Record wall-clock time in the log (logs stop being reproducible)
        #[arg(long)]
        timing: bool,
        #[command(flatten)]
        opts: TrainOptions,
    },
    /// Match a source cloud to a target cloud by nearest neighbour
    Match {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Expected embedding size of the checkpoint
        #[arg(long)]
        k: Option<usize>,
    },
    /// Evaluate a checkpoint (or the raw-coordinate baseline) on a dataset
    Eval {
        /// Checkpoint manifest; omit with --raw
        #[arg(long, required_unless_present = "raw")]
        ckpt: Option<PathBuf>,
        /// Use coordinates as the embedding instead of a checkpoint
        #[arg(long, conflicts_with = "ckpt")]
        raw: bool,
        #[arg(long)]
        data: PathBuf,
        /// Output directory for report.json, report.csv and predicted maps
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        /// Neighbours per point of the geodesic graph
        #[arg(long, default_value_t = DEFAULT_KNN)]
        knn: usize,
    },
    /// Train one model per value of an axis and evaluate each
    Sweep {
        #[arg(long)]
        data: PathBuf,
        /// Held-out dataset
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// embedding_size or train_size
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
        /// Output CSV
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_KNN)]
        knn: usize,
        #[command(flatten)]
        opts: TrainOptions,
    },
    /// Run the finite-difference gradient suite
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

/// Gradient checks that exceeded their tolerance.
#[derive(Debug)]
struct GradientMismatch(usize);

impl std::fmt::Display for GradientMismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} gradient checks failed", self.0)
    }
}

impl std::error::Error for GradientMismatch {}

/// 2 usage, 4 numerical failure, 3 any other data problem.
fn exit_code(e: &anyhow::Error) -> ExitCode {
    if e.downcast_ref::<Usage>().is_some() {
        return ExitCode::from(2);
    }
    if e.downcast_ref::<GradientMismatch>().is_some() {
        return ExitCode::from(4);
    }
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<canon_core::Error>() {
            return ExitCode::from(if err.is_numerical() { 4 } else { 3 });
        }
    }
    ExitCode::from(3)
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Gen {
            out,
            pairs,
            points,
            partial,
            seed,
        } => cmd_gen(&out, pairs, points, partial, seed),
        Command::Train {
            data,
            config,
            out,
            log,
            timing,
            opts,
        } => cmd_train(&data, config.as_deref(), &out, log, timing, opts),
        Command::Match {
            ckpt,
            source,
            target,
            out,
            k,
        } => cmd_match(&ckpt, &source, &target, &out, k),
        Command::Eval {
            ckpt,
            raw,
            data,
            out,
            k,
            knn,
        } => cmd_eval(ckpt.as_deref(), raw, &data, &out, k, knn),
        Command::Sweep {
            data,
            test,
            config,
            axis,
            values,
            out,
            knn,
            opts,
        } => cmd_sweep(&data, &test, config.as_deref(), axis, &values, &out, knn, opts),
        Command::Gradcheck { reps, seed } => cmd_gradcheck(reps, seed),
    }?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_gen(out: &Path, pairs: usize, points: usize, partial: Partiality, seed: u64) -> Result<()> {
    if pairs == 0 {
        return Err(Usage("--pairs must be positive".into()).into());
    }
    let generated = gen_dataset(pairs, points, partial, seed)?;
    let generator = Generator {
        pairs,
        points,
        partial,
        seed,
    };
    write_dataset(out, generator, &generated)?;
    println!("wrote {pairs} pairs to {}", out.display());
    Ok(())
}

fn default_log_path(ckpt: &Path) -> PathBuf {
    let stem = ckpt
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into());
    ckpt.with_file_name(format!("{stem}.log.csv"))
}

fn cmd_train(
    data: &Path,
    config: Option<&Path>,
    out: &Path,
    log: Option<PathBuf>,
    timing: bool,
    opts: TrainOptions,
) -> Result<()> {
    let cfg = resolve(opts, config)?;
    let (_, pairs) = load_dataset(data)?;
    let (ckpt, rows) = fit(&cfg, &pairs, FitOptions { timing })?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    save_checkpoint(out, &ckpt)?;
    let log = log.unwrap_or_else(|| default_log_path(out));
    write_log(&log, &rows)?;
    match rows.last() {
        Some(r) => println!(
            "{} iterations, final l_total {:.6}; checkpoint {}",
            rows.len(),
            r.loss.l_total,
            out.display()
        ),
        None => println!("no iterations; wrote initial checkpoint {}", out.display()),
    }
    Ok(())
}

fn load_checked(path: &Path, k: Option<usize>) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    if let Some(k) = k {
        if k != ckpt.params.k() {
            return Err(canon_core::Error::Incompatible(format!(
                "requested k = {k} but {} has k = {}",
                path.display(),
                ckpt.params.k()
            ))
            .into());
        }
    }
    Ok(ckpt)
}

fn cmd_match(ckpt: &Path, source: &Path, target: &Path, out: &Path, k: Option<usize>) -> Result<()> {
    let ckpt = load_checked(ckpt, k)?;
    let x = load_cloud(source)?;
    let y = load_cloud(target)?;
    let map = predict_map(&ckpt.params, &x, &y)?;
    save_map(out, &map)?;
    println!("wrote {} matches to {}", map.src_size(), out.display());
    Ok(())
}

fn cmd_eval(ckpt: Option<&Path>, raw: bool, data: &Path, out: &Path, k: Option<usize>, knn: usize) -> Result<()> {
    let (manifest, pairs) = load_dataset(data)?;
    let ids: Vec<String> = manifest.pairs.iter().map(|p| p.id.clone()).collect();
    let suite = TestSuite::new(data.display().to_string(), pairs, knn)?;
    let loaded;
    let (embedder, label): (&dyn PointEmbedder, String) = match (ckpt, raw) {
        (_, true) => (&RawCoordinates, RawCoordinates.describe()),
        (Some(path), false) => {
            loaded = load_checked(path, k)?;
            (&loaded.params, path.display().to_string())
        }
        (None, false) => return Err(Usage("either --ckpt or --raw is required".into()).into()),
    };
    let (mut report, maps) = evaluate_suite(embedder, &suite)?;
    report.meta.checkpoint = label;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_suite_json(&out.join("report.json"), &report)?;
    write_suite_csv(&out.join("report.csv"), &report)?;
    for (id, map) in ids.iter().zip(&maps) {
        save_map(&out.join(format!("{id}_pred.map")), map)?;
    }
    println!("mean_x100 {}", report.mean_x100);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    data: &Path,
    test: &Path,
    config: Option<&Path>,
    axis: SweepAxis,
    values: &[usize],
    out: &Path,
    knn: usize,
    opts: TrainOptions,
) -> Result<()> {
    let base = resolve(opts, config)?;
    let (_, train) = load_dataset(data)?;
    let (_, held) = load_dataset(test)?;
    let suite = TestSuite::new(test.display().to_string(), held, knn)?;
    let rows = sweep(axis, values, &base, &train, &suite)?;
    let csv = format_sweep_csv(axis, &rows);
    fs::write(out, &csv).with_context(|| format!("writing {}", out.display()))?;
    print!("{csv}");
    Ok(())
}

fn cmd_gradcheck(reps: usize, seed: u64) -> Result<()> {
    if reps == 0 {
        return Err(Usage("--reps must be positive".into()).into());
    }
    let outcomes = run_suite(reps, seed)?;
    let mut failed = 0;
    for o in &outcomes {
        let verdict = if o.passed() { "ok" } else { "FAIL" };
        println!(
            "{verdict:4} {:28} max rel err {:.3e} (tol {:.0e}, {} reps)",
            o.name, o.max_rel_error, o.tolerance, o.reps
        );
        failed += usize::from(!o.passed());
    }
    if failed > 0 {
        return Err(GradientMismatch(failed).into());
    }
    Ok(())
}
