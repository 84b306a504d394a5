//! `moece`: run channel-estimation experiments from a TOML config.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use moece::experiment::{Experiment, ExperimentConfig, CHECKPOINT_FILE};
use moece::pipeline::EvalReport;
use moece::Error;

const OUT_ROOT_ENV: &str = "MOECE_OUT_ROOT";

const EXIT_OTHER: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "moece", version, about = "Mixture-of-experts channel estimation laboratory")]
struct Cli {
    /// Worker threads for generation and evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory. Defaults to `$MOECE_OUT_ROOT/<output_dir>`, with
    /// `runs` as the root and the config file stem as the directory name.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overwrite an existing output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the train, test and zero-shot datasets.
    Generate(Common),
    /// Train and write the checkpoint and history.
    Train(Common),
    /// Evaluate the checkpoint on the test split.
    Eval(Common),
    /// Evaluate the checkpoint on the zero-shot split.
    Zeroshot(Common),
    /// Print and write the complexity table.
    Complexity(Common),
    /// Check a config without running anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate, train, evaluate, zero-shot evaluate and account complexity.
    Run(Common),
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Config { .. }) => EXIT_CONFIG,
        Some(Error::Divergence { .. }) => EXIT_DIVERGENCE,
        Some(Error::Io(_)) | Some(Error::Csv(_)) | Some(Error::Parse(_)) => EXIT_IO,
        _ => EXIT_OTHER,
    }
}

fn out_dir(c: &Common, cfg: &ExperimentConfig) -> PathBuf {
    if let Some(o) = &c.out {
        return o.clone();
    }
    let root = std::env::var_os(OUT_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
    let name = cfg.output_dir.clone().unwrap_or_else(|| {
        c.config
            .file_stem()
            .map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned())
    });
    root.join(name)
}

fn experiment(c: &Common) -> Result<Experiment, Error> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let out = out_dir(c, &cfg);
    Ok(Experiment::new(cfg, out))
}

fn print_report(title: &str, r: &EvalReport) {
    println!("{title}");
    println!(
        "{:>8} {:>12} {:>6} {:>12} {:>10} {:>8}",
        "snr_db", "profile", "n_rb", "nmse", "nmse_db", "samples"
    );
    for row in &r.rows {
        println!(
            "{:>8} {:>12} {:>6} {:>12.6} {:>10.3} {:>8}",
            row.snr_db, row.profile, row.n_rb, row.nmse_linear, row.nmse_db, row.samples
        );
    }
    if !r.usage.is_empty() {
        println!("expert usage by SNR:");
        for u in &r.usage {
            let f: Vec<String> = u.frequencies.iter().map(|v| format!("{v:.3}")).collect();
            println!("{:>8}  {}", u.snr_db, f.join(" "));
        }
    }
}

fn ensure_dir(path: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(path)?;
    Ok(())
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            println!("{}: ok ({:?}, seed {})", config.display(), cfg.kind, cfg.seed);
        }
        Command::Generate(c) => {
            let ex = experiment(&c)?;
            ex.prepare(c.force)?;
            for (split, ds) in ex.generate()? {
                println!("{}: {} samples", split.file_name(), ds.len());
            }
        }
        Command::Train(c) => {
            let ex = experiment(&c)?;
            ensure_dir(&ex.out)?;
            if ex.out.join(CHECKPOINT_FILE).exists() && !c.force {
                return Err(Error::usage(format!(
                    "{} already holds a checkpoint; pass --force to retrain",
                    ex.out.display()
                ))
                .into());
            }
            let (_, h) = ex.train()?;
            for r in &h.records {
                println!(
                    "epoch {:>3}  train {:.6}  val {}  usage [{:.3}, {:.3}]",
                    r.epoch,
                    r.train_nmse,
                    r.val_nmse.map_or_else(|| "-".into(), |v| format!("{v:.6}")),
                    r.min_usage,
                    r.max_usage
                );
            }
            ex.write_manifest()?;
        }
        Command::Eval(c) => {
            let ex = experiment(&c)?;
            print_report("test split", &ex.eval()?);
        }
        Command::Zeroshot(c) => {
            let ex = experiment(&c)?;
            if ex.config.zero_shot.is_none() {
                return Err(Error::config("zero_shot", "config has no zero_shot section").into());
            }
            print_report("zero-shot split", &ex.zeroshot()?);
        }
        Command::Complexity(c) => {
            let ex = experiment(&c)?;
            ensure_dir(&ex.out)?;
            let [h, w, d] = ex.config.complexity.input;
            println!("input {h}x{w}x{d}");
            println!(
                "{:<36} {:>14} {:>14} {:>10} {:>12}",
                "model", "macs", "flops", "params", "size_bytes"
            );
            for r in ex.complexity()? {
                println!(
                    "{:<36} {:>14} {:>14} {:>10} {:>12}",
                    r.model, r.macs, r.flops, r.params, r.model_size_bytes
                );
            }
        }
        Command::Run(c) => {
            let ex = experiment(&c)?;
            ex.prepare(c.force)?;
            let s = ex.run()?;
            print_report("test split", &s.eval);
            if let Some(z) = &s.zero_shot {
                print_report("zero-shot split", z);
            }
            println!("artifacts in {}", ex.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(EXIT_OTHER);
        }
    }
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
