//! `ergoquot` command-line driver.
//!
//! Exit codes: 0 success, 2 configuration error, 3 stage failure,
//! 4 archive corruption.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ergoquot_core::store::{
    export_pointcloud, run_stage, verify_archive, Archive, ExportRequest, RunConfig, Slice, Stage,
};
use ergoquot_core::Error;

const THREADS_VAR: &str = "ERGOQUOT_THREADS";

#[derive(Parser)]
#[command(name = "ergoquot", version, about = "Coherent structures from trajectory averages")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration (defaults to the copy stored in the archive).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Archive directory (defaults to `output` from the configuration).
    #[arg(long)]
    archive: Option<PathBuf>,
    /// Leave samples that did not converge out of the distance matrix.
    #[arg(long)]
    drop_unconverged: bool,
}

#[derive(Args)]
struct StageArgs {
    #[command(flatten)]
    common: Common,
    /// Recompute even if the stored outputs are current.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage, resuming from completed ones.
    Run(StageArgs),
    /// Integrate trajectories and accumulate averages.
    Average(StageArgs),
    /// Pairwise Sobolev distances.
    Distances(StageArgs),
    /// Diffusion coordinates.
    Embed(StageArgs),
    /// k-means labels.
    Cluster(StageArgs),
    /// Write a CSV of initial conditions, labels and coordinates.
    Export {
        #[command(flatten)]
        common: Common,
        /// Include the cluster label column.
        #[arg(long)]
        labels: bool,
        /// Include diffusion coordinate `j` (repeatable).
        #[arg(long = "coord", value_name = "J")]
        coords: Vec<usize>,
        /// Keep rows with `lo <= x[axis] <= hi`, given as `axis:lo:hi`.
        #[arg(long, allow_hyphen_values = true)]
        slice: Option<String>,
        /// Output file (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check hashes, shapes and numerical invariants of an archive.
    Verify {
        #[command(flatten)]
        common: Common,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Corrupt(_) => 4,
        _ => 3,
    }
}

fn configure_threads() -> Result<(), Error> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_VAR} must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn resolve(common: &Common) -> Result<(RunConfig, PathBuf), Error> {
    let from_file = match &common.config {
        Some(p) => Some(RunConfig::load(p)?),
        None => None,
    };
    let archive = common
        .archive
        .clone()
        .or_else(|| from_file.as_ref().and_then(|c| c.output.clone()).map(PathBuf::from))
        .ok_or_else(|| Error::Config("no archive given (use --archive or set `output`)".into()))?;
    let mut cfg = match from_file {
        Some(c) => c,
        None => stored_config(&archive)?,
    };
    if common.drop_unconverged {
        cfg.drop_unconverged = true;
    }
    Ok((cfg, archive))
}

fn stored_config(archive: &Path) -> Result<RunConfig, Error> {
    let a =
        Archive::open(archive).map_err(|_| Error::Config("no --config given and no archive to take it from".into()))?;
    let value = a
        .manifest()
        .config
        .clone()
        .ok_or_else(|| Error::Config("no --config given and the archive stores none".into()))?;
    let cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::Corrupt(format!("stored config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

fn stages(args: &StageArgs, which: &[Stage]) -> Result<(), Error> {
    let (cfg, path) = resolve(&args.common)?;
    let mut archive = Archive::open_or_create(&path)?;
    for &stage in which {
        let ran = run_stage(&mut archive, &cfg, stage, args.force)?;
        println!("{:<9} {}", stage.name(), if ran { "done" } else { "up to date" });
    }
    if which.contains(&Stage::Cluster) {
        let k = archive.scalar("cluster/k")?;
        let inertia = archive.scalar("cluster/inertia")?;
        println!("{k} clusters, inertia {inertia:e}, archive {}", path.display());
    }
    Ok(())
}

fn archive_path(common: &Common) -> Result<PathBuf, Error> {
    if let Some(p) = &common.archive {
        return Ok(p.clone());
    }
    resolve(common).map(|(_, p)| p)
}

fn run(cli: Cli) -> Result<(), Error> {
    configure_threads()?;
    match cli.command {
        Command::Run(a) => stages(&a, &Stage::ALL),
        Command::Average(a) => stages(&a, &[Stage::Average]),
        Command::Distances(a) => stages(&a, &[Stage::Distances]),
        Command::Embed(a) => stages(&a, &[Stage::Embed]),
        Command::Cluster(a) => stages(&a, &[Stage::Cluster]),
        Command::Export {
            common,
            labels,
            coords,
            slice,
            out,
        } => {
            let path = archive_path(&common)?;
            let archive = Archive::open(&path)?;
            let req = ExportRequest {
                labels,
                coords,
                slice: slice.as_deref().map(str::parse::<Slice>).transpose()?,
            };
            let rows = match out {
                Some(p) => {
                    let mut w = BufWriter::new(File::create(&p)?);
                    let rows = export_pointcloud(&archive, &req, &mut w)?;
                    w.flush()?;
                    rows
                }
                None => {
                    let stdout = io::stdout();
                    let mut w = stdout.lock();
                    export_pointcloud(&archive, &req, &mut w)?
                }
            };
            log::info!("exported {rows} rows");
            Ok(())
        }
        Command::Verify { common } => {
            let path = archive_path(&common)?;
            let report = verify_archive(&path)?;
            if report.is_ok() {
                println!("ok: {}", path.display());
                Ok(())
            } else {
                for issue in &report.issues {
                    println!("{issue}");
                }
                Err(Error::Corrupt(format!("{} problem(s) found", report.issues.len())))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
