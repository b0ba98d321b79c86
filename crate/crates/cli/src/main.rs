use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use riskgrid_cli::config::{ModelKind, Overrides, PipelineConfig, Resolved};
use riskgrid_cli::error::{PipelineError, Stage};
use riskgrid_cli::pipeline;

#[derive(Parser)]
#[command(name = "riskgrid", version, about = "Risk-terrain modeling on fishnet grids")]
struct Cli {
    /// Worker threads for parallel stages.
    #[arg(long, global = true, env = "RISKGRID_THREADS")]
    threads: Option<usize>,
    /// Log at info level (RUST_LOG overrides).
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic city to the config's input paths.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Generator seed (default: `seeds.synthetic`, else derived from `seeds.global`).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Full pipeline: moran, fit, report.
    Run(StageArgs),
    /// Ingest, fishnet, features, weights, global and local Moran's I.
    Moran(StageArgs),
    /// Models, cross-validation and tables, from `moran` outputs.
    Fit(StageArgs),
    /// Figures and the run manifest, from `moran` and `fit` outputs.
    Report(StageArgs),
}

#[derive(Args)]
struct StageArgs {
    #[arg(long)]
    config: PathBuf,
    /// Omit timestamps so repeated runs are byte-identical.
    #[arg(long)]
    reproducible: bool,
    #[arg(long, alias = "output_dir")]
    output_dir: Option<PathBuf>,
    #[arg(long, alias = "cell_size")]
    cell_size: Option<f64>,
    #[arg(long, alias = "k_neighbors")]
    k_neighbors: Option<usize>,
    #[arg(long, alias = "n_sims")]
    n_sims: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, alias = "cv_folds")]
    cv_folds: Option<usize>,
    /// Comma-separated subset of poisson, forest, sdem, manski.
    #[arg(long, value_delimiter = ',', value_parser = parse_model)]
    models: Option<Vec<ModelKind>>,
    /// Global seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, alias = "n_trees")]
    n_trees: Option<usize>,
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    ModelKind::parse(s).ok_or_else(|| format!("unknown model `{s}` (expected poisson, forest, sdem or manski)"))
}

impl StageArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            output_dir: self.output_dir.clone(),
            cell_size: self.cell_size,
            k_neighbors: self.k_neighbors,
            n_sims: self.n_sims,
            alpha: self.alpha,
            cv_folds: self.cv_folds,
            models: self.models.clone(),
            seed: self.seed,
            n_trees: self.n_trees,
        }
    }
}

fn load(path: &Path, overrides: &Overrides) -> Result<Resolved, PipelineError> {
    let (mut cfg, base) = PipelineConfig::from_file(path)?;
    // Flag paths are relative to the working directory, config paths to the config file.
    if let Some(dir) = &overrides.output_dir {
        let cwd = std::env::current_dir().unwrap_or_default();
        cfg.output_dir = cwd.join(dir);
    }
    cfg.apply(&Overrides { output_dir: None, ..overrides.clone() });
    cfg.resolve(&base)
}

fn execute(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Generate { config, seed } => {
            let cfg = load(&config, &Overrides::default())?;
            let summary = pipeline::generate(&cfg, seed)?;
            println!("generated synthetic city (seed {}): {} files", summary.seed, summary.files.len());
        }
        Command::Run(a) => {
            let cfg = load(&a.config, &a.overrides())?;
            let (m, f, r) = pipeline::run(&cfg, a.reproducible)?;
            println!(
                "global Moran's I = {:.4} (pseudo p = {}), {} significant cells",
                m.statistic, m.pseudo_p, m.n_significant
            );
            for row in &f.accuracy {
                println!("{}: MAE {}, RMSE {}", row.model, fmt(row.mean.mae), fmt(row.mean.rmse));
            }
            println!("wrote {} files to {}", r.files.len() + 1, cfg.config.output_dir.display());
        }
        Command::Moran(a) => {
            let cfg = load(&a.config, &a.overrides())?;
            let m = pipeline::moran_stage(&cfg)?;
            println!("global Moran's I = {:.4} (pseudo p = {}) on {} cells", m.statistic, m.pseudo_p, m.n_cells);
        }
        Command::Fit(a) => {
            let cfg = load(&a.config, &a.overrides())?;
            let f = pipeline::fit_stage(&cfg)?;
            println!("fitted {} models", f.models.len());
        }
        Command::Report(a) => {
            let cfg = load(&a.config, &a.overrides())?;
            let r = pipeline::report_stage(&cfg, a.reproducible)?;
            println!("report lists {} files", r.files.len());
        }
    }
    Ok(())
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.4}"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.verbose { "info" } else { "warn" })).init();
    riskgrid_core::linalg::pin_blas_threads();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: [config] RISKGRID_THREADS / --threads must be positive");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: [config] cannot size the worker pool: {e}");
            return ExitCode::from(1);
        }
    }
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.stage == Stage::Ingest {
                eprintln!("hint: check the input paths in the config (relative paths resolve against the config file's directory)");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
