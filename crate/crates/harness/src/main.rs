use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lensless_core::container::read_any;
use lensless_core::metrics::evaluate;
use lensless_harness::experiment::run;
use lensless_harness::report::{load_records, report};
use lensless_harness::spec::{ExperimentSpec, Modality, Precision};
use lensless_harness::{HarnessError, Result, RunRecord};

/// Lensless reconstruction experiments.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write ground truth, PSF, masks and measurement for every sweep point.
    Simulate(Common),
    /// Simulate and run the FISTA tau list only.
    Fista(Common),
    /// Simulate and run the untrained network only.
    Udn(Common),
    /// Simulate and run every solver in the spec.
    Run(Common),
    /// Compare an estimate file against a ground-truth file.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
        /// Include the spectral cosine distance.
        #[arg(long)]
        spectral: bool,
    },
    /// Build comparison tables from run records below a directory.
    Report {
        #[command(flatten)]
        common: Common,
        /// Directory holding record subdirectories; defaults to the spec's
        /// output directory.
        #[arg(long)]
        records: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Overrides the spec's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the spec's master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    precision: Option<Prec>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Prec {
    F32,
    F64,
}

impl Common {
    fn spec(&self) -> Result<ExperimentSpec> {
        let path = self
            .spec
            .as_ref()
            .ok_or_else(|| HarnessError::Spec("--spec is required".into()))?;
        let mut spec = ExperimentSpec::load(path)?;
        if let Some(o) = &self.out {
            spec.output_dir = o.clone();
        }
        if let Some(s) = self.seed {
            spec.seed = s;
        }
        if let Some(p) = self.precision {
            spec.precision = match p {
                Prec::F32 => Precision::F32,
                Prec::F64 => Precision::F64,
            };
        }
        Ok(spec)
    }

    fn out(&self) -> Result<PathBuf> {
        match (&self.out, &self.spec) {
            (Some(o), _) => Ok(o.clone()),
            (None, Some(_)) => Ok(self.spec()?.output_dir),
            (None, None) => Err(HarnessError::Spec("one of --out or --spec is required".into())),
        }
    }
}

fn simulate_only(spec: &ExperimentSpec) -> Result<Vec<RunRecord>> {
    let mut s = spec.clone();
    s.fista = None;
    s.udn = None;
    run(&s)
}

fn execute(cmd: &Command) -> Result<bool> {
    let records = match cmd {
        Command::Simulate(c) => simulate_only(&c.spec()?)?,
        Command::Fista(c) => {
            let mut s = c.spec()?;
            s.udn = None;
            run(&s)?
        }
        Command::Udn(c) => {
            let mut s = c.spec()?;
            s.fista = None;
            run(&s)?
        }
        Command::Run(c) => run(&c.spec()?)?,
        Command::Evaluate {
            common,
            estimate,
            ground_truth,
            spectral,
        } => {
            let spectral = *spectral
                || (common.spec.is_some() && common.spec()?.modality == Modality::Hyperspectral);
            for p in [estimate, ground_truth] {
                if !p.is_file() {
                    return Err(HarnessError::MissingInput(p.clone()));
                }
            }
            let est = read_any::<f64>(estimate)?;
            let gt = read_any::<f64>(ground_truth)?;
            let m = evaluate(&est, &gt, spectral)?;
            let out = common.out()?;
            std::fs::create_dir_all(&out).map_err(|source| HarnessError::Io { path: out.clone(), source })?;
            std::fs::write(out.join("metrics.csv"), m.to_csv())
                .map_err(|source| HarnessError::Io { path: out.join("metrics.csv"), source })?;
            std::fs::write(out.join("metrics.json"), serde_json::to_string_pretty(&m)?)
                .map_err(|source| HarnessError::Io { path: out.join("metrics.json"), source })?;
            print!("{}", m.to_csv());
            return Ok(false);
        }
        Command::Report { common, records } => {
            let root = match records {
                Some(r) => r.clone(),
                None => common.out()?,
            };
            let loaded = load_records(&root)?;
            let out = common.out.clone().unwrap_or_else(|| root.clone()).join("report");
            let rep = report(&loaded, &out)?;
            for f in &rep.files {
                println!("{}", f.display());
            }
            return Ok(false);
        }
    };
    for r in &records {
        println!("{}", r.label);
        for s in &r.solvers {
            let m = s.metrics.as_ref();
            println!(
                "  {:<22} {:?} mse={} ssim={}",
                s.name,
                s.outcome,
                m.map_or("-".into(), |m| format!("{:.5}", m.mse)),
                m.and_then(|m| m.ssim).map_or("-".into(), |v| format!("{v:.4}")),
            );
        }
    }
    Ok(records.iter().any(RunRecord::diverged))
}

fn threads(cmd: &Command) -> Option<usize> {
    match cmd {
        Command::Simulate(c) | Command::Fista(c) | Command::Udn(c) | Command::Run(c) => c.threads,
        Command::Evaluate { common, .. } | Command::Report { common, .. } => common.threads,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match threads(&cli.command) {
        Some(n) => lensless_core::par::with_threads(n, || execute(&cli.command)),
        None => execute(&cli.command),
    };
    match result {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("a solver diverged; see record.json");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
