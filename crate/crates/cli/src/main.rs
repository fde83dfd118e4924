use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};

use landmark_dl::config::{AnalysisConfig, AnalysisSection, ConfigFile};
use landmark_dl::data::{ingest_csv, save_csv, CsvSchema, MissingnessMode};
use landmark_dl::nuisance::LearnerLibrary;
use landmark_dl::report::{
    analyze, analyze_curve, curve_csv, render_curve, render_simplex, sha256_hex, AnalysisReport, RunManifest,
    Timestamps,
};
use landmark_dl::simulate::{replicate_rng, run_mc, sample_scenario, simulate_counterexample, McConfig, ScenarioSpec};
use landmark_dl::Error;

#[derive(Parser)]
#[command(
    name = "landmark-dl",
    version,
    about = "Survival with a marker above a threshold at a landmark time"
)]
struct Cli {
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true, env = "LANDMARK_DL_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Two-arm analysis of a CSV dataset.
    Analyze(AnalyzeArgs),
    /// Monte Carlo study of a simulation scenario.
    Simulate(SimulateArgs),
    /// Write one simulated dataset as CSV.
    Generate(GenerateArgs),
    /// Draw the simplex figure from a saved report.
    PlotSimplex(PlotArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Learners {
    /// Cross-validated selection among simple candidates.
    Default,
    /// Main-effects Cox, logistic and probit models.
    Parametric,
    /// Kaplan–Meier and arm-wise proportions.
    CovariateFree,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Input CSV.
    data: PathBuf,
    #[arg(long)]
    t: Option<f64>,
    #[arg(long)]
    y: Option<f64>,
    /// Comma-separated thresholds for the η(t, y) curve.
    #[arg(long, value_delimiter = ',')]
    y_grid: Option<Vec<f64>>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    level: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Markers may be missing at random among survivors.
    #[arg(long)]
    mar: bool,
    #[arg(long)]
    utility_weight: Option<f64>,
    #[arg(long)]
    known_pi: Option<f64>,
    #[arg(long)]
    floor: Option<f64>,
    #[arg(long, value_enum)]
    learners: Option<Learners>,
    /// Also draw the simplex figure.
    #[arg(long)]
    plot: bool,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Comma-separated covariate columns (default: all unmapped columns).
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
}

#[derive(Args)]
struct SimulateArgs {
    /// 1, 2, 3, counterexample, or a scenario TOML file.
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(2..))]
    reps: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Cross-fitting folds; above 1 selects learners by cross-validation.
    #[arg(long, default_value_t = 1)]
    folds: usize,
    /// Both arms follow the arm-0 laws.
    #[arg(long)]
    null: bool,
    /// Also run the per-replicate Wald equality test.
    #[arg(long)]
    wald: bool,
    #[arg(long)]
    z1: Option<f64>,
    #[arg(long)]
    z2: Option<f64>,
    #[arg(long)]
    t: Option<f64>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    /// Report JSON written by `analyze`.
    report: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(Error::Io(e))
    }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn load_scenario(name: &str) -> Result<ScenarioSpec, Failure> {
    if let Some(s) = ScenarioSpec::builtin(name) {
        return Ok(s);
    }
    let path = Path::new(name);
    if !path.exists() {
        return Err(Failure::Usage(format!(
            "unknown scenario {name:?}: expected 1, 2, 3, counterexample or a scenario file"
        )));
    }
    Ok(ScenarioSpec::from_toml(&std::fs::read_to_string(path)?)?)
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<(), Failure> {
    let started = now();
    let file = match &a.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile {
            version: landmark_dl::config::CONFIG_VERSION,
            analysis: AnalysisSection::default(),
            learners: None,
        },
    };
    let t = a.t.or(file.analysis.t);
    let y = a.y.or(a.y_grid.as_ref().and_then(|g| g.first().copied()));
    let y = y.or(file.analysis.y.as_ref().and_then(|v| v.first().copied()));
    let (Some(t), Some(y)) = (t, y) else {
        return Err(Failure::Usage(
            "analyze needs --t and --y (or a config file providing them)".into(),
        ));
    };
    let flags = AnalysisSection {
        t: Some(t),
        y: a.y.map(|v| vec![v]),
        folds: a.folds,
        seed: a.seed,
        positivity_floor: a.floor,
        known_randomization_prob: a.known_pi,
        utility_weight: a.utility_weight,
        missingness: a.mar.then_some(MissingnessMode::Mar),
        level: a.level,
    };
    let mut config = file.merge(AnalysisConfig::new(t, y), &flags);
    let schema = CsvSchema {
        covariates: a.covariates.clone(),
        ..CsvSchema::default()
    };
    let data = ingest_csv(&a.data, &schema)?;
    if let Some(l) = a.learners {
        config.learner_library = Some(match l {
            Learners::Default => LearnerLibrary::default_for(data.dim(), config.known_randomization_prob),
            Learners::Parametric => LearnerLibrary::parametric(data.dim(), config.known_randomization_prob),
            Learners::CovariateFree => LearnerLibrary::covariate_free(config.known_randomization_prob),
        });
    }
    config.validate()?;
    let report = analyze(&data, &config)?;

    std::fs::create_dir_all(&a.out)?;
    let config_json = serde_json::to_string(&config).map_err(Error::from)?;
    let mut manifest = RunManifest::new("analyze", &config_json, config.seed);
    manifest.input_sha256 = Some(sha256_hex(&std::fs::read(&a.data)?));
    manifest.warnings = report.warnings.clone();
    manifest.write_output(&a.out, "report.json", &report.to_json()?)?;
    let table = report.to_table();
    manifest.write_output(&a.out, "report.txt", &table)?;
    if a.plot {
        let (svg, _) = render_simplex(&report.simplex);
        manifest.write_output(&a.out, "simplex.svg", &svg)?;
    }
    if let Some(grid) = &a.y_grid {
        let points = analyze_curve(&data, &config, grid)?;
        if points
            .iter()
            .any(|p| !p.contrast.std_error.is_finite() || !p.contrast.estimate.is_finite())
        {
            return Err(Failure::Run(Error::Estimation(
                "curve contains a non-finite value".into(),
            )));
        }
        manifest.write_output(&a.out, "curve.csv", &curve_csv(&points))?;
        manifest.write_output(&a.out, "curve.svg", &render_curve(&points))?;
    }
    manifest.save(
        &a.out,
        &Timestamps {
            started_unix: started,
            finished_unix: now(),
        },
    )?;
    print!("{table}");
    Ok(())
}

fn cmd_simulate(a: SimulateArgs, threads: Option<usize>) -> Result<(), Failure> {
    let started = now();
    std::fs::create_dir_all(&a.out)?;
    if a.scenario == "counterexample" {
        let (Some(z1), Some(z2), Some(t)) = (a.z1, a.z2, a.t) else {
            return Err(Failure::Usage("the counterexample needs --z1, --z2 and --t".into()));
        };
        let n = if a.n == 1000 { 100_000 } else { a.n };
        let rep = simulate_counterexample(z1, z2, t, n, a.seed)?;
        let json = serde_json::to_string_pretty(&rep).map_err(Error::from)? + "\n";
        let mut manifest = RunManifest::new("simulate", &json, a.seed);
        manifest.write_output(&a.out, "counterexample.json", &json)?;
        let table = rep.to_table();
        manifest.write_output(&a.out, "counterexample.txt", &table)?;
        manifest.save(
            &a.out,
            &Timestamps {
                started_unix: started,
                finished_unix: now(),
            },
        )?;
        print!("{table}");
        return Ok(());
    }
    let mut spec = load_scenario(&a.scenario)?;
    if a.null {
        spec = spec.null_modification()?;
    }
    let mut cfg = if a.folds > 1 {
        McConfig::flexible(a.folds)
    } else {
        McConfig::parametric()
    };
    cfg.wald = a.wald;
    cfg.threads = threads;
    let report = run_mc(&spec, a.n, a.reps as usize, &cfg, a.seed)?;
    let config_json = serde_json::to_string(&(&spec, &cfg, a.n, a.reps)).map_err(Error::from)?;
    let mut manifest = RunManifest::new("simulate", &config_json, a.seed);
    manifest.calibration = report.calibration.clone();
    manifest.warnings.floored = report.floored;
    manifest.write_output(&a.out, "mc.csv", &report.to_csv())?;
    let table = report.to_table();
    manifest.write_output(&a.out, "mc.txt", &table)?;
    manifest.write_output(
        &a.out,
        "mc.json",
        &(serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n"),
    )?;
    manifest.save(
        &a.out,
        &Timestamps {
            started_unix: started,
            finished_unix: now(),
        },
    )?;
    print!("{table}");
    Ok(())
}

fn cmd_generate(a: GenerateArgs) -> Result<(), Failure> {
    let mut spec = load_scenario(&a.scenario)?;
    for line in spec.calibrate()? {
        log::info!("{line}");
    }
    let data = sample_scenario(&spec, a.n, &mut replicate_rng(a.seed, 0))?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    save_csv(&data, &a.out)?;
    Ok(())
}

fn cmd_plot(a: PlotArgs) -> Result<(), Failure> {
    let report = AnalysisReport::from_json(&std::fs::read_to_string(&a.report)?)?;
    if report.simplex.is_empty() {
        return Err(Failure::Run(Error::Validation("report has no arm summaries".into())));
    }
    let (svg, clipped) = render_simplex(&report.simplex);
    if clipped > 0 {
        log::warn!("{clipped} simplex points or regions were clipped for drawing");
    }
    std::fs::write(&a.out, svg)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(k) = cli.threads {
        if k == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }
    let result = match cli.command {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Simulate(a) => cmd_simulate(a, cli.threads),
        Command::Generate(a) => cmd_generate(a),
        Command::PlotSimplex(a) => cmd_plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Estimation(_) => 3,
                _ => 2,
            })
        }
    }
}
