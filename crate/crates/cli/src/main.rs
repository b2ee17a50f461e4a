use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use multimode::config::{preset, preset_names, preset_text, RuleChoice, RunConfig};
use multimode::designtools::{plan_designs, PlanInputs};
use multimode::montecarlo::{config_hash, run_configs, write_outputs, ScenarioPopulation, ScenarioRun};
use multimode::population::{describe, summarize, write_population, PopulationSummary, RawSummary};
use multimode::Error;

#[derive(Parser)]
#[command(name = "multimode", version, about = "Simulate web-push surveys with face-to-face follow-up")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a population and write it as CSV with a JSON summary sidecar.
    Generate(GenerateArgs),
    /// Run one or more scenarios and write summary reports.
    Run(RunArgs),
    /// Print design effects and effective sizes of the three designs.
    Deff(DeffArgs),
    /// List the bundled presets or print one.
    Presets {
        /// Print the TOML of this preset.
        #[arg(long)]
        show: Option<String>,
    },
}

#[derive(Args)]
struct Source {
    /// Configuration file (repeatable for `run`).
    #[arg(long, value_name = "PATH")]
    config: Vec<PathBuf>,
    /// Bundled preset name (repeatable for `run`).
    #[arg(long, value_name = "NAME")]
    preset: Vec<String>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    source: Source,
    /// Seed for the synthetic generator and the labelling rule.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    /// Master seed for every scenario.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Worker threads; 0 uses all cores.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory; defaults to the config's `output.dir` or `out`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Skip the per-iteration CSV.
    #[arg(long)]
    no_iterations: bool,
}

#[derive(Args)]
struct DeffArgs {
    /// Web response rate.
    #[arg(long, default_value_t = 0.25)]
    r_w: f64,
    /// Ftf response rate among followed-up web nonrespondents.
    #[arg(long, default_value_t = 0.5)]
    r_f: f64,
    /// Intraclass correlation.
    #[arg(long, default_value_t = 0.02)]
    delta: f64,
    #[arg(long, default_value_t = 200.0)]
    unit_psus: f64,
    #[arg(long, default_value_t = 140.0)]
    unit_per_psu: f64,
    /// Unit follow-up rate; defaults to 30 of 105.
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long, default_value_t = 700.0)]
    psu_psus: f64,
    #[arg(long, default_value_t = 40.0)]
    psu_per_psu: f64,
    #[arg(long, default_value_t = 200.0)]
    psu_followed: f64,
    #[arg(long, default_value_t = 20_000.0)]
    hybrid_unclustered: f64,
    #[arg(long, default_value_t = 200.0)]
    hybrid_psus: f64,
    #[arg(long, default_value_t = 40.0)]
    hybrid_per_psu: f64,
    /// Compositing factor; proportional to completes by default.
    #[arg(long)]
    lambda: Option<f64>,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

fn load_sources(src: &Source) -> Result<Vec<RunConfig>, Error> {
    let mut out = Vec::new();
    for p in &src.config {
        out.push(RunConfig::load(p)?);
    }
    for name in &src.preset {
        out.push(preset(name)?);
    }
    if out.is_empty() {
        return Err(Error::Config(multimode::config::ConfigError::Invalid {
            field: "--config".into(),
            message: "give --config PATH or --preset NAME".into(),
        }));
    }
    Ok(out)
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    File::create(path).map(BufWriter::new).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Serialize)]
struct Sidecar {
    version: &'static str,
    config_sha256: String,
    seed: u64,
    rule: RuleChoice,
    raw: RawSummary,
    labelled: Option<PopulationSummary>,
}

fn cmd_generate(args: GenerateArgs) -> Result<(), Error> {
    let mut cfgs = load_sources(&args.source)?;
    if cfgs.len() != 1 {
        return Err(Error::Config(multimode::config::ConfigError::Invalid {
            field: "--config".into(),
            message: "generate takes exactly one config or preset".into(),
        }));
    }
    let mut cfg = cfgs.remove(0);
    if let Some(seed) = args.seed {
        cfg.run.seed = seed;
        if let Some(s) = cfg.population.synthetic.as_mut() {
            s.seed = seed;
        }
    }
    cfg.validate()?;
    let raw = multimode::montecarlo::raw_population(&cfg)?;
    let rule = cfg.rule()?;
    let pop = ScenarioPopulation::build(raw.clone(), rule, cfg.population.split, cfg.run.seed)?;
    std::fs::create_dir_all(&args.out).map_err(|source| Error::Io {
        path: args.out.display().to_string(),
        source,
    })?;

    let csv_path = args.out.join("population.csv");
    let households = match pop.pseudopopulation() {
        Some(p) => p.to_households(),
        None => raw.households().to_vec(),
    };
    write_population(create(&csv_path)?, raw.var_names(), &households)?;

    let sidecar = Sidecar {
        version: env!("CARGO_PKG_VERSION"),
        config_sha256: config_hash(std::slice::from_ref(&cfg)),
        seed: cfg.run.seed,
        rule,
        raw: describe(&raw)?,
        labelled: pop.pseudopopulation().map(summarize).transpose()?,
    };
    let json_path = args.out.join("population.json");
    serde_json::to_writer_pretty(create(&json_path)?, &sidecar).map_err(|e| Error::Io {
        path: json_path.display().to_string(),
        source: e.into(),
    })?;
    println!("wrote {} ({} households, {} PSUs)", csv_path.display(), raw.len(), raw.psus().len());
    println!("wrote {}", json_path.display());
    Ok(())
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{:.2}%", 100.0 * x))
}

fn print_runs(runs: &[ScenarioRun]) {
    println!(
        "{:<8} {:<12} {:>9} {:>9} {:>9} {:>9} {:>9} {:>6}",
        "scenario", "estimator", "RB", "ABS(RB)", "CV", "RRMSE", "CI", "degen"
    );
    for run in runs {
        for est in &run.summary.estimators {
            if let Some(r) = run.summary.aggregate(est) {
                println!(
                    "{:<8} {:<12} {:>9} {:>9} {:>9} {:>9} {:>9} {:>6}",
                    run.spec.id,
                    est,
                    pct(r.rb),
                    pct(r.abs_rb),
                    pct(r.cv),
                    pct(r.rrmse),
                    pct(r.coverage),
                    r.degenerate
                );
            }
        }
    }
}

fn cmd_run(args: RunArgs) -> Result<(), Error> {
    let mut cfgs = load_sources(&args.source)?;
    for cfg in &mut cfgs {
        if let Some(s) = args.seed {
            cfg.run.seed = s;
        }
        if let Some(n) = args.iterations {
            cfg.run.iterations = n;
        }
        if let Some(j) = args.jobs {
            cfg.run.jobs = j;
        }
        cfg.validate()?;
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfgs.iter().find_map(|c| c.output.dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"));
    let jobs = args.jobs.unwrap_or(cfgs[0].run.jobs);
    let per_iteration = !args.no_iterations && cfgs.iter().all(|c| c.output.per_iteration);
    let runs = run_configs(&cfgs, jobs)?;
    for w in runs.iter().flat_map(|r| &r.warnings) {
        eprintln!("warning: {w}");
    }
    let written = write_outputs(&out, &runs, per_iteration)?;
    print_runs(&runs);
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_deff(a: DeffArgs) -> Result<(), Error> {
    let p = PlanInputs {
        r_w: a.r_w,
        r_f: a.r_f,
        delta: a.delta,
        unit_psus: a.unit_psus,
        unit_per_psu: a.unit_per_psu,
        omega: a.omega.unwrap_or(PlanInputs::illustration().omega),
        psu_psus: a.psu_psus,
        psu_per_psu: a.psu_per_psu,
        psu_followed: a.psu_followed,
        hybrid_unclustered: a.hybrid_unclustered,
        hybrid_psus: a.hybrid_psus,
        hybrid_per_psu: a.hybrid_per_psu,
        hybrid_lambda: a.lambda,
    };
    let rows = plan_designs(&p)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&rows).expect("rows serialize"));
        return Ok(());
    }
    println!(
        "{:<17} {:>9} {:>9} {:>8} {:>8} {:>10} {:>8} {:>11}",
        "design", "web", "ftf", "kish", "m", "clustering", "overall", "effective_n"
    );
    for r in rows {
        println!(
            "{:<17} {:>9.1} {:>9.1} {:>8.4} {:>8.2} {:>10.4} {:>8.4} {:>11.1}",
            r.design,
            r.web_completes,
            r.ftf_completes,
            r.kish_deff,
            r.cluster_size,
            r.clustering_deff,
            r.overall_deff,
            r.effective_n
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Run(a) => cmd_run(a),
        Command::Deff(a) => cmd_deff(a),
        Command::Presets { show: Some(name) } => match preset_text(&name) {
            Some(t) => {
                print!("{t}");
                Ok(())
            }
            None => Err(Error::Config(multimode::config::ConfigError::UnknownPreset(name))),
        },
        Command::Presets { show: None } => {
            for n in preset_names() {
                println!("{n}");
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
