//! Command-line front end: dataset generation, surrogate training,
//! proxy simulation, history matching, and report emission.

mod config;
mod report;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Config;
use resgrad_core::error::Error as CoreError;

#[derive(Parser)]
#[command(
    name = "resgrad",
    about = "Differentiable reservoir proxy simulation and history matching",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args)]
struct Common {
    /// JSON config file with flat dotted keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key: --set hm.learning_rate=0.3 (repeatable).
    #[arg(long = "set", global = true)]
    sets: Vec<String>,
    /// Print every config key with its effective value and exit.
    #[arg(long, global = true)]
    print_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a randomized scenario dataset from a base model.
    GenData {
        /// Base model directory (or set gen.synthetic=twin16|twin8).
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads for scenario generation.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Train the surrogate on a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Output model directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Roll the trained surrogate over a reservoir's schedule.
    Simulate {
        /// Trained model directory.
        #[arg(long)]
        model: PathBuf,
        /// Reservoir model directory.
        #[arg(long)]
        reservoir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Adapt rock/connectivity corrections to recorded rates.
    HistoryMatch {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        reservoir: PathBuf,
        /// Historical rates CSV.
        #[arg(long)]
        history: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render plots and metrics from a history-match result directory.
    Report {
        /// history-match output directory.
        #[arg(long)]
        hm: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Error classes mapped to exit codes and machine-parseable tags.
enum CliError {
    Usage(String),
    ModelMissing(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn emit(&self) -> ExitCode {
        let (tag, code, msg) = match self {
            CliError::Usage(m) => ("E_USAGE", 1, m),
            CliError::ModelMissing(m) => ("E_MODEL_MISSING", 2, m),
            CliError::Data(m) => ("E_DATA", 2, m),
            CliError::Numeric(m) => ("E_NUMERIC", 3, m),
        };
        eprintln!("{tag}: {}", msg.replace('\n', " "));
        ExitCode::from(code)
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Numerical(m) => CliError::Numeric(m),
            CoreError::Io(m) | CoreError::Validation(m) | CoreError::Shape(m)
            | CoreError::Graph(m) => CliError::Data(m),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            return CliError::Usage(e.to_string()).emit();
        }
    };

    let mut cfg = Config::default();
    if let Some(path) = &cli.common.config {
        if let Err(m) = cfg.load_file(path) {
            return CliError::Usage(m).emit();
        }
    }
    for kv in &cli.common.sets {
        if let Err(m) = cfg.apply_set(kv) {
            return CliError::Usage(m).emit();
        }
    }
    if cli.common.print_config {
        println!(
            "{}",
            serde_json::to_string_pretty(&cfg.to_flat_json()).expect("config serializes")
        );
        return ExitCode::SUCCESS;
    }

    let Some(command) = cli.command else {
        return CliError::Usage("missing subcommand (see --help)".into()).emit();
    };
    match run(command, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.emit(),
    }
}

fn run(command: Command, cfg: &Config) -> Result<(), CliError> {
    match command {
        Command::GenData { base, out, jobs } => gen_data(cfg, base, &out, jobs),
        Command::Train { dataset, out } => train(cfg, &dataset, &out),
        Command::Simulate {
            model,
            reservoir,
            out,
        } => simulate(cfg, &model, &reservoir, &out),
        Command::HistoryMatch {
            model,
            reservoir,
            history,
            out,
        } => history_match(cfg, &model, &reservoir, &history, &out),
        Command::Report { hm, out } => report::report(&hm, &out).map_err(Into::into),
    }
}

fn load_base_model(
    cfg: &Config,
    base: Option<PathBuf>,
) -> Result<resgrad_core::model::ReservoirModel, CliError> {
    match (&base, cfg.gen_synthetic.as_str()) {
        (Some(dir), _) => Ok(resgrad_core::model::load_model(dir)?),
        (None, "twin16") => Ok(resgrad_core::twin::twin_base_model(
            16,
            16,
            8,
            cfg.gen_horizon_days,
            cfg.gen_step_days,
            3,
        )?),
        (None, "twin8") => Ok(resgrad_core::twin::twin_base_model(
            8,
            8,
            4,
            cfg.gen_horizon_days,
            cfg.gen_step_days,
            3,
        )?),
        (None, "") => Err(CliError::Usage(
            "gen-data needs --base <model dir> or gen.synthetic=twin16|twin8".into(),
        )),
        (None, other) => Err(CliError::Usage(format!(
            "unknown gen.synthetic value {other} (use twin16 or twin8)"
        ))),
    }
}

fn gen_data(
    cfg: &Config,
    base: Option<PathBuf>,
    out: &std::path::Path,
    jobs: usize,
) -> Result<(), CliError> {
    let model = load_base_model(cfg, base)?;
    let n = model.grid.n_active() as f64;
    let p0_mean: f64 = model
        .initial
        .pressure
        .iter()
        .zip(&model.grid.active)
        .filter(|(_, &a)| a)
        .map(|(p, _)| p)
        .sum::<f64>()
        / n;
    let ds_cfg = cfg.dataset_config(p0_mean);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Data(e.to_string()))?;
    let manifest = pool.install(|| {
        resgrad_core::datagen::build_dataset(&model, &cfg.fluid, &ds_cfg, &cfg.sim, out)
    })?;
    println!(
        "dataset written to {}: {} scenarios, {} report times",
        out.display(),
        manifest.scenarios.len(),
        manifest.report_times_days.len()
    );
    Ok(())
}

fn train(cfg: &Config, dataset: &std::path::Path, out: &std::path::Path) -> Result<(), CliError> {
    let ds = resgrad_core::datagen::Dataset::open(dataset)?;
    let result = resgrad_core::training::fit(&ds, &cfg.train)?;
    resgrad_core::surrogate::save_surrogate(&result.model, out)?;
    std::fs::write(
        out.join("training_history.csv"),
        resgrad_core::training::history_to_csv(&result.history),
    )
    .map_err(|e| CliError::Data(e.to_string()))?;
    println!(
        "model written to {} (best epoch {}, final val loss {:.6})",
        out.display(),
        result.best_epoch,
        result.history.last().map(|h| h.val_loss).unwrap_or(f64::NAN)
    );
    Ok(())
}

fn open_surrogate(dir: &std::path::Path) -> Result<resgrad_core::surrogate::SurrogateModel, CliError> {
    if !dir.join("weights.json").exists() {
        return Err(CliError::ModelMissing(format!(
            "no trained model at {} (weights.json not found)",
            dir.display()
        )));
    }
    Ok(resgrad_core::surrogate::load_surrogate(dir)?)
}

fn simulate(
    cfg: &Config,
    model_dir: &std::path::Path,
    reservoir_dir: &std::path::Path,
    out: &std::path::Path,
) -> Result<(), CliError> {
    let surrogate = open_surrogate(model_dir)?;
    let reservoir = resgrad_core::model::load_model(reservoir_dir)?;
    let max_steps = reservoir.schedule.times_days.len() - 1;
    let steps = if cfg.simulate_steps == 0 {
        max_steps
    } else {
        cfg.simulate_steps.min(max_steps)
    };
    let result = resgrad_core::surrogate::simulate(&surrogate, &reservoir, &cfg.fluid, steps)?;
    std::fs::create_dir_all(out.join("states")).map_err(|e| CliError::Data(e.to_string()))?;
    for (t, state) in result.times_days.iter().zip(&result.states).skip(1) {
        resgrad_core::datagen::write_state(&out.join("states").join(format!("{t}.f64")), state)?;
    }
    std::fs::write(out.join("rates.csv"), result.rates.to_csv())
        .map_err(|e| CliError::Data(e.to_string()))?;
    println!(
        "simulated {} steps in {:.3}s; outputs in {}",
        steps,
        result.rollout_seconds,
        out.display()
    );
    Ok(())
}

fn history_match(
    cfg: &Config,
    model_dir: &std::path::Path,
    reservoir_dir: &std::path::Path,
    history_path: &std::path::Path,
    out: &std::path::Path,
) -> Result<(), CliError> {
    let surrogate = open_surrogate(model_dir)?;
    let reservoir = resgrad_core::model::load_model(reservoir_dir)?;
    let history_text = std::fs::read_to_string(history_path)
        .map_err(|e| CliError::Data(format!("cannot read history: {e}")))?;
    let history = resgrad_core::rates::RateTable::from_csv(&history_text)?;

    let result = resgrad_core::adapt::adapt(
        &surrogate,
        &reservoir,
        &cfg.fluid,
        &history,
        &cfg.hm,
        cfg.hm_vars,
    )?;

    // corrected rates over the full history span (adaptation + forecast)
    let full_steps = (reservoir.schedule.times_days.len() - 1).min(
        history
            .times_days
            .iter()
            .filter(|&&t| {
                reservoir
                    .schedule
                    .times_days
                    .iter()
                    .any(|&s| (s - t).abs() < 1e-6 && s > reservoir.schedule.times_days[0])
            })
            .count(),
    );
    let corrected = resgrad_core::adapt::corrected_rates(
        &surrogate,
        &reservoir,
        &cfg.fluid,
        &result.corrections,
        full_steps,
    )?;

    // window in steps actually used by the adaptation
    let mut window = 0usize;
    for (i, &ts) in reservoir.schedule.times_days.iter().enumerate().skip(1) {
        if history.times_days.iter().any(|&ht| (ht - ts).abs() < 1e-6) {
            window = i;
        } else {
            break;
        }
    }
    if cfg.hm.window_steps > 0 {
        window = window.min(cfg.hm.window_steps);
    }

    write_hm_result(out, &reservoir, &result, &corrected, &history, window, cfg)?;
    println!(
        "history match: loss {:.6} -> {:.6} in {} iterations; results in {}",
        result.initial_loss,
        result.final_loss,
        result.iterations,
        out.display()
    );
    Ok(())
}

fn write_hm_result(
    out: &std::path::Path,
    reservoir: &resgrad_core::model::ReservoirModel,
    result: &resgrad_core::adapt::AdaptResult,
    corrected: &resgrad_core::rates::RateTable,
    history: &resgrad_core::rates::RateTable,
    window: usize,
    cfg: &Config,
) -> Result<(), CliError> {
    use resgrad_core::metrics;
    let io_err = |e: std::io::Error| CliError::Data(e.to_string());
    std::fs::create_dir_all(out.join("corrections")).map_err(io_err)?;

    let write_f64 = |path: std::path::PathBuf, vals: &[f64]| -> Result<(), CliError> {
        let mut buf = Vec::with_capacity(vals.len() * 8);
        for v in vals {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, buf).map_err(io_err)
    };
    write_f64(out.join("corrections/rock.f64"), &result.corrections.rock)?;
    write_f64(
        out.join("corrections/log_conn.f64"),
        &result.corrections.log_conn,
    )?;
    let corr_manifest = serde_json::json!({
        "schema_version": 1,
        "coarse_shape": result.corrections.coarse_shape,
        "rock_channels": ["porosity", "ln_perm_x", "ln_perm_y", "ln_perm_z"],
        "coarse_factor": cfg.hm.coarse_factor,
        "n_connections": result.corrections.log_conn.len(),
        "rock_file": "rock.f64",
        "log_conn_file": "log_conn.f64",
    });
    std::fs::write(
        out.join("corrections/corrections.json"),
        serde_json::to_string_pretty(&corr_manifest).expect("json"),
    )
    .map_err(io_err)?;

    let mut loss_csv = String::from("iteration,total_loss\n");
    for (i, l) in result.loss_curve.iter().enumerate() {
        loss_csv.push_str(&format!("{i},{l}\n"));
    }
    std::fs::write(out.join("loss_curve.csv"), loss_csv).map_err(io_err)?;
    std::fs::write(out.join("corrected-rates.csv"), corrected.to_csv()).map_err(io_err)?;
    std::fs::write(out.join("historical-rates.csv"), history.to_csv()).map_err(io_err)?;

    let producers: Vec<String> = reservoir
        .wells
        .iter()
        .filter(|w| w.kind == resgrad_core::model::WellKind::Producer)
        .map(|w| w.name.clone())
        .collect();
    let per_well = metrics::per_well_cumulative_correlation(corrected, history, &producers, 0, window);
    let summary = serde_json::json!({
        "schema_version": 1,
        "initial_loss": result.initial_loss,
        "final_loss": result.final_loss,
        "iterations": result.iterations,
        "window_steps": window,
        "window_days": reservoir.schedule.times_days[window],
        "per_well_correlation": per_well
            .iter()
            .map(|(w, rw, ro)| serde_json::json!({"well": w, "r_water": rw, "r_oil": ro}))
            .collect::<Vec<_>>(),
    });
    std::fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("json"),
    )
    .map_err(io_err)?;
    Ok(())
}
