//! Subcommands of the `soil-pinn` binary.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{de::DeserializeOwned, Serialize};

use soil_pinn::datakit::{generate_dataset, known_params, Dataset, DatasetSpec};
use soil_pinn::estimator::{pinn_forward, train, ObservationWindow, PinnConfig, PinnModel};
use soil_pinn::evalkit::{
    aggregate_parameters, evaluate_samples, force_metrics, force_metrics_by_type, hypothetical_force_curve, write_curve_csv, write_metrics_csv,
    write_parameters_csv, write_predictions_csv, EvalSummary,
};
use soil_pinn::limits::ParamTable;
use soil_pinn::simulator::{run_episode, EpisodeRecord, EpisodeSpec, SimConfig, SimMode, SoilType, StepRow};

pub const SOFTWARE: &str = concat!("soil-pinn ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Parser)]
#[command(name = "soil-pinn", version, about = "Soil parameter estimation for a bladed earthmoving vehicle")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML config file; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Single-threaded execution and no timestamps in written files.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one episode and write its table.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "sand")]
        soil: SoilType,
        /// Relative density, 0 to 100.
        #[arg(long, default_value_t = 50.0)]
        density: f64,
        #[arg(long, value_enum, default_value = "fee-pure")]
        mode: ModeArg,
        /// Commanded forward velocity, m/s.
        #[arg(long, default_value_t = 0.5)]
        velocity: f64,
        /// Commanded depth of cut, m.
        #[arg(long, default_value_t = 0.15)]
        depth: f64,
    },
    /// Simulate a dataset; `--config` is a dataset spec.
    GenDataset {
        #[command(flatten)]
        common: Common,
        /// Simulator config.
        #[arg(long)]
        sim: Option<PathBuf>,
        /// Rescales the density grid to this many episodes.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Train the estimator on a dataset; `--config` holds hyperparameters.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Overrides the epoch count in the config.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score a checkpoint on a dataset's eval split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Depths of the fixed-depth force curves, m.
        #[arg(long = "d-fixed", default_values_t = [0.1, 0.2])]
        d_fixed: Vec<f64>,
        #[arg(long)]
        deterministic: bool,
    },
    /// Estimate parameters and force for one window.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Episode table, or a bare table of exactly one window of rows.
        #[arg(long)]
        window: PathBuf,
        /// Window index when `--window` is a full episode.
        #[arg(long)]
        index: Option<usize>,
        /// Output JSON file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum ModeArg {
    FeePure,
    Default,
}

impl From<ModeArg> for SimMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::FeePure => SimMode::FeePure,
            ModeArg::Default => SimMode::Default,
        }
    }
}

pub fn load_toml<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn load_spec(path: Option<&Path>) -> Result<DatasetSpec> {
    match path {
        None => Ok(DatasetSpec::desk_fee()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Record of one run, written next to its outputs.
#[derive(Debug, Serialize)]
struct RunManifest<'a, C: Serialize> {
    software: &'static str,
    command: &'a str,
    config: &'a C,
    inputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    created_unix_s: Option<u64>,
}

fn run_manifest<C: Serialize>(out: &Path, command: &str, config: &C, inputs: Vec<String>, deterministic: bool) -> Result<()> {
    let created_unix_s = if deterministic {
        None
    } else {
        std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).ok().map(|d| d.as_secs())
    };
    write_json(&out.join("run.json"), &RunManifest { software: SOFTWARE, command, config, inputs, created_unix_s })
}

pub fn run(cli: Cli) -> Result<()> {
    let deterministic = match &cli.command {
        Command::Simulate { common, .. } | Command::GenDataset { common, .. } | Command::Train { common, .. } => common.deterministic,
        Command::Eval { deterministic, .. } => *deterministic,
        Command::Predict { .. } => true,
    };
    if deterministic {
        // results do not depend on the thread count, this only pins scheduling
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
    match cli.command {
        Command::Simulate { common, soil, density, mode, velocity, depth } => {
            let cfg: SimConfig = load_toml(common.config.as_deref())?;
            let spec = EpisodeSpec {
                id: 0,
                soil_type: soil,
                relative_density: density,
                mode: mode.into(),
                v_target: velocity,
                d_target: depth,
                seed: common.seed.unwrap_or(0),
            };
            let rec = run_episode(&cfg, &spec)?;
            if let Some(dir) = common.out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            rec.save(&common.out)?;
            eprintln!("wrote {} steps to {}", rec.rows.len(), common.out.display());
        }
        Command::GenDataset { common, sim, episodes } => {
            let mut spec = load_spec(common.config.as_deref())?;
            if let Some(s) = common.seed {
                spec.seed = s;
            }
            if let Some(n) = episodes {
                spec = spec.with_episode_count(n)?;
            }
            let cfg: SimConfig = load_toml(sim.as_deref())?;
            let m = generate_dataset(&spec, &cfg, &common.out)?;
            eprintln!("{}: {} train / {} eval windows in {}", m.factorization, m.train_windows, m.eval_windows, common.out.display());
        }
        Command::Train { common, data, epochs } => {
            let mut cfg: PinnConfig = load_toml(common.config.as_deref())?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            let ds = Dataset::load(&data)?;
            if ds.manifest.spec.window_len != cfg.window_len {
                bail!("dataset windows have {} rows, config expects {}", ds.manifest.spec.window_len, cfg.window_len);
            }
            std::fs::create_dir_all(&common.out)?;
            let model = PinnModel::new(&cfg, ds.normalizer()?)?;
            let report = train(model, &ds.train, &ds.eval, Some(&common.out.join("checkpoint.json")), Some(&common.out.join("train_log.csv")))?;
            run_manifest(&common.out, "train", &cfg, vec![data.display().to_string()], common.deterministic)?;
            eprintln!("best eval error {:.1} N at epoch {}", report.best_eval_mae, report.best_epoch);
        }
        Command::Eval { checkpoint, data, out, d_fixed, deterministic } => {
            for &d in &d_fixed {
                if !(d > 0.0 && d <= 0.3) {
                    bail!("--d-fixed {d} is outside (0, 0.3] m");
                }
            }
            let model = PinnModel::load(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let ds = Dataset::load(&data)?;
            std::fs::create_dir_all(&out)?;
            let records = evaluate_samples(&model, &ds.eval)?;
            let metrics = force_metrics(&records)?;
            let by_type = force_metrics_by_type(&records)?;
            write_metrics_csv(&metrics, &by_type, &out.join("metrics.csv"))?;
            let agg = aggregate_parameters(&records);
            write_parameters_csv(&agg, &out.join("parameters.csv"))?;
            for &d in &d_fixed {
                write_curve_csv(&hypothetical_force_curve(&agg, d), &out.join(format!("curve_d{d:.2}.csv")))?;
            }
            write_predictions_csv(&records, &out.join("predictions.csv"))?;
            let t = ParamTable::standard();
            let summary = EvalSummary {
                software: SOFTWARE.into(),
                metrics,
                by_type,
                curve_depths: d_fixed.clone(),
                within_limits: records.iter().filter(|r| r.prediction.theta.within_limits(&t)).count(),
            };
            write_json(&out.join("summary.json"), &summary)?;
            run_manifest(&out, "eval", &d_fixed, vec![checkpoint.display().to_string(), data.display().to_string()], deterministic)?;
            eprintln!(
                "mean |F - F^| {:.1} N ({:.1} % of measured), x {:.2} % / z {:.2} % of limits",
                metrics.mean_abs_error,
                100.0 * metrics.ratio_to_measured,
                100.0 * metrics.ratio_to_limits[0],
                100.0 * metrics.ratio_to_limits[1]
            );
        }
        Command::Predict { checkpoint, window, index, out } => {
            let model = PinnModel::load(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let rows = read_window(&window, index, model.config.window_len)?;
            let last = rows[rows.len() - 1];
            let w = ObservationWindow { rows: rows.iter().map(StepRow::obs).collect(), t_end: last.t };
            let pred = pinn_forward(&model, &[&w], &[known_params(&last)])?;
            let text = serde_json::to_string_pretty(&pred[0])? + "\n";
            match out {
                Some(p) => std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

/// Rows of one window from an episode table or a bare table.
pub fn read_window(path: &Path, index: Option<usize>, len: usize) -> Result<Vec<StepRow>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let rows = if text.starts_with('#') {
        let rec = EpisodeRecord::read_from(text.as_bytes())?;
        let i = index.context("--index is required for an episode table")?;
        let start = i * len;
        if start + len > rec.rows.len() {
            bail!("window {i} is past the end of a {}-row episode", rec.rows.len());
        }
        rec.rows[start..start + len].to_vec()
    } else {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        r.deserialize().collect::<Result<Vec<StepRow>, _>>()?
    };
    if rows.len() != len {
        bail!("window has {} rows, the model expects {len}", rows.len());
    }
    Ok(rows)
}
