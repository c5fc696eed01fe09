//! Command-line front end: synthetic data, codec tools, training,
//! evaluation and leave-one-person-out experiments.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure (non-finite values during training or inference).

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use imphead::data::codec::{decode_stream, encode_stream};
use imphead::data::session::{load_cohort, read_frames_csv, save_cohort, write_frames_csv};
use imphead::data::{generate_cohort, SessionRecording};
use imphead::harness::eval::{evaluate, midpoint_predictions, score, window_targets};
use imphead::harness::lopo::{body, prepare_sessions, train_on, windows_for};
use imphead::harness::report::{emit_report, ReportFormat, ReportTable};
use imphead::harness::{load_model, load_model_config, run_lopo, save_model, save_model_config, ExperimentConfig};
use imphead::pose::{load_track, save_track};
use imphead::rotations::{smooth_ground_truth, SmoothingParams};

#[derive(Parser)]
#[command(name = "imphead", version, about = "Impedance-to-head-pose toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (TOML). Missing sections use defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the seed in the configuration file.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic cohort as session directories.
    Gen {
        #[command(flatten)]
        common: Common,
        /// Output root; one person_<id> directory per person.
        #[arg(long)]
        out: PathBuf,
        /// Session length in seconds (overrides the configuration).
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Gaussian-smooth a pose track in quaternion space.
    Smooth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Kernel width in frames (default from configuration).
        #[arg(long)]
        sigma: Option<f64>,
        /// Half window K in frames (default from configuration).
        #[arg(long)]
        half_window: Option<usize>,
    },
    /// Convert a frame CSV (timestamp_ms, mag1, phase1, ..., phase4) to wire bytes.
    Encode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Convert wire bytes back to a frame CSV.
    Decode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train one model on the given persons and save a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Session root written by `gen`.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint path; the model configuration is written next to it.
        #[arg(long)]
        out: PathBuf,
        /// Persons to train on (default: all).
        #[arg(long, value_delimiter = ',')]
        persons: Vec<u32>,
        /// Person held out for early stopping (default: none).
        #[arg(long)]
        validation: Option<u32>,
    },
    /// Score a checkpoint and the two baselines on the given persons.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Persons to evaluate (default: all).
        #[arg(long, value_delimiter = ',')]
        persons: Vec<u32>,
    },
    /// Leave-one-person-out cross-validation; writes report.csv and report.json.
    Lopo {
        #[command(flatten)]
        common: Common,
        /// Session root; omitted means generate the synthetic cohort.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a saved report.json.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        /// Write to a file instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
    Json,
}

/// Errors that are the caller's fault rather than the data's.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    let seed = common.seed.unwrap_or(cfg.seed);
    let cfg = cfg.with_seed(seed);
    cfg.validate()?;
    Ok(cfg)
}

fn select(sessions: Vec<SessionRecording>, persons: &[u32]) -> Result<Vec<SessionRecording>> {
    if persons.is_empty() {
        return Ok(sessions);
    }
    for p in persons {
        if !sessions.iter().any(|s| s.person_id == *p) {
            return Err(Usage(format!("person {p} not found in data")).into());
        }
    }
    Ok(sessions
        .into_iter()
        .filter(|s| persons.contains(&s.person_id))
        .collect())
}

fn model_config_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("toml")
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { common, out, duration } => {
            let mut cfg = load_config(&common)?;
            if let Some(d) = duration {
                cfg.synth.duration_s = d;
            }
            let cohort = generate_cohort(&cfg.synth, &cfg.limits)?;
            save_cohort(&out, &cohort)?;
            println!("wrote {} sessions to {}", cohort.len(), out.display());
        }
        Command::Smooth {
            common,
            input,
            output,
            sigma,
            half_window,
        } => {
            let cfg = load_config(&common)?;
            let params = SmoothingParams::new(
                sigma.unwrap_or(cfg.smoothing.sigma),
                half_window.unwrap_or(cfg.smoothing.half_window),
            )
            .map_err(|e| Usage(e.to_string()))?;
            let track = load_track(&input)?;
            save_track(&output, &smooth_ground_truth(&track, &params)?)?;
        }
        Command::Encode { common, input, output } => {
            load_config(&common)?;
            let frames = read_frames_csv(BufReader::new(File::open(&input)?))?;
            fs::write(&output, encode_stream(&frames).map_err(imphead::Error::from)?)?;
            println!("encoded {} frames", frames.len());
        }
        Command::Decode { common, input, output } => {
            load_config(&common)?;
            let frames = decode_stream(&fs::read(&input)?).map_err(imphead::Error::from)?;
            write_frames_csv(BufWriter::new(File::create(&output)?), &frames)?;
            println!("decoded {} frames", frames.len());
        }
        Command::Train {
            common,
            data,
            out,
            persons,
            validation,
        } => {
            let cfg = load_config(&common)?;
            let sessions = prepare_sessions(&cfg, &load_cohort(&data)?)?;
            let mut fit: Vec<u32> = select(sessions.clone(), &persons)?
                .iter()
                .map(|s| s.person_id)
                .collect();
            fit.retain(|p| Some(*p) != validation);
            if fit.is_empty() {
                return Err(Usage("no persons left to train on".into()).into());
            }
            let val: Vec<u32> = validation.into_iter().collect();
            if let Some(v) = validation {
                select(sessions.clone(), &[v])?;
            }
            let trained = train_on(&cfg, &sessions, &fit, &val, 0)?;
            save_model(&out, &trained.model, &trained.norm)?;
            save_model_config(&model_config_path(&out), &cfg.model)?;
            for e in &trained.outcome.history {
                println!(
                    "epoch {:>3}  lr {:.2e}  loss {:.6}  mse {:.6}  bio {:.2e}{}",
                    e.epoch,
                    e.lr,
                    e.loss,
                    e.mse,
                    e.bio,
                    e.val_mse.map(|v| format!("  val {v:.6}")).unwrap_or_default()
                );
            }
            println!("kept epoch {}; saved {}", trained.outcome.best_epoch, out.display());
        }
        Command::Eval {
            common,
            data,
            model,
            persons,
        } => {
            let mut cfg = load_config(&common)?;
            let side = model_config_path(&model);
            if side.exists() {
                cfg.model = load_model_config(&side)?;
            }
            let (m, norm) = load_model(&model, cfg.model.clone())?;
            let sessions = prepare_sessions(&cfg, &select(load_cohort(&data)?, &persons)?)?;
            let (skeleton, cloud) = body(&cfg)?;
            println!(
                "{:<10} {:>12} {:>12} {:>12}",
                "person", "model_mpjpe", "model_mpve", "midpoint"
            );
            for s in &sessions {
                let w = windows_for(&cfg, &sessions, &[s.person_id])?;
                if w.is_empty() {
                    bail!(imphead::Error::Data(format!(
                        "person {} yields no windows",
                        s.person_id
                    )));
                }
                let r = evaluate(&m, &w, &norm, &skeleton, &cloud)?;
                let mid = score(
                    &window_targets(&w),
                    &midpoint_predictions(&w, &cfg.limits),
                    &skeleton,
                    &cloud,
                )?;
                println!(
                    "{:<10} {:>12.1} {:>12.1} {:>12.1}",
                    s.person_id,
                    r.mpjpe.joint_average(),
                    r.mpve.joint_average(),
                    mid.mpjpe.joint_average()
                );
            }
        }
        Command::Lopo { common, data, out } => {
            let cfg = load_config(&common)?;
            let sessions = match data {
                Some(d) => load_cohort(&d)?,
                None => generate_cohort(&cfg.synth, &cfg.limits)?,
            };
            let table = run_lopo(&cfg, &sessions)?.table()?;
            fs::create_dir_all(&out)?;
            emit_report(&table, ReportFormat::Csv, &out.join("report.csv"))?;
            emit_report(&table, ReportFormat::Json, &out.join("report.json"))?;
            print!("{}", table.to_text());
        }
        Command::Report {
            common,
            input,
            format,
            output,
        } => {
            load_config(&common)?;
            let table = ReportTable::from_json(&fs::read_to_string(&input)?)?;
            let text = match format {
                Format::Text => table.to_text(),
                Format::Csv => table.to_csv(),
                Format::Json => table.to_json()?,
            };
            match output {
                Some(p) => fs::write(p, text)?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        return 1;
    }
    match err.downcast_ref::<imphead::Error>() {
        Some(e) if e.is_numeric() => 3,
        Some(imphead::Error::Config(_)) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
