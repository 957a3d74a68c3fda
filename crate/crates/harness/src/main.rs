use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nailforce_harness::commands;
use nailforce_harness::config::{PipelineConfig, Source};
use nailforce_harness::pipeline::{evaluate_predictions, predict_source, train_bundle, ModelBundle};
use nailforce_harness::report::{predictions_csv, ModelSummary};
use nailforce_harness::{run_pipeline, Error, Result};
use nailforce_learn::gp::GpMode;
use nailforce_learn::neural::{CnnSpec, FdNetSpec, RnnSpec, TrainConfig};
use nailforce_learn::PredictorConfig;

#[derive(Parser)]
#[command(name = "nailforce", version, about = "Fingertip force, torque and curvature from fingernail images")]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PredictorKind {
    Gp,
    Cnn,
    Nnfd,
    Rnnfd,
}

#[derive(Clone, Copy, ValueEnum)]
enum GpKind {
    Exact,
    Fitc,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Recover the camera clock offset of a trial and label its frames.
    Sync {
        #[arg(long)]
        trial: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Track the nail through a trial with mean shift.
    Track {
        #[arg(long)]
        trial: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Register every frame of a trial to a reference frame.
    Align {
        #[arg(long)]
        trial: PathBuf,
        /// Index of the reference frame.
        #[arg(long = "ref", default_value_t = 0)]
        reference: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the contact point and re-reference torques to the fingertip.
    Calibrate {
        #[arg(long)]
        trial: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model on every trial of a dataset directory.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        predictor: Option<PredictorKind>,
        #[arg(long, value_enum)]
        mode: Option<GpKind>,
        #[arg(long)]
        inducing_frac: Option<f64>,
    },
    /// Predict every trial of a dataset directory with a trained model.
    Predict {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        smooth_span: Option<usize>,
    },
    /// Predict and evaluate a dataset directory with a trained model.
    Eval {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        smooth_span: Option<usize>,
    },
    /// Run every stage and write the evaluation report.
    Pipeline {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        smooth_span: Option<usize>,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut c = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        c.reseed(s);
    }
    Ok(c)
}

fn with_data(mut c: PipelineConfig, data: &Option<PathBuf>) -> PipelineConfig {
    if let Some(d) = data {
        c.source = Source::Dataset { dir: d.clone() };
    }
    c
}

fn with_span(mut c: PipelineConfig, span: Option<usize>) -> Result<PipelineConfig> {
    if let Some(s) = span {
        c.smooth.smoother.span = s;
        c.smooth.smoother.validate().map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(c)
}

fn select_predictor(c: &mut PipelineConfig, kind: Option<PredictorKind>, mode: Option<GpKind>, frac: Option<f64>) -> Result<()> {
    match kind {
        Some(PredictorKind::Gp) if !matches!(c.predictor, PredictorConfig::Gp { .. }) => {
            c.predictor = nailforce_harness::config::default_predictor();
        }
        Some(PredictorKind::Cnn) => {
            c.predictor = PredictorConfig::Cnn {
                spec: CnnSpec::default(),
                train: TrainConfig::default(),
            }
        }
        Some(PredictorKind::Nnfd) => {
            c.predictor = PredictorConfig::NnFd {
                spec: FdNetSpec::default(),
                train: TrainConfig::default(),
            }
        }
        Some(PredictorKind::Rnnfd) => {
            c.predictor = PredictorConfig::RnnFd {
                spec: RnnSpec::default(),
                train: TrainConfig::default(),
            }
        }
        _ => {}
    }
    if mode.is_some() || frac.is_some() {
        let PredictorConfig::Gp { gp } = &mut c.predictor else {
            return Err(Error::Config("--mode and --inducing-frac apply to the GP predictor".into()));
        };
        match mode {
            Some(GpKind::Exact) => gp.mode = GpMode::Exact,
            Some(GpKind::Fitc) | None => {
                let inducing_frac = frac.unwrap_or(match gp.mode {
                    GpMode::Fitc { inducing_frac } => inducing_frac,
                    GpMode::Exact => 0.17,
                });
                gp.mode = GpMode::Fitc { inducing_frac };
            }
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<String> {
    let config = load_config(cli)?;
    match &cli.command {
        Command::Synth { out } => {
            let n = commands::synth(&config, out)?;
            Ok(format!("wrote {n} trials to {}", out.display()))
        }
        Command::Sync { trial, out } => {
            let s = commands::sync(&config, trial)?;
            commands::save(out, &commands::sync_csv(&s))?;
            Ok(format!("offset {:.4} s ({} frames), score {:.3}", s.offset, s.lag_frames, s.score))
        }
        Command::Track { trial, out } => {
            let r = commands::track(&config, trial)?;
            commands::save(out, &commands::track_csv(&r))?;
            Ok(format!("tracked {} frames", r.len()))
        }
        Command::Align { trial, reference, out } => {
            let n = commands::align_trial(&config, trial, *reference, out)?;
            Ok(format!("aligned {n} frames to frame {reference}"))
        }
        Command::Calibrate { trial, out } => {
            let (contact, csv) = commands::calibrate(&config, trial)?;
            commands::save(out, &csv)?;
            let labels = out.with_extension("labels.csv");
            commands::save(&labels, &commands::labels_csv(&config, trial)?)?;
            let contact_path = out.with_extension("contact.json");
            commands::save(&contact_path, &serde_json::to_string_pretty(&contact).map_err(|e| Error::stage("io", e))?)?;
            Ok(format!("contact at ({:.3}, {:.3}, {:.3}) mm", contact.x, contact.y, contact.z))
        }
        Command::Train {
            data,
            out,
            predictor,
            mode,
            inducing_frac,
        } => {
            let mut c = with_data(config, data);
            select_predictor(&mut c, *predictor, *mode, *inducing_frac)?;
            let (bundle, report) = train_bundle(&c)?;
            bundle.save(out)?;
            if let Some(r) = report {
                let mut csv = String::from("epoch,train_loss,val_loss\n");
                for (i, t) in r.train_loss.iter().enumerate() {
                    let v = r.val_loss.get(i).map(|v| v.to_string()).unwrap_or_default();
                    csv.push_str(&format!("{i},{t},{v}\n"));
                }
                commands::save(&out.with_extension("curve.csv"), &csv)?;
            }
            Ok(format!("trained {} model, saved to {}", bundle.model.kind(), out.display()))
        }
        Command::Predict {
            data,
            model,
            out,
            smooth_span,
        } => {
            let c = with_span(with_data(config, data), *smooth_span)?;
            let bundle = ModelBundle::load(model)?;
            let (preds, _) = predict_source(&c, &bundle)?;
            commands::save(out, &predictions_csv(&preds))?;
            Ok(format!("predicted {} trials", preds.len()))
        }
        Command::Eval {
            data,
            model,
            out,
            smooth_span,
        } => {
            let c = with_span(with_data(config, data), *smooth_span)?;
            let bundle = ModelBundle::load(model)?;
            let (preds, trials) = predict_source(&c, &bundle)?;
            let summary = ModelSummary {
                group: "all".into(),
                predictor: bundle.model.kind().into(),
                train_trials: 0,
                train_frames: 0,
                val_frames: 0,
                test_trials: preds.len(),
                epochs: None,
                best_epoch: None,
                final_train_loss: None,
                marker_offset_deg: None,
            };
            let report = evaluate_predictions(&c, &preds, &trials, vec![summary])?;
            report.write(out)?;
            commands::save(&out.join("predictions.csv"), &predictions_csv(&preds))?;
            Ok(report.summary())
        }
        Command::Pipeline { out, smooth_span } => {
            let mut c = with_span(config, *smooth_span)?;
            if let Some(o) = out {
                c.output = o.clone();
            }
            Ok(run_pipeline(&c)?.report.summary())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.jobs > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global() {
            eprintln!("nailforce: cannot set up {} workers: {e}", cli.jobs);
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let tag = e.stage_tag().unwrap_or("config");
            eprintln!("nailforce: {tag} stage failed: {e}");
            ExitCode::FAILURE
        }
    }
}
