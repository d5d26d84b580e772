mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use simrod_core::adapt::{run_ablation, train_source};
use simrod_core::data::{corrupt_dataset_with, generate_shapes_dataset, load_dataset, parse_suite, save_dataset};
use simrod_core::detector::{load_checkpoint, save_checkpoint, CheckpointMeta, Detector};
use simrod_core::eval::{ap50, predict, robustness, write_predictions};
use simrod_core::pseudolabel::{gen_pseudo, save_pseudo};
use simrod_core::{AblationMode, Domain, RobustnessReport};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "simrod", version, about = "Unsupervised adaptation of a tiny detector to shifted domains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (`key = value`); defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the source, target-raw and test splits of synthetic shapes.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply the configured corruption shift to a dataset.
    Corrupt {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Supervised training on a labeled source dataset.
    TrainSource {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint to write.
        #[arg(long)]
        out: PathBuf,
        /// Train the teacher architecture instead of the student.
        #[arg(long)]
        teacher: bool,
    },
    /// Adapt a source model to unlabeled target data.
    Adapt {
        #[command(flatten)]
        common: Common,
        /// source, bn-adapt, bn-dmx, self, no-ga or teacher.
        #[arg(long)]
        mode: AblationMode,
        /// Source-trained student checkpoint.
        #[arg(long)]
        model: PathBuf,
        /// Source-trained teacher checkpoint (teacher and no-ga modes).
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Run directory; the adapted weights go to `model.ck`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Label a target dataset with a model.
    PseudoLabel {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to `adapt.conf_threshold`.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// AP50 on a dataset, or a robustness report over a corruption suite.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Suite file of `kind:severity` entries.
        #[arg(long)]
        suite: Option<PathBuf>,
        /// Report of the source model, for tau_c.
        #[arg(long, requires = "suite")]
        source_report: Option<PathBuf>,
        /// JSON output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the clean-data detections here.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        model_id: Option<String>,
    },
    /// Print the effective configuration, every key included.
    Config {
        #[command(flatten)]
        common: Common,
    },
    /// Render a robustness report as a text table.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Output of `evaluate` without a suite.
#[derive(Serialize, Deserialize)]
struct ScoreFile {
    model_id: String,
    data: String,
    ap50: f64,
}

fn load_model(path: &Path) -> Result<Detector> {
    Ok(load_checkpoint(path)?.0)
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common, out } => {
            let cfg = RunConfig::load(common.config.as_deref())?;
            for (split, n) in [
                ("source", cfg.data.source_images),
                ("target-raw", cfg.data.target_images),
                ("test", cfg.data.test_images),
            ] {
                let ds = generate_shapes_dataset(&cfg.shapes_for(split, n))?;
                save_dataset(&ds, &out.join(split))?;
                println!("gen-data: {split} {} images {} boxes", ds.len(), ds.total_boxes());
            }
        }
        Command::Corrupt { common, input, output } => {
            let cfg = RunConfig::load(common.config.as_deref())?;
            let ds = load_dataset(&input)?;
            let seed = cfg.stage_seed(&format!("corrupt:{}", stem(&output)));
            let shifted = corrupt_dataset_with(&ds, &cfg.corrupt.kinds, cfg.corrupt.severity, &cfg.severity, seed)?;
            save_dataset(&shifted, &output)?;
            println!("corrupt: {} images at severity {}", shifted.len(), cfg.corrupt.severity);
        }
        Command::TrainSource {
            common,
            data,
            out,
            teacher,
        } => {
            let cfg = RunConfig::load(common.config.as_deref())?;
            let (role, dcfg) = if teacher {
                ("teacher", cfg.teacher_config())
            } else {
                ("student", cfg.student_config())
            };
            let ds = load_dataset(&data)?;
            let init = Detector::new(dcfg)?;
            let outcome = train_source(&init, &ds, &cfg.train_config(role))?;
            let val = outcome.record.epochs.iter().find(|e| e.epoch == outcome.best_epoch).and_then(|e| e.val_ap50);
            let meta = CheckpointMeta {
                epoch: outcome.best_epoch,
                val_ap50: val,
                label: format!("source:{role}"),
            };
            save_checkpoint(&outcome.model, &meta, &out)?;
            write_text(&out.with_extension("csv"), &outcome.record.metrics_csv())?;
            println!("train-source: {role} best epoch {} val_ap50 {}", outcome.best_epoch, fmt_opt(val));
        }
        Command::Adapt {
            common,
            mode,
            model,
            teacher,
            source,
            target,
            out,
        } => {
            let cfg = RunConfig::load(common.config.as_deref())?;
            let student = load_model(&model)?;
            let teacher = match (&teacher, mode.needs_teacher()) {
                (Some(p), true) => Some(load_model(p)?),
                (None, true) => bail!("mode {mode} needs --teacher"),
                (_, false) => None,
            };
            let src = load_dataset(&source)?;
            let tgt = load_dataset(&target)?;
            if tgt.domain != Domain::Target {
                bail!("{} is a {} dataset, expected target", target.display(), tgt.domain);
            }
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let outcome = run_ablation(mode, &student, teacher.as_ref(), &src, &tgt, &cfg.adapt_config(), Some(&out))?;
            let meta = CheckpointMeta {
                epoch: outcome.record.epochs.len(),
                val_ap50: outcome.record.epochs.last().and_then(|e| e.val_ap50),
                label: format!("adapt:{mode}"),
            };
            save_checkpoint(&outcome.model, &meta, &out.join("model.ck"))?;
            if let Some((t, _)) = &outcome.teacher {
                save_checkpoint(t, &CheckpointMeta { label: "adapt:teacher".into(), ..meta.clone() }, &out.join("teacher.ck"))?;
            }
            println!(
                "adapt: mode {mode} {} epochs, {} pseudo-label refreshes",
                outcome.record.epochs.len(),
                outcome.record.refresh_epochs().len()
            );
        }
        Command::PseudoLabel {
            common,
            model,
            target,
            out,
            threshold,
        } => {
            let cfg = RunConfig::load(common.config.as_deref())?;
            let det = load_model(&model)?;
            let tgt = load_dataset(&target)?.without_labels();
            let t = threshold.unwrap_or(cfg.adapt.conf_threshold);
            let set = gen_pseudo(&det, &tgt, t, &stem(&model))?;
            save_pseudo(&set, &out)?;
            println!("pseudo-label: {} boxes on {} images", set.total_boxes(), set.len());
        }
        Command::Evaluate {
            common,
            model,
            data,
            suite,
            source_report,
            out,
            predictions,
            model_id,
        } => {
            let cfg = RunConfig::load(common.config.as_deref())?;
            let det = load_model(&model)?;
            let ds = load_dataset(&data)?;
            let model_id = model_id.unwrap_or_else(|| stem(&model));
            if let Some(p) = &predictions {
                write_predictions(p, &predict(&det, &ds)?)?;
            }
            let json = match &suite {
                None => {
                    let ap = ap50(&predict(&det, &ds)?, &ds)?;
                    println!("evaluate: {model_id} ap50 {ap:.4}");
                    serde_json::to_string_pretty(&ScoreFile {
                        model_id,
                        data: stem(&data),
                        ap50: ap,
                    })? + "\n"
                }
                Some(sp) => {
                    let text = fs::read_to_string(sp).with_context(|| format!("reading suite {}", sp.display()))?;
                    let specs = parse_suite(&text, sp)?;
                    let src = source_report
                        .as_deref()
                        .map(|p| -> Result<RobustnessReport> {
                            let t = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                            Ok(RobustnessReport::from_json(&t)?)
                        })
                        .transpose()?;
                    let seed = cfg.stage_seed("evaluate:suite");
                    let r = robustness(&det, &ds, &specs, &cfg.severity, seed, (&model_id, &stem(sp)), src.as_ref())?;
                    println!(
                        "evaluate: {model_id} ap50_clean {:.4} mpc {:.4} rpc {} tau_c {}",
                        r.ap50_clean,
                        r.mpc,
                        fmt_opt(r.rpc),
                        fmt_opt(r.tau_c)
                    );
                    r.to_json()?
                }
            };
            if let Some(o) = &out {
                write_text(o, &json)?;
            }
        }
        Command::Config { common } => {
            print!("{}", RunConfig::load(common.config.as_deref())?.to_text()?);
        }
        Command::Report { input, out } => {
            let text = fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let table = RobustnessReport::from_json(&text)
                .with_context(|| format!("parsing report {}", input.display()))?
                .render_table();
            match out {
                Some(o) => write_text(&o, &table)?,
                None => print!("{table}"),
            }
        }
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

/// Joins a multi-line message so every failure prints as one line.
fn one_line(msg: &str) -> String {
    msg.lines().map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version.
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            eprintln!("simrod: usage error: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("simrod: error: {}", one_line(&format!("{e:#}")));
            ExitCode::FAILURE
        }
    }
}
