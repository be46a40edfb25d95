//! Command-line experiment harness: generate-data, train, fit-schedule,
//! adapt-eval, report. Exit codes: 0 success, 2 usage, 3 data, 4 capacity.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind as ClapErrorKind;
use clap::{Parser, Subcommand};
use indexmap::IndexMap;

use crate::adapt::ParamSubset;
use crate::config::{self, Config};
use crate::corpus::{export_text, generate_corpus, split_meta_sets};
use crate::error::{Error, Result};
use crate::exp::{
    read_results_csv, run_adapt_eval, write_results_csv, EvalArtifacts, EvalColumn,
    ExperimentPlan, Supervision,
};
use crate::io::{read_checkpoint, read_corpus, write_checkpoint, write_corpus, write_schedule};
use crate::report::aggregate;
use crate::trainers::{
    baseline_train, fit_adaptation_schedule, sat_lhuc_train, sat_maml_train, LogLine,
};

#[derive(Parser, Debug)]
#[command(
    name = "metasat",
    version,
    about = "Desk-scale speaker-adaptive training with a learned adaptation schedule"
)]
struct Cli {
    /// Experiment seed; may instead come from the config `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Plain-text `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Replace existing output files.
    #[arg(long, global = true)]
    overwrite: bool,

    /// Worker threads for independent plan cells.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    /// Config overrides, e.g. `--set iterations=10` (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic multi-speaker corpus with meta splits.
    GenerateData {
        /// Corpus output path.
        #[arg(long)]
        out: PathBuf,
        /// Optional plain-text frame dump for debugging.
        #[arg(long)]
        export_text: Option<PathBuf>,
    },
    /// Train a model variant and write its checkpoint plus training log.
    Train {
        /// One of: baseline, sat-lhuc, maml-lhuc, maml-all.
        #[arg(long)]
        variant: String,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Baseline checkpoint to continue from (maml variants only).
        #[arg(long)]
        warm_start: Option<PathBuf>,
        /// Training log path (default: the checkpoint path with `.log`).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Fit per-layer adaptation rates on the meta-validation speakers.
    FitSchedule {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Adapted subset: lhuc or all.
        #[arg(long)]
        subset: String,
        /// Adaptation budget in frames.
        #[arg(long)]
        budget: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Adapt and evaluate every plan cell on the test speakers.
    AdaptEval {
        #[arg(long)]
        corpus: PathBuf,
        /// Directory holding `<variant>.ckpt` files (plus `labeller.ckpt`
        /// for unsupervised rows).
        #[arg(long)]
        ckpt_dir: PathBuf,
        /// Directory holding `<column>_<budget>.sched` files.
        #[arg(long)]
        sched_dir: PathBuf,
        /// Results CSV output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate result CSVs into comparison tables.
    Report {
        /// Result CSV files (one or more).
        files: Vec<PathBuf>,
        /// Write the rendered table here instead of only stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses argv and runs the requested command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ClapErrorKind::DisplayHelp | ClapErrorKind::DisplayVersion => {
                    print!("{e}");
                    Ok(())
                }
                _ => {
                    let first = e.to_string();
                    let line = first.lines().next().unwrap_or("invalid arguments");
                    Err(Error::Usage(line.to_string()))
                }
            };
        }
    };

    let mut cfg = match &cli.config {
        Some(path) => Config::from_file(path)?,
        None => Config::empty(),
    };
    for raw in &cli.overrides {
        let (k, v) = raw
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--set needs KEY=VALUE, got `{raw}`")))?;
        cfg.set(k.trim(), v.trim());
    }
    // `report` is pure aggregation; every other command needs the seed.
    let resolve_seed = || -> Result<u64> {
        match cli.seed {
            Some(s) => Ok(s),
            None => cfg.require_u64("seed"),
        }
    };

    match cli.cmd {
        Command::GenerateData { out, export_text: text_out } => {
            let seed = resolve_seed()?;
            cmd_generate_data(&cfg, seed, &out, text_out.as_deref(), cli.overwrite)
        }
        Command::Train {
            variant,
            corpus,
            out,
            warm_start,
            log,
        } => cmd_train(
            &cfg,
            resolve_seed()?,
            &variant,
            &corpus,
            &out,
            warm_start.as_deref(),
            log.as_deref(),
            cli.overwrite,
        ),
        Command::FitSchedule {
            checkpoint,
            corpus,
            subset,
            budget,
            out,
        } => cmd_fit_schedule(&cfg, resolve_seed()?, &checkpoint, &corpus, &subset, budget, &out, cli.overwrite),
        Command::AdaptEval {
            corpus,
            ckpt_dir,
            sched_dir,
            out,
        } => cmd_adapt_eval(
            &cfg,
            resolve_seed()?,
            &corpus,
            &ckpt_dir,
            &sched_dir,
            &out,
            cli.overwrite,
            cli.threads,
        ),
        Command::Report { files, out } => cmd_report(&files, out.as_deref(), cli.overwrite),
    }
}

fn cmd_generate_data(
    cfg: &Config,
    seed: u64,
    out: &Path,
    text_out: Option<&Path>,
    overwrite: bool,
) -> Result<()> {
    let params = config::corpus_params(cfg, seed)?;
    let mut corpus = generate_corpus(&params)?;
    split_meta_sets(&mut corpus, params.split_fractions, seed)?;
    write_corpus(out, &corpus, overwrite)?;
    if let Some(path) = text_out {
        if !overwrite && path.exists() {
            return Err(Error::Usage(format!(
                "output {} exists; pass --overwrite to replace it",
                path.display()
            )));
        }
        let mut buf = Vec::new();
        export_text(&corpus, &mut buf).map_err(|e| Error::io(path.display().to_string(), e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    println!(
        "wrote corpus: {} speakers x {} frames -> {}",
        params.n_speakers,
        params.frames_per_speaker,
        out.display()
    );
    Ok(())
}

fn write_log(path: &Path, log: &[LogLine], overwrite: bool) -> Result<()> {
    if !overwrite && path.exists() {
        return Err(Error::Usage(format!(
            "output {} exists; pass --overwrite to replace it",
            path.display()
        )));
    }
    let mut text = String::new();
    for line in log {
        text.push_str(&line.render());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    cfg: &Config,
    seed: u64,
    variant: &str,
    corpus_path: &Path,
    out: &Path,
    warm_start: Option<&Path>,
    log_path: Option<&Path>,
    overwrite: bool,
) -> Result<()> {
    let corpus = read_corpus(corpus_path)?;
    let log_path = log_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.with_extension("log"));

    let (checkpoint, log, schedule) = match variant {
        "baseline" => {
            if warm_start.is_some() {
                return Err(Error::Usage(
                    "--warm-start only applies to maml variants".into(),
                ));
            }
            let model_cfg = config::model_config(cfg, &corpus.params)?;
            let hyper = config::train_hyper(cfg, seed)?;
            let outcome = baseline_train(&model_cfg, &corpus, &hyper)?;
            (outcome.checkpoint, outcome.log, None)
        }
        "sat-lhuc" => {
            if warm_start.is_some() {
                return Err(Error::Usage(
                    "--warm-start only applies to maml variants".into(),
                ));
            }
            let model_cfg = config::model_config(cfg, &corpus.params)?;
            let hyper = config::train_hyper(cfg, seed)?;
            let p_si = config::si_probability(cfg)?;
            let (outcome, _bank) = sat_lhuc_train(&model_cfg, &corpus, &hyper, p_si)?;
            (outcome.checkpoint, outcome.log, None)
        }
        "maml-lhuc" | "maml-all" => {
            let warm_path = warm_start.ok_or_else(|| {
                Error::Usage(format!("--warm-start is required for the {variant} variant"))
            })?;
            let warm = read_checkpoint(warm_path)?;
            if warm.model.config.input_dim != corpus.params.feature_dim {
                return Err(Error::Config(format!(
                    "warm-start input_dim {} does not match corpus feature_dim {}",
                    warm.model.config.input_dim, corpus.params.feature_dim
                )));
            }
            let hyper = config::maml_hyper(cfg, seed)?;
            let subset = if variant == "maml-lhuc" {
                ParamSubset::Lhuc
            } else {
                ParamSubset::All
            };
            let outcome = sat_maml_train(&warm, &corpus, &hyper, subset)?;
            (outcome.checkpoint, outcome.log, Some(outcome.schedule))
        }
        other => {
            return Err(Error::Usage(format!(
                "unknown variant `{other}` (expected baseline, sat-lhuc, maml-lhuc, maml-all)"
            )))
        }
    };

    write_checkpoint(out, &checkpoint, overwrite)?;
    write_log(&log_path, &log, overwrite)?;
    if let Some(schedule) = schedule {
        // the jointly trained schedule, for inspection; evaluation uses
        // fit-schedule outputs
        let sched_path = out.with_extension("schedule");
        let header = vec![
            ("variant".to_string(), variant.to_string()),
            ("seed".to_string(), seed.to_string()),
        ];
        write_schedule(&sched_path, &schedule, &header, overwrite)?;
    }
    println!(
        "trained {variant}: {} iterations -> {}",
        log.len(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_fit_schedule(
    cfg: &Config,
    seed: u64,
    checkpoint: &Path,
    corpus_path: &Path,
    subset: &str,
    budget: usize,
    out: &Path,
    overwrite: bool,
) -> Result<()> {
    let ckpt = read_checkpoint(checkpoint)?;
    let corpus = read_corpus(corpus_path)?;
    let subset = config::parse_subset(subset)?;
    let hyper = config::fit_hyper(cfg, seed)?;
    let outcome = fit_adaptation_schedule(&ckpt, &corpus, subset, budget, &hyper)?;
    let header = vec![
        ("subset".to_string(), subset.as_str().to_string()),
        ("budget_frames".to_string(), budget.to_string()),
        ("seed".to_string(), seed.to_string()),
        ("initial_j".to_string(), outcome.initial_j.to_string()),
        ("fitted_j".to_string(), outcome.fitted_j.to_string()),
    ];
    write_schedule(out, &outcome.schedule, &header, overwrite)?;
    println!(
        "fitted schedule at budget {budget}: J {} -> {} ({})",
        outcome.initial_j,
        outcome.fitted_j,
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_adapt_eval(
    cfg: &Config,
    seed: u64,
    corpus_path: &Path,
    ckpt_dir: &Path,
    sched_dir: &Path,
    out: &Path,
    overwrite: bool,
    threads: usize,
) -> Result<()> {
    let corpus = read_corpus(corpus_path)?;
    let columns: Vec<EvalColumn> = cfg
        .str_list_or(
            "eval_columns",
            &["baseline-lhuc", "baseline-all", "sat-lhuc", "maml-lhuc", "maml-all"],
        )
        .iter()
        .map(|s| EvalColumn::from_id(s))
        .collect::<Result<_>>()?;
    let supervision: Vec<Supervision> = cfg
        .str_list_or("eval_supervision", &["supervised"])
        .iter()
        .map(|s| Supervision::from_str(s))
        .collect::<Result<_>>()?;
    let budgets = config::eval_budgets(cfg)?;
    let eval_anchor = config::eval_anchor(cfg, &budgets)?;
    let eval_frames = config::eval_frames(cfg, eval_anchor, corpus.params.frames_per_speaker)?;
    let plan = ExperimentPlan {
        columns,
        budgets,
        stats_modes: config::eval_stats_modes(cfg)?,
        supervision,
        seed,
        eval_anchor,
        eval_frames,
    };

    let mut checkpoints = IndexMap::new();
    for &col in &plan.columns {
        let stem = col.checkpoint_stem();
        if checkpoints.contains_key(stem) {
            continue;
        }
        let path = ckpt_dir.join(format!("{stem}.ckpt"));
        if !path.exists() {
            return Err(Error::Data(format!("missing artifact: {}", path.display())));
        }
        checkpoints.insert(stem.to_string(), read_checkpoint(&path)?);
    }
    let labeller = if plan.needs_labeller() {
        let path = ckpt_dir.join("labeller.ckpt");
        if !path.exists() {
            return Err(Error::Data(format!("missing artifact: {}", path.display())));
        }
        Some(read_checkpoint(&path)?)
    } else {
        None
    };
    let mut schedules = IndexMap::new();
    for &col in &plan.columns {
        for &budget in &plan.budgets {
            let path = sched_dir.join(format!("{}_{budget}.sched", col.id()));
            if !path.exists() {
                return Err(Error::Data(format!("missing artifact: {}", path.display())));
            }
            let (schedule, _) = crate::io::read_schedule(&path)?;
            schedules.insert((col.id().to_string(), budget), schedule);
        }
    }

    let artifacts = EvalArtifacts {
        checkpoints,
        labeller,
        schedules,
    };
    let rows = run_adapt_eval(&corpus, &plan, &artifacts, threads)?;
    write_results_csv(out, &rows, overwrite)?;
    println!("wrote {} result rows -> {}", rows.len(), out.display());
    Ok(())
}

fn cmd_report(files: &[PathBuf], out: Option<&Path>, overwrite: bool) -> Result<()> {
    if files.is_empty() {
        return Err(Error::Usage("report needs at least one results CSV".into()));
    }
    let mut rows = Vec::new();
    for path in files {
        rows.extend(read_results_csv(path)?);
    }
    let report = aggregate(&rows)?;
    let rendered = report.render();
    print!("{rendered}");
    if let Some(path) = out {
        if !overwrite && path.exists() {
            return Err(Error::Usage(format!(
                "output {} exists; pass --overwrite to replace it",
                path.display()
            )));
        }
        std::fs::write(path, &rendered).map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

/// Binary entry point: renders any error as one machine-parseable line and
/// maps it to the documented exit code.
pub fn main_entry() -> std::process::ExitCode {
    let args = std::env::args_os();
    match run(args) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}:{}]: {}", e.exit_code(), e.kind(), msg);
            std::process::ExitCode::from(e.exit_code())
        }
    }
}
