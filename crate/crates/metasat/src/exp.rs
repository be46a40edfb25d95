//! The experiment grid: evaluation columns, plan expansion, and the
//! adapt-then-evaluate engine that produces result rows.

use indexmap::IndexMap;
use rayon::prelude::*;
use std::collections::HashMap;

use crate::adapt::{adapt_with_stats, ParamSubset, Schedule};
use crate::corpus::{Corpus, Episode, FrameBlock, Split};
use crate::error::{Error, Result};
use crate::io::Checkpoint;
use crate::model::{Mode, StatsMode};
use crate::ops::frame_error_rate;

/// One evaluated column of the comparison tables: which trained model and
/// which adaptation subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EvalColumn {
    BaselineLhuc,
    BaselineAll,
    SatLhuc,
    MamlLhuc,
    MamlAll,
}

/// Canonical column order of the comparison tables.
pub const COLUMN_ORDER: [EvalColumn; 5] = [
    EvalColumn::BaselineLhuc,
    EvalColumn::BaselineAll,
    EvalColumn::SatLhuc,
    EvalColumn::MamlLhuc,
    EvalColumn::MamlAll,
];

impl EvalColumn {
    pub fn id(&self) -> &'static str {
        match self {
            EvalColumn::BaselineLhuc => "baseline-lhuc",
            EvalColumn::BaselineAll => "baseline-all",
            EvalColumn::SatLhuc => "sat-lhuc",
            EvalColumn::MamlLhuc => "maml-lhuc",
            EvalColumn::MamlAll => "maml-all",
        }
    }

    pub fn from_id(s: &str) -> Result<Self> {
        match s {
            "baseline-lhuc" => Ok(EvalColumn::BaselineLhuc),
            "baseline-all" => Ok(EvalColumn::BaselineAll),
            "sat-lhuc" => Ok(EvalColumn::SatLhuc),
            "maml-lhuc" => Ok(EvalColumn::MamlLhuc),
            "maml-all" => Ok(EvalColumn::MamlAll),
            other => Err(Error::Config(format!("unknown eval column `{other}`"))),
        }
    }

    /// Stem of the checkpoint file this column evaluates.
    pub fn checkpoint_stem(&self) -> &'static str {
        match self {
            EvalColumn::BaselineLhuc | EvalColumn::BaselineAll => "baseline",
            EvalColumn::SatLhuc => "sat-lhuc",
            EvalColumn::MamlLhuc => "maml-lhuc",
            EvalColumn::MamlAll => "maml-all",
        }
    }

    pub fn subset(&self) -> ParamSubset {
        match self {
            EvalColumn::BaselineLhuc | EvalColumn::SatLhuc | EvalColumn::MamlLhuc => {
                ParamSubset::Lhuc
            }
            EvalColumn::BaselineAll | EvalColumn::MamlAll => ParamSubset::All,
        }
    }
}

/// Adaptation-label source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Supervision {
    /// Reference labels on the adaptation data.
    Supervised,
    /// First-pass pseudo-labels from a separately trained baseline.
    Unsupervised,
}

impl Supervision {
    pub fn as_str(&self) -> &'static str {
        match self {
            Supervision::Supervised => "supervised",
            Supervision::Unsupervised => "unsupervised",
        }
    }

    pub fn from_str(s: &str) -> Result<Self> {
        match s {
            "supervised" => Ok(Supervision::Supervised),
            "unsupervised" => Ok(Supervision::Unsupervised),
            other => Err(Error::Config(format!("unknown supervision `{other}`"))),
        }
    }
}

/// The experiment plan; every (column, budget, stats, supervision) cell
/// produces exactly one result row per run, plus one unadapted `original`
/// row per column.
///
/// Episodes are end-aligned at `eval_anchor`: the adaptation window of a
/// budget `b` cell is `[anchor - b, anchor)`. All cells score on the same
/// unseen window `[anchor, anchor + eval_frames)`, so budget rows are
/// directly comparable (one fixed test region per speaker, as in a fixed
/// test-set table).
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub columns: Vec<EvalColumn>,
    pub budgets: Vec<usize>,
    pub stats_modes: Vec<StatsMode>,
    pub supervision: Vec<Supervision>,
    pub seed: u64,
    pub eval_anchor: usize,
    pub eval_frames: usize,
}

impl ExperimentPlan {
    pub fn cells(&self) -> Vec<(EvalColumn, usize, StatsMode, Supervision)> {
        let mut out = Vec::new();
        for &col in &self.columns {
            for &budget in &self.budgets {
                for &stats in &self.stats_modes {
                    for &sup in &self.supervision {
                        out.push((col, budget, stats, sup));
                    }
                }
            }
        }
        out
    }

    pub fn needs_labeller(&self) -> bool {
        self.supervision.contains(&Supervision::Unsupervised)
    }
}

/// Everything the evaluation engine consumes besides the corpus.
pub struct EvalArtifacts {
    /// Keyed by checkpoint stem (`baseline`, `sat-lhuc`, ...).
    pub checkpoints: IndexMap<String, Checkpoint>,
    /// First-pass labelling model for unsupervised rows.
    pub labeller: Option<Checkpoint>,
    /// Keyed by (column id, budget).
    pub schedules: IndexMap<(String, usize), Schedule>,
}

/// One line of the results CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub column: String,
    /// 0 encodes the unadapted `original` row.
    pub budget_frames: usize,
    pub stats: String,
    pub supervision: String,
    pub seed: u64,
    pub episodes: usize,
    pub unadapted_fer: f64,
    pub adapted_fer: f64,
    pub mean_improvement: f64,
    pub frac_improved: f64,
}

pub const CSV_HEADER: &str = "column,budget_frames,stats,supervision,seed,episodes,unadapted_fer,adapted_fer,mean_improvement,frac_improved";

impl ResultRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.column,
            self.budget_frames,
            self.stats,
            self.supervision,
            self.seed,
            self.episodes,
            self.unadapted_fer,
            self.adapted_fer,
            self.mean_improvement,
            self.frac_improved
        )
    }

    pub fn from_csv_line(line: &str) -> Result<Self> {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 10 {
            return Err(Error::Data(format!(
                "result row has {} fields, expected 10: `{line}`",
                parts.len()
            )));
        }
        let field = |i: usize, what: &str| -> Result<f64> {
            parts[i]
                .parse()
                .map_err(|_| Error::Data(format!("bad {what} `{}` in `{line}`", parts[i])))
        };
        Ok(ResultRow {
            column: parts[0].to_string(),
            budget_frames: parts[1]
                .parse()
                .map_err(|_| Error::Data(format!("bad budget `{}`", parts[1])))?,
            stats: parts[2].to_string(),
            supervision: parts[3].to_string(),
            seed: parts[4]
                .parse()
                .map_err(|_| Error::Data(format!("bad seed `{}`", parts[4])))?,
            episodes: parts[5]
                .parse()
                .map_err(|_| Error::Data(format!("bad episode count `{}`", parts[5])))?,
            unadapted_fer: field(6, "unadapted_fer")?,
            adapted_fer: field(7, "adapted_fer")?,
            mean_improvement: field(8, "mean_improvement")?,
            frac_improved: field(9, "frac_improved")?,
        })
    }

    /// Identity of the plan cell this row fills.
    pub fn cell_key(&self) -> (String, usize, String, String, u64) {
        (
            self.column.clone(),
            self.budget_frames,
            self.stats.clone(),
            self.supervision.clone(),
            self.seed,
        )
    }
}

/// Pooled unadapted frame error of a checkpoint over the full streams of
/// the test speakers, on the frozen-statistics path.
fn original_fer(corpus: &Corpus, ckpt: &Checkpoint) -> Result<f64> {
    let context = ckpt.model.config.context_frames;
    let mut wrong = 0.0;
    let mut total = 0.0;
    for id in corpus.split_ids(Split::Test) {
        let rec = corpus.speaker(id)?;
        let chunk = 4096;
        let mut at = 0;
        while at < rec.n_frames() {
            let len = chunk.min(rec.n_frames() - at);
            let block = rec.stacked_range(at, len, context);
            let (logits, _) = ckpt.model.forward(&ckpt.params, &block.x, Mode::Infer)?;
            wrong += frame_error_rate(&logits, &block.y)? * len as f64;
            total += len as f64;
            at += len;
        }
    }
    Ok(wrong / total)
}

fn fer_under_stats(
    ckpt: &Checkpoint,
    params: &crate::params::ParamStore,
    block: &FrameBlock,
    stats: StatsMode,
) -> Result<f64> {
    let (logits, _) = ckpt.model.forward_eval(params, &block.x, stats)?;
    frame_error_rate(&logits, &block.y)
}

type EpisodeCache = HashMap<(usize, usize), Vec<Episode>>;

fn episodes_for(
    corpus: &Corpus,
    cache: &mut EpisodeCache,
    budget: usize,
    context: usize,
    anchor: usize,
    eval_frames: usize,
) -> Result<()> {
    if cache.contains_key(&(budget, context)) {
        return Ok(());
    }
    let offset = anchor.checked_sub(budget).ok_or_else(|| {
        Error::Sampling(format!(
            "eval anchor {anchor} is smaller than the budget {budget}"
        ))
    })?;
    let mut eps = Vec::new();
    for id in corpus.split_ids(Split::Test) {
        let rec = corpus.speaker(id)?;
        if rec.n_frames() < anchor + eval_frames {
            return Err(Error::Sampling(format!(
                "speaker {id} has {} frames, evaluation needs {}",
                rec.n_frames(),
                anchor + eval_frames
            )));
        }
        let adapt = rec.stacked_range(offset, budget, context);
        let unseen = rec.stacked_range(anchor, eval_frames, context);
        eps.push(Episode {
            speaker: id,
            adapt,
            unseen,
            adapt_range: (offset, anchor),
            unseen_range: (anchor, anchor + eval_frames),
        });
    }
    cache.insert((budget, context), eps);
    Ok(())
}

/// Runs the full plan: one `original` row per column, then one row per
/// plan cell, in plan order. Cells are independent; with `threads > 1`
/// they run in parallel and rows are still written in plan order.
pub fn run_adapt_eval(
    corpus: &Corpus,
    plan: &ExperimentPlan,
    artifacts: &EvalArtifacts,
    threads: usize,
) -> Result<Vec<ResultRow>> {
    if corpus.split_ids(Split::Test).is_empty() {
        return Err(Error::Usage("corpus has no test speakers".into()));
    }
    if plan.needs_labeller() && artifacts.labeller.is_none() {
        return Err(Error::Usage(
            "plan includes unsupervised rows but no labeller checkpoint was provided".into(),
        ));
    }
    for &col in &plan.columns {
        if !artifacts.checkpoints.contains_key(col.checkpoint_stem()) {
            return Err(Error::Data(format!(
                "missing checkpoint `{}` for column {}",
                col.checkpoint_stem(),
                col.id()
            )));
        }
        for &budget in &plan.budgets {
            if !artifacts
                .schedules
                .contains_key(&(col.id().to_string(), budget))
            {
                return Err(Error::Data(format!(
                    "missing schedule for column {} at budget {budget}",
                    col.id()
                )));
            }
        }
    }

    // Episodes per (budget, context), shared across columns.
    let mut cache = EpisodeCache::new();
    for &col in &plan.columns {
        let context = artifacts.checkpoints[col.checkpoint_stem()]
            .model
            .config
            .context_frames;
        for &budget in &plan.budgets {
            episodes_for(corpus, &mut cache, budget, context, plan.eval_anchor, plan.eval_frames)?;
        }
    }

    // Pseudo-labels per (speaker, budget): produced once by the labelling
    // model and reused for adapting every column.
    let mut pseudo: HashMap<(u32, usize), Vec<usize>> = HashMap::new();
    if plan.needs_labeller() {
        let labeller = artifacts.labeller.as_ref().expect("checked above");
        let l_ctx = labeller.model.config.context_frames;
        for &budget in &plan.budgets {
            episodes_for(corpus, &mut cache, budget, l_ctx, plan.eval_anchor, plan.eval_frames)?;
            for ep in &cache[&(budget, l_ctx)] {
                let labels = labeller.model.pseudo_label(&labeller.params, &ep.adapt.x)?;
                pseudo.insert((ep.speaker, budget), labels);
            }
        }
    }

    let mut rows = Vec::new();
    // `original` rows: unadapted performance, frozen statistics, once per
    // column (identical across cells sharing the checkpoint by
    // construction).
    for &col in &plan.columns {
        let ckpt = &artifacts.checkpoints[col.checkpoint_stem()];
        let fer = original_fer(corpus, ckpt)?;
        rows.push(ResultRow {
            column: col.id().to_string(),
            budget_frames: 0,
            stats: "global".into(),
            supervision: "none".into(),
            seed: plan.seed,
            episodes: corpus.split_ids(Split::Test).len(),
            unadapted_fer: fer,
            adapted_fer: fer,
            mean_improvement: 0.0,
            frac_improved: 0.0,
        });
    }

    let cells = plan.cells();
    let eval_cell = |&(col, budget, stats, sup): &(EvalColumn, usize, StatsMode, Supervision)|
     -> Result<ResultRow> {
        let ckpt = &artifacts.checkpoints[col.checkpoint_stem()];
        let schedule = &artifacts.schedules[&(col.id().to_string(), budget)];
        let context = ckpt.model.config.context_frames;
        let episodes = &cache[&(budget, context)];
        let mut fer_u = Vec::with_capacity(episodes.len());
        let mut fer_a = Vec::with_capacity(episodes.len());
        for ep in episodes {
            let d_a = match sup {
                Supervision::Supervised => ep.adapt.clone(),
                Supervision::Unsupervised => FrameBlock {
                    x: ep.adapt.x.clone(),
                    y: pseudo[&(ep.speaker, budget)].clone(),
                },
            };
            let run = adapt_with_stats(
                &ckpt.model,
                &ckpt.params,
                &d_a,
                schedule,
                col.subset(),
                stats,
            )?;
            fer_u.push(fer_under_stats(ckpt, &ckpt.params, &ep.unseen, stats)?);
            fer_a.push(fer_under_stats(ckpt, &run.params, &ep.unseen, stats)?);
        }
        let n = episodes.len() as f64;
        let unadapted = fer_u.iter().sum::<f64>() / n;
        let adapted = fer_a.iter().sum::<f64>() / n;
        let mean_improvement = fer_u
            .iter()
            .zip(&fer_a)
            .map(|(u, a)| u - a)
            .sum::<f64>()
            / n;
        let frac_improved =
            fer_u.iter().zip(&fer_a).filter(|(u, a)| a < u).count() as f64 / n;
        Ok(ResultRow {
            column: col.id().to_string(),
            budget_frames: budget,
            stats: stats.as_str().to_string(),
            supervision: sup.as_str().to_string(),
            seed: plan.seed,
            episodes: episodes.len(),
            unadapted_fer: unadapted,
            adapted_fer: adapted,
            mean_improvement,
            frac_improved,
        })
    };

    let cell_rows: Vec<Result<ResultRow>> = if threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Usage(format!("cannot build thread pool: {e}")))?;
        pool.install(|| cells.par_iter().map(eval_cell).collect())
    } else {
        cells.iter().map(eval_cell).collect()
    };
    for r in cell_rows {
        rows.push(r?);
    }
    Ok(rows)
}

/// Writes rows as CSV with the documented header.
pub fn write_results_csv(
    path: &std::path::Path,
    rows: &[ResultRow],
    overwrite: bool,
) -> Result<()> {
    if !overwrite && path.exists() {
        return Err(Error::Usage(format!(
            "output {} exists; pass --overwrite to replace it",
            path.display()
        )));
    }
    let mut text = String::from(CSV_HEADER);
    text.push('\n');
    for row in rows {
        text.push_str(&row.to_csv_line());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_results_csv(path: &std::path::Path) -> Result<Vec<ResultRow>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        _ => {
            return Err(Error::format(
                path.display().to_string(),
                "missing or unexpected results header",
            ))
        }
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(ResultRow::from_csv_line)
        .collect()
}
