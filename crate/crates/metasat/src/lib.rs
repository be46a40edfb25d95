//! # metasat
//!
//! Speaker adaptive training as a meta-learning problem, at desk scale.
//!
//! A small frame-classification acoustic model (dense -> ReLU -> batch
//! renormalisation -> LHUC per hidden layer) is trained so that a few steps
//! of full-batch gradient descent on a new speaker's data — with learned
//! per-layer learning rates — improve its performance on that speaker's
//! unseen frames. The crate provides:
//!
//! - exact hand-written reverse-mode gradients for the whole stack
//!   ([`model`], [`ops`], [`layers`]),
//! - the differentiable adaptation function with per-(layer, role-group)
//!   learning rates and silence filtering ([`adapt`]), plus the
//!   coordinate-wise recurrent alternative ([`coord`]),
//! - episode-based meta-loss and first-order meta-gradients for both the
//!   weights and the schedule ([`meta`]),
//! - three trainers (baseline, SAT-LHUC, SAT-MAML) and test-time schedule
//!   fitting ([`trainers`]),
//! - a synthetic multi-speaker corpus with speaker-disjoint meta splits
//!   ([`corpus`]),
//! - an experiment harness producing deterministic CSV results and
//!   aggregated comparison tables ([`exp`], [`report`], [`cli`]).
//!
//! The `examples/` directory walks each capability; the `metasat` binary
//! exposes the pipeline as subcommands (`generate-data`, `train`,
//! `fit-schedule`, `adapt-eval`, `report`).
//!
//! Everything is seeded: a pipeline run is byte-reproducible per seed.

pub mod adapt;
pub mod cli;
pub mod config;
pub mod coord;
pub mod corpus;
pub mod error;
pub mod exp;
pub mod gradcheck;
pub mod io;
pub mod layers;
pub mod meta;
pub mod model;
pub mod ops;
pub mod optim;
pub mod params;
pub mod report;
pub mod rng;
pub mod tensor;
pub mod trainers;

pub use adapt::{
    adapt, adapt_step, adapt_with_stats, silence_filter, AdaptObjective, AdaptRun, AdaptStatus,
    ParamSubset, RoleGroup, Schedule,
};
pub use coord::{coordinate_update, lstm_adapt, CoordState, CoordinateLearner};
pub use corpus::{
    generate_corpus, sample_episode, split_meta_sets, Corpus, CorpusParams, Episode, FrameBlock,
    PhoneInventory, SpeakerRecord, SpeakerTransform, Split,
};
pub use error::{Error, Result};
pub use exp::{run_adapt_eval, EvalArtifacts, EvalColumn, ExperimentPlan, ResultRow, Supervision};
pub use io::{read_checkpoint, read_corpus, write_checkpoint, write_corpus, Checkpoint};
pub use layers::{LhucParams, RenormState, RunningStats};
pub use meta::{fomaml_grads, meta_loss, LossCombo, MetaBatch, MetaGrads};
pub use model::{ForwardTrace, Mode, Model, ModelConfig, StatsMode};
pub use ops::{dense_backward, dense_forward, frame_error_rate, relu, relu_backward, softmax_xent};
pub use params::{GradMap, ParamId, ParamRole, ParamStore};
pub use tensor::Tensor;
pub use trainers::{
    baseline_train, fit_adaptation_schedule, sat_lhuc_train, sat_maml_train, FitHyper, FitOutcome,
    LogLine, MamlHyper, MamlOutcome, SiCoin, SpeakerLhucBank, TrainHyper, TrainOutcome,
};
