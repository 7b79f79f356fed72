//! Marginal treatment effect estimation for a binary treatment with
//! instruments: logit propensity scores, OLS and 2SLS baselines, local-IV
//! and normal-selection MTE curves, treatment-parameter weights, bootstrap
//! HPD intervals and a generalized Roy simulator.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod effects;
pub mod error;
pub mod inference;
pub mod kernel;
pub mod linalg;
pub mod linear;
pub mod mte;
pub mod normal;
pub mod pipeline;
pub mod selection;
pub mod simulation;

pub use data::{load_csv, read_csv, summarize, ColumnRole, Dataset, Role};
pub use effects::{EffectKind, TreatmentEffects, WeightFunction};
pub use error::{Error, Result};
pub use inference::{bootstrap, hpd_interval, BootstrapDraws};
pub use linear::{fit_2sls, fit_ols, InstrumentMode, InstrumentSet, LinearFit, SeType};
pub use mte::{fit_partially_linear, mte_curve, MteCurve, MteOptions, PartiallyLinearFit};
pub use normal::{fit_normal_selection, NormalSelectionFit};
pub use selection::{fit_logit, propensity, LogitFit, PropensityScores};
pub use simulation::{generate, presets, true_mte, RoyModelSpec};
