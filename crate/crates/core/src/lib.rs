//! One-pass evolution of per-task Pareto sets of pruned specialist
//! subnetworks from a single jointly trained reference network.
//!
//! The pipeline has four stages:
//!
//! 1. [`pipeline::cmd_pretrain`] - build the task suite and train the shared
//!    "jack of all trades" net on the pooled data.
//! 2. [`pipeline::cmd_evolve`] - evolve K populations of grouped binary
//!    pruning masks under the bi-objective (size, loss) formulation, with
//!    cross-task recombination moving useful substructure between tasks.
//! 3. [`pipeline::cmd_finalize`] - fine-tune the evolved Pareto candidates
//!    per task and export the union set of specialists.
//! 4. [`pipeline::cmd_report`] - emit plot-ready CSVs and a markdown
//!    summary comparing the multitask and singletask arms.
//!
//! The library layers map onto that flow: [`net`] is the dense network,
//! [`genome`] the mask representation and variation operators, [`taskbed`]
//! the data and fitness evaluation, [`pareto`] the selection and
//! hypervolume machinery, [`evolver`] the generation loop, and [`sets`] the
//! fine-tune/assemble/export stage.

pub mod config;
pub mod error;
pub mod evolver;
pub mod genome;
pub mod net;
pub mod pareto;
pub mod pipeline;
pub mod sets;
pub mod taskbed;

pub use config::{load_config, RunConfig};
pub use error::{Error, Result};
