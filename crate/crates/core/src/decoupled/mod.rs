//! Layer-parallel training by stage decoupling.
//!
//! The `L` blocks are split into `K` stages of `n = L/K` blocks. Stage `k ≥ 1`
//! starts from an auxiliary variable `λ_k` instead of waiting for stage
//! `k − 1`, and every stage except the last trains against the synthetic loss
//! `(β/#) ψ(λ_{k+1}, X^k) + ⟨κ_{k+1}, X^k⟩` instead of waiting for the true
//! gradient from downstream. After all stages update, `λ_k` and (for the
//! augmented Lagrangian) `κ_k` are corrected from the neighbouring stages'
//! boundary values. With `κ ≡ 0` this is the quadratic penalty method.

pub mod coupling;
pub mod init;
pub mod schedule;
pub mod stage;
pub mod trainer;

pub use coupling::{AuxBatch, AuxState};
pub use init::{boundary_states, init_multilevel, initialize, InitOutcome, InitStrategy};
pub use schedule::{Method, Schedule, Schedules, StepHyper};
pub use stage::{
    join_stages, partition, split_stages, Stage, StageGradients, StageJob, StageParams,
    StageReport, StageTarget,
};
pub use trainer::{
    Coordinator, DecoupledTrainer, EpochOutcome, IterationOutcome, SequentialExecutor,
    StageExecutor,
};
