//! Discounted risk-sensitive control of finite MDPs under entropic utility.
//!
//! The optimal discounted value `w^β(x, γ)` couples the Bellman equations
//! along the risk ladder `γ, γβ, γβ², ...`; [`solver`] truncates that ladder
//! with rigorous bands and certifies the (generally non-stationary,
//! ultimately stationary) optimal schedule. The remaining modules evaluate
//! fixed policies, measure mixing, probe the vanishing-discount and
//! vanishing-risk limits, and reproduce the independent-lottery example.

pub mod entropic;
pub mod error;
pub mod eval;
pub mod format;
pub mod limits;
pub mod lottery;
pub mod mdp;
pub mod mixing;
pub mod solver;

pub use entropic::{entropic_value, hoeffding_gap, FiniteDistribution};
pub use error::{Error, Result};
pub use eval::{
    evaluate, moment_compare, moments, simulate, value_difference, MomentVector, ValueInterval,
};
pub use mdp::{
    reward_norms, span, validate, DecisionRule, MarkovPolicy, Mdp, MdpDocument, RewardNorms,
    Violation,
};
pub use mixing::{MixingParams, MixingReport};
pub use solver::{
    backup, default_depth, solve, sweep, turnpike, GammaLadder, SolveResult, Solver, SweepGrid,
    SweepRecord, TurnpikeReport, ValueBands,
};
