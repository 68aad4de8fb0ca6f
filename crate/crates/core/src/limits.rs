//! Vanishing-discount and vanishing-risk diagnostics built on solved bands:
//! entropy increments `λ_n^β`, relative values `w̄_n^β`, the Blackwell rule,
//! a stationary-policy averaged-value oracle, the span distance to the
//! risk-neutral value, and the stationary bracket around `γ = 0`.

use rayon::prelude::*;
use serde::Serialize;

use crate::entropic::entropic;
use crate::error::{Error, Result};
use crate::eval::ValueInterval;
use crate::format::sig;
use crate::mdp::{span, DecisionRule, Mdp};
use crate::solver::{default_depth, Solver};

/// Iteration cap of [`averaged_value`].
pub const AVERAGED_MAX_ITERATIONS: usize = 100_000;
/// Stopping tolerance on the span of the per-step increment.
pub const AVERAGED_TOLERANCE: f64 = 1e-9;

/// `λ_n^β` and `w̄_n^β(·)` at one `(β, n)`, as intervals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VanishingDiscountRow {
    pub beta: f64,
    pub n: usize,
    pub anchor: usize,
    pub lambda: ValueInterval,
    /// Exactly zero at the anchor.
    pub wbar: Vec<ValueInterval>,
    pub depth: usize,
}

/// Rows for every `(β, n)`, β-major. Each β is solved once at a depth that
/// keeps level `max(n) + 1` as sharp as the default level-0 target.
pub fn vanishing_discount_table(
    mdp: &Mdp,
    gamma: f64,
    anchor: usize,
    betas: &[f64],
    ns: &[usize],
    depth: Option<usize>,
) -> Result<Vec<VanishingDiscountRow>> {
    if anchor >= mdp.num_states() {
        return Err(Error::InvalidArgument(format!(
            "anchor state {anchor} out of range"
        )));
    }
    let top = ns.iter().copied().max().unwrap_or(0) + 1;
    let per_beta = betas
        .par_iter()
        .map(|&beta| {
            let m = depth.unwrap_or_else(|| default_depth(mdp, beta)).max(1) + top;
            let solved = Solver::new(mdp, beta)?.solve(gamma, m)?;
            let b = &solved.bands;
            Ok(ns
                .iter()
                .map(|&n| {
                    let s0 = beta.powi(n as i32);
                    let s1 = s0 * beta;
                    let lambda = ValueInterval::new(
                        s0 * b.lower[n][anchor] - s1 * b.upper[n + 1][anchor],
                        s0 * b.upper[n][anchor] - s1 * b.lower[n + 1][anchor],
                    );
                    let wbar = (0..mdp.num_states())
                        .map(|x| {
                            if x == anchor {
                                ValueInterval::new(0.0, 0.0)
                            } else {
                                ValueInterval::new(
                                    s0 * (b.lower[n][x] - b.upper[n][anchor]),
                                    s0 * (b.upper[n][x] - b.lower[n][anchor]),
                                )
                            }
                        })
                        .collect();
                    VanishingDiscountRow {
                        beta,
                        n,
                        anchor,
                        lambda,
                        wbar,
                        depth: m,
                    }
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_beta.into_iter().flatten().collect())
}

pub const VANISHING_HEADER: [&str; 6] = ["beta", "n", "lambda_n", "state", "wbar_lo", "wbar_hi"];

/// One line per `(β, n, state)`; `lambda_n` is the interval midpoint.
pub fn write_vanishing_csv<W: std::io::Write>(
    mdp: &Mdp,
    rows: &[VanishingDiscountRow],
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(VANISHING_HEADER)?;
    for r in rows {
        for (x, iv) in r.wbar.iter().enumerate() {
            w.write_record([
                sig(r.beta),
                r.n.to_string(),
                sig(r.lambda.midpoint()),
                mdp.states()[x].clone(),
                sig(iv.lo),
                sig(iv.hi),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Which stage of the solved schedule is read as the Blackwell rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BlackwellStage {
    #[default]
    Zero,
    One,
}

impl BlackwellStage {
    fn index(self) -> usize {
        match self {
            Self::Zero => 0,
            Self::One => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlackwellRule {
    pub rule: DecisionRule,
    pub stage: usize,
    pub certified: bool,
}

/// The solved schedule's rule at stage 0 (or 1), with its certification.
pub fn blackwell_rule(
    mdp: &Mdp,
    gamma: f64,
    beta: f64,
    depth: Option<usize>,
    stage: BlackwellStage,
) -> Result<BlackwellRule> {
    let i = stage.index();
    let m = depth.unwrap_or_else(|| default_depth(mdp, beta)).max(i + 1);
    let solved = Solver::new(mdp, beta)?.solve(gamma, m)?;
    Ok(BlackwellRule {
        rule: solved.schedule[i].clone(),
        stage: i,
        certified: solved.stage_certified(i),
    })
}

/// Long-run per-step entropic reward of a stationary rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AveragedValue {
    pub value: f64,
    pub converged: bool,
    /// Convergence was reached on the two-step increment.
    pub periodic: bool,
    pub iterations: usize,
}

/// Relative value iteration `v ← c_u + μ^γ_{P^u}(v)` from `v = 0`.
///
/// Stops when the one-step increment `Tv - v` is constant to
/// [`AVERAGED_TOLERANCE`], or the two-step increment is (period-2 chains,
/// halved). Otherwise returns the Cesàro mean of the increments at the anchor
/// state 0 after `horizon` iterations, flagged as not converged.
pub fn averaged_value(
    mdp: &Mdp,
    u: &DecisionRule,
    gamma: f64,
    horizon: usize,
) -> Result<AveragedValue> {
    mdp.check_rule(u)?;
    let cap = horizon.clamp(1, AVERAGED_MAX_ITERATIONS);
    let k = mdp.num_states();
    let step = |v: &[f64]| -> Vec<f64> {
        (0..k)
            .map(|x| mdp.reward(x, u.action(x)) + entropic(v, mdp.row(u.action(x), x), gamma))
            .collect()
    };
    let mut v = vec![0.0; k];
    let mut prev_increment: Option<Vec<f64>> = None;
    let mut cesaro = 0.0;
    for t in 1..=cap {
        let next = step(&v);
        let d: Vec<f64> = next.iter().zip(&v).map(|(a, b)| a - b).collect();
        if span(&d)? < AVERAGED_TOLERANCE {
            return Ok(AveragedValue {
                value: d[0],
                converged: true,
                periodic: false,
                iterations: t,
            });
        }
        if let Some(p) = &prev_increment {
            let two: Vec<f64> = d.iter().zip(p).map(|(a, b)| a + b).collect();
            if span(&two)? < AVERAGED_TOLERANCE {
                return Ok(AveragedValue {
                    value: 0.5 * two[0],
                    converged: true,
                    periodic: true,
                    iterations: t,
                });
            }
        }
        cesaro += (d[0] - cesaro) / t as f64;
        let shift = next[0];
        v = next.iter().map(|x| x - shift).collect();
        prev_increment = Some(d);
    }
    Ok(AveragedValue {
        value: cesaro,
        converged: false,
        periodic: false,
        iterations: cap,
    })
}

/// `‖w^β(·,γ) - w^β(·,0)‖_sp` from band midpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistanceRow {
    pub beta: f64,
    pub gamma: f64,
    pub span_distance: f64,
    /// Sum of the two level-0 band widths.
    pub slack: f64,
}

/// Distances for every `(β, γ)`, β-major. The supremum over `β ∈ (0,1)` is
/// replaced by the probed ladder.
pub fn risk_neutral_distance(
    mdp: &Mdp,
    gammas: &[f64],
    betas: &[f64],
    depth: Option<usize>,
) -> Result<Vec<DistanceRow>> {
    let per_beta = betas
        .par_iter()
        .map(|&beta| {
            let solver = Solver::new(mdp, beta)?;
            let (nlo, nhi) = solver.neutral_bands();
            let neutral: Vec<f64> = nlo.iter().zip(nhi).map(|(a, b)| 0.5 * (a + b)).collect();
            let neutral_width = nlo.iter().zip(nhi).map(|(a, b)| b - a).fold(0.0, f64::max);
            let m = depth.unwrap_or_else(|| default_depth(mdp, beta));
            gammas
                .iter()
                .map(|&gamma| {
                    if gamma == 0.0 {
                        return Ok(DistanceRow {
                            beta,
                            gamma,
                            span_distance: 0.0,
                            slack: 0.0,
                        });
                    }
                    let solved = solver.solve(gamma, m)?;
                    let diff: Vec<f64> = solved
                        .bands
                        .midpoint(0)
                        .iter()
                        .zip(&neutral)
                        .map(|(a, b)| a - b)
                        .collect();
                    Ok(DistanceRow {
                        beta,
                        gamma,
                        span_distance: span(&diff)?,
                        slack: solved.bands.width(0) + neutral_width,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_beta.into_iter().flatten().collect())
}

pub const DISTANCE_HEADER: [&str; 3] = ["beta", "gamma", "span_distance"];

pub fn write_distance_csv<W: std::io::Write>(rows: &[DistanceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DISTANCE_HEADER)?;
    for r in rows {
        w.write_record([sig(r.beta), sig(r.gamma), sig(r.span_distance)])?;
    }
    w.flush()?;
    Ok(())
}

/// Widest run of probes around `γ = 0` with a certified zero turnpike and a
/// common tail rule. The endpoints are probes; the true threshold may lie
/// beyond them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaBracket {
    pub lo: f64,
    pub hi: f64,
    pub rule: DecisionRule,
}

/// `None` when the probe closest to zero is not certified stationary.
pub fn gamma_threshold(
    mdp: &Mdp,
    beta: f64,
    depth_cap: usize,
    probes: &[f64],
) -> Result<Option<GammaBracket>> {
    if probes.is_empty() {
        return Err(Error::InvalidArgument("no risk probes given".into()));
    }
    let mut grid = probes.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let solver = Solver::new(mdp, beta)?;
    let reports = grid
        .par_iter()
        .map(|&g| solver.turnpike(g, depth_cap))
        .collect::<Result<Vec<_>>>()?;
    let centre = (0..grid.len())
        .min_by(|&a, &b| grid[a].abs().total_cmp(&grid[b].abs()))
        .unwrap_or(0);
    let stationary = |i: usize| {
        let r = &reports[i];
        r.stage == Some(0) && r.certified && r.tail_certified
    };
    if !stationary(centre) {
        return Ok(None);
    }
    let rule = reports[centre].tail_rule.clone();
    let fits = |i: usize| stationary(i) && mdp.same_rule(&reports[i].tail_rule, &rule);
    let mut lo = centre;
    while lo > 0 && fits(lo - 1) {
        lo -= 1;
    }
    let mut hi = centre;
    while hi + 1 < grid.len() && fits(hi + 1) {
        hi += 1;
    }
    Ok(Some(GammaBracket {
        lo: grid[lo],
        hi: grid[hi],
        rule,
    }))
}
