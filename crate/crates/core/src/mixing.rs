//! Mixing constants of a controlled chain and the span bounds they imply.
//!
//! `Δ̄` is the largest total-variation distance between two controlled rows.
//! `K` is the largest ratio `P^{(π,N)}(x,y) / P^{(π,N)}(x',y)` over Markov
//! policies, which is attained on deterministic rule sequences, so it is
//! found by enumeration. The contraction factor of the risk-sensitive
//! operator has no closed form and is estimated from random function pairs.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::entropic::entropic;
use crate::error::{check_discount, Error, Result};
use crate::mdp::{span, DecisionRule, Mdp};
use crate::solver::{default_depth, Solver};

/// Enumeration guard on the number of rule sequences in [`multi_step_k`].
pub const SEQUENCE_GUARD: u128 = 1 << 24;

/// Largest half-L1 distance between any two rows `P^a(x,·)`, `P^{a'}(x',·)`.
pub fn one_step_delta(mdp: &Mdp) -> f64 {
    let k = mdp.num_states();
    let l = mdp.num_actions();
    let rows: Vec<&[f64]> = (0..l)
        .flat_map(|a| (0..k).map(move |x| (a, x)))
        .map(|(a, x)| mdp.row(a, x))
        .collect();
    let mut best = 0.0f64;
    for (i, p) in rows.iter().enumerate() {
        for q in &rows[i + 1..] {
            let d: f64 = p.iter().zip(q.iter()).map(|(a, b)| (a - b).abs()).sum();
            best = best.max(0.5 * d);
        }
    }
    best.min(1.0)
}

/// `sup_{x,x',y,π} P^{(π,N)}(x,y) / P^{(π,N)}(x',y)` with `0/0 = 1` and
/// `p/0 = ∞`, over all deterministic sequences of `n_steps` rules.
pub fn multi_step_k(mdp: &Mdp, n_steps: usize) -> Result<f64> {
    if n_steps == 0 {
        return Err(Error::InvalidArgument("N must be at least 1".into()));
    }
    let k = mdp.num_states();
    let rules_per_step = (mdp.num_actions() as u128)
        .checked_pow(k as u32)
        .unwrap_or(u128::MAX);
    let sequences = rules_per_step
        .checked_pow(n_steps as u32)
        .unwrap_or(u128::MAX);
    if sequences > SEQUENCE_GUARD {
        return Err(Error::GuardExceeded(sequences));
    }
    let rules = mdp.all_rules()?;
    let n_rules = rules.len() as u64;
    let worst = (0..sequences as u64)
        .into_par_iter()
        .map(|mut id| {
            let mut product = identity(k);
            for _ in 0..n_steps {
                let rule = &rules[(id % n_rules) as usize];
                id /= n_rules;
                product = multiply_by_rule(mdp, &product, rule);
            }
            kernel_ratio(&product, k)
        })
        .reduce(|| 1.0, f64::max);
    Ok(worst)
}

fn identity(k: usize) -> Vec<f64> {
    let mut m = vec![0.0; k * k];
    for x in 0..k {
        m[x * k + x] = 1.0;
    }
    m
}

/// `M · P^u`, both `k × k` row-major.
fn multiply_by_rule(mdp: &Mdp, m: &[f64], rule: &DecisionRule) -> Vec<f64> {
    let k = mdp.num_states();
    let mut out = vec![0.0; k * k];
    for x in 0..k {
        for z in 0..k {
            let w = m[x * k + z];
            if w == 0.0 {
                continue;
            }
            for (y, p) in mdp.row(rule.action(z), z).iter().enumerate() {
                out[x * k + y] += w * p;
            }
        }
    }
    out
}

fn kernel_ratio(p: &[f64], k: usize) -> f64 {
    let mut worst = 1.0f64;
    for y in 0..k {
        for x in 0..k {
            let num = p[x * k + y];
            for x2 in 0..k {
                let den = p[x2 * k + y];
                let r = if den == 0.0 {
                    if num == 0.0 {
                        1.0
                    } else {
                        return f64::INFINITY;
                    }
                } else {
                    num / den
                };
                worst = worst.max(r);
            }
        }
    }
    worst
}

/// Relative span below which a difference is treated as zero.
pub const SPAN_FLOOR: f64 = 1e-8;

/// Largest observed `‖T f₁(·,γ) - T f₂(·,γ)‖_sp / ‖f₁(·,γβ) - f₂(·,γβ)‖_sp`.
///
/// Each trial draws a level `γ` uniformly from `[gamma0, 0)` (or takes `0`
/// when `gamma0 = 0`), draws two functions on the ladder below it with
/// values in `±‖c‖/(1-β)`, applies the operator `n_steps` times so that both
/// lie in the image of `T^N`, and compares one more application. Pairs whose
/// difference has a span at rounding level, below [`SPAN_FLOOR`] times
/// `max(1, ‖c‖/(1-β))`, are skipped as `0/0`. Trial `t` uses ChaCha8 stream `t`.
pub fn contraction_factor(
    mdp: &Mdp,
    gamma0: f64,
    beta: f64,
    n_trials: usize,
    seed: u64,
    n_steps: usize,
) -> Result<f64> {
    check_discount(beta)?;
    if gamma0.is_nan() || gamma0 > 0.0 {
        return Err(Error::InvalidArgument(format!(
            "gamma0 {gamma0} must be non-positive"
        )));
    }
    if n_trials == 0 {
        return Err(Error::InvalidArgument(
            "at least one trial is needed".into(),
        ));
    }
    let bound = mdp.reward_norms().value_bound(beta);
    let k = mdp.num_states();
    let ratios: Vec<Option<f64>> = (0..n_trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t);
            let gamma = if gamma0 == 0.0 {
                0.0
            } else {
                rng.random_range(gamma0..0.0)
            };
            let mut draw = || -> Vec<f64> {
                (0..k)
                    .map(|_| {
                        if bound == 0.0 {
                            0.0
                        } else {
                            rng.random_range(-bound..=bound)
                        }
                    })
                    .collect()
            };
            let (g1, g2) = (draw(), draw());
            let f1 = pre_apply(mdp, g1, gamma, beta, n_steps);
            let f2 = pre_apply(mdp, g2, gamma, beta, n_steps);
            let before = difference_span(&f1, &f2);
            if before <= SPAN_FLOOR * bound.max(1.0) {
                return None;
            }
            let t1 = apply(mdp, &f1, gamma, beta);
            let t2 = apply(mdp, &f2, gamma, beta);
            Some(difference_span(&t1, &t2) / before)
        })
        .collect();
    Ok(ratios.into_iter().flatten().fold(0.0, f64::max))
}

/// `f(·, γβ)` for `f = T^N g`, where `g` lives at level `γβ^{N+1}`.
fn pre_apply(mdp: &Mdp, mut g: Vec<f64>, gamma: f64, beta: f64, n_steps: usize) -> Vec<f64> {
    for j in (1..=n_steps).rev() {
        g = apply(mdp, &g, gamma * beta.powi(j as i32), beta);
    }
    g
}

/// `(T f)(x, level) = max_a [c(x,a) + μ^{level}(β f(·, level·β))]`.
fn apply(mdp: &Mdp, next: &[f64], level: f64, beta: f64) -> Vec<f64> {
    let scaled: Vec<f64> = next.iter().map(|v| beta * v).collect();
    (0..mdp.num_states())
        .map(|x| {
            (0..mdp.num_actions())
                .map(|a| mdp.reward(x, a) + entropic(&scaled, mdp.row(a, x), level))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

fn difference_span(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    span(&d).unwrap_or(0.0)
}

/// Inputs of [`mixing_report`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MixingParams {
    pub gamma: f64,
    /// Left end of the risk range sampled by the contraction estimate.
    pub gamma0: f64,
    pub beta: f64,
    pub n_steps: usize,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MixingReport {
    pub delta_bar: f64,
    pub n_steps: usize,
    #[serde(serialize_with = "extended_real")]
    pub k_ratio: f64,
    /// `N ‖c‖_sp + ln K / |γ|`; `None` at `γ = 0`.
    #[serde(serialize_with = "optional_extended_real")]
    pub span_bound_51: Option<f64>,
    /// `(3N+1) ‖c‖_sp / (1-Δ) + ln K / |γ₀|` with `Δ` the empirical
    /// contraction factor; `None` when that factor is not below one or the
    /// risk range is not negative.
    #[serde(serialize_with = "optional_extended_real")]
    pub span_bound_64: Option<f64>,
    pub empirical_contraction: f64,
}

/// Infinity is written as the string `"inf"`, which JSON numbers cannot hold.
fn extended_real<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
    } else {
        s.serialize_f64(*v)
    }
}

fn optional_extended_real<S: Serializer>(
    v: &Option<f64>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(v) => extended_real(v, s),
        None => s.serialize_none(),
    }
}

pub fn mixing_report(mdp: &Mdp, params: MixingParams) -> Result<MixingReport> {
    let delta_bar = one_step_delta(mdp);
    let k_ratio = multi_step_k(mdp, params.n_steps)?;
    let empirical_contraction = contraction_factor(
        mdp,
        params.gamma0,
        params.beta,
        params.trials,
        params.seed,
        params.n_steps,
    )?;
    let sp = mdp.reward_norms().span;
    let n = params.n_steps as f64;
    let span_bound_51 = (params.gamma != 0.0).then(|| n * sp + k_ratio.ln() / params.gamma.abs());
    let span_bound_64 = (empirical_contraction < 1.0 && params.gamma0 < 0.0).then(|| {
        (3.0 * n + 1.0) * sp / (1.0 - empirical_contraction) + k_ratio.ln() / params.gamma0.abs()
    });
    Ok(MixingReport {
        delta_bar,
        n_steps: params.n_steps,
        k_ratio,
        span_bound_51,
        span_bound_64,
        empirical_contraction,
    })
}

/// Outcome of one bound check; `None` fields were skipped for `reason`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpanBoundRow {
    pub beta: f64,
    pub depth: usize,
    /// `‖·‖_sp` of the level-0 band midpoint.
    pub span: f64,
    pub band_width: f64,
    pub holds_51: Option<bool>,
    pub holds_64: Option<bool>,
    pub reason: Option<String>,
}

/// Checks the span of the level-0 value against both bounds of `report`,
/// with the band width as slack, for each discount factor. `depth = None`
/// uses [`default_depth`].
pub fn verify_span_bounds(
    mdp: &Mdp,
    gamma: f64,
    report: &MixingReport,
    betas: &[f64],
    depth: Option<usize>,
) -> Result<Vec<SpanBoundRow>> {
    betas
        .par_iter()
        .map(|&beta| {
            let m = depth.unwrap_or_else(|| default_depth(mdp, beta));
            let solved = Solver::new(mdp, beta)?.solve(gamma, m)?;
            let mid = solved.bands.midpoint(0);
            let s = span(&mid)?;
            let w = solved.bands.width(0);
            let reason = if report.k_ratio.is_infinite() {
                Some("K is infinite at this N".to_string())
            } else if gamma == 0.0 {
                Some("bounds need a non-zero risk parameter".to_string())
            } else {
                None
            };
            let (holds_51, holds_64) = if reason.is_some() {
                (None, None)
            } else {
                (
                    report.span_bound_51.map(|b| s <= b + w),
                    report
                        .span_bound_64
                        .filter(|_| gamma < 0.0)
                        .map(|b| s <= b + w),
                )
            };
            Ok(SpanBoundRow {
                beta,
                depth: m,
                span: s,
                band_width: w,
                holds_51,
                holds_64,
                reason,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::tests::two_state;

    /// `max_A |P(A) - Q(A)|` by enumerating subsets.
    fn subset_delta(mdp: &Mdp) -> f64 {
        let k = mdp.num_states();
        let mut best = 0.0f64;
        for a in 0..mdp.num_actions() {
            for b in 0..mdp.num_actions() {
                for x in 0..k {
                    for x2 in 0..k {
                        let (p, q) = (mdp.row(a, x), mdp.row(b, x2));
                        for set in 0u32..(1 << k) {
                            let d: f64 = (0..k)
                                .filter(|y| set >> y & 1 == 1)
                                .map(|y| p[y] - q[y])
                                .sum();
                            best = best.max(d.abs());
                        }
                    }
                }
            }
        }
        best
    }

    fn single_state(r: f64) -> Mdp {
        Mdp::new(
            vec!["s".into()],
            vec!["a".into()],
            vec![vec![vec![1.0]]],
            vec![vec![r]],
        )
        .unwrap()
    }

    #[test]
    fn identical_rows_have_zero_delta() {
        let mdp = Mdp::new(
            vec!["x".into(), "y".into()],
            vec!["a".into()],
            vec![vec![vec![0.3, 0.7], vec![0.3, 0.7]]],
            vec![vec![1.0], vec![0.0]],
        )
        .unwrap();
        assert_eq!(one_step_delta(&mdp), 0.0);
        assert_eq!(multi_step_k(&mdp, 1).unwrap(), 1.0);
    }

    #[test]
    fn disjoint_deterministic_rows_have_unit_delta() {
        let mdp = Mdp::new(
            vec!["x".into(), "y".into()],
            vec!["a".into()],
            vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]],
            vec![vec![0.0], vec![0.0]],
        )
        .unwrap();
        assert_eq!(one_step_delta(&mdp), 1.0);
        assert_eq!(multi_step_k(&mdp, 1).unwrap(), f64::INFINITY);
    }

    #[test]
    fn half_l1_matches_subset_maximum() {
        let mdp = two_state();
        assert!((one_step_delta(&mdp) - subset_delta(&mdp)).abs() < 1e-15);
    }

    #[test]
    fn single_state_constants() {
        let mdp = single_state(2.0);
        assert_eq!(multi_step_k(&mdp, 3).unwrap(), 1.0);
        assert_eq!(one_step_delta(&mdp), 0.0);
    }

    #[test]
    fn smoothing_bounds_k() {
        let eps = 0.05;
        let mdp = two_state().smoothed(eps).unwrap();
        let k = multi_step_k(&mdp, 1).unwrap();
        assert!(k.is_finite() && k <= 1.0 / eps);
    }

    #[test]
    fn neutral_contraction_below_delta() {
        let mdp = two_state();
        let c = contraction_factor(&mdp, 0.0, 0.9, 200, 3, 1).unwrap();
        assert!(c <= one_step_delta(&mdp) + 1e-9);
    }

    #[test]
    fn guard_is_enforced() {
        let mdp = two_state();
        assert!(matches!(
            multi_step_k(&mdp, 13),
            Err(Error::GuardExceeded(_))
        ));
    }

    #[test]
    fn report_serializes_infinite_k() {
        let report = MixingReport {
            delta_bar: 1.0,
            n_steps: 1,
            k_ratio: f64::INFINITY,
            span_bound_51: Some(f64::INFINITY),
            span_bound_64: None,
            empirical_contraction: 0.5,
        };
        let json = serde_json::to_value(report).unwrap();
        assert_eq!(json["k_ratio"], "inf");
        assert!(json["span_bound_64"].is_null());
    }
}
