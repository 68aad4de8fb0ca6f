//! Evaluation of fixed Markov policies: certified intervals for
//! `J_γ(x, π; β)`, Monte Carlo cross-checks, discounted-reward moments and
//! the alternating-sign moment order.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::entropic::entropic;
use crate::error::{check_discount, Error, Result};
use crate::mdp::{DecisionRule, MarkovPolicy, Mdp};

/// Closed interval of reward values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValueInterval {
    pub lo: f64,
    pub hi: f64,
}

impl ValueInterval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    /// `Some(sign)` when the interval excludes zero.
    pub fn sign(&self) -> Option<std::cmp::Ordering> {
        if self.lo > 0.0 {
            Some(std::cmp::Ordering::Greater)
        } else if self.hi < 0.0 {
            Some(std::cmp::Ordering::Less)
        } else {
            None
        }
    }
}

/// Level-0 lower and upper values of `policy` for every start state.
///
/// Same ladder recursion as the optimal solve, with the action at stage `i`
/// fixed to `policy.rule_at(i)`.
pub fn evaluate_all(
    mdp: &Mdp,
    policy: &MarkovPolicy,
    gamma: f64,
    beta: f64,
    depth: usize,
) -> Result<Vec<ValueInterval>> {
    check_discount(beta)?;
    mdp.check_policy(policy)?;
    if depth == 0 {
        return Err(Error::InvalidArgument(
            "evaluation depth must be at least 1".into(),
        ));
    }
    let k = mdp.num_states();
    let bound = mdp.reward_norms().value_bound(beta);
    let mut lower = vec![-bound; k];
    let mut upper = vec![bound; k];
    let mut scaled_lo = vec![0.0; k];
    let mut scaled_hi = vec![0.0; k];
    for i in (0..depth).rev() {
        let level = gamma * beta.powi(i as i32);
        let rule = policy.rule_at(i);
        for y in 0..k {
            scaled_lo[y] = beta * lower[y];
            scaled_hi[y] = beta * upper[y];
        }
        for x in 0..k {
            let a = rule.action(x);
            let row = mdp.row(a, x);
            lower[x] = mdp.reward(x, a) + entropic(&scaled_lo, row, level);
            upper[x] = mdp.reward(x, a) + entropic(&scaled_hi, row, level);
            lower[x] = lower[x].min(upper[x]);
        }
    }
    Ok(lower
        .into_iter()
        .zip(upper)
        .map(|(lo, hi)| ValueInterval { lo, hi })
        .collect())
}

/// Interval bracketing `J_γ(x0, π; β)`, at most `2 β^M ‖c‖/(1-β)` wide.
pub fn evaluate(
    mdp: &Mdp,
    policy: &MarkovPolicy,
    x0: usize,
    gamma: f64,
    beta: f64,
    depth: usize,
) -> Result<ValueInterval> {
    check_state(mdp, x0)?;
    Ok(evaluate_all(mdp, policy, gamma, beta, depth)?[x0])
}

/// Interval for `J_γ(x, u1) - J_γ(x, u2)`.
pub fn value_difference(
    mdp: &Mdp,
    u1: &MarkovPolicy,
    u2: &MarkovPolicy,
    x: usize,
    gamma: f64,
    beta: f64,
    depth: usize,
) -> Result<ValueInterval> {
    let a = evaluate(mdp, u1, x, gamma, beta, depth)?;
    let b = evaluate(mdp, u2, x, gamma, beta, depth)?;
    Ok(ValueInterval {
        lo: a.lo - b.hi,
        hi: a.hi - b.lo,
    })
}

fn check_state(mdp: &Mdp, x: usize) -> Result<()> {
    if x >= mdp.num_states() {
        return Err(Error::InvalidArgument(format!("state {x} out of range")));
    }
    Ok(())
}

/// Bootstrap resamples behind the Monte Carlo interval.
pub const BOOTSTRAP_RESAMPLES: usize = 1000;
/// Below this effective sample size the estimate is flagged.
pub const MIN_EFFECTIVE_SAMPLES: f64 = 30.0;
const BOOTSTRAP_STREAM_BASE: u64 = 1 << 63;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SimulationSpec {
    pub horizon: usize,
    pub paths: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimulationResult {
    pub estimate: f64,
    /// Half width of the 95% percentile bootstrap interval.
    pub ci_half_width: f64,
    /// `(Σw)² / Σw²` for the weights `e^{γ S}`.
    pub effective_samples: f64,
    pub low_effective_samples: bool,
}

/// Monte Carlo estimate of `(1/γ) ln mean(e^{γ Σ_{i<T} β^i c_i})`.
///
/// Path `p` draws from the ChaCha8 stream `p` under `seed`, and bootstrap
/// resample `r` from stream `2^63 + r`, so results do not depend on the
/// number of worker threads.
pub fn simulate(
    mdp: &Mdp,
    policy: &MarkovPolicy,
    x0: usize,
    gamma: f64,
    beta: f64,
    spec: SimulationSpec,
) -> Result<SimulationResult> {
    check_discount(beta)?;
    check_state(mdp, x0)?;
    mdp.check_policy(policy)?;
    if spec.horizon == 0 || spec.paths == 0 {
        return Err(Error::InvalidArgument(
            "horizon and path count must be positive".into(),
        ));
    }
    let sums: Vec<f64> = (0..spec.paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(p);
            sample_path(mdp, policy, x0, beta, spec.horizon, &mut rng)
        })
        .collect();
    let n = sums.len();
    let uniform = vec![1.0 / n as f64; n];
    let estimate = entropic(&sums, &uniform, gamma);

    let stats = ResampleStats::new(&sums, gamma);
    let mut boot: Vec<f64> = (0..BOOTSTRAP_RESAMPLES as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(BOOTSTRAP_STREAM_BASE + r);
            stats.resample(&mut rng)
        })
        .collect();
    boot.sort_by(f64::total_cmp);
    let ci_half_width = 0.5 * (quantile(&boot, 0.975) - quantile(&boot, 0.025));
    let effective_samples = stats.effective_samples();
    Ok(SimulationResult {
        estimate,
        ci_half_width,
        effective_samples,
        low_effective_samples: effective_samples < MIN_EFFECTIVE_SAMPLES,
    })
}

fn sample_path(
    mdp: &Mdp,
    policy: &MarkovPolicy,
    x0: usize,
    beta: f64,
    horizon: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut x = x0;
    let mut total = 0.0;
    let mut discount = 1.0;
    for i in 0..horizon {
        let a = policy.rule_at(i).action(x);
        total += discount * mdp.reward(x, a);
        discount *= beta;
        if i + 1 < horizon {
            x = draw(mdp.row(a, x), rng.random::<f64>());
        }
    }
    total
}

fn draw(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (y, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = y;
            if u < acc {
                return y;
            }
        }
    }
    last
}

/// Per-sample terms shared by every bootstrap resample.
struct ResampleStats {
    gamma: f64,
    shift: f64,
    sums: Vec<f64>,
    /// `e^{γ(S - shift)}`, all in `(0, 1]`.
    weight: Vec<f64>,
    /// `expm1(γ(S - shift))`.
    excess: Vec<f64>,
}

impl ResampleStats {
    fn new(sums: &[f64], gamma: f64) -> Self {
        let (lo, hi) = sums
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            });
        let shift = if gamma > 0.0 { hi } else { lo };
        let t: Vec<f64> = sums.iter().map(|s| gamma * (s - shift)).collect();
        Self {
            gamma,
            shift,
            sums: sums.to_vec(),
            weight: t.iter().map(|v| v.exp()).collect(),
            excess: t.iter().map(|v| v.exp_m1()).collect(),
        }
    }

    fn resample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let n = self.sums.len();
        let (mut s, mut w, mut e) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let j = rng.random_range(0..n);
            s += self.sums[j];
            w += self.weight[j];
            e += self.excess[j];
        }
        let n = n as f64;
        if self.gamma == 0.0 {
            return s / n;
        }
        let log_mgf = if w / n < 0.5 {
            (w / n).ln()
        } else {
            (e / n).ln_1p()
        };
        self.shift + log_mgf / self.gamma
    }

    fn effective_samples(&self) -> f64 {
        let s: f64 = self.weight.iter().sum();
        let s2: f64 = self.weight.iter().map(|w| w * w).sum();
        s * s / s2
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}

/// Raw moments `E[Z_T^k]`, `k = 1..=K`, of the truncated discounted reward
/// `Z_T = Σ_{i<T} β^i c(X_i, a_i)` with bounds on `|E[Z^k] - E[Z_T^k]|`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentVector {
    pub horizon: usize,
    pub values: Vec<f64>,
    pub error_bounds: Vec<f64>,
}

impl MomentVector {
    /// Moment of order `k` (1-based).
    pub fn moment(&self, k: usize) -> f64 {
        self.values[k - 1]
    }
}

/// `k · B^{k-1} · β^T B` with `B = ‖c‖/(1-β)`.
pub fn moment_error_bound(mdp: &Mdp, beta: f64, order: usize, horizon: usize) -> f64 {
    let b = mdp.reward_norms().value_bound(beta);
    order as f64 * b.powi(order as i32 - 1) * beta.powi(horizon as i32) * b
}

/// `E_x[Z_T^j]` for every state and `j = 0..=max_order`, by the binomial
/// recursion `Z_i = c_i + β Z_{i+1}`.
pub fn moment_table(
    mdp: &Mdp,
    policy: &MarkovPolicy,
    beta: f64,
    max_order: usize,
    horizon: usize,
) -> Result<Vec<Vec<f64>>> {
    check_discount(beta)?;
    mdp.check_policy(policy)?;
    let k = mdp.num_states();
    let binom = binomials(max_order);
    let mut next = vec![vec![0.0; max_order + 1]; k];
    for row in &mut next {
        row[0] = 1.0;
    }
    let mut cur = next.clone();
    for i in (0..horizon).rev() {
        let rule = policy.rule_at(i);
        for (x, out) in cur.iter_mut().enumerate() {
            let a = rule.action(x);
            let c = mdp.reward(x, a);
            let p = mdp.row(a, x);
            // E[Z_{i+1}^r | X_i = x]
            let mut cond = vec![0.0; max_order + 1];
            for (y, &py) in p.iter().enumerate() {
                if py > 0.0 {
                    for r in 0..=max_order {
                        cond[r] += py * next[y][r];
                    }
                }
            }
            for j in 0..=max_order {
                let mut acc = 0.0;
                let mut beta_r = 1.0;
                for r in 0..=j {
                    acc += binom[j][r] * c.powi((j - r) as i32) * beta_r * cond[r];
                    beta_r *= beta;
                }
                out[j] = acc;
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(next)
}

fn binomials(n: usize) -> Vec<Vec<f64>> {
    let mut t = vec![vec![0.0; n + 1]; n + 1];
    for j in 0..=n {
        t[j][0] = 1.0;
        for r in 1..=j {
            t[j][r] = t[j - 1][r - 1] + if r < j { t[j - 1][r] } else { 0.0 };
        }
    }
    t
}

/// Moments of `Z_T` from `x0` under `policy`.
pub fn moments(
    mdp: &Mdp,
    policy: &MarkovPolicy,
    x0: usize,
    beta: f64,
    max_order: usize,
    horizon: usize,
) -> Result<MomentVector> {
    check_state(mdp, x0)?;
    if max_order == 0 {
        return Err(Error::InvalidArgument(
            "moment order must be at least 1".into(),
        ));
    }
    let table = moment_table(mdp, policy, beta, max_order, horizon)?;
    Ok(MomentVector {
        horizon,
        values: table[x0][1..].to_vec(),
        error_bounds: (1..=max_order)
            .map(|k| moment_error_bound(mdp, beta, k, horizon))
            .collect(),
    })
}

/// Result of the alternating-sign lexicographic moment comparison at one
/// start state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MomentOrdering {
    FirstBetter { order: usize },
    SecondBetter { order: usize },
    Indistinguishable { up_to: usize },
}

/// Horizon at which every moment of order `<= max_order` is within `tol / 4`
/// of its untruncated value, and at least the `tol`-truncation horizon of the
/// discounted sum itself.
pub fn comparison_horizon(mdp: &Mdp, beta: f64, max_order: usize, tol: f64) -> usize {
    let c = mdp.reward_norms().max_abs;
    if c == 0.0 {
        return 1;
    }
    let base = ((tol * (1.0 - beta) / c).ln() / beta.ln()).ceil().max(1.0) as usize;
    let mut t = base;
    while (1..=max_order).any(|k| moment_error_bound(mdp, beta, k, t) > 0.25 * tol) {
        t += 1 + t / 8;
    }
    t
}

/// Compares `(-1)^{k+1} E_x[Z^k]` lexicographically for two stationary rules,
/// at every start state. Differences within `tol` count as equal.
pub fn moment_compare(
    mdp: &Mdp,
    u1: &DecisionRule,
    u2: &DecisionRule,
    beta: f64,
    max_order: usize,
    tol: f64,
) -> Result<Vec<MomentOrdering>> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let horizon = comparison_horizon(mdp, beta, max_order, tol);
    let t1 = moment_table(
        mdp,
        &MarkovPolicy::stationary(u1.clone()),
        beta,
        max_order,
        horizon,
    )?;
    let t2 = moment_table(
        mdp,
        &MarkovPolicy::stationary(u2.clone()),
        beta,
        max_order,
        horizon,
    )?;
    Ok((0..mdp.num_states())
        .map(|x| lexicographic(&t1[x], &t2[x], max_order, tol))
        .collect())
}

fn lexicographic(m1: &[f64], m2: &[f64], max_order: usize, tol: f64) -> MomentOrdering {
    for k in 1..=max_order {
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        let d = sign * (m1[k] - m2[k]);
        if d > tol {
            return MomentOrdering::FirstBetter { order: k };
        }
        if d < -tol {
            return MomentOrdering::SecondBetter { order: k };
        }
    }
    MomentOrdering::Indistinguishable { up_to: max_order }
}

/// Stationary rules that are never beaten in the moment order, at any start
/// state, by any other stationary rule.
pub fn moment_optimal_rules(
    mdp: &Mdp,
    beta: f64,
    max_order: usize,
    tol: f64,
) -> Result<Vec<DecisionRule>> {
    let rules = mdp.all_rules()?;
    let horizon = comparison_horizon(mdp, beta, max_order, tol);
    let tables = rules
        .par_iter()
        .map(|u| {
            moment_table(
                mdp,
                &MarkovPolicy::stationary(u.clone()),
                beta,
                max_order,
                horizon,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rules
        .iter()
        .enumerate()
        .filter(|(i, _)| {
            tables.iter().all(|other| {
                (0..mdp.num_states()).all(|x| {
                    !matches!(
                        lexicographic(&tables[*i][x], &other[x], max_order, tol),
                        MomentOrdering::SecondBetter { .. }
                    )
                })
            })
        })
        .map(|(_, u)| u.clone())
        .collect())
}
