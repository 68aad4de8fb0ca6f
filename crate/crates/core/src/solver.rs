//! Certified backward induction on the geometric risk ladder `γ, γβ, γβ², ...`.
//!
//! Level `i` of the ladder carries `w^β(·, γβ^i)`. The ladder is truncated at
//! depth `M` with the constant seeds `∓‖c‖/(1-β)` and every level below is
//! obtained by one Bellman backup, so each level holds a lower and an upper
//! band that provably bracket the exact value, with gap at most
//! `2 β^{M-i} ‖c‖/(1-β)`.
//!
//! Greedy actions are certified only when the lower backup of the chosen
//! action beats the upper backup of every rival that is not equivalent to
//! it. Stages deep in the ladder are certified through the risk-neutral
//! problem instead: by Hoeffding's lemma the level-`γβ^i` backups stay within
//! `|γβ^i| β² S² / 4` of the risk-neutral ones, `S = ‖c‖_sp/(1-β)`, so once
//! the risk-neutral action margins exceed twice that, the risk-neutral rule
//! is optimal at every deeper stage.

use rayon::prelude::*;
use serde::Serialize;

use crate::entropic::entropic;
use crate::error::{check_discount, Error, Result};
use crate::mdp::{DecisionRule, MarkovPolicy, Mdp, RewardNorms};

/// Band width targeted by [`default_depth`] at level 0.
pub const DEFAULT_TARGET_WIDTH: f64 = 1e-6;
/// Hard cap on ladder depth.
pub const MAX_DEPTH: usize = 100_000;
/// Iteration cap for the risk-neutral reference solve.
const NEUTRAL_MAX_ITERATIONS: usize = 2_000_000;

/// Risk levels `γ β^i`, `i = 0..=depth`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaLadder {
    pub gamma0: f64,
    pub beta: f64,
    pub depth: usize,
}

impl GammaLadder {
    pub fn new(gamma0: f64, beta: f64, depth: usize) -> Result<Self> {
        check_discount(beta)?;
        if !gamma0.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "risk parameter {gamma0} is not finite"
            )));
        }
        if depth == 0 {
            return Err(Error::InvalidArgument(
                "ladder depth must be at least 1".into(),
            ));
        }
        Ok(Self {
            gamma0,
            beta,
            depth,
        })
    }

    pub fn level(&self, i: usize) -> f64 {
        self.gamma0 * self.beta.powi(i as i32)
    }

    pub fn levels(&self) -> Vec<f64> {
        (0..=self.depth).map(|i| self.level(i)).collect()
    }
}

/// Smallest depth whose level-0 band is at most `target` wide.
pub fn depth_for_width(norms: &RewardNorms, beta: f64, target: f64) -> usize {
    if norms.max_abs == 0.0 {
        return 1;
    }
    let m = (target * (1.0 - beta) / (2.0 * norms.max_abs)).ln() / beta.ln();
    (m.ceil().max(1.0) as usize).min(MAX_DEPTH)
}

/// Depth giving a level-0 band of [`DEFAULT_TARGET_WIDTH`].
pub fn default_depth(mdp: &Mdp, beta: f64) -> usize {
    depth_for_width(&mdp.reward_norms(), beta, DEFAULT_TARGET_WIDTH)
}

/// Lower and upper value tables per ladder level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueBands {
    pub beta: f64,
    pub depth: usize,
    pub norms: RewardNorms,
    /// `lower[i][x]` for `i = 0..=depth`.
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
}

impl ValueBands {
    /// `2 β^{M-i} ‖c‖ / (1-β)`.
    pub fn gap_bound(&self, level: usize) -> f64 {
        2.0 * self.beta.powi((self.depth - level) as i32) * self.norms.value_bound(self.beta)
    }

    pub fn interval(&self, level: usize, state: usize) -> (f64, f64) {
        (self.lower[level][state], self.upper[level][state])
    }

    pub fn midpoint(&self, level: usize) -> Vec<f64> {
        self.lower[level]
            .iter()
            .zip(&self.upper[level])
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }

    /// Largest gap at a level.
    pub fn width(&self, level: usize) -> f64 {
        self.lower[level]
            .iter()
            .zip(&self.upper[level])
            .map(|(l, u)| u - l)
            .fold(0.0, f64::max)
    }
}

/// Stationary rule proven optimal at every stage `>= from_stage`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailCertificate {
    pub rule: DecisionRule,
    pub from_stage: usize,
}

/// Turnpike of the certified greedy schedule.
///
/// `stage = None` means the tail could not be certified at this depth.
/// `exact = false` with a stage means the value is an upper bound: the stage
/// just before it could not be shown to differ from the tail rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TurnpikeEstimate {
    pub stage: Option<usize>,
    pub exact: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveResult {
    pub ladder: GammaLadder,
    pub bands: ValueBands,
    /// Greedy rule at stages `0..depth`.
    pub schedule: Vec<DecisionRule>,
    /// `certified[i][x]`: the scheduled action at `(i, x)` is provably optimal.
    pub certified: Vec<Vec<bool>>,
    /// Certified by the band comparison alone.
    pub band_certified: Vec<Vec<bool>>,
    pub tail: Option<TailCertificate>,
    pub neutral_rule: DecisionRule,
    pub turnpike: TurnpikeEstimate,
}

impl SolveResult {
    pub fn value_interval(&self, state: usize) -> (f64, f64) {
        self.bands.interval(0, state)
    }

    pub fn stage_certified(&self, stage: usize) -> bool {
        self.certified[stage].iter().all(|&c| c)
    }

    pub fn any_certified(&self) -> bool {
        self.certified.iter().flatten().any(|&c| c)
    }

    /// The schedule as an ultimately stationary policy: the head up to the
    /// turnpike and the certified tail. Without a certified tail the whole
    /// schedule is the head and its last rule is repeated.
    pub fn policy(&self) -> MarkovPolicy {
        match (&self.tail, self.turnpike.stage) {
            (Some(tail), Some(n)) => {
                MarkovPolicy::new(self.schedule[..n].to_vec(), tail.rule.clone())
            }
            _ => {
                let last = self
                    .schedule
                    .last()
                    .cloned()
                    .unwrap_or_else(|| self.neutral_rule.clone());
                MarkovPolicy::new(self.schedule.clone(), last)
            }
        }
    }
}

/// Per-state, per-action backup values `c(x,a) + μ^γ(β·next)`.
fn q_values(mdp: &Mdp, next: &[f64], gamma: f64, beta: f64, out: &mut [f64]) {
    let l = mdp.num_actions();
    let scaled: Vec<f64> = next.iter().map(|v| beta * v).collect();
    for x in 0..mdp.num_states() {
        for a in 0..l {
            out[x * l + a] = mdp.reward(x, a) + entropic(&scaled, mdp.row(a, x), gamma);
        }
    }
}

fn argmax_smallest(q: &[f64]) -> usize {
    let mut best = 0;
    for (a, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = a;
        }
    }
    best
}

/// Lower value of `chosen` minus the largest upper value of a rival that is
/// not equivalent to it; `+∞` when there is no such rival.
fn certified_margin(mdp: &Mdp, x: usize, chosen: usize, q_lo: &[f64], q_hi: &[f64]) -> f64 {
    let rival = (0..mdp.num_actions())
        .filter(|&a| !mdp.same_choice(x, chosen, a))
        .map(|a| q_hi[a])
        .fold(f64::NEG_INFINITY, f64::max);
    q_lo[chosen] - rival
}

/// One application of the Bellman operator at risk level `gamma_level`:
/// `max_a [c(x,a) + (1/γ') ln Σ_y e^{γ'β next(y)} P^a(x,y)]`, with the
/// smallest-index maximizer.
pub fn backup(
    mdp: &Mdp,
    next: &[f64],
    gamma_level: f64,
    beta: f64,
) -> Result<(Vec<f64>, DecisionRule)> {
    check_discount(beta)?;
    if next.len() != mdp.num_states() {
        return Err(Error::Dimension {
            expected: mdp.num_states(),
            got: next.len(),
        });
    }
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("next values must be finite".into()));
    }
    let l = mdp.num_actions();
    let mut q = vec![0.0; mdp.num_states() * l];
    q_values(mdp, next, gamma_level, beta, &mut q);
    let mut values = Vec::with_capacity(mdp.num_states());
    let mut rule = Vec::with_capacity(mdp.num_states());
    for x in 0..mdp.num_states() {
        let a = argmax_smallest(&q[x * l..(x + 1) * l]);
        rule.push(a);
        values.push(q[x * l + a]);
    }
    Ok((values, DecisionRule::new(rule)))
}

/// Risk-neutral fixed point bands and action margins.
#[derive(Debug, Clone)]
struct NeutralReference {
    lower: Vec<f64>,
    upper: Vec<f64>,
    rule: DecisionRule,
    /// Per state margin of `rule` over non-equivalent rivals.
    margin: Vec<f64>,
    iterations: usize,
}

/// Reusable per-`(mdp, β)` state: reward norms and the risk-neutral reference.
#[derive(Debug, Clone)]
pub struct Solver<'a> {
    mdp: &'a Mdp,
    beta: f64,
    norms: RewardNorms,
    neutral: NeutralReference,
}

impl<'a> Solver<'a> {
    pub fn new(mdp: &'a Mdp, beta: f64) -> Result<Self> {
        Self::with_neutral_iterations(mdp, beta, None)
    }

    fn with_neutral_iterations(
        mdp: &'a Mdp,
        beta: f64,
        min_iterations: Option<usize>,
    ) -> Result<Self> {
        check_discount(beta)?;
        let norms = mdp.reward_norms();
        let neutral = neutral_reference(mdp, beta, &norms, min_iterations.unwrap_or(0));
        Ok(Self {
            mdp,
            beta,
            norms,
            neutral,
        })
    }

    pub fn mdp(&self) -> &Mdp {
        self.mdp
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn norms(&self) -> RewardNorms {
        self.norms
    }

    /// The risk-neutral optimal rule (smallest-index maximizer).
    pub fn neutral_rule(&self) -> &DecisionRule {
        &self.neutral.rule
    }

    /// Risk-neutral value bands `w^β(·, 0)`.
    pub fn neutral_bands(&self) -> (&[f64], &[f64]) {
        (&self.neutral.lower, &self.neutral.upper)
    }

    /// First stage from which the risk-neutral rule is proven optimal, or
    /// `None` when some risk-neutral margin is not positive.
    pub fn tail_stage(&self, gamma: f64) -> Option<usize> {
        let margin = self
            .neutral
            .margin
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if margin.is_nan() || margin <= 0.0 {
            return None;
        }
        let s = self.norms.span_bound(self.beta);
        let scale = 0.5 * self.beta * self.beta * s * s * gamma.abs();
        if scale == 0.0 || margin.is_infinite() {
            return Some(0);
        }
        let holds = |i: usize| scale * self.beta.powi(i as i32) < margin;
        let guess = ((margin / scale).ln() / self.beta.ln()).ceil().max(0.0);
        if !guess.is_finite() || guess > 1e9 {
            return None;
        }
        let mut i = guess as usize;
        while !holds(i) {
            i += 1;
        }
        while i > 0 && holds(i - 1) {
            i -= 1;
        }
        Some(i)
    }

    pub fn solve(&self, gamma: f64, depth: usize) -> Result<SolveResult> {
        let ladder = GammaLadder::new(gamma, self.beta, depth)?;
        if gamma == 0.0 {
            return Ok(self.solve_neutral(ladder));
        }
        let mdp = self.mdp;
        let k = mdp.num_states();
        let l = mdp.num_actions();
        let bound = self.norms.value_bound(self.beta);
        let mut lower = vec![vec![0.0; k]; depth + 1];
        let mut upper = vec![vec![0.0; k]; depth + 1];
        lower[depth] = vec![-bound; k];
        upper[depth] = vec![bound; k];
        let mut schedule = vec![DecisionRule::new(Vec::new()); depth];
        let mut band_certified = vec![vec![false; k]; depth];
        let mut q_lo = vec![0.0; k * l];
        let mut q_hi = vec![0.0; k * l];
        for i in (0..depth).rev() {
            let level = ladder.level(i);
            q_values(mdp, &lower[i + 1], level, self.beta, &mut q_lo);
            q_values(mdp, &upper[i + 1], level, self.beta, &mut q_hi);
            let mut rule = Vec::with_capacity(k);
            for x in 0..k {
                let lo = &q_lo[x * l..(x + 1) * l];
                let hi = &q_hi[x * l..(x + 1) * l];
                let a = argmax_smallest(lo);
                rule.push(a);
                upper[i][x] = hi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                // Once the bands meet, rounding can put them an ulp out of order.
                lower[i][x] = lo[a].min(upper[i][x]);
                band_certified[i][x] = certified_margin(mdp, x, a, lo, hi) > 0.0;
            }
            schedule[i] = DecisionRule::new(rule);
        }

        let tail = self.tail_stage(gamma).map(|from_stage| TailCertificate {
            rule: self.neutral.rule.clone(),
            from_stage,
        });
        let mut certified = band_certified.clone();
        if let Some(t) = &tail {
            for i in t.from_stage..depth {
                schedule[i] = t.rule.clone();
                certified[i] = vec![true; k];
            }
        }
        let turnpike = turnpike_of(mdp, &schedule, &certified, tail.as_ref(), depth);
        Ok(SolveResult {
            ladder,
            bands: ValueBands {
                beta: self.beta,
                depth,
                norms: self.norms,
                lower,
                upper,
            },
            schedule,
            certified,
            band_certified,
            tail,
            neutral_rule: self.neutral.rule.clone(),
            turnpike,
        })
    }

    /// At `γ = 0` every level carries the same function `w^β(·, 0)`.
    fn solve_neutral(&self, ladder: GammaLadder) -> SolveResult {
        let depth = ladder.depth;
        let neutral = if self.neutral.iterations >= depth {
            self.neutral.clone()
        } else {
            neutral_reference(self.mdp, self.beta, &self.norms, depth)
        };
        let flags: Vec<bool> = neutral.margin.iter().map(|&m| m > 0.0).collect();
        let tail_ok = flags.iter().all(|&f| f);
        SolveResult {
            ladder,
            bands: ValueBands {
                beta: self.beta,
                depth,
                norms: self.norms,
                lower: vec![neutral.lower.clone(); depth + 1],
                upper: vec![neutral.upper.clone(); depth + 1],
            },
            schedule: vec![neutral.rule.clone(); depth],
            certified: vec![flags.clone(); depth],
            band_certified: vec![flags; depth],
            tail: tail_ok.then(|| TailCertificate {
                rule: neutral.rule.clone(),
                from_stage: 0,
            }),
            neutral_rule: neutral.rule.clone(),
            turnpike: TurnpikeEstimate {
                stage: Some(0),
                exact: true,
            },
        }
    }

    /// Solves at increasing depth until the turnpike is exact or `depth_cap`
    /// is reached.
    pub fn turnpike(&self, gamma: f64, depth_cap: usize) -> Result<TurnpikeReport> {
        if depth_cap == 0 {
            return Err(Error::InvalidArgument(
                "depth cap must be at least 1".into(),
            ));
        }
        let base = depth_for_width(&self.norms, self.beta, DEFAULT_TARGET_WIDTH);
        let start = match self.tail_stage(gamma) {
            Some(t) => t.saturating_add(base),
            None => base,
        };
        let mut depth = start.clamp(1, depth_cap);
        loop {
            let result = self.solve(gamma, depth)?;
            if result.turnpike.exact || depth >= depth_cap {
                return Ok(TurnpikeReport::from_result(&result));
            }
            depth = depth.saturating_mul(2).min(depth_cap);
        }
    }
}

fn neutral_reference(
    mdp: &Mdp,
    beta: f64,
    norms: &RewardNorms,
    min_iterations: usize,
) -> NeutralReference {
    let k = mdp.num_states();
    let l = mdp.num_actions();
    let bound = norms.value_bound(beta);
    let target = 1e-13 * bound.max(1.0);
    let needed = if bound == 0.0 {
        1
    } else {
        ((target / (2.0 * bound)).ln() / beta.ln()).ceil().max(1.0) as usize
    };
    let iterations = needed.max(min_iterations).min(NEUTRAL_MAX_ITERATIONS);
    let mut lower = vec![-bound; k];
    let mut upper = vec![bound; k];
    let mut q_lo = vec![0.0; k * l];
    let mut q_hi = vec![0.0; k * l];
    for _ in 0..iterations {
        q_values(mdp, &lower, 0.0, beta, &mut q_lo);
        q_values(mdp, &upper, 0.0, beta, &mut q_hi);
        for x in 0..k {
            upper[x] = q_hi[x * l..(x + 1) * l]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            lower[x] = q_lo[x * l..(x + 1) * l]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max)
                .min(upper[x]);
        }
    }
    // Margins are read from one more backup of the converged bands.
    q_values(mdp, &lower, 0.0, beta, &mut q_lo);
    q_values(mdp, &upper, 0.0, beta, &mut q_hi);
    let mut rule = Vec::with_capacity(k);
    let mut margin = Vec::with_capacity(k);
    for x in 0..k {
        let lo = &q_lo[x * l..(x + 1) * l];
        let hi = &q_hi[x * l..(x + 1) * l];
        let a = argmax_smallest(lo);
        rule.push(a);
        margin.push(certified_margin(mdp, x, a, lo, hi));
    }
    NeutralReference {
        lower,
        upper,
        rule: DecisionRule::new(rule),
        margin,
        iterations,
    }
}

fn turnpike_of(
    mdp: &Mdp,
    schedule: &[DecisionRule],
    certified: &[Vec<bool>],
    tail: Option<&TailCertificate>,
    depth: usize,
) -> TurnpikeEstimate {
    let Some(tail) = tail else {
        return TurnpikeEstimate {
            stage: None,
            exact: false,
        };
    };
    if tail.from_stage >= depth {
        return TurnpikeEstimate {
            stage: None,
            exact: false,
        };
    }
    let mut start = tail.from_stage;
    while start > 0 {
        let i = start - 1;
        let all_certified = certified[i].iter().all(|&c| c);
        if all_certified && mdp.same_rule(&schedule[i], &tail.rule) {
            start = i;
        } else {
            break;
        }
    }
    if start == 0 {
        return TurnpikeEstimate {
            stage: Some(0),
            exact: true,
        };
    }
    let i = start - 1;
    let differs = (0..mdp.num_states()).any(|x| {
        certified[i][x] && !mdp.same_choice(x, schedule[i].action(x), tail.rule.action(x))
    });
    TurnpikeEstimate {
        stage: Some(start),
        exact: differs,
    }
}

/// Outcome of [`turnpike`] at one `(β, γ)` point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TurnpikeReport {
    pub beta: f64,
    pub gamma: f64,
    pub depth: usize,
    /// Chain-step stage after which the schedule is stationary.
    pub stage: Option<usize>,
    pub certified: bool,
    pub head_rule: DecisionRule,
    pub tail_rule: DecisionRule,
    pub tail_certified: bool,
    /// Level-0 value interval per state.
    pub values: Vec<(f64, f64)>,
}

impl TurnpikeReport {
    fn from_result(r: &SolveResult) -> Self {
        let k = r.bands.lower[0].len();
        Self {
            beta: r.ladder.beta,
            gamma: r.ladder.gamma0,
            depth: r.ladder.depth,
            stage: r.turnpike.stage,
            certified: r.turnpike.exact,
            head_rule: r.schedule[0].clone(),
            tail_rule: r
                .tail
                .as_ref()
                .map_or_else(|| r.neutral_rule.clone(), |t| t.rule.clone()),
            tail_certified: r.tail.is_some(),
            values: (0..k).map(|x| r.value_interval(x)).collect(),
        }
    }
}

pub fn solve(mdp: &Mdp, gamma: f64, beta: f64, depth: usize) -> Result<SolveResult> {
    Solver::new(mdp, beta)?.solve(gamma, depth)
}

pub fn turnpike(mdp: &Mdp, gamma: f64, beta: f64, depth_cap: usize) -> Result<TurnpikeReport> {
    Solver::new(mdp, beta)?.turnpike(gamma, depth_cap)
}

/// One grid point of a `(β, γ)` sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub beta: f64,
    pub gamma: f64,
    pub turnpike: Option<usize>,
    pub certified: bool,
    pub head_rule: DecisionRule,
    pub tail_rule: DecisionRule,
    pub value_lo: f64,
    pub value_hi: f64,
}

/// Records in row-major order over `(β, γ)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepGrid {
    pub start_state: usize,
    pub records: Vec<SweepRecord>,
}

pub const SWEEP_HEADER: [&str; 8] = [
    "beta",
    "gamma",
    "turnpike",
    "certified",
    "head_rule",
    "tail_rule",
    "value_lo",
    "value_hi",
];

impl SweepGrid {
    pub fn get(&self, beta_index: usize, gamma_index: usize, gammas: usize) -> &SweepRecord {
        &self.records[beta_index * gammas + gamma_index]
    }

    pub fn write_csv<W: std::io::Write>(&self, mdp: &Mdp, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(SWEEP_HEADER)?;
        for r in &self.records {
            w.write_record(sweep_fields(mdp, r))?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn sweep_fields(mdp: &Mdp, r: &SweepRecord) -> Vec<String> {
    use crate::format::sig;
    vec![
        sig(r.beta),
        sig(r.gamma),
        r.turnpike.map_or_else(String::new, |n| n.to_string()),
        r.certified.to_string(),
        r.head_rule.label(mdp),
        r.tail_rule.label(mdp),
        sig(r.value_lo),
        sig(r.value_hi),
    ]
}

/// Turnpike at every `(β, γ)` grid point. Points are independent and run in
/// parallel; the output order is row-major over `(β, γ)` regardless of
/// scheduling.
pub fn sweep(
    mdp: &Mdp,
    betas: &[f64],
    gammas: &[f64],
    depth_cap: usize,
    start_state: usize,
) -> Result<SweepGrid> {
    if start_state >= mdp.num_states() {
        return Err(Error::InvalidArgument(format!(
            "start state {start_state} out of range"
        )));
    }
    let solvers = betas
        .par_iter()
        .map(|&b| Solver::new(mdp, b))
        .collect::<Result<Vec<_>>>()?;
    let points: Vec<(usize, usize)> = (0..betas.len())
        .flat_map(|b| (0..gammas.len()).map(move |g| (b, g)))
        .collect();
    let records = points
        .par_iter()
        .map(|&(b, g)| {
            let report = solvers[b].turnpike(gammas[g], depth_cap)?;
            let (value_lo, value_hi) = report.values[start_state];
            Ok(SweepRecord {
                beta: betas[b],
                gamma: gammas[g],
                turnpike: report.stage,
                certified: report.certified,
                head_rule: report.head_rule,
                tail_rule: report.tail_rule,
                value_lo,
                value_hi,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepGrid {
        start_state,
        records,
    })
}
