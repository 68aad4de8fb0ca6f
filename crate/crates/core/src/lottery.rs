//! The independent-lottery example: a decision state `1` and two outcome
//! states `2` (loss) and `3` (win, reward `R`) that both return to `1`.
//! Every second step a lottery option is chosen:
//!
//! | option | entry payment | win probability |
//! |--------|---------------|-----------------|
//! | a      | -1            | 0.8             |
//! | b      | 0             | 0.5             |
//! | c      | +1            | 0.2             |
//!
//! Because the state resets every two steps and the entropic utility is
//! additive over independent terms, the discounted value of a run schedule
//! is the sum of per-run constituents `A_k`, which gives closed forms to
//! check the generic solver against.

use serde::Serialize;

use crate::error::{check_discount, Error, Result};
use crate::format::sig;
use crate::mdp::{DecisionRule, MarkovPolicy, Mdp};
use crate::solver::{sweep, SweepGrid, SWEEP_HEADER};

/// One of the three lottery options; also the action index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Choice {
    A,
    B,
    C,
}

impl Choice {
    pub const ALL: [Choice; 3] = [Choice::A, Choice::B, Choice::C];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn label(self) -> &'static str {
        ["a", "b", "c"][self.index()]
    }

    /// `c_u`: `-1`, `0`, `+1`.
    pub fn payment(self) -> f64 {
        [-1.0, 0.0, 1.0][self.index()]
    }

    /// The constant rule `u ≡ self` on the three states.
    pub fn rule(self) -> DecisionRule {
        DecisionRule::constant(3, self.index())
    }
}

/// How the win probability is attached to a choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightConvention {
    /// `0.8 / 0.5 / 0.2` for `a / b / c`, matching the transition matrices.
    #[default]
    WinProbability,
    /// `p_u = 0.5 - 0.3 c_u` placed on the losing outcome, which swaps the
    /// win chances of `a` and `c`. Kept for comparison only.
    Printed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LotterySpec {
    pub reward: f64,
    /// Uniform kernel smoothing, `0` for the raw example.
    pub epsilon: f64,
    pub convention: WeightConvention,
}

impl LotterySpec {
    pub fn new(reward: f64) -> Self {
        Self {
            reward,
            epsilon: 0.0,
            convention: WeightConvention::WinProbability,
        }
    }

    pub fn smoothed(reward: f64, epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::new(reward)
        }
    }

    pub fn win_probability(&self, u: Choice) -> f64 {
        match self.convention {
            WeightConvention::WinProbability => [0.8, 0.5, 0.2][u.index()],
            WeightConvention::Printed => 1.0 - (0.5 - 0.3 * u.payment()),
        }
    }

    /// `1 - p_u`, tabulated so the built rows are exact.
    pub fn loss_probability(&self, u: Choice) -> f64 {
        match self.convention {
            WeightConvention::WinProbability => [0.2, 0.5, 0.8][u.index()],
            WeightConvention::Printed => 0.5 - 0.3 * u.payment(),
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.reward > 0.0 && self.reward.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lottery reward {} must be positive",
                self.reward
            )));
        }
        if !(self.epsilon >= 0.0 && self.epsilon * 3.0 < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "smoothing {} needs 0 <= 3 eps < 1",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// States `1, 2, 3`, actions `a, b, c`.
pub fn build(spec: &LotterySpec) -> Result<Mdp> {
    spec.check()?;
    let transitions = Choice::ALL
        .iter()
        .map(|&u| {
            vec![
                vec![0.0, spec.loss_probability(u), spec.win_probability(u)],
                vec![1.0, 0.0, 0.0],
                vec![1.0, 0.0, 0.0],
            ]
        })
        .collect();
    let rewards = vec![
        Choice::ALL.iter().map(|u| u.payment()).collect(),
        vec![0.0; 3],
        vec![spec.reward; 3],
    ];
    let mdp = Mdp::new(
        vec!["1".into(), "2".into(), "3".into()],
        Choice::ALL.iter().map(|u| u.label().to_string()).collect(),
        transitions,
        rewards,
    )?;
    if spec.epsilon > 0.0 {
        mdp.smoothed(spec.epsilon)
    } else {
        Ok(mdp)
    }
}

/// `A_k(u) = β^{2k} c_u + (1/γ) ln[(1-p_u) + p_u e^{γ β^{2k+1} R}]`, the
/// contribution of run `k` (0-based) to the discounted value.
pub fn a_k(spec: &LotterySpec, u: Choice, k: usize, gamma: f64, beta: f64) -> f64 {
    let d = beta.powi(2 * k as i32);
    let p = spec.win_probability(u);
    d * u.payment() + bernoulli_entropic(p, spec.loss_probability(u), beta * d * spec.reward, gamma)
}

/// `μ^γ` of `v · Bernoulli(p)`.
fn bernoulli_entropic(p: f64, q: f64, v: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        return p * v;
    }
    crate::entropic::entropic(&[0.0, v], &[q, p], gamma)
}

/// First ten constituents per choice and the best choice per run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table1 {
    /// Column labels `1..=10`; column `j` holds internal run `j - 1`.
    pub columns: Vec<usize>,
    /// `values[u][j]` in `a, b, c` order.
    pub values: Vec<Vec<f64>>,
    pub best: Vec<Choice>,
}

pub const TABLE_RUNS: usize = 10;

pub fn table1(spec: &LotterySpec, gamma: f64, beta: f64) -> Result<Table1> {
    spec.check()?;
    check_discount(beta)?;
    let values: Vec<Vec<f64>> = Choice::ALL
        .iter()
        .map(|&u| {
            (0..TABLE_RUNS)
                .map(|k| a_k(spec, u, k, gamma, beta))
                .collect()
        })
        .collect();
    let best = (0..TABLE_RUNS)
        .map(|j| {
            let mut b = Choice::A;
            for u in Choice::ALL {
                if values[u.index()][j] > values[b.index()][j] {
                    b = u;
                }
            }
            b
        })
        .collect();
    Ok(Table1 {
        columns: (1..=TABLE_RUNS).collect(),
        values,
        best,
    })
}

impl Table1 {
    /// `row,1,...,10` with one line per choice plus `best`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["row".to_string()];
        header.extend(self.columns.iter().map(|c| c.to_string()));
        w.write_record(&header)?;
        for u in Choice::ALL {
            let mut rec = vec![u.label().to_string()];
            rec.extend(self.values[u.index()].iter().map(|&v| sig(v)));
            w.write_record(&rec)?;
        }
        let mut rec = vec!["best".to_string()];
        rec.extend(self.best.iter().map(|u| u.label().to_string()));
        w.write_record(&rec)?;
        w.flush()?;
        Ok(())
    }
}

/// Closed-form values of the stationary rule `u ≡ choice`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClosedFormValues {
    pub choice: Choice,
    /// `J̃_γ(1,u) = ½ (c_u + (1/γ) ln[(1-p_u) + p_u e^{γR}])`.
    pub averaged: f64,
    /// `J_1(1,u;β) = (c_u + p_u β R) / (1 - β²)`.
    pub neutral_discounted: f64,
}

pub fn closed_form_values(
    spec: &LotterySpec,
    gamma: f64,
    beta: f64,
) -> Result<Vec<ClosedFormValues>> {
    spec.check()?;
    check_discount(beta)?;
    Ok(Choice::ALL
        .iter()
        .map(|&u| ClosedFormValues {
            choice: u,
            averaged: averaged_closed_form(spec, u, gamma),
            neutral_discounted: (u.payment() + spec.win_probability(u) * beta * spec.reward)
                / (1.0 - beta * beta),
        })
        .collect())
}

pub fn averaged_closed_form(spec: &LotterySpec, u: Choice, gamma: f64) -> f64 {
    0.5 * (u.payment()
        + bernoulli_entropic(
            spec.win_probability(u),
            spec.loss_probability(u),
            spec.reward,
            gamma,
        ))
}

/// Best choice for the averaged criterion, smallest index on ties.
pub fn averaged_best(spec: &LotterySpec, gamma: f64) -> Choice {
    let mut best = Choice::A;
    for u in Choice::ALL {
        if averaged_closed_form(spec, u, gamma) > averaged_closed_form(spec, best, gamma) {
            best = u;
        }
    }
    best
}

/// A change of the averaged-criterion argmax at `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SwitchPoint {
    pub gamma: f64,
    pub below: Choice,
    pub above: Choice,
}

/// Argmax changes of `J̃_γ` on `[lo, hi]`, located on a `step` grid and
/// refined by bisection to `1e-12`.
pub fn averaged_switch_points(
    spec: &LotterySpec,
    lo: f64,
    hi: f64,
    step: f64,
) -> Result<Vec<SwitchPoint>> {
    spec.check()?;
    let grid = crate::format::grid(lo, hi, step)?;
    let mut out = Vec::new();
    for w in grid.windows(2) {
        let (mut a, mut b) = (w[0], w[1]);
        let (below, above) = (averaged_best(spec, a), averaged_best(spec, b));
        if below == above {
            continue;
        }
        while b - a > 1e-12 {
            let m = 0.5 * (a + b);
            if averaged_best(spec, m) == below {
                a = m;
            } else {
                b = m;
            }
        }
        out.push(SwitchPoint {
            gamma: 0.5 * (a + b),
            below,
            above: averaged_best(spec, b),
        });
    }
    Ok(out)
}

/// Chain policy that plays `runs[k]` at steps `2k` and `2k+1` and `tail`
/// afterwards.
pub fn run_policy(runs: &[Choice], tail: Choice) -> MarkovPolicy {
    let head = runs.iter().flat_map(|u| [u.rule(), u.rule()]).collect();
    MarkovPolicy::new(head, tail.rule())
}

/// `Σ_k A_k(u_k)` for the schedule of [`run_policy`], summed until the
/// remaining terms are below `1e-15` in total.
pub fn schedule_value(
    spec: &LotterySpec,
    runs: &[Choice],
    tail: Choice,
    gamma: f64,
    beta: f64,
) -> Result<f64> {
    spec.check()?;
    check_discount(beta)?;
    let scale = 1.0 + spec.reward;
    let mut total = 0.0;
    let mut k = 0usize;
    loop {
        let u = runs.get(k).copied().unwrap_or(tail);
        total += a_k(spec, u, k, gamma, beta);
        k += 1;
        let rest = scale * beta.powi(2 * k as i32) / (1.0 - beta * beta);
        if k >= runs.len() && rest < 1e-15 {
            return Ok(total);
        }
    }
}

/// Greedy run schedule: the best constituent per run. Runs beyond the last
/// switch all use the returned tail.
pub fn greedy_schedule(
    spec: &LotterySpec,
    gamma: f64,
    beta: f64,
    max_runs: usize,
) -> (Vec<Choice>, Choice) {
    let best = |k: usize| {
        let mut b = Choice::A;
        for u in Choice::ALL {
            if a_k(spec, u, k, gamma, beta) > a_k(spec, b, k, gamma, beta) {
                b = u;
            }
        }
        b
    };
    let runs: Vec<Choice> = (0..max_runs).map(best).collect();
    let tail = best(max_runs);
    let mut head_len = runs.len();
    while head_len > 0 && runs[head_len - 1] == tail {
        head_len -= 1;
    }
    (runs[..head_len].to_vec(), tail)
}

/// Chain-step turnpike to lottery runs.
pub fn runs_of_steps(steps: usize) -> usize {
    steps.div_ceil(2)
}

/// Turnpike sweep with a `run_turnpike` column appended.
pub fn write_turnpike_csv<W: std::io::Write>(mdp: &Mdp, grid: &SweepGrid, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = SWEEP_HEADER.to_vec();
    header.push("run_turnpike");
    w.write_record(&header)?;
    for r in &grid.records {
        let mut rec = crate::solver::sweep_fields(mdp, r);
        rec.push(
            r.turnpike
                .map_or_else(String::new, |n| runs_of_steps(n).to_string()),
        );
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub const VALUE_CURVE_HEADER: [&str; 5] = ["curve", "beta", "gamma", "rule", "value"];

/// `averaged` rows over the γ grid and `neutral` rows, `(1-β) J_1`, over
/// the β grid, one per stationary lottery rule.
pub fn write_value_curves_csv<W: std::io::Write>(
    spec: &LotterySpec,
    betas: &[f64],
    gammas: &[f64],
    out: W,
) -> Result<()> {
    spec.check()?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(VALUE_CURVE_HEADER)?;
    for &g in gammas {
        for u in Choice::ALL {
            w.write_record([
                "averaged",
                "",
                &sig(g),
                u.label(),
                &sig(averaged_closed_form(spec, u, g)),
            ])?;
        }
    }
    for &b in betas {
        check_discount(b)?;
        for v in closed_form_values(spec, 0.0, b)? {
            w.write_record([
                "neutral",
                &sig(b),
                "",
                v.choice.label(),
                &sig((1.0 - b) * v.neutral_discounted),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Figure number to its default reward and kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FigureKind {
    Turnpike,
    ValueCurves,
}

pub fn figure_defaults(figure: u8) -> Result<(f64, FigureKind)> {
    match figure {
        2 => Ok((7.0, FigureKind::Turnpike)),
        3 => Ok((7.0, FigureKind::ValueCurves)),
        4 => Ok((3.5, FigureKind::ValueCurves)),
        5 => Ok((3.5, FigureKind::Turnpike)),
        _ => Err(Error::InvalidArgument(format!(
            "unknown figure {figure}; expected 2, 3, 4 or 5"
        ))),
    }
}

/// Data behind one figure on the given grid, written as CSV. Turnpike
/// figures start every chain in the decision state.
pub fn figure_sweep<W: std::io::Write>(
    spec: &LotterySpec,
    figure: u8,
    betas: &[f64],
    gammas: &[f64],
    depth_cap: usize,
    out: W,
) -> Result<()> {
    match figure_defaults(figure)?.1 {
        FigureKind::Turnpike => {
            let mdp = build(spec)?;
            let grid = sweep(&mdp, betas, gammas, depth_cap, 0)?;
            write_turnpike_csv(&mdp, &grid, out)
        }
        FigureKind::ValueCurves => write_value_curves_csv(spec, betas, gammas, out),
    }
}
