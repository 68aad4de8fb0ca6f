//! Finite controlled Markov chains, decision rules and Markov policies.
//!
//! States and actions are addressed by dense indices in declaration order;
//! labels only matter for I/O. Every action is available in every state.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row sums must be within this distance of one.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// JSON form of an MDP, exactly as read from or written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpDocument {
    pub states: Vec<String>,
    pub actions: Vec<String>,
    /// Per action, a row-major `k x k` stochastic matrix.
    pub transitions: BTreeMap<String, Vec<Vec<f64>>>,
    /// Per action, the reward collected in each state.
    pub rewards: BTreeMap<String, Vec<f64>>,
}

/// A single reason a document fails to describe a valid MDP.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoStates,
    NoActions,
    DuplicateState(String),
    DuplicateAction(String),
    MissingTransitions(String),
    MissingRewards(String),
    UnknownAction(String),
    RowCount {
        action: String,
        expected: usize,
        got: usize,
    },
    RowLength {
        action: String,
        row: usize,
        expected: usize,
        got: usize,
    },
    Probability {
        action: String,
        row: usize,
        col: usize,
        value: f64,
    },
    RowSum {
        action: String,
        row: usize,
        sum: f64,
    },
    RewardLength {
        action: String,
        expected: usize,
        got: usize,
    },
    Reward {
        action: String,
        state: usize,
        value: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoStates => write!(f, "state list is empty"),
            Violation::NoActions => write!(f, "action list is empty"),
            Violation::DuplicateState(s) => write!(f, "duplicate state label '{s}'"),
            Violation::DuplicateAction(a) => write!(f, "duplicate action label '{a}'"),
            Violation::MissingTransitions(a) => write!(f, "no transition matrix for action '{a}'"),
            Violation::MissingRewards(a) => write!(f, "no reward column for action '{a}'"),
            Violation::UnknownAction(a) => write!(f, "entry for undeclared action '{a}'"),
            Violation::RowCount {
                action,
                expected,
                got,
            } => {
                write!(f, "action '{action}': expected {expected} rows, got {got}")
            }
            Violation::RowLength {
                action,
                row,
                expected,
                got,
            } => {
                write!(
                    f,
                    "action '{action}' row {row}: expected {expected} entries, got {got}"
                )
            }
            Violation::Probability {
                action,
                row,
                col,
                value,
            } => {
                write!(
                    f,
                    "action '{action}' cell ({row}, {col}): probability {value} outside [0, 1]"
                )
            }
            Violation::RowSum { action, row, sum } => {
                write!(f, "action '{action}' row {row}: row sum {sum}")
            }
            Violation::RewardLength {
                action,
                expected,
                got,
            } => {
                write!(
                    f,
                    "action '{action}': expected {expected} rewards, got {got}"
                )
            }
            Violation::Reward {
                action,
                state,
                value,
            } => {
                write!(
                    f,
                    "action '{action}' state {state}: reward {value} is not finite"
                )
            }
        }
    }
}

/// Checks every structural invariant of a document. An empty list means
/// [`Mdp::from_document`] will succeed.
pub fn validate(doc: &MdpDocument) -> Vec<Violation> {
    let mut out = Vec::new();
    let k = doc.states.len();
    if k == 0 {
        out.push(Violation::NoStates);
    }
    if doc.actions.is_empty() {
        out.push(Violation::NoActions);
    }
    let mut seen = HashSet::new();
    for s in &doc.states {
        if !seen.insert(s) {
            out.push(Violation::DuplicateState(s.clone()));
        }
    }
    let mut seen = HashSet::new();
    for a in &doc.actions {
        if !seen.insert(a) {
            out.push(Violation::DuplicateAction(a.clone()));
        }
    }
    for a in doc.transitions.keys().chain(doc.rewards.keys()) {
        if !doc.actions.contains(a) {
            out.push(Violation::UnknownAction(a.clone()));
        }
    }
    for a in &doc.actions {
        match doc.transitions.get(a) {
            None => out.push(Violation::MissingTransitions(a.clone())),
            Some(rows) => {
                if rows.len() != k {
                    out.push(Violation::RowCount {
                        action: a.clone(),
                        expected: k,
                        got: rows.len(),
                    });
                }
                for (i, row) in rows.iter().enumerate() {
                    if row.len() != k {
                        out.push(Violation::RowLength {
                            action: a.clone(),
                            row: i,
                            expected: k,
                            got: row.len(),
                        });
                        continue;
                    }
                    let mut bad = false;
                    for (j, &p) in row.iter().enumerate() {
                        if !(0.0..=1.0).contains(&p) {
                            bad = true;
                            out.push(Violation::Probability {
                                action: a.clone(),
                                row: i,
                                col: j,
                                value: p,
                            });
                        }
                    }
                    let sum: f64 = row.iter().sum();
                    if !bad && (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                        out.push(Violation::RowSum {
                            action: a.clone(),
                            row: i,
                            sum,
                        });
                    }
                }
            }
        }
        match doc.rewards.get(a) {
            None => out.push(Violation::MissingRewards(a.clone())),
            Some(col) => {
                if col.len() != k {
                    out.push(Violation::RewardLength {
                        action: a.clone(),
                        expected: k,
                        got: col.len(),
                    });
                }
                for (x, &r) in col.iter().enumerate() {
                    if !r.is_finite() {
                        out.push(Violation::Reward {
                            action: a.clone(),
                            state: x,
                            value: r,
                        });
                    }
                }
            }
        }
    }
    out
}

/// `‖c‖` and `‖c‖_sp` of a reward table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RewardNorms {
    pub max_abs: f64,
    pub span: f64,
}

impl RewardNorms {
    /// `‖c‖ / (1 - β)`, the a-priori bound on any discounted value.
    pub fn value_bound(&self, beta: f64) -> f64 {
        self.max_abs / (1.0 - beta)
    }

    /// `‖c‖_sp / (1 - β)`, the a-priori bound on the span of a discounted sum.
    pub fn span_bound(&self, beta: f64) -> f64 {
        self.span / (1.0 - beta)
    }
}

/// A validated finite MDP. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    states: Vec<String>,
    actions: Vec<String>,
    /// `[a][x][y]`, flattened.
    transition: Vec<f64>,
    /// `[x][a]`, flattened.
    reward: Vec<f64>,
    /// `[x][a][b]`: actions `a` and `b` have bitwise identical reward and row at `x`.
    equivalent: Vec<bool>,
}

impl Mdp {
    pub fn from_document(doc: &MdpDocument) -> Result<Self> {
        let violations = validate(doc);
        if !violations.is_empty() {
            return Err(Error::InvalidMdp(violations));
        }
        let k = doc.states.len();
        let l = doc.actions.len();
        let mut transition = Vec::with_capacity(l * k * k);
        for a in &doc.actions {
            for row in &doc.transitions[a] {
                let sum: f64 = row.iter().sum();
                transition.extend(row.iter().map(|p| p / sum));
            }
        }
        let mut reward = vec![0.0; k * l];
        for (ai, a) in doc.actions.iter().enumerate() {
            for (x, &r) in doc.rewards[a].iter().enumerate() {
                reward[x * l + ai] = r;
            }
        }
        Ok(Self::assemble(
            doc.states.clone(),
            doc.actions.clone(),
            transition,
            reward,
        ))
    }

    /// Builds an MDP from dense arrays: `transitions[a][x][y]`, `rewards[x][a]`.
    pub fn new(
        states: Vec<String>,
        actions: Vec<String>,
        transitions: Vec<Vec<Vec<f64>>>,
        rewards: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let k = states.len();
        let l = actions.len();
        if transitions.len() != l {
            return Err(Error::Dimension {
                expected: l,
                got: transitions.len(),
            });
        }
        if rewards.len() != k {
            return Err(Error::Dimension {
                expected: k,
                got: rewards.len(),
            });
        }
        if let Some(row) = rewards.iter().find(|row| row.len() != l) {
            return Err(Error::Dimension {
                expected: l,
                got: row.len(),
            });
        }
        let doc = MdpDocument {
            transitions: actions.iter().cloned().zip(transitions).collect(),
            rewards: actions
                .iter()
                .enumerate()
                .map(|(a, name)| (name.clone(), rewards.iter().map(|row| row[a]).collect()))
                .collect(),
            states,
            actions,
        };
        Self::from_document(&doc)
    }

    fn assemble(
        states: Vec<String>,
        actions: Vec<String>,
        transition: Vec<f64>,
        reward: Vec<f64>,
    ) -> Self {
        let k = states.len();
        let l = actions.len();
        let mut equivalent = vec![false; k * l * l];
        for x in 0..k {
            for a in 0..l {
                for b in 0..l {
                    let same_reward = reward[x * l + a] == reward[x * l + b];
                    let ra = &transition[(a * k + x) * k..(a * k + x + 1) * k];
                    let rb = &transition[(b * k + x) * k..(b * k + x + 1) * k];
                    equivalent[(x * l + a) * l + b] = same_reward && ra == rb;
                }
            }
        }
        Self {
            states,
            actions,
            transition,
            reward,
            equivalent,
        }
    }

    pub fn to_document(&self) -> MdpDocument {
        let k = self.num_states();
        MdpDocument {
            states: self.states.clone(),
            actions: self.actions.clone(),
            transitions: self
                .actions
                .iter()
                .enumerate()
                .map(|(a, name)| {
                    (
                        name.clone(),
                        (0..k).map(|x| self.row(a, x).to_vec()).collect(),
                    )
                })
                .collect(),
            rewards: self
                .actions
                .iter()
                .enumerate()
                .map(|(a, name)| (name.clone(), (0..k).map(|x| self.reward(x, a)).collect()))
                .collect(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MdpDocument = serde_json::from_str(text)?;
        Self::from_document(&doc)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn actions(&self) -> &[String] {
        &self.actions
    }

    pub fn state_index(&self, label: &str) -> Option<usize> {
        self.states.iter().position(|s| s == label)
    }

    pub fn action_index(&self, label: &str) -> Option<usize> {
        self.actions.iter().position(|a| a == label)
    }

    /// `P^a(x, ·)`.
    #[inline]
    pub fn row(&self, action: usize, state: usize) -> &[f64] {
        let k = self.num_states();
        let start = (action * k + state) * k;
        &self.transition[start..start + k]
    }

    /// `c(x, a)`.
    #[inline]
    pub fn reward(&self, state: usize, action: usize) -> f64 {
        self.reward[state * self.num_actions() + action]
    }

    /// True when `a` and `b` are indistinguishable at `state`: same reward
    /// and the same transition row. Any backup gives them equal values.
    #[inline]
    pub fn equivalent(&self, state: usize, a: usize, b: usize) -> bool {
        let l = self.num_actions();
        self.equivalent[(state * l + a) * l + b]
    }

    pub fn reward_norms(&self) -> RewardNorms {
        reward_norms(self)
    }

    /// Uniform smoothing `(1 - ε k) P + ε`, which makes every entry at least `ε`.
    pub fn smoothed(&self, eps: f64) -> Result<Self> {
        let k = self.num_states() as f64;
        if !(eps >= 0.0 && eps * k < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "smoothing {eps} needs 0 <= eps * k < 1"
            )));
        }
        let transition = self
            .transition
            .iter()
            .map(|p| (1.0 - eps * k) * p + eps)
            .collect();
        Ok(Self::assemble(
            self.states.clone(),
            self.actions.clone(),
            transition,
            self.reward.clone(),
        ))
    }

    /// Checks a rule is total over the states and uses valid actions.
    pub fn check_rule(&self, rule: &DecisionRule) -> Result<()> {
        if rule.len() != self.num_states() {
            return Err(Error::Dimension {
                expected: self.num_states(),
                got: rule.len(),
            });
        }
        if let Some(&a) = rule.actions().iter().find(|&&a| a >= self.num_actions()) {
            return Err(Error::InvalidArgument(format!(
                "action index {a} out of range"
            )));
        }
        Ok(())
    }

    pub fn check_policy(&self, policy: &MarkovPolicy) -> Result<()> {
        for rule in policy.head() {
            self.check_rule(rule)?;
        }
        self.check_rule(policy.tail())
    }

    /// Two rules agree at `state` up to action equivalence.
    pub fn same_choice(&self, state: usize, a: usize, b: usize) -> bool {
        a == b || self.equivalent(state, a, b)
    }

    /// Two rules agree everywhere up to action equivalence.
    pub fn same_rule(&self, u: &DecisionRule, v: &DecisionRule) -> bool {
        (0..self.num_states()).all(|x| self.same_choice(x, u.action(x), v.action(x)))
    }

    /// Every deterministic stationary rule, in mixed-radix order with state 0
    /// as the least significant digit.
    pub fn all_rules(&self) -> Result<Vec<DecisionRule>> {
        let k = self.num_states() as u32;
        let l = self.num_actions() as u128;
        let count = l.checked_pow(k).unwrap_or(u128::MAX);
        if count > 1 << 24 {
            return Err(Error::GuardExceeded(count));
        }
        Ok((0..count as u64)
            .map(|id| DecisionRule::from_id(id, self.num_states(), self.num_actions()))
            .collect())
    }
}

/// `max f - min f`.
pub fn span(f: &[f64]) -> Result<f64> {
    if f.is_empty() {
        return Err(Error::EmptyVector);
    }
    let (lo, hi) = f
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    Ok(hi - lo)
}

/// `(‖c‖, ‖c‖_sp)` over the whole reward table.
pub fn reward_norms(mdp: &Mdp) -> RewardNorms {
    let (lo, hi) = mdp
        .reward
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    RewardNorms {
        max_abs: lo.abs().max(hi.abs()),
        span: hi - lo,
    }
}

/// A deterministic stationary decision rule `u: E -> U`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DecisionRule(Vec<usize>);

impl DecisionRule {
    pub fn new(actions: Vec<usize>) -> Self {
        Self(actions)
    }

    pub fn constant(num_states: usize, action: usize) -> Self {
        Self(vec![action; num_states])
    }

    /// Inverse of [`DecisionRule::id`].
    pub fn from_id(mut id: u64, num_states: usize, num_actions: usize) -> Self {
        let mut actions = Vec::with_capacity(num_states);
        for _ in 0..num_states {
            actions.push((id % num_actions as u64) as usize);
            id /= num_actions as u64;
        }
        Self(actions)
    }

    #[inline]
    pub fn action(&self, state: usize) -> usize {
        self.0[state]
    }

    pub fn actions(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Mixed-radix index, state 0 least significant.
    pub fn id(&self, num_actions: usize) -> u64 {
        self.0
            .iter()
            .rev()
            .fold(0u64, |acc, &a| acc * num_actions as u64 + a as u64)
    }

    /// Action labels joined by `|`, in state order.
    pub fn label(&self, mdp: &Mdp) -> String {
        self.0
            .iter()
            .map(|&a| mdp.actions()[a].as_str())
            .collect::<Vec<_>>()
            .join("|")
    }
}

/// `(u_0, ..., u_{H-1}, u, u, ...)`: a finite head followed by a stationary tail.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkovPolicy {
    head: Vec<DecisionRule>,
    tail: DecisionRule,
}

impl MarkovPolicy {
    pub fn new(head: Vec<DecisionRule>, tail: DecisionRule) -> Self {
        Self { head, tail }
    }

    pub fn stationary(rule: DecisionRule) -> Self {
        Self {
            head: Vec::new(),
            tail: rule,
        }
    }

    #[inline]
    pub fn rule_at(&self, stage: usize) -> &DecisionRule {
        self.head.get(stage).unwrap_or(&self.tail)
    }

    pub fn head(&self) -> &[DecisionRule] {
        &self.head
    }

    pub fn tail(&self) -> &DecisionRule {
        &self.tail
    }

    /// Length of the head in this representation.
    pub fn turnpike(&self) -> usize {
        self.head.len()
    }

    pub fn is_stationary(&self) -> bool {
        self.head.iter().all(|r| *r == self.tail)
    }
}

impl From<DecisionRule> for MarkovPolicy {
    fn from(rule: DecisionRule) -> Self {
        Self::stationary(rule)
    }
}
