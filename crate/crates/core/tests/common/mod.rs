//! Independent oracles shared by the integration tests. Nothing here calls
//! the library's numerics; only the model accessors are used.
#![allow(dead_code, clippy::needless_range_loop)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rsmdp_core::{DecisionRule, MarkovPolicy, Mdp};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random dense-or-sparse instance with rewards in `[-5, 5]`.
pub fn random_mdp(rng: &mut ChaCha8Rng, k: usize, l: usize) -> Mdp {
    let transitions = (0..l)
        .map(|_| {
            (0..k)
                .map(|_| {
                    let mut row: Vec<f64> = (0..k)
                        .map(|_| {
                            if rng.random_bool(0.25) {
                                0.0
                            } else {
                                rng.random::<f64>()
                            }
                        })
                        .collect();
                    if row.iter().all(|&p| p == 0.0) {
                        row[rng.random_range(0..k)] = 1.0;
                    }
                    let s: f64 = row.iter().sum();
                    row.iter().map(|p| p / s).collect()
                })
                .collect()
        })
        .collect();
    let rewards = (0..k)
        .map(|_| (0..l).map(|_| rng.random_range(-5.0..5.0)).collect())
        .collect();
    Mdp::new(
        (0..k).map(|x| format!("s{x}")).collect(),
        (0..l).map(|a| format!("a{a}")).collect(),
        transitions,
        rewards,
    )
    .unwrap()
}

pub fn random_rule(rng: &mut ChaCha8Rng, mdp: &Mdp) -> DecisionRule {
    DecisionRule::new(
        (0..mdp.num_states())
            .map(|_| rng.random_range(0..mdp.num_actions()))
            .collect(),
    )
}

pub fn random_policy(rng: &mut ChaCha8Rng, mdp: &Mdp, max_head: usize) -> MarkovPolicy {
    let h = rng.random_range(0..=max_head);
    MarkovPolicy::new(
        (0..h).map(|_| random_rule(rng, mdp)).collect(),
        random_rule(rng, mdp),
    )
}

/// Every path of `horizon` steps from `x0`: the probability and the
/// discounted reward `Σ_{i<T} β^i c_i`.
pub fn enumerate_paths(
    mdp: &Mdp,
    policy: &MarkovPolicy,
    x0: usize,
    beta: f64,
    horizon: usize,
) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    walk(mdp, policy, x0, beta, horizon, 0, 1.0, 0.0, 1.0, &mut out);
    out
}

#[allow(clippy::too_many_arguments)]
fn walk(
    mdp: &Mdp,
    policy: &MarkovPolicy,
    x: usize,
    beta: f64,
    horizon: usize,
    i: usize,
    prob: f64,
    total: f64,
    disc: f64,
    out: &mut Vec<(f64, f64)>,
) {
    let a = policy.rule_at(i).action(x);
    let total = total + disc * mdp.reward(x, a);
    if i + 1 == horizon {
        out.push((prob, total));
        return;
    }
    for (y, &p) in mdp.row(a, x).iter().enumerate() {
        if p > 0.0 {
            walk(
                mdp,
                policy,
                y,
                beta,
                horizon,
                i + 1,
                prob * p,
                total,
                disc * beta,
                out,
            );
        }
    }
}

/// `(1/γ) ln Σ p e^{γ z}` by a max-shifted sum, or the mean at `γ = 0`.
pub fn path_entropic(paths: &[(f64, f64)], gamma: f64) -> f64 {
    if gamma == 0.0 {
        return paths.iter().map(|(p, z)| p * z).sum();
    }
    let m = paths
        .iter()
        .map(|&(_, z)| gamma * z)
        .fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = paths.iter().map(|&(p, z)| p * (gamma * z - m).exp()).sum();
    (m + s.ln()) / gamma
}

/// `E[Z_T^k]` over the enumerated paths.
pub fn path_moment(paths: &[(f64, f64)], k: i32) -> f64 {
    paths.iter().map(|(p, z)| p * z.powi(k)).sum()
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// `(I - β P^u)^{-1} c_u`.
pub fn stationary_value(mdp: &Mdp, u: &DecisionRule, beta: f64) -> Vec<f64> {
    let k = mdp.num_states();
    let a = (0..k)
        .map(|x| {
            let row = mdp.row(u.action(x), x);
            (0..k)
                .map(|y| if x == y { 1.0 } else { 0.0 } - beta * row[y])
                .collect()
        })
        .collect();
    let b = (0..k).map(|x| mdp.reward(x, u.action(x))).collect();
    solve_linear(a, b)
}

/// Risk-neutral discounted optimum by policy iteration.
pub fn policy_iteration(mdp: &Mdp, beta: f64) -> (Vec<f64>, DecisionRule) {
    let k = mdp.num_states();
    let mut u = DecisionRule::constant(k, 0);
    loop {
        let v = stationary_value(mdp, &u, beta);
        let mut next = u.actions().to_vec();
        let q = |x: usize, a: usize| {
            mdp.reward(x, a)
                + beta
                    * mdp
                        .row(a, x)
                        .iter()
                        .zip(&v)
                        .map(|(p, w)| p * w)
                        .sum::<f64>()
        };
        for x in 0..k {
            let cur = q(x, u.action(x));
            for a in 0..mdp.num_actions() {
                if q(x, a) > cur + 1e-12 * (1.0 + cur.abs()) && q(x, a) > q(x, next[x]) {
                    next[x] = a;
                }
            }
        }
        let next = DecisionRule::new(next);
        if next == u {
            return (v, u);
        }
        u = next;
    }
}

/// Long-run mean reward of a stationary rule: the occupation measure from
/// the Cesàro average of `P^t`, started at state 0.
pub fn occupation_mean(mdp: &Mdp, u: &DecisionRule, steps: usize) -> f64 {
    let k = mdp.num_states();
    let mut dist = vec![0.0; k];
    dist[0] = 1.0;
    let mut acc = 0.0;
    for _ in 0..steps {
        acc += (0..k)
            .map(|x| dist[x] * mdp.reward(x, u.action(x)))
            .sum::<f64>();
        let mut next = vec![0.0; k];
        for x in 0..k {
            for (y, p) in mdp.row(u.action(x), x).iter().enumerate() {
                next[y] += dist[x] * p;
            }
        }
        dist = next;
    }
    acc / steps as f64
}

/// Risk-neutral discounted optimum by plain value iteration, stopped once
/// the a-posteriori error bound `β/(1-β)·‖v_{n+1} - v_n‖` is below `tol`.
pub fn value_iteration(mdp: &Mdp, beta: f64, tol: f64) -> Vec<f64> {
    let k = mdp.num_states();
    let mut v = vec![0.0; k];
    loop {
        let next: Vec<f64> = (0..k)
            .map(|x| {
                (0..mdp.num_actions())
                    .map(|a| {
                        mdp.reward(x, a)
                            + beta
                                * mdp
                                    .row(a, x)
                                    .iter()
                                    .zip(&v)
                                    .map(|(p, w)| p * w)
                                    .sum::<f64>()
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let change = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if beta / (1.0 - beta) * change < tol {
            return v;
        }
    }
}
