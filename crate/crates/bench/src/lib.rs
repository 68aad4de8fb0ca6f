//! Benchmark fixtures shared by the criterion targets.

use rsmdp_core::lottery::{build, LotterySpec};
use rsmdp_core::Mdp;

/// The raw lottery with reward `r`.
pub fn lottery(r: f64) -> Mdp {
    build(&LotterySpec::new(r)).expect("lottery spec is valid")
}

/// A dense random-looking instance with `k` states and `l` actions, built
/// from a fixed arithmetic pattern so it needs no RNG.
pub fn dense(k: usize, l: usize) -> Mdp {
    let transitions = (0..l)
        .map(|a| {
            (0..k)
                .map(|x| {
                    let raw: Vec<f64> = (0..k)
                        .map(|y| 1.0 + ((x * 7 + y * 3 + a * 5) % 11) as f64)
                        .collect();
                    let s: f64 = raw.iter().sum();
                    raw.into_iter().map(|v| v / s).collect()
                })
                .collect()
        })
        .collect();
    let rewards = (0..k)
        .map(|x| {
            (0..l)
                .map(|a| ((x * 13 + a * 17) % 9) as f64 - 4.0)
                .collect()
        })
        .collect();
    Mdp::new(
        (0..k).map(|x| format!("s{x}")).collect(),
        (0..l).map(|a| format!("a{a}")).collect(),
        transitions,
        rewards,
    )
    .expect("fixture is a valid MDP")
}
