//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Run with `cargo test -p rsmdp-cli --test acceptance`.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use common::*;
use rand::Rng;
use rsmdp_core::entropic::{entropic_value, hoeffding_gap, FiniteDistribution};
use rsmdp_core::limits::{blackwell_rule, risk_neutral_distance, BlackwellStage};
use rsmdp_core::lottery::{self, Choice, LotterySpec};
use rsmdp_core::mixing::{
    contraction_factor, mixing_report, multi_step_k, one_step_delta, verify_span_bounds,
};
use rsmdp_core::solver::{depth_for_width, MAX_DEPTH};
use rsmdp_core::*;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Printed constituents for `R = 7`, `β = 0.95`, `γ = -1`, columns 1..10.
const PRINTED: [[f64; 10]; 3] = [
    [0.60, 0.70, 0.78, 0.84, 0.90, 0.94, 0.96, 0.98, 0.98, 0.96],
    [0.69, 0.69, 0.69, 0.69, 0.68, 0.67, 0.67, 0.65, 0.64, 0.62],
    [1.22, 1.13, 1.04, 0.96, 0.88, 0.82, 0.76, 0.70, 0.65, 0.60],
];

fn table_reproduction() -> Check {
    let out = Command::new(env!("CARGO_BIN_EXE_rsmdp"))
        .args([
            "lottery", "table", "--R", "7", "--beta", "0.95", "--gamma", "-1",
        ])
        .output()
        .map_err(err)?;
    ensure(out.status.success(), || {
        format!("exit {:?}", out.status.code())
    })?;
    let text = String::from_utf8(out.stdout).map_err(err)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let rows: Vec<csv::StringRecord> = reader.records().collect::<Result<_, _>>().map_err(err)?;
    ensure(rows.len() == 4, || format!("{} rows", rows.len()))?;
    let mut worst = 0.0f64;
    for (u, want) in PRINTED.iter().enumerate() {
        ensure(&rows[u][0] == Choice::ALL[u].label(), || {
            format!("row label {}", &rows[u][0])
        })?;
        for (j, &w) in want.iter().enumerate() {
            let v: f64 = rows[u][j + 1].parse().map_err(err)?;
            let d = ((v * 100.0).round() / 100.0 - w).abs();
            worst = worst.max(d);
            ensure(d <= 0.01 + 1e-12, || {
                format!("row {} col {}: {v} vs {w}", &rows[u][0], j + 1)
            })?;
        }
    }
    let best: Vec<&str> = rows[3].iter().collect();
    ensure(
        best == ["best", "c", "c", "c", "c", "a", "a", "a", "a", "a", "a"],
        || format!("best row {best:?}"),
    )?;
    Ok(format!(
        "30 values, worst rounded deviation {worst:.2}, best row c*4 a*6"
    ))
}

fn example_values() -> Check {
    let mdp = lottery::build(&LotterySpec::new(7.0)).map_err(err)?;
    let beta = 0.95;
    let depth = depth_for_width(&mdp.reward_norms(), beta, 0.01);
    let s = Solver::new(&mdp, beta)
        .map_err(err)?
        .solve(-1.0, depth)
        .map_err(err)?;
    let width = s.bands.width(0);
    ensure(width <= 0.01, || format!("band width {width}"))?;
    let (lo, hi) = s.value_interval(0);
    ensure((lo - 22.8).abs() <= 0.1 && (hi - 22.8).abs() <= 0.1, || {
        format!("J in [{lo}, {hi}]")
    })?;
    let mut parts = vec![format!("J [{lo:.4}, {hi:.4}]")];
    for (u, want) in Choice::ALL.into_iter().zip([21.4, 15.5, 15.6]) {
        let iv = evaluate(&mdp, &u.rule().into(), 0, -1.0, beta, depth).map_err(err)?;
        ensure(iv.width() <= 0.01, || {
            format!("u_{} width {}", u.label(), iv.width())
        })?;
        ensure(
            (iv.lo - want).abs() <= 0.1 && (iv.hi - want).abs() <= 0.1,
            || format!("u_{} in [{}, {}] vs {want}", u.label(), iv.lo, iv.hi),
        )?;
        parts.push(format!("u_{} [{:.4}, {:.4}]", u.label(), iv.lo, iv.hi));
    }
    Ok(format!(
        "depth {depth}, width {width:.1e}; {}",
        parts.join(", ")
    ))
}

fn neutral_switch() -> Check {
    let spec = LotterySpec::new(3.5);
    let mdp = lottery::build(&spec).map_err(err)?;
    let stage0 = |beta: f64| -> Result<(usize, bool), String> {
        let s = Solver::new(&mdp, beta)
            .map_err(err)?
            .solve(0.0, default_depth(&mdp, beta))
            .map_err(err)?;
        Ok((s.schedule[0].action(0), s.certified[0][0]))
    };
    let (mut lo, mut hi) = (0.9, 0.995);
    let (a_lo, c_lo) = stage0(lo)?;
    let (a_hi, c_hi) = stage0(hi)?;
    ensure(c_lo && c_hi && a_lo != a_hi, || {
        format!("no certified flip on [{lo}, {hi}]")
    })?;
    while hi - lo > 1e-4 {
        let mid = 0.5 * (lo + hi);
        let (a, _) = stage0(mid)?;
        if a == a_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (end_lo, cert_lo) = stage0(lo)?;
    let (end_hi, cert_hi) = stage0(hi)?;
    ensure(
        cert_lo && cert_hi && end_lo == a_lo && end_hi == a_hi,
        || "bracket ends not certified".into(),
    )?;
    let flipped = [a_lo, a_hi];
    ensure(
        flipped.contains(&Choice::A.index()) && flipped.contains(&Choice::C.index()),
        || format!("flip between actions {flipped:?}"),
    )?;
    ensure(lo >= 0.952 && hi <= 0.953, || {
        format!("bracket [{lo}, {hi}]")
    })?;
    let gap = |b: f64| -> Result<f64, String> {
        let v = lottery::closed_form_values(&spec, 0.0, b).map_err(err)?;
        Ok(v[0].neutral_discounted - v[2].neutral_discounted)
    };
    let star = 20.0 / 21.0;
    ensure(gap(star)?.abs() < 1e-12, || {
        format!(
            "closed-form gap at 20/21 is {}",
            gap(star).unwrap_or(f64::NAN)
        )
    })?;
    ensure(gap(star - 1e-6)? * gap(star + 1e-6)? < 0.0, || {
        "closed form does not cross at 20/21".into()
    })?;
    ensure(lo <= star && star <= hi, || {
        format!("20/21 outside [{lo}, {hi}]")
    })?;
    Ok(format!(
        "{} -> {} on [{lo:.5}, {hi:.5}], closed-form crossing 20/21 = {star:.5}",
        mdp.actions()[a_lo],
        mdp.actions()[a_hi]
    ))
}

fn stationary_band() -> Check {
    let mdp = lottery::build(&LotterySpec::new(7.0)).map_err(err)?;
    let betas = [0.90, 0.95, 0.995];
    let gammas = [-0.6, -0.3, 0.0, 0.2, 0.4];
    let grid = sweep(&mdp, &betas, &gammas, MAX_DEPTH, 0).map_err(err)?;
    let tail = grid.records[0].tail_rule.clone();
    for r in &grid.records {
        ensure(r.turnpike == Some(0) && r.certified, || {
            format!(
                "beta {} gamma {}: turnpike {:?}, certified {}",
                r.beta, r.gamma, r.turnpike, r.certified
            )
        })?;
        ensure(mdp.same_rule(&r.tail_rule, &tail), || {
            format!("beta {} gamma {}: tail differs", r.beta, r.gamma)
        })?;
        let t = turnpike(&mdp, r.gamma, r.beta, MAX_DEPTH).map_err(err)?;
        ensure(t.tail_certified, || {
            format!("beta {} gamma {}: tail not certified", r.beta, r.gamma)
        })?;
    }
    Ok(format!(
        "15 points, N = 0 certified, common tail {}",
        tail.label(&mdp)
    ))
}

fn sandwich_suite() -> Check {
    let mut r = rng(2024);
    let mut levels = 0usize;
    let mut worst_vi = 0.0f64;
    for case in 0..200 {
        let k = r.random_range(1..=5);
        let l = r.random_range(1..=4);
        let mdp = random_mdp(&mut r, k, l);
        let beta = r.random_range(0.5..0.99);
        let gamma = r.random_range(-3.0..3.0);
        let depth = r.random_range(20..=200);
        let s = Solver::new(&mdp, beta)
            .map_err(err)?
            .solve(gamma, depth)
            .map_err(err)?;
        let c = mdp.reward_norms().value_bound(beta);
        let slack = 1e-9 * (1.0 + c);
        for i in 0..=depth {
            let gap = s.bands.gap_bound(i);
            for x in 0..k {
                let (lo, hi) = s.bands.interval(i, x);
                ensure(lo <= hi, || {
                    format!("case {case} level {i} state {x}: {lo} > {hi}")
                })?;
                ensure(lo >= -c - slack && hi <= c + slack, || {
                    format!("case {case} level {i}: outside ±{c}")
                })?;
                ensure(hi - lo <= gap + slack, || {
                    format!("case {case} level {i}: gap {} > {gap}", hi - lo)
                })?;
            }
            levels += 1;
        }
        let neutral_depth = depth_for_width(&mdp.reward_norms(), beta, 1e-10);
        let n = Solver::new(&mdp, beta)
            .map_err(err)?
            .solve(0.0, neutral_depth)
            .map_err(err)?;
        let oracle = value_iteration(&mdp, beta, 1e-11);
        for (x, want) in oracle.iter().enumerate() {
            let (lo, hi) = n.value_interval(x);
            let d = (0.5 * (lo + hi) - want).abs();
            worst_vi = worst_vi.max(d);
            ensure(d <= 1e-8, || {
                format!(
                    "case {case} state {x}: {} vs value iteration {want}",
                    0.5 * (lo + hi)
                )
            })?;
        }
    }
    Ok(format!(
        "200 instances, {levels} levels checked, worst value-iteration gap {worst_vi:.1e}"
    ))
}

fn oracle_equivalence() -> Check {
    let mut r = rng(77);
    let mut worst_eval = 0.0f64;
    let mut worst_moment = 0.0f64;
    for case in 0..50 {
        let k = r.random_range(2..=3);
        let l = r.random_range(1..=3);
        let mdp = random_mdp(&mut r, k, l);
        let policy = random_policy(&mut r, &mdp, 4);
        let beta = r.random_range(0.5..0.98);
        let gamma = r.random_range(-2.0..2.0);
        let horizon = r.random_range(1..=10);
        let x0 = r.random_range(0..k);
        let paths = enumerate_paths(&mdp, &policy, x0, beta, horizon);
        let tail = beta.powi(horizon as i32) * mdp.reward_norms().value_bound(beta);
        let shifted = |s: f64| paths.iter().map(|&(p, z)| (p, z + s)).collect::<Vec<_>>();
        let iv = evaluate(&mdp, &policy, x0, gamma, beta, horizon).map_err(err)?;
        let (lo, hi) = (
            path_entropic(&shifted(-tail), gamma),
            path_entropic(&shifted(tail), gamma),
        );
        let d = (iv.lo - lo).abs().max((iv.hi - hi).abs());
        worst_eval = worst_eval.max(d);
        ensure(d <= 1e-10, || format!("case {case}: evaluate off by {d:e}"))?;
        let m = moments(&mdp, &policy, x0, beta, 3, horizon).map_err(err)?;
        for order in 1..=3 {
            let d = (m.moment(order) - path_moment(&paths, order as i32)).abs();
            worst_moment = worst_moment.max(d);
            ensure(d <= 1e-8, || {
                format!("case {case} order {order}: moment off by {d:e}")
            })?;
        }
    }
    Ok(format!(
        "50 instances, worst evaluate gap {worst_eval:.1e}, worst moment gap {worst_moment:.1e}"
    ))
}

fn entropic_suite() -> Check {
    let gammas = [-2.0, -0.5, -1e-4, 1e-4, 0.5, 2.0];
    let slack = 1e-10;
    let mut r = rng(99);
    let mut checks = 0usize;
    for case in 0..10_000 {
        let n = r.random_range(1..=8);
        let values: Vec<f64> = (0..n).map(|_| r.random_range(-10.0..10.0)).collect();
        let raw: Vec<f64> = (0..n).map(|_| r.random::<f64>() + 1e-3).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let bumped: Vec<f64> = values
            .iter()
            .map(|v| v + r.random_range(0.0..3.0))
            .collect();
        let d1 = FiniteDistribution::from_parts(values, weights.clone()).map_err(err)?;
        let d2 = FiniteDistribution::from_parts(bumped, weights).map_err(err)?;
        let mut previous = f64::NEG_INFINITY;
        for &g in &gammas {
            let mu = entropic_value(&d1, g);
            ensure(mu >= d1.min() - slack && mu <= d1.max() + slack, || {
                format!("case {case} gamma {g}: bounds")
            })?;
            ensure(entropic_value(&d2, g) >= mu - slack, || {
                format!("case {case} gamma {g}: outcome monotonicity")
            })?;
            ensure(mu >= previous - slack, || {
                format!("case {case} gamma {g}: risk monotonicity")
            })?;
            let (lhs, rhs) = hoeffding_gap(&d1, g).map_err(err)?;
            ensure(lhs <= rhs + slack, || {
                format!("case {case} gamma {g}: Hoeffding {lhs} > {rhs}")
            })?;
            let s = d1.span();
            ensure(
                (mu - d1.mean()).abs() <= 0.5 * g.abs() * s * s + slack,
                || format!("case {case} gamma {g}: limit"),
            )?;
            previous = mu;
            checks += 5;
        }
    }
    Ok(format!(
        "10000 distributions x 6 risk levels, {checks} checks, zero violations"
    ))
}

fn mixing_suite() -> Check {
    let mut notes = Vec::new();
    for eps in [0.01, 0.05] {
        let mdp = lottery::build(&LotterySpec::smoothed(7.0, eps)).map_err(err)?;
        let delta = one_step_delta(&mdp);
        ensure(delta < 1.0, || format!("eps {eps}: delta {delta}"))?;
        let k = multi_step_k(&mdp, 1).map_err(err)?;
        ensure(k.is_finite(), || format!("eps {eps}: K infinite"))?;
        for gamma in [-2.0, -1.0, -0.1] {
            let params = mixing::MixingParams {
                gamma,
                gamma0: gamma,
                beta: 0.95,
                n_steps: 1,
                trials: 200,
                seed: 5,
            };
            let report = mixing_report(&mdp, params).map_err(err)?;
            for row in
                verify_span_bounds(&mdp, gamma, &report, &[0.9, 0.95, 0.99], None).map_err(err)?
            {
                ensure(row.holds_51 == Some(true), || {
                    format!("eps {eps} gamma {gamma} beta {}: {row:?}", row.beta)
                })?;
            }
        }
        let mut worst = 0.0f64;
        for beta in [0.9, 0.95, 0.99] {
            let c = contraction_factor(&mdp, 0.0, beta, 1000, 17, 1).map_err(err)?;
            worst = worst.max(c);
            ensure(c <= delta + 1e-9, || {
                format!("eps {eps} beta {beta}: contraction {c} > {delta}")
            })?;
        }
        notes.push(format!(
            "eps {eps}: delta {delta:.3}, K {k:.1}, contraction {worst:.3}"
        ));
    }
    Ok(notes.join("; "))
}

fn blackwell_divergence() -> Check {
    let mdp = lottery::build(&LotterySpec::new(7.0)).map_err(err)?;
    let mut differing = Vec::new();
    let mut other = Vec::new();
    for gamma in [-1.0, -2.0] {
        for beta in [0.95, 0.995] {
            let s = Solver::new(&mdp, beta)
                .map_err(err)?
                .solve(gamma, default_depth(&mdp, beta))
                .map_err(err)?;
            let b = blackwell_rule(&mdp, gamma, beta, None, BlackwellStage::Zero).map_err(err)?;
            match s.tail {
                Some(tail) if b.certified && !mdp.same_rule(&tail.rule, &b.rule) => {
                    differing.push(format!(
                        "({gamma}, {beta}) tail {} Blackwell {}",
                        tail.rule.label(&mdp),
                        b.rule.label(&mdp)
                    ))
                }
                _ => other.push(format!("({gamma}, {beta})")),
            }
        }
    }
    ensure(!differing.is_empty(), || {
        format!("no certified divergence among {}", other.join(", "))
    })?;
    Ok(differing.join("; "))
}

fn vanishing_risk_trend() -> Check {
    let mdp = lottery::build(&LotterySpec::smoothed(7.0, 0.01)).map_err(err)?;
    let gammas = [-1.0, -0.1, -0.01, -0.001];
    let betas = [0.9, 0.95, 0.99];
    let rows = risk_neutral_distance(&mdp, &gammas, &betas, None).map_err(err)?;
    let mut worst = 0.0f64;
    for chunk in rows.chunks(gammas.len()) {
        let d: Vec<f64> = chunk.iter().map(|r| r.span_distance).collect();
        ensure(d.windows(2).all(|w| w[1] < w[0]), || {
            format!("beta {}: {d:?}", chunk[0].beta)
        })?;
        worst = worst.max(d[3]);
    }
    ensure(worst < 1e-2, || format!("max distance at -1e-3 is {worst}"))?;
    Ok(format!(
        "strictly decreasing for each beta, max at gamma -1e-3 is {worst:.2e}"
    ))
}

fn coarse_figures() -> Check {
    let mut notes = Vec::new();
    for figure in ["2", "5"] {
        let out = Command::new(env!("CARGO_BIN_EXE_rsmdp"))
            .args(["lottery", "sweep", "--figure", figure, "--step", "0.02"])
            .env("RSMDP_WORKERS", "8")
            .output()
            .map_err(err)?;
        ensure(out.status.success(), || {
            String::from_utf8_lossy(&out.stderr).into_owned()
        })?;
        notes.push(format!(
            "figure {figure}: {} points",
            out.stdout.iter().filter(|&&b| b == b'\n').count() - 1
        ));
    }
    Ok(notes.join(", "))
}

fn main() -> ExitCode {
    type Criterion = (&'static str, Option<u64>, fn() -> Check);
    let criteria: [Criterion; 11] = [
        ("1 table reproduction", Some(1), table_reproduction),
        ("2 example values", Some(5), example_values),
        ("3 risk-neutral switch", Some(10), neutral_switch),
        ("4 stationary band", Some(30), stationary_band),
        ("5 sandwich suite", None, sandwich_suite),
        ("6 oracle equivalence", None, oracle_equivalence),
        ("7 entropic suite", None, entropic_suite),
        ("8 mixing suite", None, mixing_suite),
        ("9 blackwell vs tail", None, blackwell_divergence),
        ("10 vanishing-risk trend", None, vanishing_risk_trend),
        ("coarse figure grids", Some(300), coarse_figures),
    ];
    let mut failed = 0;
    for (name, limit, run) in criteria {
        let start = Instant::now();
        let outcome =
            catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let outcome = match (outcome, limit) {
            (Ok(_), Some(s)) if elapsed > Duration::from_secs(s) => {
                Err(format!("took {elapsed:.2?}, limit {s} s"))
            }
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("PASS  {name:<26} {:>8.2?}  {detail}", elapsed),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name:<26} {:>8.2?}  {detail}", elapsed);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
