mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rsmdp_core::eval::{comparison_horizon, moment_compare, SimulationSpec};
use rsmdp_core::format::parse_range;
use rsmdp_core::limits::{self, BlackwellStage};
use rsmdp_core::lottery::{self, FigureKind, LotterySpec, WeightConvention};
use rsmdp_core::mixing::{self, MixingParams};
use rsmdp_core::solver::MAX_DEPTH;
use rsmdp_core::{default_depth, DecisionRule, MarkovPolicy, Mdp, Solver};
use serde::Deserialize;
use serde_json::{json, Value};

use output::{csv_bytes, Sink};

#[derive(Parser)]
#[command(
    name = "rsmdp",
    version,
    about = "Risk-sensitive discounted MDP toolkit"
)]
struct Cli {
    /// Directory for output files; stdout when absent.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads. RSMDP_WORKERS takes precedence.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Exit with status 2 when the result is not certified.
    #[arg(long, global = true)]
    require_certified: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Model {
    /// MDP in JSON form.
    #[arg(long)]
    mdp: PathBuf,
}

#[derive(Args)]
struct PolicyArg {
    /// Stationary rule: one action label per state separated by `,` or `|`,
    /// or a single label used everywhere.
    #[arg(long, conflicts_with = "policy", required_unless_present = "policy")]
    rule: Option<String>,
    /// JSON file `{"head": [rule, ...], "tail": rule}`.
    #[arg(long)]
    policy: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Certified optimal values and decision schedule.
    Solve {
        #[command(flatten)]
        model: Model,
        #[arg(long)]
        beta: f64,
        #[arg(long, allow_hyphen_values = true)]
        gamma: f64,
        /// Ladder depth; defaults to a band width of 1e-6.
        #[arg(long)]
        depth: Option<usize>,
    },
    /// Value interval of a given policy.
    Evaluate {
        #[command(flatten)]
        model: Model,
        #[command(flatten)]
        policy: PolicyArg,
        #[arg(long)]
        beta: f64,
        #[arg(long, allow_hyphen_values = true)]
        gamma: f64,
        #[arg(long)]
        depth: Option<usize>,
    },
    /// Monte Carlo estimate of a policy's value.
    Simulate {
        #[command(flatten)]
        model: Model,
        #[command(flatten)]
        policy: PolicyArg,
        #[arg(long)]
        beta: f64,
        #[arg(long, allow_hyphen_values = true)]
        gamma: f64,
        #[arg(long)]
        state: Option<String>,
        #[arg(long, default_value_t = 200)]
        horizon: usize,
        #[arg(long, default_value_t = 10_000)]
        paths: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Turnpike of the optimal schedule at one point.
    Turnpike {
        #[command(flatten)]
        model: Model,
        #[arg(long)]
        beta: f64,
        #[arg(long, allow_hyphen_values = true)]
        gamma: f64,
        /// Largest ladder depth tried.
        #[arg(long, default_value_t = MAX_DEPTH)]
        depth: usize,
    },
    /// Turnpike over a (beta, gamma) grid, as CSV.
    Sweep {
        #[command(flatten)]
        model: Model,
        /// `lo:hi:step`, a number, or a comma list of those.
        #[arg(long)]
        beta: String,
        #[arg(long, allow_hyphen_values = true)]
        gamma: String,
        #[arg(long, default_value_t = MAX_DEPTH)]
        depth: usize,
        /// Start state whose values are reported.
        #[arg(long)]
        state: Option<String>,
    },
    /// Mixing constants, contraction estimate and span-bound checks.
    Mixing {
        #[command(flatten)]
        model: Model,
        #[arg(long, allow_hyphen_values = true)]
        gamma: f64,
        /// Left end of the sampled risk range; defaults to `--gamma`.
        #[arg(long, allow_hyphen_values = true)]
        gamma0: Option<f64>,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 1)]
        n_steps: usize,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Discount factors at which to check the span bounds.
        #[arg(long)]
        verify: Option<String>,
    },
    /// Vanishing-discount and vanishing-risk quantities.
    Limits {
        #[command(subcommand)]
        which: LimitsCommand,
    },
    /// Moments of the discounted reward under a policy.
    Moments {
        #[command(flatten)]
        model: Model,
        #[command(flatten)]
        policy: PolicyArg,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        state: Option<String>,
        #[arg(long, default_value_t = 4)]
        order: usize,
        /// Truncation horizon; defaults to one that keeps every moment
        /// within a quarter of `--tol`.
        #[arg(long)]
        horizon: Option<usize>,
        /// Compare against this stationary rule in the moment order.
        #[arg(long)]
        versus: Option<String>,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// The two-state lottery example.
    Lottery {
        #[command(subcommand)]
        which: LotteryCommand,
    },
}

#[derive(Subcommand)]
enum LimitsCommand {
    /// `λ_n` and relative values against an anchor state, as CSV.
    Vanishing {
        #[command(flatten)]
        model: Model,
        #[arg(long, allow_hyphen_values = true)]
        gamma: f64,
        #[arg(long)]
        beta: String,
        #[arg(long, default_value = "0")]
        n: String,
        #[arg(long)]
        anchor: Option<String>,
        #[arg(long)]
        depth: Option<usize>,
    },
    /// Span distance to the risk-neutral value, as CSV.
    Distance {
        #[command(flatten)]
        model: Model,
        #[arg(long, allow_hyphen_values = true)]
        gamma: String,
        #[arg(long)]
        beta: String,
        #[arg(long)]
        depth: Option<usize>,
    },
    /// Stage-0 (or stage-1) rule of the discounted solve.
    Blackwell {
        #[command(flatten)]
        model: Model,
        #[arg(long, allow_hyphen_values = true)]
        gamma: f64,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..=1))]
        stage: u8,
    },
    /// Averaged per-step value of a stationary rule.
    Averaged {
        #[command(flatten)]
        model: Model,
        #[arg(long)]
        rule: String,
        #[arg(long, allow_hyphen_values = true)]
        gamma: f64,
        #[arg(long, default_value_t = limits::AVERAGED_MAX_ITERATIONS)]
        horizon: usize,
    },
    /// Risk range around zero with a certified stationary optimum.
    Threshold {
        #[command(flatten)]
        model: Model,
        #[arg(long)]
        beta: f64,
        #[arg(long, allow_hyphen_values = true)]
        probes: String,
        #[arg(long, default_value_t = MAX_DEPTH)]
        depth: usize,
    },
}

#[derive(Args)]
struct LotteryArgs {
    /// Reward of a winning draw; 7 unless a figure implies otherwise.
    #[arg(long = "R")]
    reward: Option<f64>,
    /// Uniform kernel smoothing.
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    /// Use the weights as printed instead of the table-consistent ones.
    #[arg(long)]
    printed_weights: bool,
}

impl LotteryArgs {
    fn spec(&self, default_reward: f64) -> LotterySpec {
        let convention = if self.printed_weights {
            WeightConvention::Printed
        } else {
            WeightConvention::WinProbability
        };
        LotterySpec {
            reward: self.reward.unwrap_or(default_reward),
            epsilon: self.epsilon,
            convention,
        }
    }
}

#[derive(Subcommand)]
enum LotteryCommand {
    /// Per-run constituents for the first ten runs, as CSV.
    Table {
        #[command(flatten)]
        lottery: LotteryArgs,
        #[arg(long, default_value_t = 0.95)]
        beta: f64,
        #[arg(long, allow_hyphen_values = true, default_value_t = -1.0)]
        gamma: f64,
    },
    /// Closed-form, greedy and solver values, as JSON.
    Values {
        #[command(flatten)]
        lottery: LotteryArgs,
        #[arg(long, default_value_t = 0.95)]
        beta: f64,
        #[arg(long, allow_hyphen_values = true, default_value_t = -1.0)]
        gamma: f64,
        /// Ladder depth; defaults to a band width of 1e-6.
        #[arg(long)]
        depth: Option<usize>,
    },
    /// The lottery as an MDP document, as JSON.
    Mdp {
        #[command(flatten)]
        lottery: LotteryArgs,
    },
    /// Data behind a figure, on a grid of the given step, as CSV.
    Sweep {
        #[command(flatten)]
        lottery: LotteryArgs,
        #[arg(long, value_parser = clap::value_parser!(u8).range(2..=5))]
        figure: u8,
        #[arg(long, default_value_t = 0.001)]
        step: f64,
        /// Step along beta; defaults to `--step`.
        #[arg(long)]
        beta_step: Option<f64>,
        #[arg(long, default_value_t = MAX_DEPTH)]
        depth: usize,
    },
}

enum Failure {
    Invalid(String),
    Uncertified(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Invalid(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Uncertified(msg)) => {
            eprintln!("not certified: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Outcome {
    configure_workers(cli.workers)?;
    let sink = Sink::new(cli.out_dir.clone())?;
    let strict = cli.require_certified;
    match cli.command {
        Command::Solve {
            model,
            beta,
            gamma,
            depth,
        } => solve(&sink, strict, &model, beta, gamma, depth),
        Command::Evaluate {
            model,
            policy,
            beta,
            gamma,
            depth,
        } => {
            let mdp = load(&model.mdp)?;
            let pi = policy_of(&mdp, &policy)?;
            let m = depth.unwrap_or_else(|| default_depth(&mdp, beta));
            let values = rsmdp_core::eval::evaluate_all(&mdp, &pi, gamma, beta, m)?;
            let rows: Vec<Value> = values
                .iter()
                .zip(mdp.states())
                .map(|(v, s)| json!({"state": s, "lo": v.lo, "hi": v.hi}))
                .collect();
            sink.json(
                "evaluate.json",
                json!({"beta": beta, "gamma": gamma, "depth": m, "values": rows}),
            )?;
            Ok(())
        }
        Command::Simulate {
            model,
            policy,
            beta,
            gamma,
            state,
            horizon,
            paths,
            seed,
        } => {
            let mdp = load(&model.mdp)?;
            let pi = policy_of(&mdp, &policy)?;
            let x0 = state_of(&mdp, state.as_deref())?;
            let r = rsmdp_core::simulate(
                &mdp,
                &pi,
                x0,
                gamma,
                beta,
                SimulationSpec {
                    horizon,
                    paths,
                    seed,
                },
            )?;
            let mut v = serde_json::to_value(r)?;
            extend(
                &mut v,
                json!({"beta": beta, "gamma": gamma, "state": mdp.states()[x0], "horizon": horizon, "paths": paths, "seed": seed}),
            );
            sink.json("simulate.json", v)?;
            Ok(())
        }
        Command::Turnpike {
            model,
            beta,
            gamma,
            depth,
        } => {
            let mdp = load(&model.mdp)?;
            let r = Solver::new(&mdp, beta)?.turnpike(gamma, depth)?;
            let values: Vec<Value> = r
                .values
                .iter()
                .zip(mdp.states())
                .map(|((lo, hi), s)| json!({"state": s, "lo": lo, "hi": hi}))
                .collect();
            sink.json(
                "turnpike.json",
                json!({
                    "beta": beta,
                    "gamma": gamma,
                    "depth": r.depth,
                    "turnpike": r.stage,
                    "certified": r.certified,
                    "head_rule": r.head_rule.label(&mdp),
                    "tail_rule": r.tail_rule.label(&mdp),
                    "tail_certified": r.tail_certified,
                    "values": values,
                }),
            )?;
            require(strict, r.certified && r.tail_certified, "turnpike")
        }
        Command::Sweep {
            model,
            beta,
            gamma,
            depth,
            state,
        } => {
            let mdp = load(&model.mdp)?;
            let x0 = state_of(&mdp, state.as_deref())?;
            let grid = rsmdp_core::sweep(&mdp, &list(&beta)?, &list(&gamma)?, depth, x0)?;
            sink.emit("sweep.csv", &csv_bytes(|b| grid.write_csv(&mdp, b))?)?;
            let bad = grid.records.iter().filter(|r| !r.certified).count();
            require(strict, bad == 0, &format!("{bad} grid point(s)"))
        }
        Command::Mixing {
            model,
            gamma,
            gamma0,
            beta,
            n_steps,
            trials,
            seed,
            verify,
        } => {
            let mdp = load(&model.mdp)?;
            let params = MixingParams {
                gamma,
                gamma0: gamma0.unwrap_or(gamma),
                beta,
                n_steps,
                trials,
                seed,
            };
            let report = mixing::mixing_report(&mdp, params)?;
            let mut v = serde_json::to_value(report)?;
            if let Some(betas) = verify {
                let rows = mixing::verify_span_bounds(&mdp, gamma, &report, &list(&betas)?, None)?;
                extend(&mut v, json!({"span_checks": rows}));
            }
            sink.json("mixing.json", v)?;
            Ok(())
        }
        Command::Limits { which } => limits_command(&sink, strict, which),
        Command::Moments {
            model,
            policy,
            beta,
            state,
            order,
            horizon,
            versus,
            tol,
        } => {
            let mdp = load(&model.mdp)?;
            let pi = policy_of(&mdp, &policy)?;
            let x0 = state_of(&mdp, state.as_deref())?;
            let horizon = horizon.unwrap_or_else(|| comparison_horizon(&mdp, beta, order, tol));
            let m = rsmdp_core::moments(&mdp, &pi, x0, beta, order, horizon)?;
            let mut v = serde_json::to_value(&m)?;
            extend(&mut v, json!({"beta": beta, "state": mdp.states()[x0]}));
            if let Some(other) = versus {
                if !pi.is_stationary() {
                    return Err(Failure::Invalid(
                        "--versus compares stationary rules only".into(),
                    ));
                }
                let rival = rule_of(&mdp, &other)?;
                let cmp = moment_compare(&mdp, pi.tail(), &rival, beta, order, tol)?;
                extend(
                    &mut v,
                    json!({"versus": rival.label(&mdp), "comparison": cmp[x0]}),
                );
            }
            sink.json("moments.json", v)?;
            Ok(())
        }
        Command::Lottery { which } => lottery_command(&sink, strict, which),
    }
}

fn solve(
    sink: &Sink,
    strict: bool,
    model: &Model,
    beta: f64,
    gamma: f64,
    depth: Option<usize>,
) -> Outcome {
    let mdp = load(&model.mdp)?;
    let m = depth.unwrap_or_else(|| default_depth(&mdp, beta));
    let r = Solver::new(&mdp, beta)?.solve(gamma, m)?;
    let values: Vec<Value> = (0..mdp.num_states())
        .map(|x| {
            let (lo, hi) = r.value_interval(x);
            json!({"state": mdp.states()[x], "lo": lo, "hi": hi})
        })
        .collect();
    let schedule: Vec<Value> = r
        .schedule
        .iter()
        .zip(&r.certified)
        .enumerate()
        .map(|(i, (rule, cert))| json!({"stage": i, "rule": rule.label(&mdp), "certified": cert}))
        .collect();
    let tail = r
        .tail
        .as_ref()
        .map(|t| json!({"rule": t.rule.label(&mdp), "from_stage": t.from_stage}));
    sink.json(
        "solve.json",
        json!({
            "beta": beta,
            "gamma": gamma,
            "depth": m,
            "band_width": r.bands.width(0),
            "values": values,
            "turnpike": {"stage": r.turnpike.stage, "exact": r.turnpike.exact},
            "tail": tail,
            "neutral_rule": r.neutral_rule.label(&mdp),
            "schedule": schedule,
        }),
    )?;
    require(strict, r.stage_certified(0), "stage-0 rule")
}

fn limits_command(sink: &Sink, strict: bool, which: LimitsCommand) -> Outcome {
    match which {
        LimitsCommand::Vanishing {
            model,
            gamma,
            beta,
            n,
            anchor,
            depth,
        } => {
            let mdp = load(&model.mdp)?;
            let anchor = state_of(&mdp, anchor.as_deref())?;
            let ns = list(&n)?
                .into_iter()
                .map(|v| {
                    if v >= 0.0 && v.fract() == 0.0 {
                        Ok(v as usize)
                    } else {
                        Err(format!("bad stage {v}"))
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            let rows =
                limits::vanishing_discount_table(&mdp, gamma, anchor, &list(&beta)?, &ns, depth)?;
            sink.emit(
                "vanishing.csv",
                &csv_bytes(|b| limits::write_vanishing_csv(&mdp, &rows, b))?,
            )?;
            Ok(())
        }
        LimitsCommand::Distance {
            model,
            gamma,
            beta,
            depth,
        } => {
            let mdp = load(&model.mdp)?;
            let rows = limits::risk_neutral_distance(&mdp, &list(&gamma)?, &list(&beta)?, depth)?;
            sink.emit(
                "distance.csv",
                &csv_bytes(|b| limits::write_distance_csv(&rows, b))?,
            )?;
            Ok(())
        }
        LimitsCommand::Blackwell {
            model,
            gamma,
            beta,
            depth,
            stage,
        } => {
            let mdp = load(&model.mdp)?;
            let stage = if stage == 0 {
                BlackwellStage::Zero
            } else {
                BlackwellStage::One
            };
            let b = limits::blackwell_rule(&mdp, gamma, beta, depth, stage)?;
            sink.json(
                "blackwell.json",
                json!({"beta": beta, "gamma": gamma, "rule": b.rule.label(&mdp), "stage": b.stage, "certified": b.certified}),
            )?;
            require(strict, b.certified, "Blackwell rule")
        }
        LimitsCommand::Averaged {
            model,
            rule,
            gamma,
            horizon,
        } => {
            let mdp = load(&model.mdp)?;
            let u = rule_of(&mdp, &rule)?;
            let a = limits::averaged_value(&mdp, &u, gamma, horizon)?;
            let mut v = serde_json::to_value(a)?;
            extend(&mut v, json!({"gamma": gamma, "rule": u.label(&mdp)}));
            sink.json("averaged.json", v)?;
            require(strict, a.converged, "averaged value")
        }
        LimitsCommand::Threshold {
            model,
            beta,
            probes,
            depth,
        } => {
            let mdp = load(&model.mdp)?;
            let b = limits::gamma_threshold(&mdp, beta, depth, &list(&probes)?)?;
            let found = b.is_some();
            let v = match b {
                Some(b) => {
                    json!({"beta": beta, "lo": b.lo, "hi": b.hi, "rule": b.rule.label(&mdp)})
                }
                None => json!({"beta": beta, "lo": null, "hi": null, "rule": null}),
            };
            sink.json("threshold.json", v)?;
            require(strict, found, "stationary bracket")
        }
    }
}

fn lottery_command(sink: &Sink, strict: bool, which: LotteryCommand) -> Outcome {
    match which {
        LotteryCommand::Table {
            lottery: l,
            beta,
            gamma,
        } => {
            let t = lottery::table1(&l.spec(7.0), gamma, beta)?;
            sink.emit("table1.csv", &csv_bytes(|b| t.write_csv(b))?)?;
            Ok(())
        }
        LotteryCommand::Values {
            lottery: l,
            beta,
            gamma,
            depth,
        } => {
            let spec = l.spec(7.0);
            let mdp = lottery::build(&spec)?;
            let m = depth.unwrap_or_else(|| default_depth(&mdp, beta));
            let r = Solver::new(&mdp, beta)?.solve(gamma, m)?;
            let stationary = lottery::closed_form_values(&spec, gamma, beta)?
                .into_iter()
                .map(|c| {
                    let iv =
                        rsmdp_core::evaluate(&mdp, &c.choice.rule().into(), 0, gamma, beta, m)?;
                    Ok(json!({
                        "rule": c.choice.label(),
                        "averaged": c.averaged,
                        "neutral_discounted": c.neutral_discounted,
                        "lo": iv.lo,
                        "hi": iv.hi,
                    }))
                })
                .collect::<Result<Vec<_>, Failure>>()?;
            let (runs, tail) = lottery::greedy_schedule(&spec, gamma, beta, lottery::TABLE_RUNS);
            let greedy = lottery::schedule_value(&spec, &runs, tail, gamma, beta)?;
            let (lo, hi) = r.value_interval(0);
            let decisions: Vec<&str> = r
                .schedule
                .iter()
                .step_by(2)
                .take(lottery::TABLE_RUNS)
                .map(|u| label_at(&mdp, u))
                .collect();
            sink.json(
                "values.json",
                json!({
                    "reward": spec.reward,
                    "beta": beta,
                    "gamma": gamma,
                    "depth": m,
                    "optimal": {"lo": lo, "hi": hi, "band_width": r.bands.width(0)},
                    "runs": decisions,
                    "run_turnpike": r.turnpike.stage.map(lottery::runs_of_steps),
                    "turnpike_exact": r.turnpike.exact,
                    "greedy": {
                        "runs": runs.iter().map(|c| c.label()).collect::<Vec<_>>(),
                        "tail": tail.label(),
                        "value": greedy,
                    },
                    "stationary": stationary,
                }),
            )?;
            require(strict, r.stage_certified(0), "stage-0 rule")
        }
        LotteryCommand::Mdp { lottery: l } => {
            let mut text = lottery::build(&l.spec(7.0))?.to_json()?;
            text.push('\n');
            sink.emit("lottery.json", text.as_bytes())?;
            Ok(())
        }
        LotteryCommand::Sweep {
            lottery: l,
            figure,
            step,
            beta_step,
            depth,
        } => {
            let (reward, kind) = lottery::figure_defaults(figure)?;
            let spec = l.spec(reward);
            let betas = rsmdp_core::format::grid(0.9, 0.995, beta_step.unwrap_or(step))?;
            let gammas = rsmdp_core::format::grid(-2.5, 2.5, step)?;
            let name = format!("figure{figure}.csv");
            match kind {
                FigureKind::Turnpike => {
                    let mdp = lottery::build(&spec)?;
                    let grid = rsmdp_core::sweep(&mdp, &betas, &gammas, depth, 0)?;
                    sink.emit(
                        &name,
                        &csv_bytes(|b| lottery::write_turnpike_csv(&mdp, &grid, b))?,
                    )?;
                    let bad = grid.records.iter().filter(|r| !r.certified).count();
                    return require(strict, bad == 0, &format!("{bad} grid point(s)"));
                }
                FigureKind::ValueCurves => {
                    sink.emit(
                        &name,
                        &csv_bytes(|b| lottery::write_value_curves_csv(&spec, &betas, &gammas, b))?,
                    )?;
                }
            }
            Ok(())
        }
    }
}

fn label_at<'a>(mdp: &'a Mdp, u: &DecisionRule) -> &'a str {
    mdp.actions()[u.action(0)].as_str()
}

fn require(strict: bool, ok: bool, what: &str) -> Outcome {
    if strict && !ok {
        Err(Failure::Uncertified(what.to_string()))
    } else {
        Ok(())
    }
}

fn extend(target: &mut Value, extra: Value) {
    if let (Value::Object(t), Value::Object(e)) = (target, extra) {
        t.extend(e);
    }
}

fn configure_workers(flag: Option<usize>) -> Result<(), Failure> {
    let env = match std::env::var("RSMDP_WORKERS") {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| format!("RSMDP_WORKERS='{v}' is not a count"))?,
        ),
        Err(_) => None,
    };
    let Some(n) = env.or(flag) else {
        return Ok(());
    };
    if n == 0 {
        return Err(Failure::Invalid("worker count must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()?;
    Ok(())
}

fn load(path: &Path) -> Result<Mdp, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(Mdp::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))?)
}

/// Comma-separated ranges and numbers, concatenated.
fn list(text: &str) -> Result<Vec<f64>, Failure> {
    let mut out = Vec::new();
    for part in text.split(',') {
        out.extend(parse_range(part)?);
    }
    Ok(out)
}

fn state_of(mdp: &Mdp, text: Option<&str>) -> Result<usize, Failure> {
    let Some(text) = text else {
        return Ok(0);
    };
    if let Some(x) = mdp.state_index(text) {
        return Ok(x);
    }
    match text.parse::<usize>() {
        Ok(x) if x < mdp.num_states() => Ok(x),
        _ => Err(Failure::Invalid(format!("unknown state '{text}'"))),
    }
}

fn rule_of(mdp: &Mdp, text: &str) -> Result<DecisionRule, Failure> {
    let labels: Vec<&str> = text.split([',', '|']).map(str::trim).collect();
    labels_to_rule(mdp, &labels)
}

fn labels_to_rule(mdp: &Mdp, labels: &[&str]) -> Result<DecisionRule, Failure> {
    let index = |l: &str| {
        mdp.action_index(l)
            .ok_or_else(|| Failure::Invalid(format!("unknown action '{l}'")))
    };
    match labels {
        [one] => Ok(DecisionRule::constant(mdp.num_states(), index(one)?)),
        many if many.len() == mdp.num_states() => Ok(DecisionRule::new(
            many.iter().map(|l| index(l)).collect::<Result<_, _>>()?,
        )),
        many => Err(Failure::Invalid(format!(
            "rule has {} labels for {} states",
            many.len(),
            mdp.num_states()
        ))),
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RuleDoc {
    Labels(Vec<String>),
    Text(String),
}

#[derive(Deserialize)]
struct PolicyDoc {
    #[serde(default)]
    head: Vec<RuleDoc>,
    tail: RuleDoc,
}

fn rule_doc(mdp: &Mdp, doc: &RuleDoc) -> Result<DecisionRule, Failure> {
    match doc {
        RuleDoc::Text(t) => rule_of(mdp, t),
        RuleDoc::Labels(ls) => {
            labels_to_rule(mdp, &ls.iter().map(String::as_str).collect::<Vec<_>>())
        }
    }
}

fn policy_of(mdp: &Mdp, arg: &PolicyArg) -> Result<MarkovPolicy, Failure> {
    if let Some(rule) = &arg.rule {
        return Ok(rule_of(mdp, rule)?.into());
    }
    let path = arg
        .policy
        .as_ref()
        .ok_or_else(|| Failure::Invalid("--rule or --policy is required".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let doc: PolicyDoc =
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let head = doc
        .head
        .iter()
        .map(|r| rule_doc(mdp, r))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MarkovPolicy::new(head, rule_doc(mdp, &doc.tail)?))
}
