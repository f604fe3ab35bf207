//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! fails. Criteria can be selected by name, e.g.
//! `cargo test --release --test acceptance -- A4 A5`.

mod common;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;
use wayfarer::checkpoint::parse_config;
use wayfarer::env::{sample_waypoints, DoneReason, Env, Episode, EpisodeConfig, RewardWeights};
use wayfarer::eval::{self, builtin_suite, EvalOptions, SuccessReport, TestCase};
use wayfarer::rng::seeded;
use wayfarer::sim::AgentKind;
use wayfarer::trainer::{checkpoint_of, trainer_for};
use wayfarer::{Checkpoint, PolicyVariant, TrainConfig};

const POINT_MASS_PRESET: &str = include_str!("../../../configs/point-mass.json");
const ANT_PRESET: &str = include_str!("../../../configs/ant-proxy.json");

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Trained point-mass checkpoints, shared between A4 and A5.
#[derive(Default)]
struct Shared {
    point_mass: BTreeMap<u8, Checkpoint>,
}

impl Shared {
    fn point_mass(&mut self, variant: u8) -> &Checkpoint {
        self.point_mass.entry(variant).or_insert_with(|| {
            let mut cfg = parse_config(POINT_MASS_PRESET).expect("preset parses");
            cfg.variant = PolicyVariant::new(variant).unwrap();
            train_logged(&cfg, &format!("point-mass variant {variant}"))
        })
    }
}

fn train_logged(cfg: &TrainConfig, label: &str) -> Checkpoint {
    let start = Instant::now();
    let mut trainer = trainer_for(cfg).expect("valid config");
    for _ in 0..cfg.n_iterations {
        let m = trainer.step().expect("training step");
        if m.iteration.is_multiple_of(100) || m.iteration == cfg.n_iterations {
            println!(
                "    [{label}] iter {:>4}/{}  return {:>8.2}  waypoints {:.2}  ({:.0} s)",
                m.iteration,
                cfg.n_iterations,
                m.mean_return,
                m.mean_waypoints,
                start.elapsed().as_secs_f64()
            );
        }
    }
    checkpoint_of(cfg, &trainer)
}

const DET: EvalOptions = EvalOptions {
    deterministic: true,
    seed: 0,
    parallel: true,
};

fn case0() -> TestCase {
    builtin_suite().remove(0)
}

fn two_point() -> TestCase {
    builtin_suite()
        .into_iter()
        .find(|c| c.waypoints == vec![[7.0, 12.0], [14.0, 14.0]])
        .unwrap()
}

fn ratio(ckpt: &Checkpoint, case: &TestCase) -> f64 {
    eval::success_ratio(ckpt, &case.clone().with_trials(20), &DET)
        .expect("evaluation")
        .success_ratio
}

fn within(elapsed: Duration, limit: Duration) -> (bool, String) {
    (
        elapsed < limit,
        format!("{:.1} s (limit {} s)", elapsed.as_secs_f64(), limit.as_secs()),
    )
}

// A1 ---------------------------------------------------------------------

fn gradient_fidelity(_: &mut Shared) -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let (net, x, g) = common::random_case(seed);
        worst = worst.max(common::worst_error(&net, &x, &g));
    }
    let (fast, time) = within(start.elapsed(), Duration::from_secs(10));
    outcome(
        worst < common::REL_TOL && fast,
        format!("worst relative error {worst:.2e} over 100 networks; {time}"),
    )
}

// A2 ---------------------------------------------------------------------

fn steer(env: &Env) -> Vec<f64> {
    let b = &env.state().body;
    let g = env.goals().current();
    vec![
        (0.8 * (g[0] - b.x) - 1.2 * b.vx).clamp(-1.0, 1.0),
        (0.8 * (g[1] - b.y) - 1.2 * b.vy).clamp(-1.0, 1.0),
    ]
}

fn curriculum_law(_: &mut Shared) -> Outcome {
    let start = Instant::now();
    let cfg = EpisodeConfig {
        agent_kind: AgentKind::PointMass,
        ..EpisodeConfig::default()
    };
    let mut failures = Vec::new();

    let mut rng = seeded(2024);
    let mut outside = 0;
    for _ in 0..100_000 {
        let q = sample_waypoints(&cfg.perimeter, 1, &mut rng).unwrap();
        let [x, y] = q.waypoints[0];
        if !((7.5..=12.5).contains(&x) && (7.5..=12.5).contains(&y)) {
            outside += 1;
        }
    }
    if outside > 0 {
        failures.push(format!("{outside} sampled waypoints outside the perimeter"));
    }

    // no hits: still running at t = 10, over at the first step past it
    let mut env = Env::reset(&cfg, &mut seeded(1)).unwrap();
    let mut steps = 0;
    loop {
        let out = env.step(&[0.0, 0.0]).unwrap();
        steps += 1;
        if out.done {
            break;
        }
    }
    let t = env.clock().t;
    if !(t > 10.0 && t - cfg.dynamics.dt <= 10.0 && env.done_reason() == Some(DoneReason::Timeout)) {
        failures.push(format!("idle episode ended at t={t} after {steps} steps"));
    }

    // four hits: deadlines 20, 30, 40, then done
    let path = vec![[9.0, 9.0], [11.0, 9.5], [11.5, 11.5], [8.5, 11.0]];
    let mut env = Env::with_waypoints(&cfg, path, &mut seeded(1)).unwrap();
    let mut deadlines = Vec::new();
    let reason = loop {
        let out = env.step(&steer(&env)).unwrap();
        if out.hit {
            deadlines.push(env.clock().deadline);
        }
        if out.done {
            break out.done_reason;
        }
    };
    if deadlines[..deadlines.len().min(3)] != [20.0, 30.0, 40.0] || deadlines.len() != 4 {
        failures.push(format!("deadlines after hits: {deadlines:?}"));
    }
    if reason != Some(DoneReason::AllWaypointsReached) {
        failures.push(format!("fourth hit ended the episode with {reason:?}"));
    }

    let (fast, time) = within(start.elapsed(), Duration::from_secs(5));
    if failures.is_empty() {
        outcome(
            fast,
            format!("1e5 waypoints inside, timeout at t={t:.2}, deadlines {deadlines:?}, all-waypoints-reached; {time}"),
        )
    } else {
        outcome(false, failures.join("; "))
    }
}

// A3 ---------------------------------------------------------------------

fn determinism(_: &mut Shared) -> Outcome {
    let start = Instant::now();
    let cfg = TrainConfig {
        n_iterations: 50,
        seed: 31,
        parallel: false,
        ..TrainConfig::default()
    };
    let run = || {
        let mut t = trainer_for(&cfg).unwrap();
        for _ in 0..cfg.n_iterations {
            t.step().unwrap();
        }
        checkpoint_of(&cfg, &t)
    };
    let (a, b) = (run(), run());
    let same_ckpt = a.to_json().unwrap() == b.to_json().unwrap();

    let case = two_point().with_trials(4);
    let stochastic = EvalOptions {
        deterministic: false,
        seed: 5,
        parallel: false,
    };
    let ra = eval::success_ratio(&a, &case, &stochastic).unwrap();
    let rb = eval::success_ratio(&b, &case, &EvalOptions { parallel: true, ..stochastic }).unwrap();
    let same_traj = ra.trials.iter().zip(&rb.trials).all(|(x, y)| {
        x.trajectory.len() == y.trajectory.len()
            && x.trajectory.iter().zip(&y.trajectory).all(|(p, q)| {
                p.x.to_bits() == q.x.to_bits()
                    && p.y.to_bits() == q.y.to_bits()
                    && p.yaw.to_bits() == q.yaw.to_bits()
                    && p.t.to_bits() == q.t.to_bits()
            })
    });
    let (fast, time) = within(start.elapsed(), Duration::from_secs(120));
    outcome(
        same_ckpt && same_traj && fast,
        format!(
            "checkpoints after 50 iterations identical: {same_ckpt}; eval trajectories identical: {same_traj}; {time}"
        ),
    )
}

// A4 ---------------------------------------------------------------------

fn point_mass_learning(shared: &mut Shared) -> Outcome {
    let start = Instant::now();
    let ckpt = shared.point_mass(5).clone();
    let r0 = ratio(&ckpt, &case0());
    let r2 = ratio(&ckpt, &two_point());
    outcome(
        r0 >= 0.9 && r2 >= 0.7,
        format!(
            "case 0 (10,10): {r0:.2} (need >= 0.9); (7,12)->(14,14): {r2:.2} (need >= 0.7); {} iterations x {} episodes; {:.0} s",
            ckpt.iteration,
            parse_config(POINT_MASS_PRESET).unwrap().episodes_per_batch,
            start.elapsed().as_secs_f64()
        ),
    )
}

// A5 ---------------------------------------------------------------------

fn ablation_ordering(shared: &mut Shared) -> Outcome {
    let start = Instant::now();
    let case = two_point();
    let r: BTreeMap<u8, f64> = (1..=5)
        .map(|v| (v, ratio(shared.point_mass(v), &case)))
        .collect();
    let pass = r[&1] <= 0.1 && r[&2] <= 0.1 && r[&4] <= 0.1 && r[&5] >= 0.7 && r[&3] <= r[&2];
    let (fast, time) = within(start.elapsed(), Duration::from_secs(3600));
    outcome(
        pass && fast,
        format!(
            "(7,12)->(14,14) by variant: 1={:.2} 2={:.2} 3={:.2} 4={:.2} 5={:.2}; {time}",
            r[&1], r[&2], r[&3], r[&4], r[&5]
        ),
    )
}

// A6 ---------------------------------------------------------------------

fn ant_learning(_: &mut Shared) -> Outcome {
    let start = Instant::now();
    let cfg = parse_config(ANT_PRESET).expect("preset parses");
    if cfg.n_iterations > 3000 {
        return outcome(false, "preset exceeds the 3000-iteration budget");
    }
    let ckpt = train_logged(&cfg, "ant-proxy variant 5");
    let reports: Vec<SuccessReport> = builtin_suite()
        .into_iter()
        .map(|c| eval::success_ratio(&ckpt, &c, &DET).expect("evaluation"))
        .collect();
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let path = dir.join("reports.csv");
    eval::write_reports(&reports, &path).expect("writing reports");
    ckpt.save(&dir.join("ant-proxy.json")).expect("saving checkpoint");
    for line in eval::format_table(&reports).lines() {
        println!("    {line}");
    }
    let r0 = reports[0].success_ratio;
    outcome(
        r0 >= 0.5,
        format!(
            "case 0 (10,10): {r0:.2} (need >= 0.5) after {} iterations; full table in {}; {:.0} s",
            ckpt.iteration,
            path.display(),
            start.elapsed().as_secs_f64()
        ),
    )
}

// A7 ---------------------------------------------------------------------

fn telescoping_reward(_: &mut Shared) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for agent in [AgentKind::PointMass, AgentKind::AntProxy] {
        let cfg = TrainConfig {
            episode: EpisodeConfig {
                agent_kind: agent,
                reward: RewardWeights {
                    w_energy: 0.0,
                    hit_bonus: 0.0,
                },
                ..EpisodeConfig::default()
            },
            policy_hidden: vec![16, 16],
            ..TrainConfig::default()
        };
        let model = trainer_for(&cfg).unwrap().model;
        let episode = cfg.resolved_episode();
        for seed in 0..50u64 {
            let mut rng = seeded(seed);
            let goal = [rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0)];
            let mut env = Env::with_waypoints(&episode, vec![goal], &mut rng).unwrap();
            let d0 = env.state().body.distance_to(goal);
            let mut sum = 0.0;
            loop {
                let obs = env.observation().unwrap();
                let mean = model.act_mean(&obs).unwrap();
                let (action, _) = model.head.sample(&mean, &mut rng);
                let out = env.step(&action).unwrap();
                sum += out.reward * episode.dynamics.dt;
                // the sum telescopes only while the goal stays fixed
                if out.done || out.hit {
                    break;
                }
            }
            let dn = env.state().body.distance_to(goal);
            worst = worst.max((sum - (d0 - dn)).abs());
            n += 1;
        }
    }
    outcome(
        worst < 1e-9,
        format!("max |sum(r dt) - (d0 - dn)| = {worst:.2e} over {n} trajectories"),
    )
}

// -----------------------------------------------------------------------

type Criterion = fn(&mut Shared) -> Outcome;

fn main() -> ExitCode {
    let criteria: [(&str, &str, Criterion); 7] = [
        ("A1", "gradient fidelity", gradient_fidelity),
        ("A2", "curriculum law", curriculum_law),
        ("A3", "determinism", determinism),
        ("A4", "point-mass learning", point_mass_learning),
        ("A5", "ablation ordering", ablation_ordering),
        ("A6", "ant-proxy learning (soft)", ant_learning),
        ("A7", "telescoping reward", telescoping_reward),
    ];
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut shared = Shared::default();
    let mut lines = Vec::new();
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| f == id) {
            continue;
        }
        println!("{id} {name} ...");
        let o = check(&mut shared);
        let line = format!("{} {id} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        println!("{line}");
        if !o.pass {
            failed += 1;
        }
        lines.push(line);
    }
    println!("\nacceptance summary");
    for line in &lines {
        println!("{line}");
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion/criteria failed");
        ExitCode::FAILURE
    }
}
