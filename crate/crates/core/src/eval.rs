//! Evaluation protocol: fixed waypoint test cases, repeated trials, success
//! ratios and trajectory export.
//!
//! Trials run through [`Env`], the same episode code used in training, with
//! the test case's waypoints in place of sampled ones. Test goals are used
//! verbatim, including those outside the training perimeter.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::env::{Env, Episode};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{derive_seed, seeded, stream, Rng};

pub const DEFAULT_TRIALS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub name: String,
    pub waypoints: Vec<[f64; 2]>,
    pub trials: usize,
}

impl TestCase {
    pub fn new(name: impl Into<String>, waypoints: Vec<[f64; 2]>) -> Self {
        TestCase {
            name: name.into(),
            waypoints,
            trials: DEFAULT_TRIALS,
        }
    }

    pub fn with_trials(mut self, trials: usize) -> Self {
        self.trials = trials;
        self
    }
}

/// Single-point cases 0..=6 followed by the three two-point paths.
pub fn builtin_suite() -> Vec<TestCase> {
    let single = [
        [10.0, 10.0],
        [14.0, 14.0],
        [12.0, 8.0],
        [8.0, 12.0],
        [13.0, 7.0],
        [7.0, 13.0],
        [6.0, 6.0],
    ];
    let two_point = [
        [[7.0, 7.0], [14.0, 14.0]],
        [[7.0, 12.0], [14.0, 14.0]],
        [[12.0, 7.0], [14.0, 14.0]],
    ];
    let mut suite: Vec<TestCase> = single
        .iter()
        .enumerate()
        .map(|(i, g)| TestCase::new(format!("single-{i}"), vec![*g]))
        .collect();
    suite.extend(
        two_point
            .iter()
            .enumerate()
            .map(|(i, p)| TestCase::new(format!("two-point-{}", i + 1), p.to_vec())),
    );
    suite
}

/// Parses `"x1,y1;x2,y2;..."`.
pub fn parse_waypoints(text: &str) -> Result<Vec<[f64; 2]>> {
    let bad = |m: String| Error::Config(format!("waypoints `{text}`: {m}"));
    let points = text
        .split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|pair| {
            let mut it = pair.split(',').map(|v| v.trim().parse::<f64>());
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(x)), Some(Ok(y)), None) if x.is_finite() && y.is_finite() => Ok([x, y]),
                _ => Err(bad(format!("cannot parse `{pair}` as x,y"))),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    if points.is_empty() {
        return Err(bad("no waypoints given".into()));
    }
    Ok(points)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub current_goal_x: f64,
    pub current_goal_y: f64,
    pub waypoints_reached: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialResult {
    pub success: bool,
    pub waypoints_reached: usize,
    /// Episode time at which each waypoint was reached.
    pub time_to_each: Vec<f64>,
    pub trajectory: Vec<TrajectorySample>,
}

fn sample(env: &Env) -> TrajectorySample {
    let b = &env.state().body;
    let g = env.goals().current();
    TrajectorySample {
        t: env.clock().t,
        x: b.x,
        y: b.y,
        yaw: b.yaw,
        current_goal_x: g[0],
        current_goal_y: g[1],
        waypoints_reached: env.reached(),
    }
}

/// One episode over the case's waypoints. With `deterministic` the policy
/// mean is applied; otherwise actions are sampled like in training.
pub fn run_trial(
    checkpoint: &Checkpoint,
    case: &TestCase,
    rng: &mut Rng,
    deterministic: bool,
) -> Result<TrialResult> {
    checkpoint.validate()?;
    let model = &checkpoint.model;
    let mut env = Env::with_waypoints(&checkpoint.episode, case.waypoints.clone(), rng)?;
    let mut trajectory = vec![sample(&env)];
    let mut time_to_each = Vec::new();
    let mut obs = env.observation()?;
    loop {
        let mean = model.act_mean(&obs)?;
        let action = if deterministic {
            mean
        } else {
            model.head.sample(&mean, rng).0
        };
        let out = env.step(&action)?;
        if out.hit {
            time_to_each.push(env.clock().t);
        }
        trajectory.push(sample(&env));
        if out.done {
            break;
        }
        obs = out.observation;
    }
    let reached = env.reached();
    Ok(TrialResult {
        success: reached == case.waypoints.len(),
        waypoints_reached: reached,
        time_to_each,
        trajectory,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuccessReport {
    pub case: TestCase,
    pub trials: Vec<TrialResult>,
    pub successes: usize,
    pub success_ratio: f64,
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Seed of trial `trial` of `case`; depends on nothing else.
pub fn trial_seed(seed: u64, case: &TestCase, trial: usize) -> u64 {
    let base = derive_seed(derive_seed(seed, stream::EVAL), name_hash(&case.name));
    derive_seed(base, trial as u64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    pub deterministic: bool,
    pub seed: u64,
    pub parallel: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            deterministic: false,
            seed: 0,
            parallel: true,
        }
    }
}

pub fn success_ratio(
    checkpoint: &Checkpoint,
    case: &TestCase,
    opts: &EvalOptions,
) -> Result<SuccessReport> {
    if case.trials == 0 {
        return Err(Error::Config(format!("case `{}` has zero trials", case.name)));
    }
    if case.waypoints.is_empty() {
        return Err(Error::Config(format!("case `{}` has no waypoints", case.name)));
    }
    let trials = par::map_ordered((0..case.trials).collect(), opts.parallel, |i| {
        let mut rng = seeded(trial_seed(opts.seed, case, i));
        run_trial(checkpoint, case, &mut rng, opts.deterministic)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let successes = trials.iter().filter(|t| t.success).count();
    Ok(SuccessReport {
        case: case.clone(),
        success_ratio: successes as f64 / trials.len() as f64,
        successes,
        trials,
    })
}

pub fn export_trajectory(result: &TrialResult, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for s in &result.trajectory {
        w.serialize(s).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct ReportRow<'a> {
    case: &'a str,
    trials: usize,
    successes: usize,
    ratio: f64,
}

pub fn write_reports(reports: &[SuccessReport], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for r in reports {
        w.serialize(ReportRow {
            case: &r.case.name,
            trials: r.trials.len(),
            successes: r.successes,
            ratio: r.success_ratio,
        })
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Plain-text table of reports.
pub fn format_table(reports: &[SuccessReport]) -> String {
    let mut out = format!(
        "{:<12} {:<28} {:>6} {:>9} {:>7}\n",
        "case", "waypoints", "trials", "successes", "ratio"
    );
    for r in reports {
        let path = r
            .case
            .waypoints
            .iter()
            .map(|[x, y]| format!("({x},{y})"))
            .collect::<Vec<_>>()
            .join(" -> ");
        out.push_str(&format!(
            "{:<12} {:<28} {:>6} {:>9} {:>6.0}%\n",
            r.case.name,
            path,
            r.trials.len(),
            r.successes,
            r.success_ratio * 100.0
        ));
    }
    out
}
