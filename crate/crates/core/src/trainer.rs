//! Advantage policy-gradient training.
//!
//! Each iteration collects a batch of complete episodes with the current
//! stochastic policy (every episode gets fresh waypoints), discounts the
//! rewards into returns, subtracts a learned value baseline, and takes one
//! Adam step on the policy (with an entropy bonus) and one on the value
//! network.

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::env::{DoneReason, Episode, EpisodeConfig, InfoStyle, Task, TrainingStyle};
use crate::error::{Error, Result};
use crate::nn::{GaussianHead, LayerDims, Mlp, MlpGradients};
use crate::optim::{Adam, Optimizer};
use crate::par;
use crate::rng::{derive_seed, seeded, stream};

/// One of the five training-style x information-style combinations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct PolicyVariant(u8);

impl PolicyVariant {
    pub const ALL: [PolicyVariant; 5] = [
        PolicyVariant(1),
        PolicyVariant(2),
        PolicyVariant(3),
        PolicyVariant(4),
        PolicyVariant(5),
    ];

    pub fn new(id: u8) -> Result<Self> {
        if (1..=5).contains(&id) {
            Ok(PolicyVariant(id))
        } else {
            Err(Error::Config(format!("policy variant must be 1..=5, got {id}")))
        }
    }

    pub fn id(self) -> u8 {
        self.0
    }

    pub fn training_style(self) -> TrainingStyle {
        match self.0 {
            1 | 4 => TrainingStyle::SinglePoint,
            _ => TrainingStyle::RandomWaypoints,
        }
    }

    pub fn info_style(self) -> InfoStyle {
        match self.0 {
            1 | 2 => InfoStyle::StateOnly,
            3 => InfoStyle::StateNoise,
            _ => InfoStyle::StateGoal,
        }
    }
}

impl TryFrom<u8> for PolicyVariant {
    type Error = String;

    fn try_from(id: u8) -> std::result::Result<Self, String> {
        PolicyVariant::new(id).map_err(|e| e.to_string())
    }
}

impl From<PolicyVariant> for u8 {
    fn from(v: PolicyVariant) -> u8 {
        v.0
    }
}

impl Default for PolicyVariant {
    fn default() -> Self {
        PolicyVariant(5)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: PolicyVariant,
    /// Episode settings. The variant decides `training_style` and
    /// `info_style`; whatever is written here for those two is replaced.
    pub episode: EpisodeConfig,
    pub n_iterations: u64,
    pub episodes_per_batch: usize,
    pub gamma: f64,
    pub policy_lr: f64,
    pub value_lr: f64,
    pub entropy_coef: f64,
    pub seed: u64,
    pub policy_hidden: Vec<usize>,
    pub value_hidden: Vec<usize>,
    /// Write a checkpoint every this many iterations (0 disables).
    pub checkpoint_every: u64,
    /// Fan rollouts and gradient accumulation out over the thread pool.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: PolicyVariant::default(),
            episode: EpisodeConfig::default(),
            n_iterations: 300,
            episodes_per_batch: 8,
            gamma: 0.99,
            policy_lr: 3e-4,
            value_lr: 1e-3,
            entropy_coef: 0.01,
            seed: 0,
            policy_hidden: vec![128; 6],
            value_hidden: vec![64, 64],
            checkpoint_every: 50,
            parallel: true,
        }
    }
}

impl TrainConfig {
    /// Episode config with the variant's styles applied.
    pub fn resolved_episode(&self) -> EpisodeConfig {
        EpisodeConfig {
            training_style: self.variant.training_style(),
            info_style: self.variant.info_style(),
            ..self.episode.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.resolved_episode().validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must be in (0, 1], got {}", self.gamma));
        }
        if !(self.policy_lr > 0.0 && self.value_lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if !(self.entropy_coef >= 0.0 && self.entropy_coef.is_finite()) {
            return bad(format!("entropy_coef must be >= 0, got {}", self.entropy_coef));
        }
        if self.episodes_per_batch == 0 {
            return bad("episodes_per_batch must be at least 1".into());
        }
        if self.policy_hidden.contains(&0) || self.value_hidden.contains(&0) {
            return bad("hidden layer sizes must be at least 1".into());
        }
        Ok(())
    }

    pub fn hyper(&self) -> HyperParams {
        HyperParams {
            episodes_per_batch: self.episodes_per_batch,
            gamma: self.gamma,
            policy_lr: self.policy_lr,
            value_lr: self.value_lr,
            entropy_coef: self.entropy_coef,
            seed: self.seed,
            parallel: self.parallel,
        }
    }
}

/// The task-independent knobs of a [`Trainer`].
#[derive(Clone, Debug, PartialEq)]
pub struct HyperParams {
    pub episodes_per_batch: usize,
    pub gamma: f64,
    pub policy_lr: f64,
    pub value_lr: f64,
    pub entropy_coef: f64,
    pub seed: u64,
    pub parallel: bool,
}

/// Policy mean network, its Gaussian head, and the value baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorCritic {
    pub policy: Mlp,
    pub head: GaussianHead,
    pub value: Mlp,
}

impl ActorCritic {
    pub fn init(
        obs_dim: usize,
        action_dim: usize,
        policy_hidden: &[usize],
        value_hidden: &[usize],
        seed: u64,
    ) -> Result<Self> {
        let mut rng = seeded(derive_seed(seed, stream::INIT));
        let policy = Mlp::init(
            &LayerDims::new(obs_dim, policy_hidden.to_vec(), action_dim),
            &mut rng,
        )?;
        let value = Mlp::init(&LayerDims::new(obs_dim, value_hidden.to_vec(), 1), &mut rng)?;
        Ok(ActorCritic {
            policy,
            head: GaussianHead::new(action_dim),
            value,
        })
    }

    /// Mean action for `obs`.
    pub fn act_mean(&self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.policy.predict(obs)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        self.value.validate()?;
        if self.head.log_std.len() != self.policy.output_dim() {
            return Err(Error::Checkpoint(format!(
                "log_std has {} entries for {} actions",
                self.head.log_std.len(),
                self.policy.output_dim()
            )));
        }
        if self.value.output_dim() != 1 || self.value.input_dim() != self.policy.input_dim() {
            return Err(Error::Checkpoint("value network shape mismatch".into()));
        }
        if !self.head.log_std.iter().all(|v| v.is_finite()) {
            return Err(Error::Checkpoint("non-finite log_std".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub observation: Vec<f64>,
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub reward: f64,
    pub episode: usize,
    pub step: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSummary {
    pub steps: usize,
    pub total_reward: f64,
    pub waypoints_reached: usize,
    pub done_reason: Option<DoneReason>,
}

/// Complete episodes, stored back to back in time order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutBatch {
    pub steps: Vec<StepRecord>,
    pub episodes: Vec<EpisodeSummary>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Half-open step ranges of each episode.
    pub fn episode_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.episodes
            .iter()
            .map(|e| {
                let r = start..start + e.steps;
                start += e.steps;
                r
            })
            .collect()
    }
}

fn run_episode<T: Task>(
    model: &ActorCritic,
    task: &T,
    episode: usize,
    seed: u64,
) -> Result<(Vec<StepRecord>, EpisodeSummary)> {
    let mut rng = seeded(seed);
    let mut env = task.reset(&mut rng)?;
    let mut obs = env.observation()?;
    let mut records = Vec::new();
    let mut total = 0.0;
    loop {
        let mean = model.policy.predict(&obs)?;
        let (action, log_prob) = model.head.sample(&mean, &mut rng);
        let out = env.step(&action)?;
        total += out.reward;
        records.push(StepRecord {
            observation: std::mem::replace(&mut obs, out.observation),
            action,
            log_prob,
            reward: out.reward,
            episode,
            step: records.len(),
        });
        if out.done {
            let summary = EpisodeSummary {
                steps: records.len(),
                total_reward: total,
                waypoints_reached: env.waypoints_reached(),
                done_reason: out.done_reason,
            };
            return Ok((records, summary));
        }
    }
}

/// Runs `n_episodes` fresh episodes. Episode `i` is seeded from
/// `(batch_seed, i)`, so the batch does not depend on how the work is
/// scheduled.
pub fn collect_rollouts<T: Task>(
    model: &ActorCritic,
    task: &T,
    n_episodes: usize,
    batch_seed: u64,
    parallel: bool,
) -> Result<RolloutBatch> {
    let jobs: Vec<usize> = (0..n_episodes).collect();
    let results = par::map_ordered(jobs, parallel, |i| {
        run_episode(model, task, i, derive_seed(batch_seed, i as u64))
    });
    let mut batch = RolloutBatch::default();
    for r in results {
        let (steps, summary) = r?;
        batch.steps.extend(steps);
        batch.episodes.push(summary);
    }
    Ok(batch)
}

/// `G_t = r_t + gamma * G_{t+1}` over a single episode.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (g, r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *g = acc;
    }
    out
}

/// Shifts and scales to zero mean and unit standard deviation.
pub fn normalize(values: &mut [f64]) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    values.iter_mut().for_each(|v| *v = (*v - mean) / std);
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedBatch {
    pub batch: RolloutBatch,
    pub returns: Vec<f64>,
    pub values: Vec<f64>,
    /// Raw advantages `G_t - V(s_t)`.
    pub raw_advantages: Vec<f64>,
    /// Advantages normalized over the batch.
    pub advantages: Vec<f64>,
}

pub fn compute_returns_advantages(
    batch: RolloutBatch,
    gamma: f64,
    value: &Mlp,
) -> Result<AnnotatedBatch> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut returns = Vec::with_capacity(batch.len());
    for range in batch.episode_ranges() {
        let rewards: Vec<f64> = batch.steps[range].iter().map(|s| s.reward).collect();
        returns.extend(discounted_returns(&rewards, gamma));
    }
    let values = batch
        .steps
        .iter()
        .map(|s| Ok(value.predict(&s.observation)?[0]))
        .collect::<Result<Vec<f64>>>()?;
    let raw_advantages: Vec<f64> = returns.iter().zip(&values).map(|(g, v)| g - v).collect();
    let mut advantages = raw_advantages.clone();
    normalize(&mut advantages);
    Ok(AnnotatedBatch {
        batch,
        returns,
        values,
        raw_advantages,
        advantages,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub iteration: u64,
    pub env_steps: u64,
    pub mean_return: f64,
    pub mean_episode_len: f64,
    pub mean_waypoints: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

struct PartialGrads {
    policy: MlpGradients,
    log_std: Vec<f64>,
    value: MlpGradients,
    surrogate: f64,
    value_sq_err: f64,
}

/// Optimizer state for both networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub policy: Adam,
    pub value: Adam,
}

impl OptimizerState {
    pub fn new(policy_lr: f64, value_lr: f64) -> Self {
        OptimizerState {
            policy: Adam::new(policy_lr),
            value: Adam::new(value_lr),
        }
    }
}

/// Losses reported by [`update`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

/// One gradient step on both networks from an annotated batch.
///
/// Policy loss: `-mean(log_prob * advantage) - entropy_coef * entropy`.
/// Value loss: `mean((V(s) - G)^2)`.
pub fn update(
    model: &mut ActorCritic,
    data: &AnnotatedBatch,
    opt: &mut OptimizerState,
    entropy_coef: f64,
    parallel: bool,
    iteration: u64,
) -> Result<UpdateStats> {
    let n = data.batch.len();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let inv_n = 1.0 / n as f64;
    let snapshot: &ActorCritic = model;
    let chunks = data.batch.episode_ranges();
    let partials = par::map_ordered(chunks, parallel, |range| -> Result<PartialGrads> {
        let mut acc = PartialGrads {
            policy: MlpGradients::zeros_like(&snapshot.policy),
            log_std: vec![0.0; snapshot.head.log_std.len()],
            value: MlpGradients::zeros_like(&snapshot.value),
            surrogate: 0.0,
            value_sq_err: 0.0,
        };
        for i in range {
            let step = &data.batch.steps[i];
            let adv = data.advantages[i];

            let cache = snapshot.policy.forward(&step.observation)?;
            let mean = cache.output();
            let (g_mean, g_ls) = snapshot.head.log_prob_grad(mean, &step.action);
            acc.surrogate += snapshot.head.log_prob(mean, &step.action) * adv;
            let d_mean: Vec<f64> = g_mean.iter().map(|g| -adv * inv_n * g).collect();
            snapshot
                .policy
                .backward_accumulate(&cache, &d_mean, &mut acc.policy)?;
            acc.log_std
                .iter_mut()
                .zip(&g_ls)
                .for_each(|(a, g)| *a -= adv * inv_n * g);

            let vcache = snapshot.value.forward(&step.observation)?;
            let err = vcache.output()[0] - data.returns[i];
            acc.value_sq_err += err * err;
            snapshot
                .value
                .backward_accumulate(&vcache, &[2.0 * err * inv_n], &mut acc.value)?;
        }
        Ok(acc)
    });

    let mut total: Option<PartialGrads> = None;
    for p in partials {
        let p = p?;
        match total.as_mut() {
            None => total = Some(p),
            Some(t) => {
                t.policy.add_assign(&p.policy);
                t.value.add_assign(&p.value);
                t.log_std.iter_mut().zip(&p.log_std).for_each(|(a, b)| *a += b);
                t.surrogate += p.surrogate;
                t.value_sq_err += p.value_sq_err;
            }
        }
    }
    let mut total = total.expect("batch has at least one episode");
    // d(-c * H)/d log_std = -c per dimension
    total.log_std.iter_mut().for_each(|g| *g -= entropy_coef);

    let entropy = model.head.entropy();
    let stats = UpdateStats {
        policy_loss: -total.surrogate * inv_n - entropy_coef * entropy,
        value_loss: total.value_sq_err * inv_n,
        entropy,
    };

    let finite = |name: &str, ok: bool| {
        if ok {
            Ok(())
        } else {
            Err(Error::NonFiniteGradient {
                iteration,
                detail: format!(
                    "{name} gradient (policy loss {}, value loss {})",
                    stats.policy_loss, stats.value_loss
                ),
            })
        }
    };
    finite("policy", total.policy.is_finite())?;
    finite("log_std", total.log_std.iter().all(|g| g.is_finite()))?;
    finite("value", total.value.is_finite())?;

    let mut policy_grads = total.policy.tensors();
    policy_grads.push(&total.log_std);
    let mut policy_params = model.policy.tensors_mut();
    policy_params.push(&mut model.head.log_std);
    opt.policy.step(policy_params, &policy_grads);
    model.head.clamp();

    opt.value
        .step(model.value.tensors_mut(), &total.value.tensors());
    Ok(stats)
}

/// Training loop state over any [`Task`].
pub struct Trainer<T: Task> {
    pub task: T,
    pub hyper: HyperParams,
    pub model: ActorCritic,
    pub optimizer: OptimizerState,
    pub iteration: u64,
    pub env_steps: u64,
}

impl<T: Task> Trainer<T> {
    pub fn new(
        task: T,
        hyper: HyperParams,
        policy_hidden: &[usize],
        value_hidden: &[usize],
    ) -> Result<Self> {
        let model = ActorCritic::init(
            task.obs_dim(),
            task.action_dim(),
            policy_hidden,
            value_hidden,
            hyper.seed,
        )?;
        let optimizer = OptimizerState::new(hyper.policy_lr, hyper.value_lr);
        Ok(Trainer {
            task,
            hyper,
            model,
            optimizer,
            iteration: 0,
            env_steps: 0,
        })
    }

    fn batch_seed(&self) -> u64 {
        derive_seed(derive_seed(self.hyper.seed, stream::TRAIN), self.iteration)
    }

    /// Collect, annotate, update. Returns the metrics for this iteration;
    /// the rollout statistics describe the policy before the update.
    pub fn step(&mut self) -> Result<Metrics> {
        let batch = collect_rollouts(
            &self.model,
            &self.task,
            self.hyper.episodes_per_batch,
            self.batch_seed(),
            self.hyper.parallel,
        )?;
        let n_eps = batch.episodes.len() as f64;
        let mean_return = batch.episodes.iter().map(|e| e.total_reward).sum::<f64>() / n_eps;
        let mean_len = batch.episodes.iter().map(|e| e.steps as f64).sum::<f64>() / n_eps;
        let mean_wp = batch
            .episodes
            .iter()
            .map(|e| e.waypoints_reached as f64)
            .sum::<f64>()
            / n_eps;
        let steps = batch.len() as u64;

        let annotated = compute_returns_advantages(batch, self.hyper.gamma, &self.model.value)?;
        self.iteration += 1;
        let stats = update(
            &mut self.model,
            &annotated,
            &mut self.optimizer,
            self.hyper.entropy_coef,
            self.hyper.parallel,
            self.iteration,
        )?;
        self.env_steps += steps;
        Ok(Metrics {
            iteration: self.iteration,
            env_steps: self.env_steps,
            mean_return,
            mean_episode_len: mean_len,
            mean_waypoints: mean_wp,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
        })
    }
}

/// Receives progress from [`train`].
pub trait TrainObserver {
    fn on_iteration(&mut self, _metrics: &Metrics, _checkpoint: &dyn Fn() -> Checkpoint) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Collects the metrics history in memory.
impl TrainObserver for Vec<Metrics> {
    fn on_iteration(&mut self, metrics: &Metrics, _: &dyn Fn() -> Checkpoint) -> Result<()> {
        self.push(metrics.clone());
        Ok(())
    }
}

/// Builds a trainer for the waypoint task described by `config`.
pub fn trainer_for(config: &TrainConfig) -> Result<Trainer<EpisodeConfig>> {
    config.validate()?;
    Trainer::new(
        config.resolved_episode(),
        config.hyper(),
        &config.policy_hidden,
        &config.value_hidden,
    )
}

pub fn checkpoint_of(config: &TrainConfig, trainer: &Trainer<EpisodeConfig>) -> Checkpoint {
    Checkpoint::new(
        config.variant,
        trainer.task.clone(),
        trainer.model.clone(),
        trainer.iteration,
        trainer.env_steps,
        config.seed,
    )
}

/// Runs `config.n_iterations` iterations and returns the final checkpoint.
pub fn train(config: &TrainConfig, observer: &mut dyn TrainObserver) -> Result<Checkpoint> {
    let mut trainer = trainer_for(config)?;
    for _ in 0..config.n_iterations {
        let metrics = trainer.step()?;
        observer.on_iteration(&metrics, &|| checkpoint_of(config, &trainer))?;
    }
    Ok(checkpoint_of(config, &trainer))
}
