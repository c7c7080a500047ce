//! Clipped-surrogate policy-gradient training over join-ordering episodes.
//!
//! Experience is recorded per decision. With a terminal-only reward and no
//! discounting every step's return is the episode reward, and its advantage
//! is that reward minus the value estimate recorded when the step was taken.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, DP_MAX_RELATIONS};
use crate::catalog::Catalog;
use crate::env::{Action, EnvConfig, JoinEnv, RewardMode};
use crate::error::{Error, Result};
use crate::jointree::JoinTree;
use crate::nn::{adam_step, masked_softmax, AdamState, DenseNet, DEFAULT_HIDDEN};
use crate::query::JoinQuery;

/// One decision of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state_vector: Vec<f64>,
    pub mask: Vec<bool>,
    pub action: usize,
    pub log_prob_old: f64,
    pub value_old: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub terminal_reward: f64,
    pub query_id: String,
    /// Relations in the query; a complete trajectory has one step fewer.
    pub num_relations: usize,
    pub final_tree: JoinTree,
    pub final_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub clip_eps: f64,
    pub lr: f64,
    pub epochs_per_update: usize,
    pub episodes_per_batch: usize,
    /// Steps per gradient step within an epoch; 0 uses the whole batch.
    pub minibatch_size: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub discount: f64,
    pub total_episodes: usize,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            lr: 3e-4,
            epochs_per_update: 4,
            episodes_per_batch: 32,
            minibatch_size: 64,
            entropy_coef: 0.01,
            value_coef: 0.5,
            discount: 1.0,
            total_episodes: 5000,
            hidden: DEFAULT_HIDDEN.to_vec(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return fail("clip_eps must lie in (0, 1)");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr must be positive");
        }
        if self.discount != 1.0 {
            return fail("discount is fixed at 1");
        }
        if self.epochs_per_update == 0 || self.episodes_per_batch == 0 {
            return fail("epochs_per_update and episodes_per_batch must be positive");
        }
        if !(self.entropy_coef >= 0.0 && self.value_coef >= 0.0) {
            return fail("loss coefficients must be non-negative");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return fail("hidden layer sizes must be positive");
        }
        Ok(())
    }
}

/// Plays one episode, sampling every action from the policy.
pub fn collect_episode(
    catalog: &Catalog,
    query: &JoinQuery,
    config: &EnvConfig,
    net: &DenseNet,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    let env = JoinEnv::new(catalog, query, *config)?;
    run_episode(env, net, Some(rng))
}

/// Plays one episode taking the most probable action at every step.
pub fn decode_greedy(
    catalog: &Catalog,
    query: &JoinQuery,
    config: &EnvConfig,
    net: &DenseNet,
) -> Result<Trajectory> {
    let env = JoinEnv::new(catalog, query, *config)?;
    run_episode::<ChaCha8Rng>(env, net, None)
}

/// Plans `query` by greedy decoding without computing any reference plan;
/// the trajectory's reward is the reciprocal cost.
pub fn infer_plan(catalog: &Catalog, query: &JoinQuery, n_max: usize, net: &DenseNet) -> Result<Trajectory> {
    let config = EnvConfig {
        n_max,
        reward_mode: RewardMode::Reciprocal,
    };
    let env = JoinEnv::with_reference(catalog, query, config, 1.0)?;
    run_episode::<ChaCha8Rng>(env, net, None)
}

fn run_episode<R: Rng>(mut env: JoinEnv<'_>, net: &DenseNet, mut rng: Option<&mut R>) -> Result<Trajectory> {
    let n_max = env.config().n_max;
    let mut steps = Vec::with_capacity(env.query().num_relations().saturating_sub(1));
    let mut reward = 0.0;
    while !env.state().is_terminal() {
        let state_vector = env.observe()?.flatten();
        let mask = env.mask();
        let (logits, value) = net.forward(&state_vector)?;
        let dist = masked_softmax(&logits, &mask)?;
        let action = match rng.as_deref_mut() {
            Some(rng) => dist.sample(rng)?,
            None => dist.mode(),
        };
        let log_prob_old = dist.log_prob(action)?;
        reward = env.step(Action::from_slot(action, n_max))?;
        steps.push(Step {
            state_vector,
            mask,
            action,
            log_prob_old,
            value_old: value,
        });
    }
    let final_tree = env.state().final_tree().expect("terminal").clone();
    let final_cost = env.final_cost().expect("terminal");
    Ok(Trajectory {
        steps,
        terminal_reward: reward,
        query_id: env.query().id.clone(),
        num_relations: env.query().num_relations(),
        final_tree,
        final_cost,
    })
}

/// `(return, advantage)` for every step of a finished trajectory.
pub fn returns_and_advantages(traj: &Trajectory) -> Result<Vec<(f64, f64)>> {
    if traj.num_relations < 2 || traj.steps.len() != traj.num_relations - 1 {
        return Err(Error::InvalidQuery(format!(
            "trajectory for {} has {} steps over {} relations",
            traj.query_id,
            traj.steps.len(),
            traj.num_relations
        )));
    }
    if !traj.terminal_reward.is_finite() {
        return Err(Error::NonFinite("reward"));
    }
    Ok(traj
        .steps
        .iter()
        .map(|s| (traj.terminal_reward, traj.terminal_reward - s.value_old))
        .collect())
}

/// A step with its (already normalized) advantage and return attached.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<'a> {
    pub step: &'a Step,
    pub advantage: f64,
    pub ret: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total: f64,
}

/// PPO loss over `samples` and its gradient with respect to the parameters.
pub fn ppo_loss_and_grad(
    net: &DenseNet,
    samples: &[Sample<'_>],
    config: &TrainConfig,
) -> Result<(LossParts, Vec<f64>)> {
    ppo_loss_impl(net, samples, config, true).map(|(l, g)| (l, g.expect("gradient requested")))
}

pub fn ppo_loss(net: &DenseNet, samples: &[Sample<'_>], config: &TrainConfig) -> Result<LossParts> {
    ppo_loss_impl(net, samples, config, false).map(|(l, _)| l)
}

fn ppo_loss_impl(
    net: &DenseNet,
    samples: &[Sample<'_>],
    config: &TrainConfig,
    with_grad: bool,
) -> Result<(LossParts, Option<Vec<f64>>)> {
    if samples.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let n = samples.len() as f64;
    let (lo, hi) = (1.0 - config.clip_eps, 1.0 + config.clip_eps);
    let mut grads = with_grad.then(|| net.zero_grad());
    let mut parts = LossParts::default();
    let mut d_logits = vec![0.0; net.action_dim()];
    for s in samples {
        let pass = net.forward_pass(&s.step.state_vector)?;
        let dist = masked_softmax(&pass.logits, &s.step.mask)?;
        let p = dist.probs();
        let lp = dist.log_prob(s.step.action)?;
        let ratio = (lp - s.step.log_prob_old).exp();
        let unclipped = ratio * s.advantage;
        let clipped = ratio.clamp(lo, hi) * s.advantage;
        let surrogate = unclipped.min(clipped);
        let entropy = dist.entropy();
        let err = pass.value - s.ret;
        parts.surrogate += surrogate / n;
        parts.value_loss += err * err / n;
        parts.entropy += entropy / n;

        let Some(grads) = grads.as_mut() else { continue };
        // The min takes the unclipped branch whenever it is not larger.
        let surr_scale = if unclipped <= clipped { -unclipped } else { 0.0 };
        for (j, d) in d_logits.iter_mut().enumerate() {
            *d = 0.0;
            if !s.step.mask[j] {
                continue;
            }
            let pj = p[j];
            let onehot = if j == s.step.action { 1.0 } else { 0.0 };
            *d += surr_scale * (onehot - pj);
            if pj > 0.0 {
                *d += config.entropy_coef * pj * (pj.ln() + entropy);
            }
            *d /= n;
        }
        let d_value = 2.0 * config.value_coef * err / n;
        net.accumulate_backward(&pass, &d_logits, d_value, grads)?;
    }
    parts.total = -parts.surrogate + config.value_coef * parts.value_loss
        - config.entropy_coef * parts.entropy;
    if !parts.total.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    Ok((parts, grads))
}

/// Loss terms seen on the first pass of an update, before any step is taken.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub steps: usize,
}

/// Normalizes advantages to mean 0 and standard deviation 1 (centered only
/// when they are all equal).
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a -= mean;
        if std > 1e-8 {
            *a /= std;
        }
    }
}

/// Runs `epochs_per_update` passes of Adam over the batch.
///
/// On a non-finite loss or gradient the update stops with an error; steps
/// already applied in earlier minibatches stay applied.
pub fn ppo_update(
    net: &mut DenseNet,
    optimizer: &mut AdamState,
    batch: &[Trajectory],
    config: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<UpdateStats> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let mut steps = Vec::new();
    let mut advantages = Vec::new();
    let mut returns = Vec::new();
    for traj in batch {
        for (step, (ret, adv)) in traj.steps.iter().zip(returns_and_advantages(traj)?) {
            steps.push(step);
            returns.push(ret);
            advantages.push(adv);
        }
    }
    normalize_advantages(&mut advantages);
    let samples: Vec<Sample<'_>> = steps
        .iter()
        .zip(advantages.iter().zip(&returns))
        .map(|(&step, (&advantage, &ret))| Sample {
            step,
            advantage,
            ret,
        })
        .collect();

    let chunk = match config.minibatch_size {
        0 => samples.len(),
        m => m.min(samples.len()),
    };
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut acc = UpdateStats {
        surrogate: 0.0,
        value_loss: 0.0,
        entropy: 0.0,
        steps: samples.len(),
    };
    for epoch in 0..config.epochs_per_update {
        if chunk < samples.len() {
            order.shuffle(rng);
        }
        for idx in order.chunks(chunk) {
            let mb: Vec<Sample<'_>> = idx.iter().map(|&i| samples[i].clone()).collect();
            let (parts, grads) = ppo_loss_and_grad(net, &mb, config)?;
            if epoch == 0 {
                let w = mb.len() as f64 / samples.len() as f64;
                acc.surrogate += parts.surrogate * w;
                acc.value_loss += parts.value_loss * w;
                acc.entropy += parts.entropy * w;
            }
            adam_step(net, &grads, optimizer, config.lr)?;
        }
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub query_id: String,
    pub reward: f64,
    pub cost: f64,
    pub ratio_vs_greedy: f64,
    pub ratio_vs_dp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub update: usize,
    pub episodes_seen: usize,
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricRecord {
    Episode(EpisodeRecord),
    Update(UpdateRecord),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainMetrics {
    pub episodes: Vec<EpisodeRecord>,
    pub updates: Vec<UpdateRecord>,
    /// Wall time of each update in milliseconds, kept apart from the records
    /// so those stay reproducible.
    pub update_wall_ms: Vec<f64>,
}

pub struct TrainOutcome {
    pub net: DenseNet,
    pub optimizer: AdamState,
    pub metrics: TrainMetrics,
}

struct QueryRefs {
    greedy: f64,
    dp: Option<f64>,
}

/// Trains a fresh policy on `workload`, picking a uniformly random query for
/// each episode. Every metrics row is also passed to `sink` as it is produced.
pub fn train(
    catalog: &Catalog,
    workload: &[JoinQuery],
    env_config: &EnvConfig,
    config: &TrainConfig,
    sink: &mut dyn FnMut(&MetricRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    env_config.validate()?;
    if workload.is_empty() && config.total_episodes > 0 {
        return Err(Error::Empty("workload"));
    }
    for q in workload {
        env_config.check_fits(q)?;
    }
    let input_dim = env_config.state_dim(catalog);
    let mut net = DenseNet::new(input_dim, &config.hidden, env_config.num_action_slots(), config.seed);
    let mut optimizer = AdamState::new(net.num_params());
    let mut metrics = TrainMetrics::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let mut refs: Vec<Option<QueryRefs>> = workload.iter().map(|_| None).collect();
    let mut batch = Vec::with_capacity(config.episodes_per_batch);
    for episode in 0..config.total_episodes {
        let qi = rng.random_range(0..workload.len());
        let query = &workload[qi];
        if refs[qi].is_none() {
            refs[qi] = Some(QueryRefs {
                greedy: baselines::greedy(query, catalog)?.total_cost,
                dp: if query.num_relations() <= DP_MAX_RELATIONS {
                    Some(baselines::dp_optimal(query, catalog)?.total_cost)
                } else {
                    None
                },
            });
        }
        let r = refs[qi].as_ref().expect("filled above");
        let env = JoinEnv::with_reference(catalog, query, *env_config, r.greedy)?;
        let traj = run_episode(env, &net, Some(&mut rng))?;
        let record = EpisodeRecord {
            episode: episode + 1,
            query_id: traj.query_id.clone(),
            reward: traj.terminal_reward,
            cost: traj.final_cost,
            ratio_vs_greedy: traj.final_cost / r.greedy,
            ratio_vs_dp: r.dp.map(|d| traj.final_cost / d),
        };
        sink(&MetricRecord::Episode(record.clone()))?;
        metrics.episodes.push(record);
        batch.push(traj);

        if batch.len() == config.episodes_per_batch || episode + 1 == config.total_episodes {
            let start = Instant::now();
            let stats = ppo_update(&mut net, &mut optimizer, &batch, config, &mut rng)?;
            metrics.update_wall_ms.push(start.elapsed().as_secs_f64() * 1e3);
            let record = UpdateRecord {
                update: metrics.updates.len() + 1,
                episodes_seen: episode + 1,
                surrogate: stats.surrogate,
                value_loss: stats.value_loss,
                entropy: stats.entropy,
            };
            sink(&MetricRecord::Update(record.clone()))?;
            metrics.updates.push(record);
            batch.clear();
        }
    }
    Ok(TrainOutcome {
        net,
        optimizer,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{generate_catalog, CatalogSpec};
    use crate::query::{generate_mixed_workload, generate_workload, parse_query, Shape};

    fn setup(q: (usize, usize), count: usize) -> (Catalog, Vec<JoinQuery>) {
        let cat = generate_catalog(5, CatalogSpec::default()).unwrap();
        let w = generate_mixed_workload(&cat, 6, &[Shape::Chain, Shape::Star], q, count).unwrap();
        (cat, w)
    }

    fn small_net(cat: &Catalog, cfg: &EnvConfig, seed: u64) -> DenseNet {
        DenseNet::new(cfg.state_dim(cat), &[16, 16], cfg.num_action_slots(), seed)
    }

    fn step(value_old: f64) -> Step {
        Step {
            state_vector: vec![0.0],
            mask: vec![true, true],
            action: 0,
            log_prob_old: -0.5,
            value_old,
        }
    }

    fn traj(values: &[f64], reward: f64) -> Trajectory {
        Trajectory {
            steps: values.iter().map(|&v| step(v)).collect(),
            terminal_reward: reward,
            query_id: "t".into(),
            num_relations: values.len() + 1,
            final_tree: JoinTree::leaf("A"),
            final_cost: 1.0,
        }
    }

    #[test]
    fn episode_lengths_and_legality() {
        let (cat, _) = setup((4, 4), 1);
        let cfg = EnvConfig::default();
        let net = small_net(&cat, &cfg, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for q in [2, 4, 7] {
            let w = generate_workload(&cat, q as u64, Shape::Chain, (q, q), 3).unwrap();
            for query in &w {
                let t = collect_episode(&cat, query, &cfg, &net, &mut rng).unwrap();
                assert_eq!(t.steps.len(), q - 1);
                assert!(t.terminal_reward > 0.0);
                assert_eq!(t.final_tree.num_leaves(), q);
                for s in &t.steps {
                    assert!(s.mask[s.action]);
                    assert!(s.log_prob_old.is_finite() && s.log_prob_old <= 0.0);
                }
                if q == 2 {
                    let a = Action::from_slot(t.steps[0].action, cfg.n_max);
                    assert!(a == Action::new(1, 2) || a == Action::new(2, 1));
                }
            }
        }
    }

    #[test]
    fn collection_is_deterministic() {
        let (cat, w) = setup((5, 6), 4);
        let cfg = EnvConfig::default();
        let net = small_net(&cat, &cfg, 9);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            w.iter()
                .map(|q| collect_episode(&cat, q, &cfg, &net, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn greedy_decoding_repeats() {
        let (cat, w) = setup((6, 6), 2);
        let cfg = EnvConfig::default();
        let net = small_net(&cat, &cfg, 2);
        for q in &w {
            let a = decode_greedy(&cat, q, &cfg, &net).unwrap();
            let b = decode_greedy(&cat, q, &cfg, &net).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn advantages_are_return_minus_value() {
        let out = returns_and_advantages(&traj(&[0.0, 0.0, 0.0], 1.0)).unwrap();
        assert!(out.iter().all(|&(r, a)| r == 1.0 && a == 1.0));
        let out = returns_and_advantages(&traj(&[0.8, 0.8], 0.8)).unwrap();
        assert!(out.iter().all(|&(_, a)| a == 0.0));
        let out = returns_and_advantages(&traj(&[0.2, 0.5, 1.1], 0.9)).unwrap();
        let adv: Vec<f64> = out.iter().map(|p| p.1).collect();
        for (a, e) in adv.iter().zip([0.7, 0.4, -0.2]) {
            assert!((a - e).abs() < 1e-12);
        }
        let mut short = traj(&[0.1, 0.1], 1.0);
        short.num_relations = 4;
        assert!(returns_and_advantages(&short).is_err());
    }

    #[test]
    fn normalization() {
        let mut a = vec![1.0, 2.0, 3.0, 4.0];
        normalize_advantages(&mut a);
        let mean: f64 = a.iter().sum::<f64>() / 4.0;
        let var: f64 = a.iter().map(|x| x * x).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        let mut c = vec![0.3; 5];
        normalize_advantages(&mut c);
        assert!(c.iter().all(|&x| x == 0.0));
    }

    /// A sample whose stored log-probability is chosen so the current ratio
    /// is exactly `ratio`.
    fn sample_with_ratio(net: &DenseNet, step: &mut Step, ratio: f64) {
        let (logits, _) = net.forward(&step.state_vector).unwrap();
        let lp = masked_softmax(&logits, &step.mask).unwrap().log_prob(step.action).unwrap();
        step.log_prob_old = lp - ratio.ln();
    }

    #[test]
    fn clipping_uses_bound() {
        let (cat, w) = setup((4, 4), 1);
        let cfg = EnvConfig::default();
        let net = small_net(&cat, &cfg, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = collect_episode(&cat, &w[0], &cfg, &net, &mut rng).unwrap();
        let mut st = t.steps[0].clone();
        sample_with_ratio(&net, &mut st, 1.5);
        let tc = TrainConfig {
            entropy_coef: 0.0,
            value_coef: 0.0,
            ..TrainConfig::default()
        };
        let s = [Sample {
            step: &st,
            advantage: 2.0,
            ret: 0.0,
        }];
        let (parts, grads) = ppo_loss_and_grad(&net, &s, &tc).unwrap();
        assert!((parts.surrogate - 1.2 * 2.0).abs() < 1e-12);
        // Clipped and above the range: no policy gradient at all.
        assert!(grads.iter().all(|&g| g == 0.0));

        // With a negative advantage the unclipped term is the smaller one.
        let s = [Sample {
            step: &st,
            advantage: -2.0,
            ret: 0.0,
        }];
        let parts = ppo_loss(&net, &s, &tc).unwrap();
        assert!((parts.surrogate + 1.5 * 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_advantage_moves_only_value_and_entropy() {
        let (cat, w) = setup((5, 5), 1);
        let cfg = EnvConfig::default();
        let net = small_net(&cat, &cfg, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = collect_episode(&cat, &w[0], &cfg, &net, &mut rng).unwrap();
        let samples: Vec<Sample<'_>> = t
            .steps
            .iter()
            .map(|step| Sample {
                step,
                advantage: 0.0,
                ret: 0.3,
            })
            .collect();
        let only_policy = TrainConfig {
            entropy_coef: 0.0,
            value_coef: 0.0,
            ..TrainConfig::default()
        };
        let (parts, grads) = ppo_loss_and_grad(&net, &samples, &only_policy).unwrap();
        assert_eq!(parts.surrogate, 0.0);
        assert!(grads.iter().all(|&g| g == 0.0));
        let (_, grads) = ppo_loss_and_grad(&net, &samples, &TrainConfig::default()).unwrap();
        assert!(grads.iter().any(|&g| g != 0.0));
    }

    /// Central finite differences of the full loss against the analytic gradient.
    fn fd_check(seed: u64) -> f64 {
        let cat = generate_catalog(seed, CatalogSpec {
            n_relations: 4,
            ..CatalogSpec::default()
        })
        .unwrap();
        let w = generate_workload(&cat, seed, Shape::Random, (3, 4), 2).unwrap();
        let cfg = EnvConfig {
            n_max: 4,
            ..EnvConfig::default()
        };
        let mut net = DenseNet::new(cfg.state_dim(&cat), &[6, 5], cfg.num_action_slots(), seed);
        // Larger weights than the initializer's so the softmax is far from uniform.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in net.params_mut() {
            *p += rng.random_range(-0.5..0.5);
        }
        let mut steps = Vec::new();
        for q in &w {
            steps.extend(collect_episode(&cat, q, &cfg, &net, &mut rng).unwrap().steps);
        }
        // Ratios spread over both sides of the clip range.
        for s in &mut steps {
            let r = rng.random_range(0.6..1.4);
            sample_with_ratio(&net, s, r);
        }
        let samples: Vec<Sample<'_>> = steps
            .iter()
            .map(|step| Sample {
                step,
                advantage: rng.random_range(-1.5..1.5),
                ret: rng.random_range(0.0..2.0),
            })
            .collect();
        let tc = TrainConfig::default();
        let (_, grads) = ppo_loss_and_grad(&net, &samples, &tc).unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for (i, &g) in grads.iter().enumerate() {
            let orig = net.params()[i];
            net.params_mut()[i] = orig + h;
            let up = ppo_loss(&net, &samples, &tc).unwrap().total;
            net.params_mut()[i] = orig - h;
            let down = ppo_loss(&net, &samples, &tc).unwrap().total;
            net.params_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let err = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-3);
            worst = worst.max(err);
        }
        worst
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        for seed in 0..5 {
            let err = fd_check(seed);
            assert!(err < 1e-4, "seed {seed}: relative error {err}");
        }
    }

    #[test]
    fn zero_episodes_gives_untrained_net() {
        let (cat, w) = setup((4, 5), 5);
        let tc = TrainConfig {
            total_episodes: 0,
            seed: 4,
            ..TrainConfig::default()
        };
        let cfg = EnvConfig::default();
        let mut rows = 0;
        let out = train(&cat, &w, &cfg, &tc, &mut |_| {
            rows += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(rows, 0);
        assert!(out.metrics.episodes.is_empty() && out.metrics.updates.is_empty());
        let fresh = DenseNet::new(cfg.state_dim(&cat), &tc.hidden, 100, 4);
        assert_eq!(out.net, fresh);
    }

    #[test]
    fn training_is_deterministic() {
        let (cat, w) = setup((4, 6), 10);
        let tc = TrainConfig {
            total_episodes: 70,
            episodes_per_batch: 16,
            hidden: vec![32, 32],
            seed: 12,
            ..TrainConfig::default()
        };
        let cfg = EnvConfig::default();
        let run = || {
            let mut lines = Vec::new();
            let out = train(&cat, &w, &cfg, &tc, &mut |r| {
                lines.push(serde_json::to_string(r).unwrap());
                Ok(())
            })
            .unwrap();
            (lines, out.net, out.metrics.episodes)
        };
        let (a, net_a, eps) = run();
        let (b, net_b, _) = run();
        assert_eq!(a, b);
        assert_eq!(net_a, net_b);
        // 70 episodes, updates after 16, 32, 48, 64 and the trailing 6.
        assert_eq!(a.len(), 70 + 5);
        assert!(eps.iter().enumerate().all(|(i, e)| e.episode == i + 1));
        assert!(net_a.params().iter().all(|p| p.is_finite()));
        for e in &eps {
            assert!(e.ratio_vs_dp.unwrap() >= 1.0 - 1e-12);
        }
    }

    #[test]
    fn rejects_oversize_query() {
        let cat = generate_catalog(5, CatalogSpec::default()).unwrap();
        let q = generate_workload(&cat, 1, Shape::Chain, (6, 6), 1).unwrap();
        let cfg = EnvConfig {
            n_max: 5,
            ..EnvConfig::default()
        };
        let tc = TrainConfig {
            total_episodes: 1,
            ..TrainConfig::default()
        };
        assert!(train(&cat, &q, &cfg, &tc, &mut |_| Ok(())).is_err());
        assert!(TrainConfig { discount: 0.9, ..tc.clone() }.validate().is_err());
        assert!(TrainConfig { clip_eps: 1.0, ..tc }.validate().is_err());
    }

    /// With every reward zero the value target is zero; the policy should
    /// neither collapse nor drift far from its starting entropy.
    #[test]
    fn zero_reward_keeps_entropy() {
        let (cat, w) = setup((5, 5), 3);
        let cfg = EnvConfig::default();
        let tc = TrainConfig {
            episodes_per_batch: 4,
            hidden: vec![32, 32],
            ..TrainConfig::default()
        };
        let mut net = DenseNet::new(cfg.state_dim(&cat), &tc.hidden, cfg.num_action_slots(), 5);
        let mut opt = AdamState::new(net.num_params());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mean_entropy = |net: &DenseNet| {
            let mut total = 0.0;
            let mut count = 0.0;
            for q in &w {
                let t = decode_greedy(&cat, q, &cfg, net).unwrap();
                for s in &t.steps {
                    let (logits, _) = net.forward(&s.state_vector).unwrap();
                    total += masked_softmax(&logits, &s.mask).unwrap().entropy();
                    count += 1.0;
                }
            }
            total / count
        };
        let initial = mean_entropy(&net);
        for _ in 0..100 {
            let batch: Vec<Trajectory> = (0..tc.episodes_per_batch)
                .map(|i| {
                    let mut t = collect_episode(&cat, &w[i % w.len()], &cfg, &net, &mut rng).unwrap();
                    t.terminal_reward = 0.0;
                    t
                })
                .collect();
            ppo_update(&mut net, &mut opt, &batch, &tc, &mut rng).unwrap();
            assert!(net.params().iter().all(|p| p.is_finite()));
        }
        let last = mean_entropy(&net);
        assert!((last - initial).abs() <= 0.1 * initial, "{initial} -> {last}");
    }

    #[test]
    fn small_training_run_improves() {
        // A single 6-relation star query: the sampled cost ratio should drop.
        let cat = generate_catalog(21, CatalogSpec::default()).unwrap();
        let w = generate_workload(&cat, 3, Shape::Star, (6, 6), 1).unwrap();
        let tc = TrainConfig {
            total_episodes: 1500,
            seed: 2,
            ..TrainConfig::default()
        };
        let out = train(&cat, &w, &EnvConfig::default(), &tc, &mut |_| Ok(())).unwrap();
        let mean = |r: &[EpisodeRecord]| r.iter().map(|e| e.ratio_vs_greedy).sum::<f64>() / r.len() as f64;
        let eps = &out.metrics.episodes;
        let (head, tail) = (mean(&eps[..200]), mean(&eps[eps.len() - 200..]));
        assert!(tail < head, "{head} -> {tail}");
    }

    #[test]
    fn parses_fixed_query() {
        let cat = generate_catalog(5, CatalogSpec::default()).unwrap();
        let r = &cat.relations()[..2];
        let sql = format!(
            "SELECT * FROM {a}, {b} WHERE {a}.{x} = {b}.{y}",
            a = r[0].name,
            b = r[1].name,
            x = r[0].attributes[0].name,
            y = r[1].attributes[0].name
        );
        let q = parse_query(&sql, &cat).unwrap();
        let cfg = EnvConfig::default();
        let net = small_net(&cat, &cfg, 0);
        let t = decode_greedy(&cat, &q, &cfg, &net).unwrap();
        assert_eq!(t.steps.len(), 1);
        assert_eq!(t.terminal_reward, 1.0);
    }
}
