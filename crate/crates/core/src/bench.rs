//! Experiment harness: workload splits, held-out evaluation against the
//! classical enumerators, planning-time measurement and convergence curves.
//!
//! Reports that must be reproducible (evaluation tables, convergence CSVs)
//! never contain wall-clock values; timings are returned separately.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, PlanResult};
use crate::catalog::Catalog;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::nn::{AdamState, DenseNet};
use crate::query::JoinQuery;
use crate::rl::{self, MetricRecord, TrainConfig};

/// Splits `workload` into (train, held-out) with `holdout` the held-out
/// fraction. Both parts keep workload order.
pub fn split_workload(
    workload: &[JoinQuery],
    holdout: f64,
    seed: u64,
) -> Result<(Vec<JoinQuery>, Vec<JoinQuery>)> {
    if !(0.0..1.0).contains(&holdout) {
        return Err(Error::Config(format!("holdout fraction {holdout} must lie in [0, 1)")));
    }
    let n = workload.len();
    let mut held = (n as f64 * holdout).round() as usize;
    if holdout > 0.0 && n >= 2 {
        held = held.clamp(1, n - 1);
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_held = vec![false; n];
    for &i in &idx[..held] {
        is_held[i] = true;
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (q, h) in workload.iter().zip(is_held) {
        if h {
            test.push(q.clone());
        } else {
            train.push(q.clone());
        }
    }
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rejoin,
    Greedy,
    LeftDeep,
    DpOptimal,
    Quickpick,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Rejoin,
        Method::Greedy,
        Method::LeftDeep,
        Method::DpOptimal,
        Method::Quickpick,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Rejoin => "rejoin",
            Method::Greedy => "greedy",
            Method::LeftDeep => "left_deep",
            Method::DpOptimal => "dp_optimal",
            Method::Quickpick => "quickpick",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    pub plan: String,
    pub cost: f64,
    pub ratio_vs_greedy: f64,
    pub ratio_vs_dp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryEval {
    pub query_id: String,
    pub relations: usize,
    pub results: Vec<MethodResult>,
}

impl QueryEval {
    pub fn result(&self, method: Method) -> &MethodResult {
        self.results
            .iter()
            .find(|r| r.method == method)
            .expect("every method is evaluated")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub median_vs_greedy: f64,
    pub mean_vs_greedy: f64,
    pub median_vs_dp: f64,
    pub mean_vs_dp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Method every `ratio_vs_greedy` is relative to.
    pub base_method: Method,
    pub quickpick_samples: usize,
    pub queries: Vec<QueryEval>,
    pub summary: Vec<MethodSummary>,
}

/// Per-query planning wall time in milliseconds, by method.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalTimings {
    pub rows: Vec<(String, Method, f64)>,
}

impl EvalTimings {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("query,method,wall_ms\n");
        for (q, m, ms) in &self.rows {
            let _ = writeln!(out, "{q},{m},{ms}");
        }
        out
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Seed for QuickPick on the `i`-th evaluated query.
fn quickpick_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64 + 1);
    rng
}

/// Plans every query with the policy (mode decoding) and with each baseline.
pub fn evaluate(
    catalog: &Catalog,
    queries: &[JoinQuery],
    net: &DenseNet,
    env_config: &EnvConfig,
    quickpick_samples: usize,
    seed: u64,
) -> Result<(EvalReport, EvalTimings)> {
    if queries.is_empty() {
        return Err(Error::Empty("evaluation workload"));
    }
    let mut timings = EvalTimings::default();
    let mut rows = Vec::with_capacity(queries.len());
    for (i, query) in queries.iter().enumerate() {
        env_config.check_fits(query)?;
        let start = Instant::now();
        let traj = rl::infer_plan(catalog, query, env_config.n_max, net)?;
        let rejoin_ms = start.elapsed().as_secs_f64() * 1e3;
        let mut plans: Vec<(Method, String, f64, f64)> = vec![(
            Method::Rejoin,
            traj.final_tree.to_string(),
            traj.final_cost,
            rejoin_ms,
        )];
        let mut push = |m: Method, r: PlanResult| {
            plans.push((m, r.tree.to_string(), r.total_cost, r.wall_time.as_secs_f64() * 1e3));
        };
        push(Method::Greedy, baselines::greedy(query, catalog)?);
        push(Method::LeftDeep, baselines::left_deep_dp(query, catalog)?);
        push(Method::DpOptimal, baselines::dp_optimal(query, catalog)?);
        push(
            Method::Quickpick,
            baselines::quickpick(query, catalog, quickpick_samples, &mut quickpick_rng(seed, i))?,
        );
        let greedy_cost = plans[1].2;
        let dp_cost = plans[3].2;
        let results = plans
            .into_iter()
            .map(|(method, plan, cost, ms)| {
                timings.rows.push((query.id.clone(), method, ms));
                MethodResult {
                    method,
                    plan,
                    cost,
                    ratio_vs_greedy: cost / greedy_cost,
                    ratio_vs_dp: cost / dp_cost,
                }
            })
            .collect();
        rows.push(QueryEval {
            query_id: query.id.clone(),
            relations: query.num_relations(),
            results,
        });
    }
    let summary = Method::ALL
        .iter()
        .map(|&method| {
            let vs_g: Vec<f64> = rows.iter().map(|r| r.result(method).ratio_vs_greedy).collect();
            let vs_d: Vec<f64> = rows.iter().map(|r| r.result(method).ratio_vs_dp).collect();
            MethodSummary {
                method,
                median_vs_greedy: median(&vs_g),
                mean_vs_greedy: mean(&vs_g),
                median_vs_dp: median(&vs_d),
                mean_vs_dp: mean(&vs_d),
            }
        })
        .collect();
    Ok((
        EvalReport {
            base_method: Method::Greedy,
            quickpick_samples,
            queries: rows,
            summary,
        },
        timings,
    ))
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("query,q,method,cost,ratio_vs_greedy,ratio_vs_dp,plan\n");
        for row in &self.queries {
            for r in &row.results {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},\"{}\"",
                    row.query_id, row.relations, r.method, r.cost, r.ratio_vs_greedy, r.ratio_vs_dp, r.plan
                );
            }
        }
        out
    }

    pub fn summary_for(&self, method: Method) -> &MethodSummary {
        self.summary
            .iter()
            .find(|s| s.method == method)
            .expect("every method is summarized")
    }
}

/// Planning methods timed by [`bench_plan_time`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TimedMethod {
    Rejoin,
    /// Inference followed by one policy update on the episode just played.
    RejoinWithUpdate,
    DpOptimal,
    LeftDeep,
    Greedy,
    Quickpick,
}

impl TimedMethod {
    pub const ALL: [TimedMethod; 6] = [
        TimedMethod::Rejoin,
        TimedMethod::RejoinWithUpdate,
        TimedMethod::DpOptimal,
        TimedMethod::LeftDeep,
        TimedMethod::Greedy,
        TimedMethod::Quickpick,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TimedMethod::Rejoin => "rejoin",
            TimedMethod::RejoinWithUpdate => "rejoin_update",
            TimedMethod::DpOptimal => "dp_optimal",
            TimedMethod::LeftDeep => "left_deep",
            TimedMethod::Greedy => "greedy",
            TimedMethod::Quickpick => "quickpick",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanTimeRow {
    pub q: usize,
    pub method: TimedMethod,
    pub mean_ms: f64,
    /// For the policy this is the number of decisions taken.
    pub plans_considered: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanTimeConfig {
    pub repetitions: usize,
    pub quickpick_samples: usize,
    pub seed: u64,
}

impl Default for PlanTimeConfig {
    fn default() -> Self {
        Self {
            repetitions: 10,
            quickpick_samples: baselines::DEFAULT_QUICKPICK_SAMPLES,
            seed: 0,
        }
    }
}

fn time_one(
    method: TimedMethod,
    catalog: &Catalog,
    query: &JoinQuery,
    net: &DenseNet,
    env_config: &EnvConfig,
    quickpick_samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, u64)> {
    let start = Instant::now();
    let considered = match method {
        TimedMethod::Rejoin => rl::infer_plan(catalog, query, env_config.n_max, net)?.steps.len() as u64,
        TimedMethod::RejoinWithUpdate => {
            let traj = rl::collect_episode(catalog, query, env_config, net, rng)?;
            let mut scratch = net.clone();
            let mut opt = AdamState::new(scratch.num_params());
            let tc = TrainConfig::default();
            rl::ppo_update(&mut scratch, &mut opt, std::slice::from_ref(&traj), &tc, rng)?;
            traj.steps.len() as u64
        }
        TimedMethod::DpOptimal => baselines::dp_optimal(query, catalog)?.plans_considered,
        TimedMethod::LeftDeep => baselines::left_deep_dp(query, catalog)?.plans_considered,
        TimedMethod::Greedy => baselines::greedy(query, catalog)?.plans_considered,
        TimedMethod::Quickpick => {
            baselines::quickpick(query, catalog, quickpick_samples, rng)?.plans_considered
        }
    };
    Ok((start.elapsed().as_secs_f64() * 1e3, considered))
}

/// Mean planning time per method, grouped by query size.
pub fn bench_plan_time(
    catalog: &Catalog,
    queries: &[JoinQuery],
    net: &DenseNet,
    env_config: &EnvConfig,
    config: &PlanTimeConfig,
) -> Result<Vec<PlanTimeRow>> {
    if config.repetitions == 0 {
        return Err(Error::Config("at least one repetition is required".into()));
    }
    if queries.is_empty() {
        return Err(Error::Empty("benchmark workload"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    // (q, method) -> (total ms, total plans, samples)
    let mut acc: BTreeMap<(usize, TimedMethod), (f64, f64, usize)> = BTreeMap::new();
    for query in queries {
        env_config.check_fits(query)?;
        for method in TimedMethod::ALL {
            for _ in 0..config.repetitions {
                let (ms, considered) = time_one(
                    method,
                    catalog,
                    query,
                    net,
                    env_config,
                    config.quickpick_samples,
                    &mut rng,
                )?;
                let e = acc.entry((query.num_relations(), method)).or_default();
                e.0 += ms;
                e.1 += considered as f64;
                e.2 += 1;
            }
        }
    }
    Ok(acc
        .into_iter()
        .map(|((q, method), (ms, plans, n))| PlanTimeRow {
            q,
            method,
            mean_ms: ms / n as f64,
            plans_considered: plans / n as f64,
        })
        .collect())
}

pub fn plan_time_csv(rows: &[PlanTimeRow]) -> String {
    let mut out = String::from("q,method,mean_ms,plans_considered\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.q, r.method.name(), r.mean_ms, r.plans_considered);
    }
    out
}

/// Sliding-window means: one row per episode from `window` onward, each the
/// mean of the `window` ratios ending there. A window longer than the
/// stream collapses to a single row over everything.
pub fn convergence_report(ratios: &[f64], window: usize) -> Result<Vec<(usize, f64)>> {
    if ratios.is_empty() {
        return Err(Error::Empty("metrics stream"));
    }
    if window == 0 {
        return Err(Error::Config("window must be positive".into()));
    }
    if window >= ratios.len() {
        return Ok(vec![(ratios.len(), mean(ratios))]);
    }
    Ok((window..=ratios.len())
        .map(|end| (end, mean(&ratios[end - window..end])))
        .collect())
}

pub fn convergence_csv(rows: &[(usize, f64)]) -> String {
    let mut out = String::from("episode,mean_ratio\n");
    for (e, m) in rows {
        let _ = writeln!(out, "{e},{m}");
    }
    out
}

/// Episode cost ratios vs greedy from a metrics JSONL stream.
pub fn episode_ratios(metrics_jsonl: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for line in metrics_jsonl.lines().filter(|l| !l.trim().is_empty()) {
        if let MetricRecord::Episode(e) = serde_json::from_str(line)? {
            out.push(e.ratio_vs_greedy);
        }
    }
    if out.is_empty() {
        return Err(Error::Empty("metrics stream"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{generate_catalog, CatalogSpec};
    use crate::nn::DEFAULT_HIDDEN;
    use crate::query::{generate_mixed_workload, generate_workload, Shape};

    fn fixture() -> (Catalog, Vec<JoinQuery>, DenseNet, EnvConfig) {
        let cat = generate_catalog(3, CatalogSpec::default()).unwrap();
        let w = generate_mixed_workload(&cat, 4, &[Shape::Chain, Shape::Star, Shape::Random], (2, 6), 12)
            .unwrap();
        let cfg = EnvConfig::default();
        let net = DenseNet::new(cfg.state_dim(&cat), &DEFAULT_HIDDEN, cfg.num_action_slots(), 7);
        (cat, w, net, cfg)
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let (_, w, _, _) = fixture();
        let (a, b) = split_workload(&w, 0.25, 1).unwrap();
        assert_eq!((a.len(), b.len()), (9, 3));
        for q in &b {
            assert!(!a.iter().any(|x| x.id == q.id));
        }
        assert_eq!(split_workload(&w, 0.25, 1).unwrap(), (a, b));
        let (all, none) = split_workload(&w, 0.0, 1).unwrap();
        assert_eq!((all.len(), none.len()), (12, 0));
        assert_eq!(split_workload(&w, 0.01, 1).unwrap().1.len(), 1);
        assert!(split_workload(&w, 1.0, 1).is_err());
    }

    #[test]
    fn evaluation_is_reproducible_and_ordered() {
        let (cat, w, net, cfg) = fixture();
        let (a, _) = evaluate(&cat, &w, &net, &cfg, 20, 5).unwrap();
        let (b, _) = evaluate(&cat, &w, &net, &cfg, 20, 5).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.to_csv(), b.to_csv());
        for row in &a.queries {
            let dp = row.result(Method::DpOptimal);
            assert_eq!(row.result(Method::Greedy).ratio_vs_greedy, 1.0);
            assert_eq!(dp.ratio_vs_dp, 1.0);
            for r in &row.results {
                assert!(r.ratio_vs_dp >= 1.0, "{} {}", row.query_id, r.method);
                assert!(r.cost >= dp.cost);
            }
            if row.relations == 2 {
                let c = dp.cost;
                assert!(row.results.iter().all(|r| r.cost == c));
            }
        }
        assert_eq!(a.summary_for(Method::Greedy).median_vs_greedy, 1.0);
    }

    #[test]
    fn csv_layout() {
        let (cat, w, net, cfg) = fixture();
        let (r, t) = evaluate(&cat, &w[..2], &net, &cfg, 5, 0).unwrap();
        let csv = r.to_csv();
        assert!(csv.starts_with("query,q,method,cost,ratio_vs_greedy,ratio_vs_dp,plan\n"));
        assert_eq!(csv.lines().count(), 1 + 2 * Method::ALL.len());
        assert_eq!(t.to_csv().lines().count(), 1 + 2 * Method::ALL.len());
    }

    #[test]
    fn plan_time_rows() {
        let (cat, _, net, cfg) = fixture();
        let w = generate_workload(&cat, 2, Shape::Clique, (3, 5), 6).unwrap();
        let rows = bench_plan_time(
            &cat,
            &w,
            &net,
            &cfg,
            &PlanTimeConfig {
                repetitions: 2,
                quickpick_samples: 10,
                seed: 1,
            },
        )
        .unwrap();
        let csv = plan_time_csv(&rows);
        assert!(csv.starts_with("q,method,mean_ms,plans_considered\n"));
        for r in &rows {
            match r.method {
                TimedMethod::Rejoin | TimedMethod::RejoinWithUpdate => {
                    assert_eq!(r.plans_considered, (r.q - 1) as f64)
                }
                TimedMethod::Quickpick => assert_eq!(r.plans_considered, 10.0),
                _ => {}
            }
            assert!(r.mean_ms >= 0.0);
        }
        let dp: Vec<f64> = rows
            .iter()
            .filter(|r| r.method == TimedMethod::DpOptimal)
            .map(|r| r.plans_considered)
            .collect();
        assert!(dp.len() >= 2 && dp.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn convergence_windows() {
        let flat = vec![1.0; 20];
        let rows = convergence_report(&flat, 5).unwrap();
        assert_eq!(rows.len(), 16);
        assert_eq!(rows[0].0, 5);
        assert!(rows.iter().all(|&(_, m)| m == 1.0));

        let rows = convergence_report(&flat[..3], 10).unwrap();
        assert_eq!(rows, vec![(3, 1.0)]);

        let dec: Vec<f64> = (0..50).map(|i| 10.0 - 0.1 * i as f64).collect();
        let rows = convergence_report(&dec, 7).unwrap();
        assert!(rows.windows(2).all(|p| p[1].1 < p[0].1));

        assert!(convergence_report(&[], 5).is_err());
        assert!(convergence_csv(&rows).starts_with("episode,mean_ratio\n"));
    }

    #[test]
    fn reads_ratios_from_metrics() {
        let text = concat!(
            r#"{"kind":"episode","episode":1,"query_id":"a","reward":0.5,"cost":20.0,"ratio_vs_greedy":2.0,"ratio_vs_dp":2.5}"#,
            "\n",
            r#"{"kind":"update","update":1,"episodes_seen":1,"surrogate":0.0,"value_loss":0.1,"entropy":1.0}"#,
            "\n",
            r#"{"kind":"episode","episode":2,"query_id":"a","reward":1.0,"cost":10.0,"ratio_vs_greedy":1.0,"ratio_vs_dp":null}"#,
            "\n"
        );
        assert_eq!(episode_ratios(text).unwrap(), vec![2.0, 1.0]);
        assert!(episode_ratios("").is_err());
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }
}
