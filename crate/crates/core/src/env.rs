//! The join-ordering environment.
//!
//! An episode starts from one leaf per query relation. Each action `(x, y)`
//! (1-based forest positions, `x != y`) replaces the x-th and y-th trees with
//! `Join(x-th, y-th)`, placed at position `min(x, y)`; the episode ends when a
//! single tree remains. Only the terminal state earns a reward.

use std::fmt;

use crate::baselines;
use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::jointree::{CardinalityModel, JoinTree};
use crate::query::{join_graph, selection_vector, JoinQuery};

pub const DEFAULT_N_MAX: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Action {
    pub x: usize,
    pub y: usize,
}

impl Action {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    /// Output-layer slot: `(x-1)·n_max + (y-1)`.
    pub fn slot(self, n_max: usize) -> usize {
        (self.x - 1) * n_max + (self.y - 1)
    }

    pub fn from_slot(slot: usize, n_max: usize) -> Self {
        Self {
            x: slot / n_max + 1,
            y: slot % n_max + 1,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RewardMode {
    /// `1 / cost`.
    Reciprocal,
    /// `cost(greedy plan) / cost`.
    #[default]
    Normalized,
}

impl std::str::FromStr for RewardMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reciprocal" => Ok(RewardMode::Reciprocal),
            "normalized" => Ok(RewardMode::Normalized),
            other => Err(Error::Config(format!("unknown reward mode `{other}`"))),
        }
    }
}

impl fmt::Display for RewardMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RewardMode::Reciprocal => "reciprocal",
            RewardMode::Normalized => "normalized",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnvConfig {
    /// Largest query (and forest) the model's fixed-size layers accommodate.
    pub n_max: usize,
    pub reward_mode: RewardMode,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            n_max: DEFAULT_N_MAX,
            reward_mode: RewardMode::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_max < 2 {
            return Err(Error::Config(format!("n_max must be at least 2, got {}", self.n_max)));
        }
        Ok(())
    }

    pub fn num_action_slots(&self) -> usize {
        self.n_max * self.n_max
    }

    pub fn state_dim(&self, catalog: &Catalog) -> usize {
        let n = catalog.num_relations();
        self.n_max * n + n * n + catalog.num_attributes()
    }

    pub fn check_fits(&self, query: &JoinQuery) -> Result<()> {
        if query.num_relations() > self.n_max {
            return Err(Error::Capacity {
                relations: query.num_relations(),
                capacity: self.n_max,
            });
        }
        Ok(())
    }
}

/// An ordered forest of partial join trees.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeState {
    forest: Vec<JoinTree>,
    step: usize,
}

pub fn initial_state(query: &JoinQuery, config: &EnvConfig) -> Result<EpisodeState> {
    config.check_fits(query)?;
    Ok(EpisodeState {
        forest: query.relations.iter().map(JoinTree::leaf).collect(),
        step: 0,
    })
}

impl EpisodeState {
    /// Builds a state from an explicit forest; used to replay or inspect
    /// intermediate states.
    pub fn from_forest(forest: Vec<JoinTree>, step: usize) -> Self {
        Self { forest, step }
    }

    pub fn forest(&self) -> &[JoinTree] {
        &self.forest
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn is_terminal(&self) -> bool {
        self.forest.len() == 1
    }

    /// Every ordered pair of distinct positions, row-major.
    pub fn action_set(&self) -> Result<Vec<Action>> {
        let m = self.forest.len();
        if m < 2 {
            return Err(Error::TerminalState);
        }
        Ok((1..=m)
            .flat_map(|x| (1..=m).filter(move |&y| y != x).map(move |y| Action::new(x, y)))
            .collect())
    }

    pub fn num_actions(&self) -> usize {
        let m = self.forest.len();
        m * m.saturating_sub(1)
    }

    pub fn apply_action(&self, action: Action) -> Result<EpisodeState> {
        let mut next = self.clone();
        next.apply_in_place(action)?;
        Ok(next)
    }

    pub fn apply_in_place(&mut self, action: Action) -> Result<()> {
        let m = self.forest.len();
        let Action { x, y } = action;
        if m < 2 {
            return Err(Error::TerminalState);
        }
        if x == y || x == 0 || y == 0 || x > m || y > m {
            return Err(Error::InvalidAction { x, y, forest: m });
        }
        let (lo, hi) = (x.min(y) - 1, x.max(y) - 1);
        let hi_tree = self.forest.remove(hi);
        let lo_tree = std::mem::replace(&mut self.forest[lo], JoinTree::leaf(""));
        let (left, right) = if x < y { (lo_tree, hi_tree) } else { (hi_tree, lo_tree) };
        self.forest[lo] = JoinTree::join(left, right);
        self.step += 1;
        Ok(())
    }

    /// Valid-slot mask over the `n_max²` output slots.
    pub fn action_mask(&self, n_max: usize) -> Vec<bool> {
        let m = self.forest.len();
        let mut mask = vec![false; n_max * n_max];
        if m >= 2 {
            for x in 1..=m {
                for y in 1..=m {
                    if x != y {
                        mask[Action::new(x, y).slot(n_max)] = true;
                    }
                }
            }
        }
        mask
    }

    /// The single remaining tree of a terminal state.
    pub fn final_tree(&self) -> Option<&JoinTree> {
        if self.is_terminal() {
            self.forest.first()
        } else {
            None
        }
    }
}

/// Actions that build `tree` from the initial forest over `relations`:
/// children first, each join issued as (left position, right position).
pub fn action_sequence_for(tree: &JoinTree, relations: &[String]) -> Result<Vec<Action>> {
    fn build(t: &JoinTree, state: &mut EpisodeState, out: &mut Vec<Action>) -> Result<()> {
        if let JoinTree::Join(l, r) = t {
            build(l, state, out)?;
            build(r, state, out)?;
            let find = |sub: &JoinTree| {
                state
                    .forest
                    .iter()
                    .position(|f| f == sub)
                    .map(|i| i + 1)
                    .ok_or_else(|| Error::Coverage(format!("subtree {sub} not in forest")))
            };
            let action = Action::new(find(l)?, find(r)?);
            state.apply_in_place(action)?;
            out.push(action);
        }
        Ok(())
    }
    let mut state = EpisodeState::from_forest(relations.iter().map(JoinTree::leaf).collect(), 0);
    let mut out = Vec::with_capacity(relations.len().saturating_sub(1));
    build(tree, &mut state, &mut out)?;
    if !state.is_terminal() {
        return Err(Error::Coverage(format!("{tree} does not use every relation")));
    }
    Ok(out)
}

/// Terminal reward; zero for any partial ordering.
pub fn reward(
    state: &EpisodeState,
    query: &JoinQuery,
    catalog: &Catalog,
    config: &EnvConfig,
) -> Result<f64> {
    let Some(tree) = state.final_tree() else {
        return Ok(0.0);
    };
    let cost = crate::jointree::cost(tree, query, catalog)?.total_cost;
    let reference = match config.reward_mode {
        RewardMode::Reciprocal => 1.0,
        RewardMode::Normalized => baselines::greedy(query, catalog)?.total_cost,
    };
    Ok(reward_from_costs(config.reward_mode, cost, reference))
}

/// `reference` is ignored in reciprocal mode and is the greedy plan cost in
/// normalized mode.
pub fn reward_from_costs(mode: RewardMode, cost: f64, reference: f64) -> f64 {
    match mode {
        RewardMode::Reciprocal => 1.0 / cost,
        RewardMode::Normalized => reference / cost,
    }
}

/// Network input for one state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub n_max: usize,
    pub n: usize,
    /// `n_max × n`, row `r` encodes forest tree `r`, rows past the forest are zero.
    pub tree_block: Vec<f64>,
    /// `n × n` join graph.
    pub join_block: Vec<f64>,
    /// `k` selection flags.
    pub selection_block: Vec<f64>,
}

impl StateVector {
    pub fn tree_row(&self, r: usize) -> &[f64] {
        &self.tree_block[r * self.n..(r + 1) * self.n]
    }

    pub fn len(&self) -> usize {
        self.tree_block.len() + self.join_block.len() + self.selection_block.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.tree_block);
        v.extend_from_slice(&self.join_block);
        v.extend_from_slice(&self.selection_block);
        v
    }
}

/// The join and selection blocks: fixed for a whole episode.
#[derive(Debug, Clone, PartialEq)]
pub struct PredicateBlocks {
    pub join_block: Vec<f64>,
    pub selection_block: Vec<f64>,
}

impl PredicateBlocks {
    pub fn new(query: &JoinQuery, catalog: &Catalog) -> Self {
        Self {
            join_block: join_graph(query, catalog)
                .into_iter()
                .flatten()
                .map(f64::from)
                .collect(),
            selection_block: selection_vector(query, catalog)
                .into_iter()
                .map(f64::from)
                .collect(),
        }
    }
}

pub fn featurize(
    state: &EpisodeState,
    catalog: &Catalog,
    query: &JoinQuery,
    config: &EnvConfig,
) -> Result<StateVector> {
    featurize_with(state, catalog, &PredicateBlocks::new(query, catalog), config)
}

pub fn featurize_with(
    state: &EpisodeState,
    catalog: &Catalog,
    blocks: &PredicateBlocks,
    config: &EnvConfig,
) -> Result<StateVector> {
    let n = catalog.num_relations();
    if state.forest.len() > config.n_max {
        return Err(Error::Capacity {
            relations: state.forest.len(),
            capacity: config.n_max,
        });
    }
    let mut tree_block = vec![0.0; config.n_max * n];
    for (r, tree) in state.forest.iter().enumerate() {
        let row = &mut tree_block[r * n..(r + 1) * n];
        let mut bad = None;
        tree.for_each_leaf_depth(&mut |rel, depth| match catalog.relation_index(rel) {
            Ok(i) => row[i] = 1.0 / depth as f64,
            Err(e) => bad = Some(e),
        });
        if let Some(e) = bad {
            return Err(e);
        }
    }
    Ok(StateVector {
        n_max: config.n_max,
        n,
        tree_block,
        join_block: blocks.join_block.clone(),
        selection_block: blocks.selection_block.clone(),
    })
}

/// One live episode over a query, with the per-query data (cost model,
/// predicate blocks, greedy reference cost) computed once.
#[derive(Debug, Clone)]
pub struct JoinEnv<'a> {
    catalog: &'a Catalog,
    query: &'a JoinQuery,
    config: EnvConfig,
    model: CardinalityModel,
    blocks: PredicateBlocks,
    reference_cost: f64,
    state: EpisodeState,
}

impl<'a> JoinEnv<'a> {
    pub fn new(catalog: &'a Catalog, query: &'a JoinQuery, config: EnvConfig) -> Result<Self> {
        let state = initial_state(query, &config)?;
        let model = CardinalityModel::new(query, catalog)?;
        let reference_cost = match config.reward_mode {
            RewardMode::Reciprocal => 1.0,
            RewardMode::Normalized => baselines::greedy(query, catalog)?.total_cost,
        };
        Ok(Self {
            catalog,
            query,
            config,
            model,
            blocks: PredicateBlocks::new(query, catalog),
            reference_cost,
            state,
        })
    }

    /// Same as [`JoinEnv::new`] with the greedy reference cost supplied by the caller.
    pub fn with_reference(
        catalog: &'a Catalog,
        query: &'a JoinQuery,
        config: EnvConfig,
        reference_cost: f64,
    ) -> Result<Self> {
        Ok(Self {
            catalog,
            query,
            config,
            model: CardinalityModel::new(query, catalog)?,
            blocks: PredicateBlocks::new(query, catalog),
            reference_cost,
            state: initial_state(query, &config)?,
        })
    }

    pub fn state(&self) -> &EpisodeState {
        &self.state
    }

    pub fn query(&self) -> &JoinQuery {
        self.query
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn reset(&mut self) -> Result<()> {
        self.state = initial_state(self.query, &self.config)?;
        Ok(())
    }

    pub fn observe(&self) -> Result<StateVector> {
        featurize_with(&self.state, self.catalog, &self.blocks, &self.config)
    }

    pub fn mask(&self) -> Vec<bool> {
        self.state.action_mask(self.config.n_max)
    }

    /// Applies `action` and returns the reward it earned.
    pub fn step(&mut self, action: Action) -> Result<f64> {
        self.state.apply_in_place(action)?;
        match self.state.final_tree() {
            Some(tree) => {
                let cost = self.model.tree_cost(tree)?;
                Ok(reward_from_costs(self.config.reward_mode, cost, self.reference_cost))
            }
            None => Ok(0.0),
        }
    }

    /// Cost of the finished plan.
    pub fn final_cost(&self) -> Option<f64> {
        self.state
            .final_tree()
            .map(|t| self.model.tree_cost(t).expect("forest covers the query"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{generate_catalog, load_catalog, CatalogSpec};
    use crate::query::{generate_workload, parse_query, Shape};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn four_relation_catalog() -> Catalog {
        load_catalog(
            r#"{"relations":[
            {"name":"A","rows":1000,"attributes":[{"name":"id","distinct":1000}]},
            {"name":"B","rows":2000,"attributes":[{"name":"id","distinct":1000},{"name":"a2","distinct":200}]},
            {"name":"C","rows":500,"attributes":[{"name":"id3","distinct":500}]},
            {"name":"D","rows":10000,"attributes":[{"name":"id2","distinct":1000},{"name":"id3","distinct":500}]}
        ]}"#,
        )
        .unwrap()
    }

    fn four_relation_query(cat: &Catalog) -> JoinQuery {
        parse_query(
            "SELECT * FROM A, B, C, D WHERE A.id = B.id AND A.id = D.id2 AND C.id3 = D.id3 AND B.a2 > 100",
            cat,
        )
        .unwrap()
    }

    fn names(s: &EpisodeState) -> Vec<String> {
        s.forest().iter().map(ToString::to_string).collect()
    }

    #[test]
    fn three_step_episode_replays() {
        let cat = four_relation_catalog();
        let q = four_relation_query(&cat);
        let cfg = EnvConfig::default();
        let s1 = initial_state(&q, &cfg).unwrap();
        assert_eq!(names(&s1), ["A", "B", "C", "D"]);
        assert_eq!(s1.action_set().unwrap().len(), 12);
        let s2 = s1.apply_action(Action::new(1, 3)).unwrap();
        assert_eq!(names(&s2), ["(A C)", "B", "D"]);
        let s3 = s2.apply_action(Action::new(2, 3)).unwrap();
        assert_eq!(names(&s3), ["(A C)", "(B D)"]);
        assert_eq!(
            s3.action_set().unwrap(),
            [Action::new(1, 2), Action::new(2, 1)]
        );
        let s4 = s3.apply_action(Action::new(1, 2)).unwrap();
        assert_eq!(names(&s4), ["((A C) (B D))"]);
        assert!(s4.is_terminal());
        assert_eq!(s4.step(), 3);
        assert!(matches!(s4.action_set(), Err(Error::TerminalState)));
    }

    #[test]
    fn reversed_action_swaps_children() {
        let cat = four_relation_catalog();
        let q = four_relation_query(&cat);
        let s = initial_state(&q, &EnvConfig::default()).unwrap();
        let s = s.apply_action(Action::new(3, 1)).unwrap();
        assert_eq!(names(&s), ["(C A)", "B", "D"]);
    }

    #[test]
    fn invalid_actions() {
        let cat = four_relation_catalog();
        let q = four_relation_query(&cat);
        let s = initial_state(&q, &EnvConfig::default()).unwrap();
        for (x, y) in [(1, 1), (0, 2), (1, 5), (5, 1)] {
            assert!(matches!(
                s.apply_action(Action::new(x, y)),
                Err(Error::InvalidAction { .. })
            ));
        }
    }

    #[test]
    fn capacity_is_enforced() {
        let cat = four_relation_catalog();
        let q = four_relation_query(&cat);
        let cfg = EnvConfig {
            n_max: 3,
            ..EnvConfig::default()
        };
        assert!(matches!(initial_state(&q, &cfg), Err(Error::Capacity { .. })));
        let two = parse_query("SELECT * FROM A, B", &cat).unwrap();
        assert_eq!(initial_state(&two, &cfg).unwrap().forest().len(), 2);
    }

    #[test]
    fn terminal_flag() {
        let s = EpisodeState::from_forest(vec![JoinTree::leaf("A")], 1);
        assert!(s.is_terminal());
        let s = EpisodeState::from_forest(vec![JoinTree::leaf("A"), JoinTree::leaf("B")], 0);
        assert!(!s.is_terminal());
    }

    #[test]
    fn rewards() {
        let cat = four_relation_catalog();
        let q = four_relation_query(&cat);
        let recip = EnvConfig {
            reward_mode: RewardMode::Reciprocal,
            ..EnvConfig::default()
        };
        let s = initial_state(&q, &recip).unwrap();
        assert_eq!(reward(&s, &q, &cat, &recip).unwrap(), 0.0);
        let done = s
            .apply_action(Action::new(1, 3))
            .and_then(|s| s.apply_action(Action::new(2, 3)))
            .and_then(|s| s.apply_action(Action::new(1, 2)))
            .unwrap();
        let c = crate::jointree::cost(done.final_tree().unwrap(), &q, &cat)
            .unwrap()
            .total_cost;
        assert_eq!(reward(&done, &q, &cat, &recip).unwrap(), 1.0 / c);
        assert_eq!(reward_from_costs(RewardMode::Reciprocal, 4000.0, 0.0), 0.00025);

        let norm = EnvConfig::default();
        let greedy = baselines::greedy(&q, &cat).unwrap();
        let s = EpisodeState::from_forest(vec![greedy.tree.clone()], 3);
        assert_eq!(reward(&s, &q, &cat, &norm).unwrap(), 1.0);
    }

    #[test]
    fn four_relation_state_vector() {
        let cat = four_relation_catalog();
        let q = four_relation_query(&cat);
        let cfg = EnvConfig::default();
        let s = initial_state(&q, &cfg)
            .unwrap()
            .apply_action(Action::new(1, 3))
            .unwrap();
        let v = featurize(&s, &cat, &q, &cfg).unwrap();
        assert_eq!(v.tree_row(0), [0.5, 0.0, 0.5, 0.0]);
        assert_eq!(v.tree_row(1), [0.0, 1.0, 0.0, 0.0]);
        assert_eq!(v.tree_row(2), [0.0, 0.0, 0.0, 1.0]);
        for r in 3..cfg.n_max {
            assert!(v.tree_row(r).iter().all(|&x| x == 0.0));
        }
        // m[1][2] = m[2][1] = 1 in 1-based terms.
        assert_eq!((v.join_block[1], v.join_block[4]), (1.0, 1.0));
        assert_eq!((v.join_block[4 + 2], v.join_block[2 * 4 + 1]), (0.0, 0.0));
        let b_a2 = cat.global_attribute_index("B", "a2").unwrap();
        assert_eq!(v.selection_block[b_a2], 1.0);
        assert_eq!(v.len(), 10 * 4 + 16 + 6);
        assert_eq!(v.flatten().len(), cfg.state_dim(&cat));
    }

    #[test]
    fn padding_rows_are_zero() {
        let cat = four_relation_catalog();
        let q = parse_query("SELECT * FROM A, B WHERE A.id = B.id", &cat).unwrap();
        let cfg = EnvConfig::default();
        let v = featurize(&initial_state(&q, &cfg).unwrap(), &cat, &q, &cfg).unwrap();
        for r in 2..10 {
            assert!(v.tree_row(r).iter().all(|&x| x == 0.0));
        }
        let too_small = EnvConfig {
            n_max: 2,
            ..cfg
        };
        let big = EpisodeState::from_forest(
            vec![JoinTree::leaf("A"), JoinTree::leaf("B"), JoinTree::leaf("C")],
            0,
        );
        assert!(matches!(
            featurize(&big, &cat, &q, &too_small),
            Err(Error::Capacity { .. })
        ));
    }

    #[test]
    fn mask_matches_action_set() {
        let cat = four_relation_catalog();
        let q = four_relation_query(&cat);
        let s = initial_state(&q, &EnvConfig::default()).unwrap();
        let mask = s.action_mask(10);
        let from_mask: Vec<Action> = mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| Action::from_slot(i, 10))
            .collect();
        assert_eq!(from_mask, s.action_set().unwrap());
        assert_eq!(Action::new(2, 3).slot(10), 12);
    }

    fn random_tree(rng: &mut ChaCha8Rng, mut leaves: Vec<JoinTree>) -> JoinTree {
        while leaves.len() > 1 {
            let i = rng.random_range(0..leaves.len());
            let a = leaves.swap_remove(i);
            let j = rng.random_range(0..leaves.len());
            let b = leaves.swap_remove(j);
            leaves.push(JoinTree::join(a, b));
        }
        leaves.pop().unwrap()
    }

    proptest! {
        #[test]
        fn episode_invariants(seed in 0u64..200, q in 2usize..=8) {
            let cat = generate_catalog(seed, CatalogSpec::default()).unwrap();
            let query = generate_workload(&cat, seed, Shape::Random, (q, q), 1).unwrap().remove(0);
            let cfg = EnvConfig::default();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = initial_state(&query, &cfg).unwrap();
            let v = featurize(&s, &cat, &query, &cfg).unwrap();
            for r in 0..q {
                let row = v.tree_row(r);
                prop_assert_eq!(row.iter().filter(|&&x| x == 1.0).count(), 1);
                prop_assert_eq!(row.iter().filter(|&&x| x != 0.0).count(), 1);
            }
            let mut steps = 0;
            while !s.is_terminal() {
                let acts = s.action_set().unwrap();
                prop_assert_eq!(acts.len(), s.forest().len() * (s.forest().len() - 1));
                s = s.apply_action(acts[rng.random_range(0..acts.len())]).unwrap();
                steps += 1;
                let mut leaves: Vec<&str> = s.forest().iter().flat_map(|t| t.leaves()).collect();
                leaves.sort();
                let mut expect: Vec<&str> = query.relations.iter().map(String::as_str).collect();
                expect.sort();
                prop_assert_eq!(leaves, expect);
                prop_assert_eq!(s.forest().len(), q - s.step());
                let v = featurize(&s, &cat, &query, &cfg).unwrap();
                for &x in &v.tree_block {
                    if x != 0.0 {
                        let depth = (1.0 / x).round();
                        prop_assert!((1.0..=q as f64).contains(&depth));
                        prop_assert!((x - 1.0 / depth).abs() < 1e-15);
                    }
                }
            }
            prop_assert_eq!(steps, q - 1);
        }

        #[test]
        fn every_tree_is_reachable(seed in 0u64..1000, q in 3usize..=8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let relations: Vec<String> = (0..q).map(|i| format!("R{i}")).collect();
            let tree = random_tree(&mut rng, relations.iter().map(JoinTree::leaf).collect());
            let mut s = EpisodeState::from_forest(relations.iter().map(JoinTree::leaf).collect(), 0);
            for a in action_sequence_for(&tree, &relations).unwrap() {
                s = s.apply_action(a).unwrap();
            }
            prop_assert_eq!(s.final_tree(), Some(&tree));
        }
    }
}
