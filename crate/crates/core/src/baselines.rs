//! Classical enumerators: exhaustive bushy DP, left-deep DP, greedy pairing,
//! QuickPick-k random sampling and a brute-force oracle for tiny queries.
//!
//! All of them cost plans with [`CardinalityModel`], so their totals are
//! directly comparable with each other and with learned plans. Ties on cost
//! are broken by the lexicographically smallest serialized tree.

use std::cmp::Ordering;
use std::time::{Duration, Instant};

use rand::Rng;

use crate::catalog::Catalog;
use crate::env::{initial_state, EnvConfig};
use crate::error::{Error, Result};
use crate::jointree::{join_cost, CardinalityModel, JoinTree};
use crate::query::JoinQuery;

/// Largest query the dynamic programs accept.
pub const DP_MAX_RELATIONS: usize = 14;
/// Largest query the brute-force oracles accept.
pub const BRUTE_FORCE_MAX_RELATIONS: usize = 5;

pub const DEFAULT_QUICKPICK_SAMPLES: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub tree: JoinTree,
    pub total_cost: f64,
    pub plans_considered: u64,
    pub wall_time: Duration,
}

fn finish(
    model: &CardinalityModel,
    tree: JoinTree,
    plans_considered: u64,
    start: Instant,
) -> Result<PlanResult> {
    let total_cost = model.cost_report(&tree)?.total_cost;
    Ok(PlanResult {
        tree,
        total_cost,
        plans_considered,
        wall_time: start.elapsed(),
    })
}

fn check_size(query: &JoinQuery, limit: usize) -> Result<()> {
    if query.num_relations() > limit {
        return Err(Error::QueryTooLarge {
            relations: query.num_relations(),
            limit,
        });
    }
    Ok(())
}

/// Orders `"(a b)"` against `"(c d)"` without building either string.
fn cmp_joined(a: &str, b: &str, c: &str, d: &str) -> Ordering {
    let lhs = a.bytes().chain(" ".bytes()).chain(b.bytes()).chain(")".bytes());
    let rhs = c.bytes().chain(" ".bytes()).chain(d.bytes()).chain(")".bytes());
    lhs.cmp(rhs)
}

/// Subset tables shared by both dynamic programs.
struct DpTable {
    card: Vec<f64>,
    cost: Vec<f64>,
    split: Vec<(u64, u64)>,
    serialized: Vec<String>,
}

impl DpTable {
    fn new(model: &CardinalityModel) -> Self {
        let size = 1usize << model.num_relations();
        let mut t = Self {
            card: (0..size as u64).map(|m| model.subset_cardinality(m)).collect(),
            cost: vec![f64::INFINITY; size],
            split: vec![(0, 0); size],
            serialized: vec![String::new(); size],
        };
        for i in 0..model.num_relations() {
            t.cost[1 << i] = 0.0;
            t.serialized[1 << i] = model.relation_name(i).to_string();
        }
        t
    }

    /// Offers `left ⋈ right` as the plan for `left | right`.
    fn offer(&mut self, left: u64, right: u64) {
        let mask = (left | right) as usize;
        let c = join_cost(self.card[mask], self.cost[left as usize], self.cost[right as usize]);
        let better = match c.partial_cmp(&self.cost[mask]) {
            Some(Ordering::Less) => true,
            Some(Ordering::Equal) => {
                let (cur_l, cur_r) = self.split[mask];
                cmp_joined(
                    &self.serialized[left as usize],
                    &self.serialized[right as usize],
                    &self.serialized[cur_l as usize],
                    &self.serialized[cur_r as usize],
                ) == Ordering::Less
            }
            _ => false,
        };
        if better {
            self.cost[mask] = c;
            self.split[mask] = (left, right);
        }
    }

    fn seal(&mut self, mask: u64) {
        let (l, r) = self.split[mask as usize];
        self.serialized[mask as usize] =
            format!("({} {})", self.serialized[l as usize], self.serialized[r as usize]);
    }

    fn tree(&self, model: &CardinalityModel, mask: u64) -> JoinTree {
        if mask.count_ones() == 1 {
            return JoinTree::leaf(model.relation_name(mask.trailing_zeros() as usize));
        }
        let (l, r) = self.split[mask as usize];
        JoinTree::join(self.tree(model, l), self.tree(model, r))
    }
}

/// Minimum-cost bushy plan by dynamic programming over relation subsets.
///
/// Every split of every subset is considered, cross products included, so
/// the result is optimal over the same plan space the other enumerators
/// (and the learned policy) can reach.
pub fn dp_optimal(query: &JoinQuery, catalog: &Catalog) -> Result<PlanResult> {
    let start = Instant::now();
    check_size(query, DP_MAX_RELATIONS)?;
    let model = CardinalityModel::new(query, catalog)?;
    let full = model.full_mask();
    let mut table = DpTable::new(&model);
    let mut considered = 0u64;
    for mask in 1..=full {
        if mask.count_ones() < 2 {
            continue;
        }
        let mut sub = (mask - 1) & mask;
        while sub != 0 {
            table.offer(sub, mask ^ sub);
            considered += 1;
            sub = (sub - 1) & mask;
        }
        table.seal(mask);
    }
    let tree = table.tree(&model, full);
    finish(&model, tree, considered, start)
}

/// Minimum-cost left-deep plan (every join's right input is a base relation).
pub fn left_deep_dp(query: &JoinQuery, catalog: &Catalog) -> Result<PlanResult> {
    let start = Instant::now();
    check_size(query, DP_MAX_RELATIONS)?;
    let model = CardinalityModel::new(query, catalog)?;
    let full = model.full_mask();
    let mut table = DpTable::new(&model);
    let mut considered = 0u64;
    for mask in 1..=full {
        if mask.count_ones() < 2 {
            continue;
        }
        let mut bits = mask;
        while bits != 0 {
            let r = bits & bits.wrapping_neg();
            table.offer(mask ^ r, r);
            considered += 1;
            bits ^= r;
        }
        table.seal(mask);
    }
    let tree = table.tree(&model, full);
    finish(&model, tree, considered, start)
}

/// Repeatedly joins the pair of forest trees with the smallest estimated
/// result, until one tree remains.
pub fn greedy(query: &JoinQuery, catalog: &Catalog) -> Result<PlanResult> {
    let start = Instant::now();
    let model = CardinalityModel::new(query, catalog)?;
    let mut forest: Vec<(JoinTree, u64, String)> = (0..model.num_relations())
        .map(|i| {
            let name = model.relation_name(i);
            (JoinTree::leaf(name), 1u64 << i, name.to_string())
        })
        .collect();
    let mut considered = 0u64;
    while forest.len() > 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..forest.len() {
            for j in 0..forest.len() {
                if i == j {
                    continue;
                }
                considered += 1;
                let card = model.subset_cardinality(forest[i].1 | forest[j].1);
                let better = match best {
                    None => true,
                    Some((bc, bi, bj)) => match card.partial_cmp(&bc) {
                        Some(Ordering::Less) => true,
                        Some(Ordering::Equal) => {
                            cmp_joined(&forest[i].2, &forest[j].2, &forest[bi].2, &forest[bj].2)
                                == Ordering::Less
                        }
                        _ => false,
                    },
                };
                if better {
                    best = Some((card, i, j));
                }
            }
        }
        let (_, i, j) = best.expect("forest has at least two trees");
        let (lo, hi) = (i.min(j), i.max(j));
        let hi_entry = forest.remove(hi);
        let lo_entry = forest[lo].clone();
        let (l, r) = if i < j { (lo_entry, hi_entry) } else { (hi_entry, lo_entry) };
        forest[lo] = (
            JoinTree::join(l.0, r.0),
            l.1 | r.1,
            format!("({} {})", l.2, r.2),
        );
    }
    let tree = forest.pop().expect("one tree remains").0;
    finish(&model, tree, considered, start)
}

/// Best of `k` plans, each built by uniformly random valid actions through
/// the episode transition system. The i-th sample only depends on the rng
/// draws before it, so a larger `k` with the same seed extends a smaller run.
pub fn quickpick(
    query: &JoinQuery,
    catalog: &Catalog,
    k: usize,
    rng: &mut impl Rng,
) -> Result<PlanResult> {
    let start = Instant::now();
    if k == 0 {
        return Err(Error::Config("quickpick needs at least one sample".into()));
    }
    let model = CardinalityModel::new(query, catalog)?;
    let config = EnvConfig {
        n_max: query.num_relations().max(2),
        ..EnvConfig::default()
    };
    let mut best: Option<(f64, JoinTree)> = None;
    for _ in 0..k {
        let mut state = initial_state(query, &config)?;
        while !state.is_terminal() {
            let actions = state.action_set()?;
            let a = actions[rng.random_range(0..actions.len())];
            state.apply_in_place(a)?;
        }
        let tree = state.final_tree().expect("terminal").clone();
        let c = model.tree_cost(&tree)?;
        if best.as_ref().is_none_or(|(bc, _)| c < *bc) {
            best = Some((c, tree));
        }
    }
    let (_, tree) = best.expect("k >= 1");
    finish(&model, tree, k as u64, start)
}

/// Every ordered binary tree over the relations in `mask` (query positions).
fn all_trees(model: &CardinalityModel, mask: u64) -> Vec<JoinTree> {
    if mask.count_ones() == 1 {
        return vec![JoinTree::leaf(model.relation_name(mask.trailing_zeros() as usize))];
    }
    let mut out = Vec::new();
    let mut sub = (mask - 1) & mask;
    while sub != 0 {
        let rights = all_trees(model, mask ^ sub);
        for l in all_trees(model, sub) {
            for r in &rights {
                out.push(JoinTree::join(l.clone(), r.clone()));
            }
        }
        sub = (sub - 1) & mask;
    }
    out
}

fn best_of(
    model: &CardinalityModel,
    trees: impl IntoIterator<Item = JoinTree>,
) -> Result<(JoinTree, u64)> {
    let mut best: Option<(f64, String, JoinTree)> = None;
    let mut n = 0u64;
    for t in trees {
        n += 1;
        let c = model.cost_report(&t)?.total_cost;
        let s = t.to_string();
        let better = match &best {
            None => true,
            Some((bc, bs, _)) => c < *bc || (c == *bc && s < *bs),
        };
        if better {
            best = Some((c, s, t));
        }
    }
    let (_, _, t) = best.ok_or(Error::Empty("plan space"))?;
    Ok((t, n))
}

/// Exact optimum by costing all `q!·Catalan(q-1)` ordered binary trees.
pub fn brute_force_all_trees(query: &JoinQuery, catalog: &Catalog) -> Result<PlanResult> {
    let start = Instant::now();
    check_size(query, BRUTE_FORCE_MAX_RELATIONS)?;
    let model = CardinalityModel::new(query, catalog)?;
    let (tree, n) = best_of(&model, all_trees(&model, model.full_mask()))?;
    finish(&model, tree, n, start)
}

/// Exact left-deep optimum by costing all `q!` relation permutations.
pub fn brute_force_left_deep(query: &JoinQuery, catalog: &Catalog) -> Result<PlanResult> {
    let start = Instant::now();
    check_size(query, BRUTE_FORCE_MAX_RELATIONS + 2)?;
    let model = CardinalityModel::new(query, catalog)?;
    let mut perms = Vec::new();
    permutations(&mut (0..model.num_relations()).collect(), 0, &mut perms);
    let trees = perms.into_iter().map(|p| {
        p.iter()
            .map(|&i| JoinTree::leaf(model.relation_name(i)))
            .reduce(JoinTree::join)
            .expect("non-empty query")
    });
    let (tree, n) = best_of(&model, trees)?;
    finish(&model, tree, n, start)
}

fn permutations(items: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == items.len() {
        out.push(items.clone());
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permutations(items, k + 1, out);
        items.swap(k, i);
    }
}
