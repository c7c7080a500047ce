//! Binary join trees, cardinality estimation and the C_out cost model.
//!
//! A node's estimated cardinality is the product of its base relations'
//! filtered row counts and of `1/max(distinct(l), distinct(r))` for every join
//! predicate whose two sides both lie under the node. That quantity depends
//! only on the node's leaf set, which is what lets the dynamic-programming
//! baselines tabulate it per relation subset.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::query::JoinQuery;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum JoinTree {
    Leaf(String),
    Join(Box<JoinTree>, Box<JoinTree>),
}

impl JoinTree {
    pub fn leaf(name: impl Into<String>) -> Self {
        JoinTree::Leaf(name.into())
    }

    pub fn join(left: JoinTree, right: JoinTree) -> Self {
        JoinTree::Join(Box::new(left), Box::new(right))
    }

    pub fn leaf_set(&self) -> BTreeSet<String> {
        self.leaves().into_iter().map(str::to_string).collect()
    }

    /// Leaves in left-to-right order.
    pub fn leaves(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            JoinTree::Leaf(r) => out.push(r),
            JoinTree::Join(l, r) => {
                l.collect_leaves(out);
                r.collect_leaves(out);
            }
        }
    }

    pub fn num_leaves(&self) -> usize {
        match self {
            JoinTree::Leaf(_) => 1,
            JoinTree::Join(l, r) => l.num_leaves() + r.num_leaves(),
        }
    }

    pub fn num_joins(&self) -> usize {
        self.num_leaves() - 1
    }

    /// Level of `relation` counting the root as level 1.
    pub fn depth_of_leaf(&self, relation: &str) -> Result<usize> {
        self.find_depth(relation, 1)
            .ok_or_else(|| Error::RelationAbsent(relation.to_string()))
    }

    fn find_depth(&self, relation: &str, level: usize) -> Option<usize> {
        match self {
            JoinTree::Leaf(r) => (r == relation).then_some(level),
            JoinTree::Join(l, r) => l
                .find_depth(relation, level + 1)
                .or_else(|| r.find_depth(relation, level + 1)),
        }
    }

    /// Calls `f(relation, depth)` for every leaf.
    pub fn for_each_leaf_depth(&self, f: &mut impl FnMut(&str, usize)) {
        fn walk(t: &JoinTree, level: usize, f: &mut impl FnMut(&str, usize)) {
            match t {
                JoinTree::Leaf(r) => f(r, level),
                JoinTree::Join(l, r) => {
                    walk(l, level + 1, f);
                    walk(r, level + 1, f);
                }
            }
        }
        walk(self, 1, f)
    }

    /// Every join's right input is a base relation.
    pub fn is_left_deep(&self) -> bool {
        match self {
            JoinTree::Leaf(_) => true,
            JoinTree::Join(l, r) => matches!(**r, JoinTree::Leaf(_)) && l.is_left_deep(),
        }
    }

    /// Same tree with children swapped at every join.
    pub fn mirrored(&self) -> JoinTree {
        match self {
            JoinTree::Leaf(r) => JoinTree::Leaf(r.clone()),
            JoinTree::Join(l, r) => JoinTree::join(r.mirrored(), l.mirrored()),
        }
    }
}

/// Parenthesized form: `((A C) (B D))`.
impl fmt::Display for JoinTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JoinTree::Leaf(r) => f.write_str(r),
            JoinTree::Join(l, r) => write!(f, "({l} {r})"),
        }
    }
}

impl FromStr for JoinTree {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bytes = s.as_bytes();
        let mut pos = 0;
        let tree = parse_tree(s, bytes, &mut pos)?;
        skip_ws(bytes, &mut pos);
        if pos != bytes.len() {
            return Err(Error::Syntax {
                offset: pos,
                message: "trailing input after join tree".into(),
            });
        }
        Ok(tree)
    }
}

fn skip_ws(bytes: &[u8], pos: &mut usize) {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
}

fn parse_tree(s: &str, bytes: &[u8], pos: &mut usize) -> Result<JoinTree> {
    skip_ws(bytes, pos);
    match bytes.get(*pos) {
        Some(b'(') => {
            *pos += 1;
            let l = parse_tree(s, bytes, pos)?;
            let r = parse_tree(s, bytes, pos)?;
            skip_ws(bytes, pos);
            if bytes.get(*pos) != Some(&b')') {
                return Err(Error::Syntax {
                    offset: *pos,
                    message: "expected `)`".into(),
                });
            }
            *pos += 1;
            Ok(JoinTree::join(l, r))
        }
        Some(c) if c.is_ascii_alphanumeric() || *c == b'_' => {
            let start = *pos;
            while *pos < bytes.len() && (bytes[*pos].is_ascii_alphanumeric() || bytes[*pos] == b'_')
            {
                *pos += 1;
            }
            Ok(JoinTree::Leaf(s[start..*pos].to_string()))
        }
        _ => Err(Error::Syntax {
            offset: *pos,
            message: "expected relation name or `(`".into(),
        }),
    }
}

/// Result of costing a complete join tree.
#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    /// Sum of the estimated cardinalities of all join nodes.
    pub total_cost: f64,
    /// Join nodes in post-order with their estimated row counts.
    pub per_node_cardinality: Vec<(JoinTree, f64)>,
}

fn leaf_rows(query: &JoinQuery, catalog: &Catalog, relation: &str) -> Result<f64> {
    if !query.contains(relation) {
        return Err(Error::LeafNotInQuery(relation.to_string()));
    }
    let rows = catalog.relation(relation)?.row_count as f64;
    Ok(query
        .selection_predicates
        .iter()
        .filter(|p| p.column.relation == relation)
        .fold(rows, |acc, p| acc * p.selectivity))
}

fn predicate_factor(catalog: &Catalog, p: &crate::query::JoinPredicate) -> Result<f64> {
    let l = catalog.attribute(&p.left.relation, &p.left.attribute)?.distinct_count;
    let r = catalog.attribute(&p.right.relation, &p.right.attribute)?.distinct_count;
    Ok(1.0 / l.max(r) as f64)
}

/// Estimated rows produced by `tree`, evaluated bottom-up: a join multiplies
/// its inputs and applies every predicate with one side in each input.
pub fn estimate_cardinality(tree: &JoinTree, query: &JoinQuery, catalog: &Catalog) -> Result<f64> {
    fn go(
        t: &JoinTree,
        query: &JoinQuery,
        catalog: &Catalog,
    ) -> Result<(f64, BTreeSet<String>)> {
        match t {
            JoinTree::Leaf(r) => Ok((leaf_rows(query, catalog, r)?, BTreeSet::from([r.clone()]))),
            JoinTree::Join(l, r) => {
                let (cl, sl) = go(l, query, catalog)?;
                let (cr, sr) = go(r, query, catalog)?;
                let mut card = cl * cr;
                for p in &query.join_predicates {
                    let crosses = (sl.contains(&p.left.relation) && sr.contains(&p.right.relation))
                        || (sr.contains(&p.left.relation) && sl.contains(&p.right.relation));
                    if crosses {
                        card *= predicate_factor(catalog, p)?;
                    }
                }
                let mut s = sl;
                s.extend(sr);
                Ok((card, s))
            }
        }
    }
    go(tree, query, catalog).map(|(c, _)| c)
}

/// The cost model prepared for one query: relations are addressed by their
/// position in `query.relations` and relation sets by bitmask.
#[derive(Debug, Clone)]
pub struct CardinalityModel {
    relations: Vec<String>,
    positions: HashMap<String, usize>,
    base_rows: Vec<f64>,
    /// (mask of both sides, selectivity factor) in predicate order.
    predicates: Vec<(u64, f64)>,
}

impl CardinalityModel {
    pub fn new(query: &JoinQuery, catalog: &Catalog) -> Result<Self> {
        if query.num_relations() > 64 {
            return Err(Error::QueryTooLarge {
                relations: query.num_relations(),
                limit: 64,
            });
        }
        let positions: HashMap<String, usize> = query
            .relations
            .iter()
            .enumerate()
            .map(|(i, r)| (r.clone(), i))
            .collect();
        let base_rows = query
            .relations
            .iter()
            .map(|r| leaf_rows(query, catalog, r))
            .collect::<Result<_>>()?;
        let predicates = query
            .join_predicates
            .iter()
            .map(|p| {
                let l = positions[&p.left.relation];
                let r = positions[&p.right.relation];
                Ok(((1u64 << l) | (1u64 << r), predicate_factor(catalog, p)?))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            relations: query.relations.clone(),
            positions,
            base_rows,
            predicates,
        })
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn relation_name(&self, position: usize) -> &str {
        &self.relations[position]
    }

    pub fn full_mask(&self) -> u64 {
        if self.relations.len() == 64 {
            u64::MAX
        } else {
            (1u64 << self.relations.len()) - 1
        }
    }

    pub fn position(&self, relation: &str) -> Option<usize> {
        self.positions.get(relation).copied()
    }

    /// Estimated rows of any tree whose leaf set is `mask`.
    pub fn subset_cardinality(&self, mask: u64) -> f64 {
        let mut card = 1.0;
        let mut bits = mask;
        while bits != 0 {
            let i = bits.trailing_zeros() as usize;
            card *= self.base_rows[i];
            bits &= bits - 1;
        }
        for &(pm, f) in &self.predicates {
            if pm & mask == pm {
                card *= f;
            }
        }
        card
    }

    /// True if some join predicate has one side in `a` and the other in `b`
    /// (`a` and `b` disjoint).
    pub fn connected(&self, a: u64, b: u64) -> bool {
        self.predicates
            .iter()
            .any(|&(pm, _)| pm & a != 0 && pm & b != 0)
    }

    pub fn leaf_mask(&self, tree: &JoinTree) -> Result<u64> {
        match tree {
            JoinTree::Leaf(r) => self
                .position(r)
                .map(|i| 1u64 << i)
                .ok_or_else(|| Error::LeafNotInQuery(r.clone())),
            JoinTree::Join(l, r) => {
                let (ml, mr) = (self.leaf_mask(l)?, self.leaf_mask(r)?);
                if ml & mr != 0 {
                    return Err(Error::Coverage(format!("relation repeated in {tree}")));
                }
                Ok(ml | mr)
            }
        }
    }

    /// C_out of a (possibly partial) tree: [`join_cost`] at each join, zero
    /// at leaves.
    pub fn tree_cost(&self, tree: &JoinTree) -> Result<f64> {
        self.cost_with(tree, &mut |_, _| {}).map(|(c, _)| c)
    }

    fn cost_with(
        &self,
        tree: &JoinTree,
        visit: &mut impl FnMut(&JoinTree, f64),
    ) -> Result<(f64, u64)> {
        match tree {
            JoinTree::Leaf(_) => Ok((0.0, self.leaf_mask(tree)?)),
            JoinTree::Join(l, r) => {
                let (cl, ml) = self.cost_with(l, visit)?;
                let (cr, mr) = self.cost_with(r, visit)?;
                if ml & mr != 0 {
                    return Err(Error::Coverage(format!("relation repeated in {tree}")));
                }
                let card = self.subset_cardinality(ml | mr);
                visit(tree, card);
                Ok((join_cost(card, cl, cr), ml | mr))
            }
        }
    }

    pub fn cost_report(&self, tree: &JoinTree) -> Result<CostReport> {
        let mut nodes = Vec::new();
        let (total, mask) = self.cost_with(tree, &mut |t, c| nodes.push((t.clone(), c)))?;
        if mask != self.full_mask() {
            let missing: Vec<&str> = (0..self.relations.len())
                .filter(|i| mask & (1 << i) == 0)
                .map(|i| self.relations[i].as_str())
                .collect();
            return Err(Error::Coverage(format!("missing {}", missing.join(", "))));
        }
        Ok(CostReport {
            total_cost: total,
            per_node_cardinality: nodes,
        })
    }
}

/// Cost of a join node from its output cardinality and its inputs' costs.
/// Symmetric in the inputs bit for bit, so mirrored plans tie exactly.
#[inline]
pub fn join_cost(card: f64, left_cost: f64, right_cost: f64) -> f64 {
    card + (left_cost + right_cost)
}

/// C_out cost of a complete plan for `query`.
pub fn cost(tree: &JoinTree, query: &JoinQuery, catalog: &Catalog) -> Result<CostReport> {
    CardinalityModel::new(query, catalog)?.cost_report(tree)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{generate_catalog, load_catalog, CatalogSpec};
    use crate::query::{generate_workload, parse_query, Shape};
    use proptest::prelude::*;

    fn t(s: &str) -> JoinTree {
        s.parse().unwrap()
    }

    fn catalog() -> Catalog {
        load_catalog(
            r#"{"relations":[
            {"name":"A","rows":1000,"attributes":[{"name":"id","distinct":1000}]},
            {"name":"B","rows":2000,"attributes":[{"name":"id","distinct":1000},{"name":"a2","distinct":200},{"name":"c","distinct":2000}]},
            {"name":"C","rows":500,"attributes":[{"name":"id","distinct":500},{"name":"b","distinct":500}]},
            {"name":"D","rows":10000,"attributes":[{"name":"id","distinct":10000}]}
        ]}"#,
        )
        .unwrap()
    }

    #[test]
    fn serialization_round_trips() {
        for s in ["A", "(A B)", "((A C) (B D))", "(((A B) C) D)"] {
            assert_eq!(t(s).to_string(), s);
        }
        assert!("(A B".parse::<JoinTree>().is_err());
        assert!("(A B) C".parse::<JoinTree>().is_err());
        assert!("()".parse::<JoinTree>().is_err());
    }

    #[test]
    fn depth_examples() {
        assert_eq!(t("(A C)").depth_of_leaf("C").unwrap(), 2);
        assert_eq!(t("B").depth_of_leaf("B").unwrap(), 1);
        let abc = t("((A C) B)");
        assert_eq!(abc.depth_of_leaf("B").unwrap(), 2);
        assert_eq!(abc.depth_of_leaf("A").unwrap(), 3);
        assert!(matches!(abc.depth_of_leaf("D"), Err(Error::RelationAbsent(_))));
        assert_eq!(
            abc.leaf_set(),
            BTreeSet::from(["A".into(), "B".into(), "C".into()])
        );
    }

    #[test]
    fn leaf_with_range_selection() {
        let cat = catalog();
        let q = parse_query("SELECT * FROM A, B WHERE A.id = B.id AND B.a2 > 100", &cat).unwrap();
        let c = estimate_cardinality(&t("B"), &q, &cat).unwrap();
        assert!((c - 2000.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn key_join_and_cross_join() {
        let cat = catalog();
        let q = parse_query("SELECT * FROM A, B, C WHERE A.id = B.id", &cat).unwrap();
        assert_eq!(estimate_cardinality(&t("(A B)"), &q, &cat).unwrap(), 2000.0);
        assert_eq!(estimate_cardinality(&t("(A C)"), &q, &cat).unwrap(), 500_000.0);
        assert!(matches!(
            estimate_cardinality(&t("(A D)"), &q, &cat),
            Err(Error::LeafNotInQuery(_))
        ));
    }

    #[test]
    fn cost_sums_join_nodes() {
        let cat = catalog();
        // card(A⋈B) = 1000*2000/1000; card((A⋈B)⋈C) = 2000*500/max(2000, 500)
        let q = parse_query("SELECT * FROM A, B, C WHERE A.id = B.id AND B.c = C.b", &cat).unwrap();
        let ab = estimate_cardinality(&t("(A B)"), &q, &cat).unwrap();
        let abc = estimate_cardinality(&t("((A B) C)"), &q, &cat).unwrap();
        assert_eq!((ab, abc), (2000.0, 500.0));
        let report = cost(&t("((A B) C)"), &q, &cat).unwrap();
        assert_eq!(report.total_cost, ab + abc);
        assert_eq!(report.per_node_cardinality.len(), 2);
        assert_eq!(report.per_node_cardinality[0], (t("(A B)"), 2000.0));
    }

    #[test]
    fn chained_key_joins_total_4000() {
        let cat = catalog();
        let q = parse_query("SELECT * FROM A, B, D WHERE A.id = B.id AND B.c = D.id", &cat).unwrap();
        // card((A⋈B)⋈D) = 2000 * 10000 / max(2000, 10000) = 2000
        let report = cost(&t("((A B) D)"), &q, &cat).unwrap();
        assert_eq!(report.total_cost, 4000.0);
    }

    #[test]
    fn two_relation_cost_is_single_join() {
        let cat = catalog();
        let q = parse_query("SELECT * FROM A, B WHERE A.id = B.id", &cat).unwrap();
        assert_eq!(cost(&t("(B A)"), &q, &cat).unwrap().total_cost, 2000.0);
    }

    #[test]
    fn coverage_errors() {
        let cat = catalog();
        let q = parse_query("SELECT * FROM A, B, C, D", &cat).unwrap();
        assert!(matches!(cost(&t("((A B) C)"), &q, &cat), Err(Error::Coverage(_))));
        assert!(matches!(
            cost(&t("((A B) (C A))"), &q, &cat),
            Err(Error::Coverage(_))
        ));
    }

    /// Every labeled binary tree over `rels`.
    fn all_trees(rels: &[String]) -> Vec<JoinTree> {
        if rels.len() == 1 {
            return vec![JoinTree::leaf(rels[0].clone())];
        }
        let n = rels.len();
        let mut out = Vec::new();
        for mask in 1..(1u32 << n) - 1 {
            let (l, r): (Vec<_>, Vec<_>) =
                (0..n).partition(|i| mask & (1 << i) != 0);
            let ls: Vec<String> = l.iter().map(|&i| rels[i].clone()).collect();
            let rs: Vec<String> = r.iter().map(|&i| rels[i].clone()).collect();
            for a in all_trees(&ls) {
                for b in all_trees(&rs) {
                    out.push(JoinTree::join(a.clone(), b));
                }
            }
        }
        out
    }

    #[test]
    fn root_cardinality_is_shape_independent() {
        let cat = generate_catalog(21, CatalogSpec::default()).unwrap();
        for shape in [Shape::Chain, Shape::Star, Shape::Clique, Shape::Random] {
            for q in generate_workload(&cat, 4, shape, (2, 4), 10).unwrap() {
                let trees = all_trees(&q.relations);
                let first = estimate_cardinality(&trees[0], &q, &cat).unwrap();
                for tree in &trees {
                    let c = estimate_cardinality(tree, &q, &cat).unwrap();
                    assert!((c - first).abs() <= 1e-12 * first.abs(), "{tree}: {c} vs {first}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn cost_properties(seed in 0u64..300, size in 2usize..=5) {
            let cat = generate_catalog(seed, CatalogSpec::default()).unwrap();
            let shape = [Shape::Chain, Shape::Star, Shape::Clique, Shape::Random][seed as usize % 4];
            let q = generate_workload(&cat, seed, shape, (size, size), 1).unwrap().remove(0);
            let model = CardinalityModel::new(&q, &cat).unwrap();
            let trees = all_trees(&q.relations);
            for tree in trees.iter().take(40) {
                let report = cost(tree, &q, &cat).unwrap();
                prop_assert!(report.total_cost > 0.0);
                // Child order never matters.
                prop_assert_eq!(cost(&tree.mirrored(), &q, &cat).unwrap().total_cost, report.total_cost);
                // Recursive and subset-based estimates agree on every node.
                for (node, card) in &report.per_node_cardinality {
                    let direct = estimate_cardinality(node, &q, &cat).unwrap();
                    prop_assert!((direct - card).abs() <= 1e-12 * card.abs());
                    prop_assert!(*card >= 0.0);
                }
                let sum: f64 = report.per_node_cardinality.iter().map(|(_, c)| c).sum();
                prop_assert!((sum - report.total_cost).abs() <= 1e-9 * report.total_cost);
                prop_assert_eq!(model.leaf_mask(tree).unwrap(), model.full_mask());
            }
        }
    }
}
