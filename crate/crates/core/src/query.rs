//! SQL-subset join queries: parsing, the join graph and selection vector
//! views used by featurization, and synthetic workload generation.
//!
//! Grammar (keywords are case-insensitive, names are not):
//!
//! ```text
//! SELECT * FROM rel (, rel)* [WHERE pred (AND pred)*] [;]
//! pred := rel.attr = rel.attr        -- equi-join
//!       | rel.attr OP number         -- selection, OP in {=, <, >, <=, >=}
//! ```

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::catalog::Catalog;
use crate::error::{Error, Result};

/// Selectivity assigned to every range predicate.
pub const RANGE_SELECTIVITY: f64 = 1.0 / 3.0;

/// Per-attribute probability that a generated query filters on it.
pub const SELECTION_PROBABILITY: f64 = 0.3;

/// Probability of each non-tree edge in a `random` shaped query.
const RANDOM_EXTRA_EDGE_PROBABILITY: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ColumnRef {
    pub relation: String,
    pub attribute: String,
}

impl ColumnRef {
    pub fn new(relation: impl Into<String>, attribute: impl Into<String>) -> Self {
        Self {
            relation: relation.into(),
            attribute: attribute.into(),
        }
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.relation, self.attribute)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Lt,
    Gt,
    Le,
    Ge,
}

impl CmpOp {
    pub const ALL: [CmpOp; 5] = [CmpOp::Eq, CmpOp::Lt, CmpOp::Gt, CmpOp::Le, CmpOp::Ge];

    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Lt => "<",
            CmpOp::Gt => ">",
            CmpOp::Le => "<=",
            CmpOp::Ge => ">=",
        }
    }
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionPredicate {
    pub column: ColumnRef,
    pub op: CmpOp,
    pub constant: f64,
    pub selectivity: f64,
}

impl SelectionPredicate {
    /// Equality keeps `1/distinct` of the rows, any range predicate a third.
    pub fn new(column: ColumnRef, op: CmpOp, constant: f64, catalog: &Catalog) -> Result<Self> {
        let attr = catalog.attribute(&column.relation, &column.attribute)?;
        let selectivity = match op {
            CmpOp::Eq => 1.0 / attr.distinct_count as f64,
            _ => RANGE_SELECTIVITY,
        };
        Ok(Self {
            column,
            op,
            constant,
            selectivity,
        })
    }
}

impl fmt::Display for SelectionPredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.column, self.op, self.constant)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinPredicate {
    pub left: ColumnRef,
    pub right: ColumnRef,
}

impl JoinPredicate {
    /// Order-insensitive identity used for duplicate detection.
    fn key(&self) -> (ColumnRef, ColumnRef) {
        if self.left <= self.right {
            (self.left.clone(), self.right.clone())
        } else {
            (self.right.clone(), self.left.clone())
        }
    }

    pub fn connects(&self, a: &str, b: &str) -> bool {
        (self.left.relation == a && self.right.relation == b)
            || (self.left.relation == b && self.right.relation == a)
    }
}

impl fmt::Display for JoinPredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {}", self.left, self.right)
    }
}

/// One query, and one episode for the learned enumerator.
#[derive(Debug, Clone, PartialEq)]
pub struct JoinQuery {
    pub id: String,
    pub relations: Vec<String>,
    pub join_predicates: Vec<JoinPredicate>,
    pub selection_predicates: Vec<SelectionPredicate>,
}

impl JoinQuery {
    /// Validates the structural invariants against `catalog`.
    pub fn new(
        id: impl Into<String>,
        relations: Vec<String>,
        join_predicates: Vec<JoinPredicate>,
        selection_predicates: Vec<SelectionPredicate>,
        catalog: &Catalog,
    ) -> Result<Self> {
        if relations.len() < 2 {
            return Err(Error::InvalidQuery(format!(
                "a join query needs at least 2 relations, got {}",
                relations.len()
            )));
        }
        let mut seen = HashSet::new();
        for rel in &relations {
            catalog.relation(rel)?;
            if !seen.insert(rel.as_str()) {
                return Err(Error::SelfJoin(rel.clone()));
            }
        }
        let in_query = |col: &ColumnRef| -> Result<()> {
            catalog.attribute(&col.relation, &col.attribute)?;
            if seen.contains(col.relation.as_str()) {
                Ok(())
            } else {
                Err(Error::InvalidQuery(format!(
                    "`{col}` references a relation missing from FROM"
                )))
            }
        };
        let mut keys = HashSet::new();
        for p in &join_predicates {
            in_query(&p.left)?;
            in_query(&p.right)?;
            if p.left.relation == p.right.relation {
                return Err(Error::InvalidQuery(format!(
                    "join predicate `{p}` does not connect two relations"
                )));
            }
            if !keys.insert(p.key()) {
                return Err(Error::InvalidQuery(format!("duplicate join predicate `{p}`")));
            }
        }
        for p in &selection_predicates {
            in_query(&p.column)?;
        }
        Ok(Self {
            id: id.into(),
            relations,
            join_predicates,
            selection_predicates,
        })
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn contains(&self, relation: &str) -> bool {
        self.relations.iter().any(|r| r == relation)
    }
}

impl fmt::Display for JoinQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SELECT * FROM {}", self.relations.join(", "))?;
        let preds: Vec<String> = self
            .join_predicates
            .iter()
            .map(ToString::to_string)
            .chain(self.selection_predicates.iter().map(ToString::to_string))
            .collect();
        if !preds.is_empty() {
            write!(f, " WHERE {}", preds.join(" AND "))?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Parsing

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Number(f64),
    Star,
    Comma,
    Dot,
    Semicolon,
    Op(&'static str),
}

fn tokenize(text: &str) -> Result<Vec<(usize, Token)>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\r' | b'\n' => {
                i += 1;
                continue;
            }
            b'*' => out.push((start, Token::Star)),
            b',' => out.push((start, Token::Comma)),
            b'.' if !bytes.get(i + 1).is_some_and(u8::is_ascii_digit) => {
                out.push((start, Token::Dot))
            }
            b';' => out.push((start, Token::Semicolon)),
            b'=' => out.push((start, Token::Op("="))),
            b'<' | b'>' | b'!' => {
                let next = bytes.get(i + 1).copied();
                let op = match (c, next) {
                    (b'<', Some(b'=')) => "<=",
                    (b'>', Some(b'=')) => ">=",
                    (b'<', Some(b'>')) => "<>",
                    (b'!', Some(b'=')) => "!=",
                    (b'<', _) => "<",
                    (b'>', _) => ">",
                    _ => {
                        return Err(Error::Syntax {
                            offset: start,
                            message: "unexpected `!`".into(),
                        })
                    }
                };
                i += op.len();
                out.push((start, Token::Op(op)));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((start, Token::Ident(text[start..i].to_string())));
                continue;
            }
            c if c.is_ascii_digit() || c == b'-' || c == b'+' || c == b'.' => {
                i += 1;
                while i < bytes.len() {
                    let d = bytes[i];
                    let exp_sign = (d == b'-' || d == b'+') && matches!(bytes[i - 1], b'e' | b'E');
                    if d.is_ascii_digit() || d == b'.' || d == b'e' || d == b'E' || exp_sign {
                        i += 1;
                    } else {
                        break;
                    }
                }
                let lit = &text[start..i];
                let value = lit.parse::<f64>().map_err(|_| Error::Syntax {
                    offset: start,
                    message: format!("invalid number `{lit}`"),
                })?;
                out.push((start, Token::Number(value)));
                continue;
            }
            _ => {
                return Err(Error::Syntax {
                    offset: start,
                    message: format!("unexpected character `{}`", c as char),
                })
            }
        }
        i += 1;
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(usize, Token)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |(o, _)| *o)
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Syntax {
            offset: self.offset(),
            message: message.into(),
        })
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).map(|(_, t)| t.clone());
        self.pos += 1;
        t
    }

    fn keyword(&mut self, kw: &str) -> Result<()> {
        match self.peek() {
            Some(Token::Ident(s)) if s.eq_ignore_ascii_case(kw) => {
                self.pos += 1;
                Ok(())
            }
            _ => self.error(format!("expected {kw}")),
        }
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Token::Ident(s)) if s.eq_ignore_ascii_case(kw))
    }

    fn ident(&mut self) -> Result<String> {
        match self.peek() {
            Some(Token::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.error("expected identifier"),
        }
    }

    fn column(&mut self) -> Result<ColumnRef> {
        let relation = self.ident()?;
        if self.next() != Some(Token::Dot) {
            self.pos -= 1;
            return self.error("expected `.` in qualified column");
        }
        let attribute = self.ident()?;
        Ok(ColumnRef::new(relation, attribute))
    }
}

enum RawPredicate {
    Join(ColumnRef, &'static str, ColumnRef),
    Selection(ColumnRef, &'static str, f64),
}

fn parse_syntax(text: &str) -> Result<(Vec<String>, Vec<RawPredicate>)> {
    let mut p = Parser {
        tokens: tokenize(text)?,
        pos: 0,
        end: text.len(),
    };
    p.keyword("SELECT")?;
    if p.next() != Some(Token::Star) {
        p.pos -= 1;
        return p.error("expected `*`");
    }
    p.keyword("FROM")?;
    let mut relations = vec![p.ident()?];
    while p.peek() == Some(&Token::Comma) {
        p.pos += 1;
        relations.push(p.ident()?);
    }
    let mut preds = Vec::new();
    if p.at_keyword("WHERE") {
        p.pos += 1;
        loop {
            let lhs = p.column()?;
            let op = match p.next() {
                Some(Token::Op(op)) => op,
                _ => {
                    p.pos -= 1;
                    return p.error("expected comparison operator");
                }
            };
            match p.peek() {
                Some(Token::Number(v)) => {
                    let v = *v;
                    p.pos += 1;
                    preds.push(RawPredicate::Selection(lhs, op, v));
                }
                Some(Token::Ident(_)) => {
                    let rhs = p.column()?;
                    preds.push(RawPredicate::Join(lhs, op, rhs));
                }
                _ => return p.error("expected number or qualified column"),
            }
            if p.at_keyword("AND") {
                p.pos += 1;
            } else {
                break;
            }
        }
    }
    if p.peek() == Some(&Token::Semicolon) {
        p.pos += 1;
    }
    if p.peek().is_some() {
        return p.error("unexpected trailing input");
    }
    Ok((relations, preds))
}

pub fn parse_query(text: &str, catalog: &Catalog) -> Result<JoinQuery> {
    parse_query_with_id("q", text, catalog)
}

pub fn parse_query_with_id(id: &str, text: &str, catalog: &Catalog) -> Result<JoinQuery> {
    let (relations, raw) = parse_syntax(text)?;
    let mut seen = HashSet::new();
    for r in &relations {
        catalog.relation(r)?;
        if !seen.insert(r.as_str()) {
            return Err(Error::SelfJoin(r.clone()));
        }
    }
    let mut joins = Vec::new();
    let mut selections = Vec::new();
    for pred in raw {
        match pred {
            RawPredicate::Join(l, op, r) => {
                catalog.attribute(&l.relation, &l.attribute)?;
                catalog.attribute(&r.relation, &r.attribute)?;
                if op != "=" {
                    return Err(Error::NonEquiJoin(format!("{l} {op} {r}")));
                }
                joins.push(JoinPredicate { left: l, right: r });
            }
            RawPredicate::Selection(col, op, value) => {
                let op = match op {
                    "=" => CmpOp::Eq,
                    "<" => CmpOp::Lt,
                    ">" => CmpOp::Gt,
                    "<=" => CmpOp::Le,
                    ">=" => CmpOp::Ge,
                    other => {
                        return Err(Error::Syntax {
                            offset: 0,
                            message: format!("unsupported selection operator `{other}`"),
                        })
                    }
                };
                selections.push(SelectionPredicate::new(col, op, value, catalog)?);
            }
        }
    }
    JoinQuery::new(id, relations, joins, selections, catalog)
}

/// One query per non-blank line; `--` starts a comment. A comment of the
/// form `-- id: NAME` names the next query, otherwise queries are `q1, q2, ...`
/// by position.
pub fn parse_workload(text: &str, catalog: &Catalog) -> Result<Vec<JoinQuery>> {
    let mut out = Vec::new();
    let mut pending_id: Option<String> = None;
    for (lineno, line) in text.lines().enumerate() {
        let (code, comment) = match line.find("--") {
            Some(i) => (&line[..i], Some(line[i + 2..].trim())),
            None => (line, None),
        };
        if let Some(id) = comment.and_then(|c| c.strip_prefix("id:")) {
            pending_id = Some(id.trim().to_string());
        }
        if code.trim().is_empty() {
            continue;
        }
        let id = pending_id
            .take()
            .unwrap_or_else(|| format!("q{}", out.len() + 1));
        let q = parse_query_with_id(&id, code, catalog).map_err(|e| match e {
            Error::Syntax { offset, message } => Error::Parse {
                line: lineno + 1,
                column: offset + 1,
                message,
            },
            other => other,
        })?;
        out.push(q);
    }
    Ok(out)
}

pub fn workload_to_text(queries: &[JoinQuery]) -> String {
    let mut s = String::new();
    for q in queries {
        s.push_str(&format!("-- id: {}\n{}\n", q.id, q));
    }
    s
}

/// n×n adjacency over catalog relations (not query positions).
pub fn join_graph(query: &JoinQuery, catalog: &Catalog) -> Vec<Vec<u8>> {
    let n = catalog.num_relations();
    let mut m = vec![vec![0u8; n]; n];
    for p in &query.join_predicates {
        let (Ok(i), Ok(j)) = (
            catalog.relation_index(&p.left.relation),
            catalog.relation_index(&p.right.relation),
        ) else {
            continue;
        };
        if i != j {
            m[i][j] = 1;
            m[j][i] = 1;
        }
    }
    m
}

pub fn selection_vector(query: &JoinQuery, catalog: &Catalog) -> Vec<u8> {
    let mut v = vec![0u8; catalog.num_attributes()];
    for p in &query.selection_predicates {
        if let Ok(i) = catalog.global_attribute_index(&p.column.relation, &p.column.attribute) {
            v[i] = 1;
        }
    }
    v
}

// ---------------------------------------------------------------------------
// Workload generation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Shape {
    Chain,
    Star,
    Clique,
    Random,
}

impl Shape {
    pub fn name(self) -> &'static str {
        match self {
            Shape::Chain => "chain",
            Shape::Star => "star",
            Shape::Clique => "clique",
            Shape::Random => "random",
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "chain" => Ok(Shape::Chain),
            "star" => Ok(Shape::Star),
            "clique" => Ok(Shape::Clique),
            "random" => Ok(Shape::Random),
            other => Err(Error::Config(format!("unknown workload shape `{other}`"))),
        }
    }
}

pub fn generate_workload(
    catalog: &Catalog,
    seed: u64,
    shape: Shape,
    q_range: (usize, usize),
    count: usize,
) -> Result<Vec<JoinQuery>> {
    generate_mixed_workload(catalog, seed, &[shape], q_range, count)
}

/// Like [`generate_workload`], drawing each query's shape uniformly from `shapes`.
pub fn generate_mixed_workload(
    catalog: &Catalog,
    seed: u64,
    shapes: &[Shape],
    q_range: (usize, usize),
    count: usize,
) -> Result<Vec<JoinQuery>> {
    let (lo, hi) = q_range;
    if lo < 2 || lo > hi || hi > catalog.num_relations() {
        return Err(Error::InvalidRange(format!(
            "query size range [{lo}, {hi}] must lie within [2, {}]",
            catalog.num_relations()
        )));
    }
    if shapes.is_empty() {
        return Err(Error::Config("no workload shapes given".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let shape = shapes[rng.random_range(0..shapes.len())];
            let q = rng.random_range(lo..=hi);
            generate_query(catalog, &mut rng, shape, q, format!("{shape}-{i:04}"))
        })
        .collect()
}

fn generate_query(
    catalog: &Catalog,
    rng: &mut ChaCha8Rng,
    shape: Shape,
    q: usize,
    id: String,
) -> Result<JoinQuery> {
    let mut chosen: Vec<usize> = (0..catalog.num_relations()).collect();
    chosen.shuffle(rng);
    chosen.truncate(q);
    // `chosen` is a random walk order for the shape; FROM lists catalog order.
    let edges: Vec<(usize, usize)> = match shape {
        Shape::Chain => (1..q).map(|i| (chosen[i - 1], chosen[i])).collect(),
        Shape::Star => (1..q).map(|i| (chosen[0], chosen[i])).collect(),
        Shape::Clique => (0..q)
            .flat_map(|i| (i + 1..q).map(move |j| (i, j)))
            .map(|(i, j)| (chosen[i], chosen[j]))
            .collect(),
        Shape::Random => {
            let mut edges = Vec::new();
            let mut in_tree = HashSet::new();
            for i in 1..q {
                let j = rng.random_range(0..i);
                edges.push((chosen[j], chosen[i]));
                in_tree.insert((j.min(i), j.max(i)));
            }
            for i in 0..q {
                for j in i + 1..q {
                    if !in_tree.contains(&(i, j)) && rng.random_bool(RANDOM_EXTRA_EDGE_PROBABILITY)
                    {
                        edges.push((chosen[i], chosen[j]));
                    }
                }
            }
            edges
        }
    };

    let rels = catalog.relations();
    let mut join_predicates = Vec::with_capacity(edges.len());
    for (a, b) in edges {
        // One side joins on its key, the other on any of its attributes.
        let (key_side, fk_side) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
        let key_rel = &rels[key_side];
        let key_attr = key_rel
            .attributes
            .iter()
            .find(|x| x.distinct_count == key_rel.row_count)
            .unwrap_or(&key_rel.attributes[0]);
        let fk_rel = &rels[fk_side];
        let fk_attr = &fk_rel.attributes[rng.random_range(0..fk_rel.attributes.len())];
        join_predicates.push(JoinPredicate {
            left: ColumnRef::new(&key_rel.name, &key_attr.name),
            right: ColumnRef::new(&fk_rel.name, &fk_attr.name),
        });
    }

    let mut in_from = chosen.clone();
    in_from.sort_unstable();
    let mut selection_predicates = Vec::new();
    for &r in &in_from {
        let rel = &rels[r];
        for attr in rel.attributes.iter().skip(1) {
            if rng.random_bool(SELECTION_PROBABILITY) {
                let op = CmpOp::ALL[rng.random_range(0..CmpOp::ALL.len())];
                let constant = rng.random_range(0..1000) as f64;
                selection_predicates.push(SelectionPredicate::new(
                    ColumnRef::new(&rel.name, &attr.name),
                    op,
                    constant,
                    catalog,
                )?);
            }
        }
    }

    let relations = in_from.iter().map(|&r| rels[r].name.clone()).collect();
    JoinQuery::new(id, relations, join_predicates, selection_predicates, catalog)
}
