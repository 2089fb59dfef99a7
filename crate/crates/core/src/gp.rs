//! Genetic-programming baseline: postfix expression trees over OHLCV series,
//! evolved against mean daily exact Spearman.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::ic::exact_spearman;
use crate::market::{FactorMatrix, Field, PricePanel, SplitKind, SplitSpec};
use crate::stats;

const DIV_GUARD: f64 = 1e-12;
const FIELDS: [Field; 5] = Field::OHLCV;
const WINDOWS: [usize; 5] = [2, 3, 5, 10, 20];

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Node {
    Input(Field),
    Const(f64),
    Add,
    Sub,
    Mul,
    /// Masks the cell when the denominator is within 1e-12 of zero.
    Div,
    Neg,
    Abs,
    /// `ln(1 + |x|)`.
    Log1pAbs,
    TsMean(usize),
    TsStd(usize),
    /// `x[t] - x[t - w]`.
    TsDelta(usize),
    /// Average rank of `x[t]` in its trailing window, scaled to [0, 1].
    TsRank(usize),
}

impl Node {
    pub fn arity(&self) -> usize {
        match self {
            Node::Input(_) | Node::Const(_) => 0,
            Node::Neg | Node::Abs | Node::Log1pAbs | Node::TsMean(_) | Node::TsStd(_) | Node::TsDelta(_) | Node::TsRank(_) => 1,
            Node::Add | Node::Sub | Node::Mul | Node::Div => 2,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Node::Input(Field::Open) => "open",
            Node::Input(Field::High) => "high",
            Node::Input(Field::Low) => "low",
            Node::Input(Field::Close) => "close",
            Node::Input(Field::Volume) => "volume",
            Node::Input(Field::AdjClose) => "adj_close",
            Node::Const(_) => "const",
            Node::Add => "add",
            Node::Sub => "sub",
            Node::Mul => "mul",
            Node::Div => "div",
            Node::Neg => "neg",
            Node::Abs => "abs",
            Node::Log1pAbs => "log1p_abs",
            Node::TsMean(_) => "ts_mean",
            Node::TsStd(_) => "ts_std",
            Node::TsDelta(_) => "ts_delta",
            Node::TsRank(_) => "ts_rank",
        }
    }

    /// Trailing history (in days beyond today) the node reads from its child.
    fn lookback(&self) -> usize {
        match *self {
            Node::TsMean(w) | Node::TsStd(w) | Node::TsRank(w) => w - 1,
            Node::TsDelta(w) => w,
            _ => 0,
        }
    }

    fn apply_unary(&self, x: f64) -> f64 {
        match self {
            Node::Neg => -x,
            Node::Abs => x.abs(),
            Node::Log1pAbs => x.abs().ln_1p(),
            _ => unreachable!("not an elementwise unary node"),
        }
    }

    fn apply_binary(&self, a: f64, b: f64) -> f64 {
        match self {
            Node::Add => a + b,
            Node::Sub => a - b,
            Node::Mul => a * b,
            Node::Div => {
                if b.abs() < DIV_GUARD {
                    f64::NAN
                } else {
                    a / b
                }
            }
            _ => unreachable!("not a binary node"),
        }
    }

    /// Value of a time-series node from the child's trailing window (oldest first).
    fn apply_window(&self, window: &[f64]) -> f64 {
        if window.iter().any(|v| v.is_nan()) {
            return f64::NAN;
        }
        match *self {
            Node::TsMean(_) => stats::mean(window),
            Node::TsStd(_) => stats::std_pop(window),
            Node::TsDelta(_) => window[window.len() - 1] - window[0],
            Node::TsRank(w) => {
                let last = window[window.len() - 1];
                let below = window.iter().filter(|&&v| v < last).count() as f64;
                let equal = window.iter().filter(|&&v| v == last).count() as f64;
                let rank = below + (equal + 1.0) / 2.0;
                (rank - 1.0) / (w - 1) as f64
            }
            _ => unreachable!("not a time-series node"),
        }
    }
}

/// Expression tree stored in postfix (reverse-polish) order.
#[derive(Clone, Debug, PartialEq)]
pub struct ExprTree {
    nodes: Vec<Node>,
}

impl ExprTree {
    /// Validates arity, windows, depth and the presence of an input leaf.
    pub fn new(nodes: Vec<Node>, max_depth: usize) -> Result<Self> {
        let t = Self { nodes };
        t.validate(max_depth)?;
        Ok(t)
    }

    fn unchecked(nodes: Vec<Node>) -> Self {
        Self { nodes }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn validate(&self, max_depth: usize) -> Result<()> {
        let mut depth_stack: Vec<usize> = Vec::new();
        for node in &self.nodes {
            match *node {
                Node::TsMean(w) | Node::TsStd(w) | Node::TsRank(w) if w < 2 => {
                    return Err(Error::MalformedTree(format!("{} window {w} < 2", node.name())))
                }
                Node::TsDelta(w) if w < 1 => return Err(Error::MalformedTree("ts_delta window 0".into())),
                Node::Const(c) if !c.is_finite() => return Err(Error::MalformedTree("non-finite constant".into())),
                _ => {}
            }
            let k = node.arity();
            if depth_stack.len() < k {
                return Err(Error::MalformedTree(format!("`{}` lacks operands", node.name())));
            }
            let child = depth_stack.split_off(depth_stack.len() - k).into_iter().max().unwrap_or(0);
            depth_stack.push(child + 1);
        }
        if depth_stack.len() != 1 {
            return Err(Error::MalformedTree(format!("{} values left on the stack", depth_stack.len())));
        }
        if depth_stack[0] > max_depth {
            return Err(Error::MalformedTree(format!("depth {} exceeds {max_depth}", depth_stack[0])));
        }
        if !self.nodes.iter().any(|n| matches!(n, Node::Input(_))) {
            return Err(Error::MalformedTree("no input leaf".into()));
        }
        Ok(())
    }

    /// Number of nodes on the longest root-to-leaf path (a leaf has depth 1).
    pub fn depth(&self) -> usize {
        let mut st: Vec<usize> = Vec::new();
        for n in &self.nodes {
            let k = n.arity().min(st.len());
            let d = st.split_off(st.len() - k).into_iter().max().unwrap_or(0);
            st.push(d + 1);
        }
        st.pop().unwrap_or(0)
    }

    /// Total days of history needed before the first defined value.
    pub fn warmup(&self) -> usize {
        let mut st: Vec<usize> = Vec::new();
        for n in &self.nodes {
            let k = n.arity().min(st.len());
            let d = st.split_off(st.len() - k).into_iter().max().unwrap_or(0);
            st.push(d + n.lookback());
        }
        st.pop().unwrap_or(0)
    }

    /// Index of the first node of the subtree ending at `end`.
    pub fn subtree_start(&self, end: usize) -> usize {
        let mut need = 1isize;
        let mut j = end + 1;
        while need > 0 {
            j -= 1;
            need += self.nodes[j].arity() as isize - 1;
        }
        j
    }

    /// Replaces node `idx` with `node` of the same arity.
    pub fn substitute(&self, idx: usize, node: Node) -> Result<Self> {
        if idx >= self.nodes.len() || self.nodes[idx].arity() != node.arity() {
            return Err(invalid("substitution must keep arity"));
        }
        let mut nodes = self.nodes.clone();
        nodes[idx] = node;
        Ok(Self::unchecked(nodes))
    }

    /// Replaces the subtree ending at `end` with `sub`.
    pub fn replace_subtree(&self, end: usize, sub: &[Node]) -> Self {
        let start = self.subtree_start(end);
        let mut nodes = Vec::with_capacity(self.nodes.len() - (end + 1 - start) + sub.len());
        nodes.extend_from_slice(&self.nodes[..start]);
        nodes.extend_from_slice(sub);
        nodes.extend_from_slice(&self.nodes[end + 1..]);
        Self::unchecked(nodes)
    }

    fn write_prefix(&self, end: usize, out: &mut String) {
        let node = self.nodes[end];
        match node {
            Node::Input(_) => out.push_str(node.name()),
            Node::Const(c) => out.push_str(&format!("{c:?}")),
            _ => {
                out.push('(');
                out.push_str(node.name());
                // children in order: collect ends walking back from end-1
                let mut ends = Vec::with_capacity(node.arity());
                let mut j = end;
                for _ in 0..node.arity() {
                    let child_end = j - 1;
                    ends.push(child_end);
                    j = self.subtree_start(child_end);
                }
                for &e in ends.iter().rev() {
                    out.push(' ');
                    self.write_prefix(e, out);
                }
                if let Node::TsMean(w) | Node::TsStd(w) | Node::TsDelta(w) | Node::TsRank(w) = node {
                    out.push_str(&format!(" {w}"));
                }
                out.push(')');
            }
        }
    }
}

impl fmt::Display for ExprTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        if !self.nodes.is_empty() {
            self.write_prefix(self.nodes.len() - 1, &mut s);
        }
        f.write_str(&s)
    }
}

fn tokenize(s: &str) -> Vec<String> {
    s.replace('(', " ( ").replace(')', " ) ").split_whitespace().map(str::to_string).collect()
}

fn parse_expr(tokens: &[String], pos: &mut usize, out: &mut Vec<Node>) -> Result<()> {
    let tok = tokens.get(*pos).ok_or_else(|| Error::MalformedTree("unexpected end of expression".into()))?;
    *pos += 1;
    if tok != "(" {
        let node = match tok.as_str() {
            "open" => Node::Input(Field::Open),
            "high" => Node::Input(Field::High),
            "low" => Node::Input(Field::Low),
            "close" => Node::Input(Field::Close),
            "volume" => Node::Input(Field::Volume),
            "adj_close" => Node::Input(Field::AdjClose),
            other => Node::Const(
                other
                    .parse()
                    .map_err(|_| Error::MalformedTree(format!("unknown leaf `{other}`")))?,
            ),
        };
        out.push(node);
        return Ok(());
    }
    let op = tokens.get(*pos).ok_or_else(|| Error::MalformedTree("missing operator".into()))?.clone();
    *pos += 1;
    let (arity, windowed) = match op.as_str() {
        "add" | "sub" | "mul" | "div" => (2, false),
        "neg" | "abs" | "log1p_abs" => (1, false),
        "ts_mean" | "ts_std" | "ts_delta" | "ts_rank" => (1, true),
        other => return Err(Error::MalformedTree(format!("unknown operator `{other}`"))),
    };
    for _ in 0..arity {
        parse_expr(tokens, pos, out)?;
    }
    let node = if windowed {
        let w: usize = tokens
            .get(*pos)
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::MalformedTree(format!("`{op}` needs an integer window")))?;
        *pos += 1;
        match op.as_str() {
            "ts_mean" => Node::TsMean(w),
            "ts_std" => Node::TsStd(w),
            "ts_delta" => Node::TsDelta(w),
            _ => Node::TsRank(w),
        }
    } else {
        match op.as_str() {
            "add" => Node::Add,
            "sub" => Node::Sub,
            "mul" => Node::Mul,
            "div" => Node::Div,
            "neg" => Node::Neg,
            "abs" => Node::Abs,
            _ => Node::Log1pAbs,
        }
    };
    if tokens.get(*pos).map(String::as_str) != Some(")") {
        return Err(Error::MalformedTree(format!("expected `)` after `{op}`")));
    }
    *pos += 1;
    out.push(node);
    Ok(())
}

impl FromStr for ExprTree {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let tokens = tokenize(s);
        let mut pos = 0;
        let mut nodes = Vec::new();
        parse_expr(&tokens, &mut pos, &mut nodes)?;
        if pos != tokens.len() {
            return Err(Error::MalformedTree("trailing tokens".into()));
        }
        let t = ExprTree::unchecked(nodes);
        t.validate(usize::MAX)?;
        Ok(t)
    }
}

/// Masked panel cells read as NaN; the result is row-major `days x symbols`.
fn field_values(panel: &PricePanel, field: Field) -> Vec<f64> {
    panel
        .field(field)
        .iter()
        .zip(panel.mask())
        .map(|(v, &m)| if m { *v } else { f64::NAN })
        .collect()
}

/// Stack evaluation over the whole panel. Undefined cells (warm-up, masked
/// inputs, guarded division, non-finite results) are masked.
pub fn eval_tree(tree: &ExprTree, panel: &PricePanel) -> Result<FactorMatrix> {
    tree.validate(usize::MAX)?;
    let (nd, ns) = (panel.n_days(), panel.n_symbols());
    let mut stack: Vec<Vec<f64>> = Vec::new();
    for node in tree.nodes() {
        let v = match *node {
            Node::Input(f) => field_values(panel, f),
            Node::Const(c) => vec![c; nd * ns],
            Node::Neg | Node::Abs | Node::Log1pAbs => {
                let mut x = stack.pop().expect("validated arity");
                x.iter_mut().for_each(|v| *v = node.apply_unary(*v));
                x
            }
            Node::Add | Node::Sub | Node::Mul | Node::Div => {
                let b = stack.pop().expect("validated arity");
                let mut a = stack.pop().expect("validated arity");
                a.iter_mut().zip(&b).for_each(|(x, y)| *x = node.apply_binary(*x, *y));
                a
            }
            Node::TsMean(_) | Node::TsStd(_) | Node::TsDelta(_) | Node::TsRank(_) => {
                let x = stack.pop().expect("validated arity");
                let back = node.lookback();
                let mut out = vec![f64::NAN; nd * ns];
                let mut window = Vec::with_capacity(back + 1);
                for s in 0..ns {
                    for t in back..nd {
                        window.clear();
                        window.extend((t - back..=t).map(|d| x[d * ns + s]));
                        out[t * ns + s] = node.apply_window(&window);
                    }
                }
                out
            }
        };
        stack.push(v);
    }
    let values = stack.pop().expect("validated tree");
    FactorMatrix::from_values(panel.dates().to_vec(), panel.symbols().to_vec(), values)
}

/// Cell-by-cell recursive interpreter; slow, used to check [`eval_tree`].
pub fn eval_tree_recursive(tree: &ExprTree, panel: &PricePanel) -> Result<FactorMatrix> {
    tree.validate(usize::MAX)?;
    fn go(tree: &ExprTree, end: usize, panel: &PricePanel, day: usize, sym: usize) -> f64 {
        let node = tree.nodes[end];
        match node {
            Node::Input(f) => {
                if panel.is_valid(day, sym) {
                    panel.get(f, day, sym)
                } else {
                    f64::NAN
                }
            }
            Node::Const(c) => c,
            Node::Neg | Node::Abs | Node::Log1pAbs => node.apply_unary(go(tree, end - 1, panel, day, sym)),
            Node::Add | Node::Sub | Node::Mul | Node::Div => {
                let b_end = end - 1;
                let a_end = tree.subtree_start(b_end) - 1;
                let a = go(tree, a_end, panel, day, sym);
                let b = go(tree, b_end, panel, day, sym);
                node.apply_binary(a, b)
            }
            _ => {
                let back = node.lookback();
                if day < back {
                    return f64::NAN;
                }
                let window: Vec<f64> = (day - back..=day).map(|d| go(tree, end - 1, panel, d, sym)).collect();
                node.apply_window(&window)
            }
        }
    }
    let mut out = FactorMatrix::empty_like(panel);
    for d in 0..panel.n_days() {
        for s in 0..panel.n_symbols() {
            out.set(d, s, go(tree, tree.len() - 1, panel, d, s));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpConfig {
    pub population: usize,
    pub generations: usize,
    pub tournament: usize,
    pub elitism: usize,
    pub max_depth: usize,
    /// Depth range for ramped half-and-half initialization.
    pub init_depth: (usize, usize),
    pub p_crossover: f64,
    pub p_mutation: f64,
    pub mutation: MutationRates,
    /// Forward-return horizon of the fitness.
    pub horizon: usize,
    pub top_k: usize,
    pub seed: u64,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            population: 200,
            generations: 30,
            tournament: 4,
            elitism: 2,
            max_depth: 6,
            init_depth: (2, 4),
            p_crossover: 0.6,
            p_mutation: 0.3,
            mutation: MutationRates::default(),
            horizon: 5,
            top_k: 5,
            seed: 0,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 || self.tournament < 1 || self.elitism >= self.population {
            return Err(invalid("population must exceed elitism and hold at least 2 trees"));
        }
        if self.max_depth < 2 || self.init_depth.0 < 1 || self.init_depth.0 > self.init_depth.1 || self.init_depth.1 > self.max_depth {
            return Err(invalid("init depth range must lie within 1..=max_depth"));
        }
        if !(0.0..=1.0).contains(&(self.p_crossover + self.p_mutation)) || self.p_crossover < 0.0 || self.p_mutation < 0.0 {
            return Err(invalid("crossover and mutation probabilities must sum to at most 1"));
        }
        if self.horizon < 1 {
            return Err(invalid("horizon must be at least 1"));
        }
        Ok(())
    }
}

/// Relative weights of the three mutation kinds. All zero makes mutation a no-op.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MutationRates {
    pub point: f64,
    pub subtree: f64,
    pub constant: f64,
}

impl Default for MutationRates {
    fn default() -> Self {
        Self {
            point: 0.4,
            subtree: 0.4,
            constant: 0.2,
        }
    }
}

fn random_leaf(rng: &mut impl Rng) -> Node {
    if rng.random_bool(0.85) {
        Node::Input(FIELDS[rng.random_range(0..FIELDS.len())])
    } else {
        Node::Const((rng.random_range(-2.0..2.0f64) * 100.0).round() / 100.0)
    }
}

fn random_unary(rng: &mut impl Rng) -> Node {
    let w = WINDOWS[rng.random_range(0..WINDOWS.len())];
    match rng.random_range(0..7) {
        0 => Node::Neg,
        1 => Node::Abs,
        2 => Node::Log1pAbs,
        3 => Node::TsMean(w),
        4 => Node::TsStd(w),
        5 => Node::TsDelta(w),
        _ => Node::TsRank(w),
    }
}

fn random_binary(rng: &mut impl Rng) -> Node {
    [Node::Add, Node::Sub, Node::Mul, Node::Div][rng.random_range(0..4)]
}

/// Random tree of depth at most `depth`; `full` forces every branch to the limit.
fn random_nodes(rng: &mut impl Rng, depth: usize, full: bool, out: &mut Vec<Node>) {
    let leaf = depth <= 1 || (!full && rng.random_bool(0.3));
    if leaf {
        out.push(random_leaf(rng));
        return;
    }
    if rng.random_bool(0.5) {
        random_nodes(rng, depth - 1, full, out);
        out.push(random_unary(rng));
    } else {
        random_nodes(rng, depth - 1, full, out);
        random_nodes(rng, depth - 1, full, out);
        out.push(random_binary(rng));
    }
}

/// Random valid tree; redraws until it has an input leaf.
pub fn random_tree(rng: &mut impl Rng, depth: usize, full: bool) -> ExprTree {
    loop {
        let mut nodes = Vec::new();
        random_nodes(rng, depth, full, &mut nodes);
        let t = ExprTree::unchecked(nodes);
        if t.validate(depth).is_ok() {
            return t;
        }
    }
}

const MAX_REDRAWS: usize = 20;

/// Point substitution, subtree replacement or constant perturbation; invalid
/// draws are retried and the input is returned unchanged if none succeed.
pub fn mutate(tree: &ExprTree, rng: &mut impl Rng, rates: &MutationRates, max_depth: usize) -> ExprTree {
    let total = rates.point + rates.subtree + rates.constant;
    if !(total > 0.0) {
        return tree.clone();
    }
    for _ in 0..MAX_REDRAWS {
        let r = rng.random_range(0.0..total);
        let idx = rng.random_range(0..tree.len());
        let candidate = if r < rates.point {
            let node = match tree.nodes[idx].arity() {
                0 => random_leaf(rng),
                1 => random_unary(rng),
                _ => random_binary(rng),
            };
            tree.substitute(idx, node).expect("same arity")
        } else if r < rates.point + rates.subtree {
            let depth = rng.random_range(1..=3);
            let mut sub = Vec::new();
            random_nodes(rng, depth, false, &mut sub);
            tree.replace_subtree(idx, &sub)
        } else {
            let consts: Vec<usize> = (0..tree.len()).filter(|&i| matches!(tree.nodes[i], Node::Const(_))).collect();
            if consts.is_empty() {
                continue;
            }
            let i = consts[rng.random_range(0..consts.len())];
            let Node::Const(c) = tree.nodes[i] else { unreachable!() };
            tree.substitute(i, Node::Const(c + rng.random_range(-0.5..0.5)))
                .expect("same arity")
        };
        if candidate.validate(max_depth).is_ok() {
            return candidate;
        }
    }
    tree.clone()
}

/// Swaps random subtrees; redraws when an offspring breaks the depth cap or
/// loses its input leaves, returning the parents unchanged after repeated failure.
pub fn crossover(a: &ExprTree, b: &ExprTree, rng: &mut impl Rng, max_depth: usize) -> (ExprTree, ExprTree) {
    for _ in 0..MAX_REDRAWS {
        let ia = rng.random_range(0..a.len());
        let ib = rng.random_range(0..b.len());
        let (x, y) = swap_subtrees(a, ia, b, ib);
        if x.validate(max_depth).is_ok() && y.validate(max_depth).is_ok() {
            return (x, y);
        }
    }
    (a.clone(), b.clone())
}

/// Exchanges the subtree ending at `ia` in `a` with the one ending at `ib` in `b`.
pub fn swap_subtrees(a: &ExprTree, ia: usize, b: &ExprTree, ib: usize) -> (ExprTree, ExprTree) {
    let sa = a.nodes[a.subtree_start(ia)..=ia].to_vec();
    let sb = b.nodes[b.subtree_start(ib)..=ib].to_vec();
    (a.replace_subtree(ia, &sb), b.replace_subtree(ib, &sa))
}

/// Mean daily exact Spearman of `factor` against `horizon`-day forward returns
/// over days `days` (labels must resolve before `days.end`). `None` when no day
/// has 3 valid names with cross-sectional variation.
pub fn mean_daily_ic(factor: &FactorMatrix, panel: &PricePanel, days: std::ops::Range<usize>, horizon: usize) -> Option<f64> {
    let mut ics = Vec::new();
    let end = days.end.min(panel.n_days());
    for d in days.start..end.saturating_sub(horizon) {
        let pairs: Vec<(f64, f64)> = (0..panel.n_symbols())
            .filter_map(|s| {
                let f = factor.get(d, s)?;
                if !(panel.is_valid(d, s) && panel.is_valid(d + horizon, s)) {
                    return None;
                }
                let r = panel.get(Field::Close, d + horizon, s) / panel.get(Field::Close, d, s) - 1.0;
                Some((f, r))
            })
            .collect();
        if pairs.len() < 3 {
            continue;
        }
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        if x.iter().all(|v| *v == x[0]) {
            continue;
        }
        ics.push(exact_spearman(&x, &y).ok()?);
    }
    (!ics.is_empty()).then(|| stats::mean(&ics))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Member {
    pub tree: ExprTree,
    /// Training-split mean daily IC; `-inf` for degenerate trees.
    pub fitness: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Population {
    pub members: Vec<Member>,
    pub generation: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub best_expr: String,
}

#[derive(Clone, Debug)]
pub struct GpRun {
    pub population: Population,
    pub trace: Vec<GenerationStats>,
    /// Top distinct trees by fitness, best first.
    pub best: Vec<Member>,
}

/// Fitness is evaluated on the training days only; trees never see later data.
struct FitnessContext {
    train: PricePanel,
    horizon: usize,
}

impl FitnessContext {
    fn new(panel: &PricePanel, split: &SplitSpec, horizon: usize) -> Result<Self> {
        let range = split.range(SplitKind::Train);
        if range.end > panel.n_days() {
            return Err(Error::PanelTooShort {
                needed: range.end,
                have: panel.n_days(),
            });
        }
        Ok(Self {
            train: panel.slice_days(0, range.end),
            horizon,
        })
    }

    fn fitness(&self, tree: &ExprTree) -> f64 {
        let Ok(f) = eval_tree(tree, &self.train) else {
            return f64::NEG_INFINITY;
        };
        mean_daily_ic(&f, &self.train, 0..self.train.n_days(), self.horizon).unwrap_or(f64::NEG_INFINITY)
    }

    fn score(&self, trees: Vec<ExprTree>) -> Vec<Member> {
        let fits: Vec<f64> = trees.par_iter().map(|t| self.fitness(t)).collect();
        trees
            .into_iter()
            .zip(fits)
            .map(|(tree, fitness)| Member { tree, fitness })
            .collect()
    }
}

impl Population {
    /// Ramped half-and-half over the configured depth range.
    pub fn initialize(cfg: &GpConfig, rng: &mut impl Rng) -> Vec<ExprTree> {
        let (lo, hi) = cfg.init_depth;
        (0..cfg.population)
            .map(|i| {
                let depth = lo + i % (hi - lo + 1);
                random_tree(rng, depth, i % 2 == 0)
            })
            .collect()
    }

    pub fn best(&self) -> &Member {
        self.members
            .iter()
            .max_by(|a, b| a.fitness.total_cmp(&b.fitness))
            .expect("non-empty population")
    }
}

fn tournament<'a>(members: &'a [Member], size: usize, rng: &mut impl Rng) -> &'a Member {
    let mut best = &members[rng.random_range(0..members.len())];
    for _ in 1..size {
        let c = &members[rng.random_range(0..members.len())];
        if c.fitness > best.fitness {
            best = c;
        }
    }
    best
}

fn stats_of(pop: &Population) -> GenerationStats {
    let finite: Vec<f64> = pop.members.iter().map(|m| m.fitness).filter(|f| f.is_finite()).collect();
    let best = pop.best();
    GenerationStats {
        generation: pop.generation,
        best_fitness: best.fitness,
        mean_fitness: stats::mean(&finite),
        best_expr: best.tree.to_string(),
    }
}

/// Evolves a population from `initial` trees (ramped half-and-half if `None`)
/// with tournament selection and elitism.
pub fn evolve(initial: Option<Vec<ExprTree>>, panel: &PricePanel, split: &SplitSpec, cfg: &GpConfig) -> Result<GpRun> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ctx = FitnessContext::new(panel, split, cfg.horizon)?;
    let trees = initial.unwrap_or_else(|| Population::initialize(cfg, &mut rng));
    if trees.len() != cfg.population {
        return Err(invalid(format!("initial population has {} trees, expected {}", trees.len(), cfg.population)));
    }
    for t in &trees {
        t.validate(cfg.max_depth)?;
    }
    let mut pop = Population {
        members: ctx.score(trees),
        generation: 0,
    };
    if pop.members.iter().all(|m| !m.fitness.is_finite()) {
        return Err(Error::DegeneratePopulation(format!(
            "all {} initial trees are constant or undefined on the training split",
            pop.members.len()
        )));
    }
    let mut trace = vec![stats_of(&pop)];
    for generation in 1..=cfg.generations {
        let mut ranked = pop.members.clone();
        ranked.sort_by(|a, b| b.fitness.total_cmp(&a.fitness));
        let elites: Vec<Member> = ranked.into_iter().take(cfg.elitism).collect();
        let mut children = Vec::with_capacity(cfg.population - elites.len());
        while children.len() < cfg.population - elites.len() {
            let r: f64 = rng.random();
            let a = tournament(&pop.members, cfg.tournament, &mut rng).tree.clone();
            if r < cfg.p_crossover {
                let b = tournament(&pop.members, cfg.tournament, &mut rng).tree.clone();
                let (x, y) = crossover(&a, &b, &mut rng, cfg.max_depth);
                children.push(x);
                if children.len() < cfg.population - elites.len() {
                    children.push(y);
                }
            } else if r < cfg.p_crossover + cfg.p_mutation {
                children.push(mutate(&a, &mut rng, &cfg.mutation, cfg.max_depth));
            } else {
                children.push(a);
            }
        }
        let mut members = elites;
        members.extend(ctx.score(children));
        pop = Population { members, generation };
        let st = stats_of(&pop);
        debug!("gp generation {generation}: best {:.4} mean {:.4} {}", st.best_fitness, st.mean_fitness, st.best_expr);
        trace.push(st);
    }
    let mut ranked = pop.members.clone();
    ranked.sort_by(|a, b| b.fitness.total_cmp(&a.fitness));
    let mut seen = HashSet::new();
    let best: Vec<Member> = ranked
        .into_iter()
        .filter(|m| m.fitness.is_finite() && seen.insert(m.tree.to_string()))
        .take(cfg.top_k)
        .collect();
    info!(
        "gp: best training IC {:.4} for {}",
        best.first().map_or(f64::NAN, |m| m.fitness),
        best.first().map_or(String::new(), |m| m.tree.to_string())
    );
    Ok(GpRun { population: pop, trace, best })
}
