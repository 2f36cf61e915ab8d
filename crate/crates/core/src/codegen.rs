//! Decision-tree code generation for the control law and the
//! controllable-region test.
//!
//! Internal nodes test one bit of one cell index. Bits are visited
//! interleaved, most significant first: bit `b0-1` of `x0`, bit `b1-1` of
//! `x1`, ..., then the next lower bit of each variable, so every path performs
//! at most `sum(bits)` tests. Identical subtrees are shared.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::quantization::{action_bits, Cell, QuantAction, QuantSchema};
use crate::synthesis::Controller;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Leaf {
    /// Index into the controller's action list.
    Action(usize),
    Fault,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Node {
    Leaf(Leaf),
    Test { var: usize, bit: u32, zero: usize, one: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
    pub root: usize,
    pub bits: Vec<u32>,
    pub actions: Vec<QuantAction>,
}

/// `(var, bit)` pairs in test order.
pub fn bit_order(bits: &[u32]) -> Vec<(usize, u32)> {
    let top = bits.iter().copied().max().unwrap_or(0);
    let mut out = Vec::new();
    for level in 0..top {
        for (var, &b) in bits.iter().enumerate() {
            if level < b {
                out.push((var, b - 1 - level));
            }
        }
    }
    out
}

struct Builder<'a, F> {
    leaf: F,
    order: &'a [(usize, u32)],
    nodes: Vec<Node>,
    index: HashMap<Node, usize>,
    merge: bool,
}

impl<F: Fn(&[u32]) -> Leaf> Builder<'_, F> {
    fn intern(&mut self, n: Node) -> usize {
        if self.merge {
            if let Some(&id) = self.index.get(&n) {
                return id;
            }
            self.index.insert(n, self.nodes.len());
        }
        self.nodes.push(n);
        self.nodes.len() - 1
    }

    fn go(&mut self, depth: usize, cell: &mut Vec<u32>) -> usize {
        if depth == self.order.len() {
            let l = (self.leaf)(cell);
            return self.intern(Node::Leaf(l));
        }
        let (var, bit) = self.order[depth];
        let zero = self.go(depth + 1, cell);
        cell[var] |= 1 << bit;
        let one = self.go(depth + 1, cell);
        cell[var] &= !(1 << bit);
        if self.merge && zero == one {
            return zero;
        }
        self.intern(Node::Test { var, bit, zero, one })
    }
}

fn build_tree(schema: &QuantSchema, actions: &[QuantAction], merge: bool, leaf: impl Fn(&[u32]) -> Leaf) -> DecisionTree {
    let order = bit_order(&schema.bits);
    let mut b = Builder { leaf, order: &order, nodes: Vec::new(), index: HashMap::new(), merge };
    let mut cell = vec![0u32; schema.dims()];
    let root = b.go(0, &mut cell);
    DecisionTree { nodes: b.nodes, root, bits: schema.bits.clone(), actions: actions.to_vec() }
}

/// Control-law tree: each controllable cell maps to its chosen action, all
/// others to FAULT.
pub fn compile(k: &Controller, schema: &QuantSchema) -> DecisionTree {
    compile_with(k, schema, true)
}

pub fn compile_with(k: &Controller, schema: &QuantSchema, merge: bool) -> DecisionTree {
    build_tree(schema, &k.actions, merge, |c| {
        let idx = schema.linear_index(&Cell(c.to_vec()));
        k.chosen(idx).map_or(Leaf::Fault, Leaf::Action)
    })
}

/// Region tree: leaf `Action(1)` for controllable cells, FAULT otherwise.
pub fn compile_region(k: &Controller, schema: &QuantSchema) -> DecisionTree {
    build_tree(schema, &[vec![false], vec![true]], true, |c| {
        let idx = schema.linear_index(&Cell(c.to_vec()));
        if k.is_controllable(idx) {
            Leaf::Action(1)
        } else {
            Leaf::Fault
        }
    })
}

impl DecisionTree {
    pub fn total_bits(&self) -> u32 {
        self.bits.iter().sum()
    }

    /// Leaf reached by `cell`, and the number of tests on the way. Indices
    /// beyond the quantization give FAULT.
    pub fn lookup(&self, cell: &[u32]) -> (Leaf, u32) {
        if cell.len() != self.bits.len() || cell.iter().zip(&self.bits).any(|(&k, &b)| k >> b != 0) {
            return (Leaf::Fault, 0);
        }
        let mut id = self.root;
        let mut steps = 0;
        loop {
            match self.nodes[id] {
                Node::Leaf(l) => return (l, steps),
                Node::Test { var, bit, zero, one } => {
                    steps += 1;
                    id = if (cell[var] >> bit) & 1 == 1 { one } else { zero };
                }
            }
        }
    }

    pub fn interpret(&self, cell: &Cell) -> Option<&QuantAction> {
        match self.lookup(&cell.0).0 {
            Leaf::Action(a) => self.actions.get(a),
            Leaf::Fault => None,
        }
    }

    pub fn depth(&self) -> u32 {
        let mut memo = vec![None; self.nodes.len()];
        self.depth_of(self.root, &mut memo)
    }

    fn depth_of(&self, id: usize, memo: &mut Vec<Option<u32>>) -> u32 {
        if let Some(d) = memo[id] {
            return d;
        }
        let d = match self.nodes[id] {
            Node::Leaf(_) => 0,
            Node::Test { zero, one, .. } => 1 + self.depth_of(zero, memo).max(self.depth_of(one, memo)),
        };
        memo[id] = Some(d);
        d
    }

    /// Nodes reachable from the root.
    pub fn size(&self) -> usize {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![self.root];
        let mut n = 0;
        while let Some(id) = stack.pop() {
            if std::mem::replace(&mut seen[id], true) {
                continue;
            }
            n += 1;
            if let Node::Test { zero, one, .. } = self.nodes[id] {
                stack.push(zero);
                stack.push(one);
            }
        }
        n
    }
}

/// Traceability data written into the header comment.
#[derive(Debug, Clone, Default)]
pub struct SourceHeader {
    pub model: String,
    pub model_hash: String,
    pub goal: String,
}

fn params(bits: &[u32]) -> String {
    (0..bits.len()).map(|i| format!("unsigned x{i}")).collect::<Vec<_>>().join(", ")
}

fn emit_fn(out: &mut String, name: &str, t: &DecisionTree, ret: impl Fn(Leaf) -> String) {
    let _ = writeln!(out, "int {name}({}) {{", params(&t.bits));
    emit_node(out, t, t.root, 1, &ret);
    out.push_str("}\n");
}

fn emit_node(out: &mut String, t: &DecisionTree, id: usize, indent: usize, ret: &impl Fn(Leaf) -> String) {
    let pad = "  ".repeat(indent);
    match t.nodes[id] {
        Node::Leaf(l) => {
            let _ = writeln!(out, "{pad}return {};", ret(l));
        }
        Node::Test { var, bit, zero, one } => {
            let _ = writeln!(out, "{pad}if (x{var} & 0x{:x}) {{", 1u64 << bit);
            emit_node(out, t, one, indent + 1, ret);
            let _ = writeln!(out, "{pad}}} else {{");
            emit_node(out, t, zero, indent + 1, ret);
            let _ = writeln!(out, "{pad}}}");
        }
    }
}

/// C-like source defining `control_law` and `controllable_region`. Actions
/// are returned as their bit pattern read as an unsigned number (first input
/// most significant); FAULT is -1.
pub fn emit_source(law: &DecisionTree, region: &DecisionTree, header: &SourceHeader) -> String {
    let mut out = String::new();
    let bits: Vec<String> = law.bits.iter().map(u32::to_string).collect();
    let _ = writeln!(out, "/* model: {} */", header.model);
    let _ = writeln!(out, "/* model hash: {} */", header.model_hash);
    let _ = writeln!(out, "/* bits: {} */", bits.join(","));
    let _ = writeln!(out, "/* goal: {} */", header.goal);
    out.push_str("#define FAULT (-1)\n\n");
    emit_fn(&mut out, "control_law", law, |l| match l {
        Leaf::Action(a) => {
            let v = law.actions[a].iter().fold(0u64, |acc, &b| (acc << 1) | u64::from(b));
            format!("{v} /* {} */", action_bits(&law.actions[a]))
        }
        Leaf::Fault => "FAULT".into(),
    });
    out.push('\n');
    emit_fn(&mut out, "controllable_region", region, |l| match l {
        Leaf::Action(_) => "1".into(),
        Leaf::Fault => "0".into(),
    });
    out
}

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("function {0} not found")]
    Missing(String),
}

/// Function body as parsed back from emitted source.
#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    Return(i64),
    If { var: usize, mask: u64, then: Box<Stmt>, otherwise: Box<Stmt> },
}

impl Stmt {
    /// Value returned for the given cell indices and the number of tests taken.
    pub fn eval(&self, x: &[u32]) -> (i64, u32) {
        let mut s = self;
        let mut steps = 0;
        loop {
            match s {
                Stmt::Return(v) => return (*v, steps),
                Stmt::If { var, mask, then, otherwise } => {
                    steps += 1;
                    s = if u64::from(x[*var]) & mask != 0 { then } else { otherwise };
                }
            }
        }
    }

    pub fn depth(&self) -> u32 {
        match self {
            Stmt::Return(_) => 0,
            Stmt::If { then, otherwise, .. } => 1 + then.depth().max(otherwise.depth()),
        }
    }
}

struct Lines<'a> {
    lines: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<(usize, &'a str), ParseError> {
        let l = self.lines.get(self.pos).copied().ok_or(ParseError::Syntax { line: 0, msg: "unexpected end".into() })?;
        self.pos += 1;
        Ok(l)
    }

    fn expect(&mut self, want: &str) -> Result<(), ParseError> {
        let (line, s) = self.next()?;
        if s == want {
            Ok(())
        } else {
            Err(ParseError::Syntax { line, msg: format!("expected {want:?}, found {s:?}") })
        }
    }
}

fn strip_comment(s: &str) -> String {
    let mut out = s.to_string();
    while let Some(a) = out.find("/*") {
        match out[a..].find("*/") {
            Some(b) => out.replace_range(a..a + b + 2, ""),
            None => break,
        }
    }
    out.trim().to_string()
}

fn parse_stmt(ls: &mut Lines<'_>) -> Result<Stmt, ParseError> {
    let (line, s) = ls.next()?;
    let err = |msg: &str| ParseError::Syntax { line, msg: msg.to_string() };
    if let Some(v) = s.strip_prefix("return ").and_then(|r| r.strip_suffix(';')) {
        let v = v.trim();
        return match v {
            "FAULT" => Ok(Stmt::Return(-1)),
            _ => v.parse().map(Stmt::Return).map_err(|_| err("bad return value")),
        };
    }
    let cond = s.strip_prefix("if (x").and_then(|r| r.strip_suffix(") {")).ok_or_else(|| err("expected if or return"))?;
    let (var, mask) = cond.split_once(" & 0x").ok_or_else(|| err("bad condition"))?;
    let var: usize = var.parse().map_err(|_| err("bad variable"))?;
    let mask = u64::from_str_radix(mask, 16).map_err(|_| err("bad mask"))?;
    let then = parse_stmt(ls)?;
    ls.expect("} else {")?;
    let otherwise = parse_stmt(ls)?;
    ls.expect("}")?;
    Ok(Stmt::If { var, mask, then: Box::new(then), otherwise: Box::new(otherwise) })
}

/// Parses emitted source back into one statement tree per function.
pub fn parse_source(src: &str) -> Result<HashMap<String, Stmt>, ParseError> {
    let lines: Vec<(usize, String)> = src
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, strip_comment(l)))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .collect();
    let mut ls = Lines { lines: lines.iter().map(|(i, l)| (*i, l.as_str())).collect(), pos: 0 };
    let mut out = HashMap::new();
    while ls.pos < ls.lines.len() {
        let (line, s) = ls.next()?;
        let name = s
            .strip_prefix("int ")
            .and_then(|r| r.split_once('('))
            .map(|(n, _)| n.to_string())
            .filter(|_| s.ends_with(") {"))
            .ok_or(ParseError::Syntax { line, msg: "expected function".into() })?;
        let body = parse_stmt(&mut ls)?;
        ls.expect("}")?;
        out.insert(name, body);
    }
    Ok(out)
}

/// Action index a returned value stands for, or `None` for FAULT.
pub fn decode_action(v: i64, actions: &[QuantAction]) -> Option<usize> {
    if v < 0 {
        return None;
    }
    actions.iter().position(|a| a.iter().fold(0i64, |acc, &b| (acc << 1) | i64::from(b)) == v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthesis::Outcome;
    use std::collections::BTreeMap;

    fn toy_controller() -> Controller {
        let mut enabled = BTreeMap::new();
        enabled.insert(0, vec![1]);
        enabled.insert(1, vec![1]);
        enabled.insert(2, vec![0]);
        enabled.insert(3, vec![0]);
        Controller {
            actions: vec![vec![false], vec![true]],
            enabled,
            rank: vec![Some(2), Some(1), Some(0), Some(1)],
            goal: vec![false, false, true, false],
            initial: vec![true; 4],
            outcome: Outcome::Sol,
            diagnostic: None,
        }
    }

    fn toy_schema() -> QuantSchema {
        QuantSchema::uniform(vec![(0.0, 4.0)], 2).unwrap()
    }

    #[test]
    fn toy_tree() {
        let k = toy_controller();
        let s = toy_schema();
        let t = compile(&k, &s);
        assert!(t.depth() <= 2);
        for c in 0..4u32 {
            assert_eq!(t.lookup(&[c]).0, Leaf::Action(k.chosen(c as usize).unwrap()));
        }
        // (0,1) -> u=1 and (2,3) -> u=0 merge into one test on the top bit
        assert_eq!(t.size(), 3);
        assert_eq!(t.lookup(&[7]).0, Leaf::Fault);
    }

    #[test]
    fn merging_preserves_semantics() {
        let mut k = toy_controller();
        k.enabled.remove(&3);
        k.rank[3] = None;
        let s = toy_schema();
        let merged = compile(&k, &s);
        let full = compile_with(&k, &s, false);
        assert!(full.size() > merged.size());
        for c in 0..4 {
            assert_eq!(merged.lookup(&[c]).0, full.lookup(&[c]).0);
        }
        assert_eq!(merged.interpret(&Cell(vec![3])), None);
    }

    #[test]
    fn uniform_controller_is_one_leaf() {
        let mut k = toy_controller();
        for a in k.enabled.values_mut() {
            *a = vec![1];
        }
        let t = compile(&k, &toy_schema());
        assert_eq!(t.size(), 1);
        assert_eq!(t.depth(), 0);
        let src = emit_source(&t, &compile_region(&k, &toy_schema()), &SourceHeader::default());
        let f = parse_source(&src).unwrap();
        assert_eq!(f["control_law"], Stmt::Return(1));
        assert_eq!(f["controllable_region"], Stmt::Return(1));
    }

    #[test]
    fn bit_order_interleaves() {
        assert_eq!(bit_order(&[2, 3]), vec![(0, 1), (1, 2), (0, 0), (1, 1), (1, 0)]);
    }

    #[test]
    fn source_roundtrip() {
        let k = toy_controller();
        let s = QuantSchema::uniform(vec![(0.0, 4.0), (0.0, 1.0)], 2).unwrap();
        let mut k2 = k.clone();
        k2.enabled.clear();
        k2.rank = vec![None; 16];
        for c in 0..16u32 {
            if c % 3 != 0 {
                k2.enabled.insert(c, vec![(c % 2) as usize]);
                k2.rank[c as usize] = Some(1);
            }
        }
        let law = compile(&k2, &s);
        let region = compile_region(&k2, &s);
        let src = emit_source(&law, &region, &SourceHeader { model: "t".into(), ..Default::default() });
        assert!(!src.contains("while") && !src.contains("for ("));
        let f = parse_source(&src).unwrap();
        for c in s.enumerate_cells() {
            let idx = s.linear_index(&c);
            let (v, steps) = f["control_law"].eval(&c.0);
            assert_eq!(decode_action(v, &k2.actions), k2.chosen(idx));
            assert!(steps <= s.total_bits());
            assert_eq!(f["controllable_region"].eval(&c.0).0 == 1, k2.is_controllable(idx));
        }
        assert_eq!(f["control_law"].depth(), law.depth());
    }

    #[test]
    fn parse_errors() {
        assert!(parse_source("int f(unsigned x0) {\n  return ;\n}\n").is_err());
        assert!(parse_source("int f(unsigned x0) {\n  if (x0 & 0x1) {\n    return 1;\n  }\n}\n").is_err());
    }
}
