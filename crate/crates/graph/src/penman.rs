//! Penman notation reader and writer.
//!
//! Reading normalizes inverse roles (`:ARG0-of`) to forward edges. Writing
//! names variables `v0, v1, ...` after node ids and walks edges in either
//! direction, so graphs whose root is not a source of every path still
//! serialize (the walk emits `-of` roles where needed).

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::graph::{invert_label, is_inverse_label, AmrGraph, GraphBuilder, GraphError, Node};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PenmanError {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax {
        line: usize,
        col: usize,
        msg: String,
    },
    #[error("variable `{var}` defined twice (second definition at {line}:{col})")]
    DuplicateVariable { var: String, line: usize, col: usize },
    #[error("reference to undefined variable `{var}` at {line}:{col}")]
    DanglingReference { var: String, line: usize, col: usize },
    #[error("invalid graph: {0}")]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Open,
    Close,
    Slash,
    Role(String),
    Str(String),
    Sym(String),
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn is_delim(c: char) -> bool {
    c.is_whitespace() || matches!(c, '(' | ')' | '/' | ':' | '"')
}

fn lex(text: &str) -> Result<Vec<Spanned>, PenmanError> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    let (mut line, mut col) = (1usize, 1usize);
    while let Some(&c) = chars.peek() {
        let (l0, c0) = (line, col);
        let bump = |ch: char, line: &mut usize, col: &mut usize| {
            if ch == '\n' {
                *line += 1;
                *col = 1;
            } else {
                *col += 1;
            }
        };
        match c {
            _ if c.is_whitespace() => {
                chars.next();
                bump(c, &mut line, &mut col);
            }
            '#' if col == 1 => {
                // metadata comment line
                while let Some(ch) = chars.next() {
                    bump(ch, &mut line, &mut col);
                    if ch == '\n' {
                        break;
                    }
                }
            }
            '(' | ')' | '/' => {
                chars.next();
                bump(c, &mut line, &mut col);
                let tok = match c {
                    '(' => Tok::Open,
                    ')' => Tok::Close,
                    _ => Tok::Slash,
                };
                out.push(Spanned { tok, line: l0, col: c0 });
            }
            ':' => {
                chars.next();
                bump(c, &mut line, &mut col);
                let mut name = String::new();
                while let Some(&ch) = chars.peek() {
                    if is_delim(ch) {
                        break;
                    }
                    name.push(ch);
                    chars.next();
                    bump(ch, &mut line, &mut col);
                }
                if name.is_empty() {
                    return Err(PenmanError::Syntax {
                        line: l0,
                        col: c0,
                        msg: "empty role name".into(),
                    });
                }
                out.push(Spanned {
                    tok: Tok::Role(name),
                    line: l0,
                    col: c0,
                });
            }
            '"' => {
                chars.next();
                bump(c, &mut line, &mut col);
                let mut s = String::new();
                let mut closed = false;
                while let Some(ch) = chars.next() {
                    bump(ch, &mut line, &mut col);
                    match ch {
                        '"' => {
                            closed = true;
                            break;
                        }
                        '\\' => {
                            if let Some(esc) = chars.next() {
                                bump(esc, &mut line, &mut col);
                                s.push(esc);
                            }
                        }
                        _ => s.push(ch),
                    }
                }
                if !closed {
                    return Err(PenmanError::Syntax {
                        line: l0,
                        col: c0,
                        msg: "unterminated string".into(),
                    });
                }
                out.push(Spanned {
                    tok: Tok::Str(s),
                    line: l0,
                    col: c0,
                });
            }
            _ => {
                let mut s = String::new();
                while let Some(&ch) = chars.peek() {
                    if is_delim(ch) {
                        break;
                    }
                    s.push(ch);
                    chars.next();
                    bump(ch, &mut line, &mut col);
                }
                out.push(Spanned {
                    tok: Tok::Sym(s),
                    line: l0,
                    col: c0,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug)]
enum Target {
    Node(usize),
    Constant(String),
    Reference(String, usize, usize),
}

#[derive(Debug)]
struct RawNode {
    concept: String,
    children: Vec<(String, Target)>,
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    nodes: Vec<RawNode>,
    end: (usize, usize),
}

impl Parser {
    fn peek(&self) -> Option<&Spanned> {
        self.toks.get(self.pos)
    }

    fn err_here(&self, msg: impl Into<String>) -> PenmanError {
        let (line, col) = self.peek().map(|t| (t.line, t.col)).unwrap_or(self.end);
        PenmanError::Syntax {
            line,
            col,
            msg: msg.into(),
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), PenmanError> {
        match self.peek() {
            Some(t) if t.tok == tok => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.err_here(format!("expected {what}"))),
        }
    }

    fn node(&mut self, defs: &mut HashMap<String, usize>) -> Result<usize, PenmanError> {
        self.expect(Tok::Open, "`(`")?;
        let (var, line, col) = match self.peek() {
            Some(Spanned {
                tok: Tok::Sym(v),
                line,
                col,
            }) => (v.clone(), *line, *col),
            _ => return Err(self.err_here("expected variable")),
        };
        self.pos += 1;
        if defs.contains_key(&var) {
            return Err(PenmanError::DuplicateVariable { var, line, col });
        }
        self.expect(Tok::Slash, "`/`")?;
        let concept = match self.peek().map(|t| &t.tok) {
            Some(Tok::Sym(s)) | Some(Tok::Str(s)) => s.clone(),
            _ => return Err(self.err_here("expected concept")),
        };
        self.pos += 1;
        let id = self.nodes.len();
        defs.insert(var, id);
        self.nodes.push(RawNode {
            concept,
            children: Vec::new(),
        });
        loop {
            let t = match self.peek() {
                Some(t) => t.clone(),
                None => return Err(self.err_here("unexpected end of input, expected `)`")),
            };
            match t.tok {
                Tok::Close => {
                    self.pos += 1;
                    return Ok(id);
                }
                Tok::Role(role) => {
                    self.pos += 1;
                    let next = match self.peek() {
                        Some(n) => n.clone(),
                        None => return Err(self.err_here("role without a value")),
                    };
                    let target = match next.tok {
                        Tok::Open => Target::Node(self.node(defs)?),
                        Tok::Str(s) => {
                            self.pos += 1;
                            Target::Constant(s)
                        }
                        Tok::Sym(s) => {
                            self.pos += 1;
                            Target::Reference(s, next.line, next.col)
                        }
                        _ => return Err(self.err_here("expected a value after role")),
                    };
                    self.nodes[id].children.push((role, target));
                }
                _ => return Err(self.err_here("expected role or `)`")),
            }
        }
    }
}

/// A bare symbol that looks like a variable name (`b`, `b2`, `x21`).
fn looks_like_variable(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase()) && chars.all(|c| c.is_ascii_digit())
}

/// Parses one Penman graph. Comment lines starting with `#` are skipped.
/// Repeated identical triples are collapsed into one edge.
pub fn parse_penman(text: &str) -> Result<AmrGraph, PenmanError> {
    let toks = lex(text)?;
    let end = text
        .lines()
        .enumerate()
        .last()
        .map(|(i, l)| (i + 1, l.chars().count() + 1))
        .unwrap_or((1, 1));
    let mut p = Parser {
        toks,
        pos: 0,
        nodes: Vec::new(),
        end,
    };
    let mut defs = HashMap::new();
    if p.peek().is_none() {
        return Err(p.err_here("empty input"));
    }
    let root = p.node(&mut defs)?;
    if p.peek().is_some() {
        return Err(p.err_here("trailing input after graph"));
    }

    // variables keep their definition order; constants are numbered after
    // the node that introduces them, in text order
    let mut builder = GraphBuilder::new();
    let mut ids = vec![0; p.nodes.len()];
    let mut order = Vec::new();
    flatten(&p.nodes, root, &mut order);
    let mut pending = Vec::new();
    for &raw in &order {
        ids[raw] = builder.add_node(Node::concept(p.nodes[raw].concept.clone()));
    }
    for &raw in &order {
        for (role, target) in &p.nodes[raw].children {
            let parent = ids[raw];
            match target {
                Target::Node(child) => pending.push((parent, ids[*child], role.clone())),
                Target::Reference(sym, line, col) => {
                    if let Some(&child) = defs.get(sym) {
                        pending.push((parent, ids[child], role.clone()));
                    } else if looks_like_variable(sym) {
                        return Err(PenmanError::DanglingReference {
                            var: sym.clone(),
                            line: *line,
                            col: *col,
                        });
                    } else {
                        let c = builder.add_node(Node::attribute(sym.clone()));
                        builder.add_edge(parent, c, role.clone());
                    }
                }
                Target::Constant(s) => {
                    let c = builder.add_node(Node::attribute(s.clone()));
                    builder.add_edge(parent, c, role.clone());
                }
            }
        }
    }
    for (parent, child, role) in pending {
        if is_inverse_label(&role) {
            builder.add_edge(child, parent, invert_label(&role));
        } else {
            builder.add_edge(parent, child, role);
        }
    }
    Ok(builder.finish(ids[root])?)
}

fn flatten(nodes: &[RawNode], id: usize, out: &mut Vec<usize>) {
    out.push(id);
    for (_, t) in &nodes[id].children {
        if let Target::Node(child) = t {
            flatten(nodes, *child, out);
        }
    }
}

/// Splits a multi-graph file into blocks separated by blank lines. Each
/// block yields its `# ::id` value (when present) and the block text.
pub fn read_penman_blocks(text: &str) -> Vec<(Option<String>, String)> {
    let mut blocks = Vec::new();
    let mut current = String::new();
    let mut id = None;
    let mut has_graph = false;
    let mut flush = |current: &mut String, id: &mut Option<String>, has_graph: &mut bool| {
        if *has_graph {
            blocks.push((id.take(), std::mem::take(current)));
        }
        current.clear();
        *id = None;
        *has_graph = false;
    };
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            flush(&mut current, &mut id, &mut has_graph);
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            if let Some(pos) = rest.find("::id ") {
                let value = rest[pos + 5..].split_whitespace().next().unwrap_or("");
                id = Some(value.to_string());
            }
        } else {
            has_graph = true;
        }
        current.push_str(line);
        current.push('\n');
    }
    flush(&mut current, &mut id, &mut has_graph);
    blocks
}

const BARE_CONSTANTS: [&str; 5] = ["-", "+", "imperative", "expressive", "interrogative"];

fn write_constant(out: &mut String, value: &str) {
    let numeric = !value.is_empty()
        && value.parse::<f64>().is_ok()
        && value.chars().all(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E'));
    if numeric || BARE_CONSTANTS.contains(&value) {
        out.push_str(value);
    } else {
        write_quoted(out, value);
    }
}

fn write_quoted(out: &mut String, value: &str) {
    out.push('"');
    for c in value.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
}

fn write_concept(out: &mut String, label: &str) {
    if label.is_empty() || label.chars().any(is_delim) {
        write_quoted(out, label);
    } else {
        out.push_str(label);
    }
}

/// Writes a graph in indented Penman notation.
///
/// Each node is nested under the parent that first reaches it in a
/// breadth-first walk which tries outgoing edges before incoming ones; every
/// other edge is written once, at its source, as a variable reference.
pub fn serialize_penman(graph: &AmrGraph) -> String {
    let adjacency = graph.adjacency();
    let mut tree_edge = vec![None; graph.len()];
    let mut placed = vec![false; graph.len()];
    placed[graph.root()] = true;
    let mut queue = std::collections::VecDeque::from([graph.root()]);
    while let Some(u) = queue.pop_front() {
        for want_outgoing in [true, false] {
            for &(v, e, outgoing) in &adjacency[u] {
                if outgoing == want_outgoing && !placed[v] {
                    placed[v] = true;
                    tree_edge[v] = Some(e);
                    queue.push_back(v);
                }
            }
        }
    }
    let mut out = String::new();
    write_node(graph, &adjacency, &tree_edge, graph.root(), 0, &mut out);
    out
}

fn write_node(
    graph: &AmrGraph,
    adjacency: &[Vec<(usize, usize, bool)>],
    tree_edge: &[Option<usize>],
    id: usize,
    depth: usize,
    out: &mut String,
) {
    let _ = write!(out, "(v{id} / ");
    write_concept(out, &graph.node(id).label);
    for &(other, edge, outgoing) in &adjacency[id] {
        let nests = tree_edge[other] == Some(edge);
        if !nests && (!outgoing || tree_edge[id] == Some(edge)) {
            continue;
        }
        let label = &graph.edges()[edge].label;
        let role = if outgoing {
            label.clone()
        } else {
            invert_label(label)
        };
        out.push('\n');
        for _ in 0..=depth {
            out.push_str("    ");
        }
        let _ = write!(out, ":{role} ");
        let node = graph.node(other);
        if node.is_attribute {
            write_constant(out, &node.label);
        } else if nests {
            write_node(graph, adjacency, tree_edge, other, depth + 1, out);
        } else {
            let _ = write!(out, "v{other}");
        }
    }
    out.push(')');
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn go_boy() {
        let g = parse_penman("(g / go-02 :ARG0 (b / boy))").unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.edges().len(), 1);
        assert_eq!(g.node(g.root()).label, "go-02");
        let e = &g.edges()[0];
        assert_eq!((e.source, e.target, e.label.as_str()), (0, 1, "ARG0"));
    }

    #[test]
    fn single_node() {
        let g = parse_penman("(a / alpha)").unwrap();
        assert_eq!(g.len(), 1);
        assert!(g.edges().is_empty());
        assert_eq!(serialize_penman(&g), "(v0 / alpha)");
    }

    #[test]
    fn polarity_attribute() {
        let g = parse_penman("(g / go-02 :polarity -)").unwrap();
        assert_eq!(g.len(), 2);
        assert!(g.node(1).is_attribute);
        assert_eq!(g.node(1).label, "-");
        assert_eq!(g.edges()[0].label, "polarity");
    }

    #[test]
    fn inverse_roles_are_normalized() {
        let g = parse_penman("(b / boy :ARG0-of (g / go-02))").unwrap();
        assert_eq!(g.root(), 0);
        let e = &g.edges()[0];
        assert_eq!((e.source, e.target, e.label.as_str()), (1, 0, "ARG0"));
        let text = serialize_penman(&g);
        assert!(text.contains(":ARG0-of"), "{text}");
        assert_eq!(parse_penman(&text).unwrap(), g);
    }

    #[test]
    fn reentrancy_written_once() {
        let text = "(w / want-01 :ARG0 (b / boy) :ARG1 (g / go-02 :ARG0 b))";
        let g = parse_penman(text).unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g.edges().len(), 3);
        let out = serialize_penman(&g);
        assert_eq!(out.matches("/ boy").count(), 1);
        assert_eq!(out.matches(":ARG0 v1").count(), 1, "{out}");
        assert_eq!(parse_penman(&out).unwrap(), g);
    }

    #[test]
    fn strings_and_numbers() {
        let g = parse_penman(
            r#"(p / person :name (n / name :op1 "Barack" :op2 "Obama") :quant 3 :mode imperative)"#,
        )
        .unwrap();
        let labels: Vec<_> = g.nodes().iter().map(|n| n.label.as_str()).collect();
        assert_eq!(labels, ["person", "name", "3", "imperative", "Barack", "Obama"]);
        let out = serialize_penman(&g);
        assert!(out.contains(":op1 \"Barack\""));
        assert!(out.contains(":quant 3"));
        assert!(out.contains(":mode imperative"));
        assert_eq!(parse_penman(&out).unwrap(), g);
    }

    #[test]
    fn errors_carry_positions() {
        match parse_penman("(a / alpha\n  :ARG0 (b / beta)") {
            Err(PenmanError::Syntax { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match parse_penman("(a / alpha :ARG0 (a / beta))") {
            Err(PenmanError::DuplicateVariable { var, line, col }) => {
                assert_eq!((var.as_str(), line, col), ("a", 1, 19))
            }
            other => panic!("{other:?}"),
        }
        match parse_penman("(a / alpha :ARG0 z2)") {
            Err(PenmanError::DanglingReference { var, .. }) => assert_eq!(var, "z2"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_penman("(a / alpha :ARG0 a)"),
            Err(PenmanError::Graph(GraphError::SelfLoop(0)))
        ));
        assert!(parse_penman("").is_err());
        assert!(parse_penman("(a / b) (c / d)").is_err());
        assert!(parse_penman("(a / \"unterminated)").is_err());
    }

    #[test]
    fn forward_reference_and_comments() {
        let text = "# ::id s1\n# ::snt The boy.\n(a / and :op1 (x / go-02 :ARG0 y) :op2 (y / boy))";
        let g = parse_penman(text).unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g.edges().len(), 3);
    }

    #[test]
    fn blocks() {
        let text = "# ::id a\n(a / alpha)\n\n\n# ::id b\n# ::snt x\n(b / beta\n  :r (c / gamma))\n";
        let blocks = read_penman_blocks(text);
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0].0.as_deref(), Some("a"));
        assert_eq!(blocks[1].0.as_deref(), Some("b"));
        assert_eq!(parse_penman(&blocks[1].1).unwrap().len(), 2);
    }

    #[test]
    fn quoting_special_concepts() {
        let g = AmrGraph::single("odd concept(1)");
        let out = serialize_penman(&g);
        assert_eq!(parse_penman(&out).unwrap(), g);
        let g = parse_penman(r#"(a / alpha :op1 "say \"hi\"")"#).unwrap();
        assert_eq!(g.node(1).label, "say \"hi\"");
        assert_eq!(parse_penman(&serialize_penman(&g)).unwrap(), g);
    }
}
