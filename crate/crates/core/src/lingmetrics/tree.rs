//! Constituency trees in Penn bracket notation and the Yngve depth score.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::LingError;

/// A parse tree node. Leaves carry a token and no children; interior nodes
/// carry at least one child. A leaf with an empty label is a bare token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TreeWire", into = "TreeWire")]
pub struct ConstituencyTree {
    label: String,
    children: Vec<ConstituencyTree>,
    token: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct TreeWire {
    label: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    children: Vec<ConstituencyTree>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    token: Option<String>,
}

impl TryFrom<TreeWire> for ConstituencyTree {
    type Error = LingError;

    fn try_from(w: TreeWire) -> Result<Self, LingError> {
        match (w.token, w.children.is_empty()) {
            (Some(t), true) => ConstituencyTree::leaf(w.label, t),
            (None, false) => ConstituencyTree::node(w.label, w.children),
            _ => Err(LingError::MalformedTree("a node needs either a token or children, not both".into())),
        }
    }
}

impl From<ConstituencyTree> for TreeWire {
    fn from(t: ConstituencyTree) -> Self {
        TreeWire { label: t.label, children: t.children, token: t.token }
    }
}

fn check_atom(s: &str, what: &str, allow_empty: bool) -> Result<(), LingError> {
    if (!allow_empty && s.is_empty()) || s.chars().any(|c| c.is_whitespace() || c == '(' || c == ')') {
        return Err(LingError::MalformedTree(format!("invalid {what} {s:?}")));
    }
    Ok(())
}

impl ConstituencyTree {
    pub fn leaf(label: impl Into<String>, token: impl Into<String>) -> Result<Self, LingError> {
        let (label, token) = (label.into(), token.into());
        check_atom(&label, "label", true)?;
        check_atom(&token, "token", false)?;
        Ok(ConstituencyTree { label, children: Vec::new(), token: Some(token) })
    }

    pub fn bare(token: impl Into<String>) -> Result<Self, LingError> {
        Self::leaf("", token)
    }

    /// Interior node. A node whose single child is a bare token becomes a
    /// labelled leaf, since both print as `(LABEL token)`.
    pub fn node(label: impl Into<String>, mut children: Vec<ConstituencyTree>) -> Result<Self, LingError> {
        let label = label.into();
        check_atom(&label, "label", false)?;
        if children.is_empty() {
            return Err(LingError::MalformedTree(format!("empty node ({label})")));
        }
        if children.len() == 1 && children[0].is_leaf() && children[0].label.is_empty() {
            let token = children.pop().and_then(|c| c.token).expect("leaf has token");
            return Self::leaf(label, token);
        }
        Ok(ConstituencyTree { label, children, token: None })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn children(&self) -> &[ConstituencyTree] {
        &self.children
    }

    pub fn token(&self) -> Option<&str> {
        self.token.as_deref()
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn leaves(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a str>) {
        match &self.token {
            Some(t) => out.push(t),
            None => self.children.iter().for_each(|c| c.collect_leaves(out)),
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(Self::node_count).sum::<usize>()
    }

    /// Same shape with every interior label replaced by `f(label)`.
    pub fn relabel(&self, f: &dyn Fn(&str) -> String) -> Result<Self, LingError> {
        if self.is_leaf() {
            return Ok(self.clone());
        }
        let kids = self.children.iter().map(|c| c.relabel(f)).collect::<Result<Vec<_>, _>>()?;
        Self::node(f(&self.label), kids)
    }

    pub fn to_bracketed(&self) -> String {
        let mut s = String::new();
        self.write_bracketed(&mut s);
        s
    }

    fn write_bracketed(&self, s: &mut String) {
        match &self.token {
            Some(t) if self.label.is_empty() => s.push_str(t),
            Some(t) => {
                s.push('(');
                s.push_str(&self.label);
                s.push(' ');
                s.push_str(t);
                s.push(')');
            }
            None => {
                s.push('(');
                s.push_str(&self.label);
                for c in &self.children {
                    s.push(' ');
                    c.write_bracketed(s);
                }
                s.push(')');
            }
        }
    }
}

impl fmt::Display for ConstituencyTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_bracketed())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Open,
    Close,
    Atom(String),
}

fn lex(text: &str) -> Vec<Tok> {
    let mut out = Vec::new();
    let mut atom = String::new();
    let flush = |atom: &mut String, out: &mut Vec<Tok>| {
        if !atom.is_empty() {
            out.push(Tok::Atom(std::mem::take(atom)));
        }
    };
    for c in text.chars() {
        match c {
            '(' | ')' => {
                flush(&mut atom, &mut out);
                out.push(if c == '(' { Tok::Open } else { Tok::Close });
            }
            c if c.is_whitespace() => flush(&mut atom, &mut out),
            c => atom.push(c),
        }
    }
    flush(&mut atom, &mut out);
    out
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn item(&mut self) -> Result<ConstituencyTree, LingError> {
        match self.next() {
            Some(Tok::Atom(a)) => ConstituencyTree::bare(a),
            Some(Tok::Open) => self.bracket(),
            Some(Tok::Close) => Err(LingError::MalformedTree(format!("unexpected ')' at token {}", self.pos))),
            None => Err(LingError::MalformedTree("unexpected end of input".into())),
        }
    }

    // Called after '('.
    fn bracket(&mut self) -> Result<ConstituencyTree, LingError> {
        let label = match self.peek() {
            Some(Tok::Atom(a)) => {
                let a = a.clone();
                self.pos += 1;
                a
            }
            _ => String::new(),
        };
        let mut children = Vec::new();
        loop {
            match self.peek() {
                Some(Tok::Close) => {
                    self.pos += 1;
                    break;
                }
                None => return Err(LingError::MalformedTree(format!("unbalanced brackets: ({label} is never closed"))),
                _ => children.push(self.item()?),
            }
        }
        if children.is_empty() {
            return Err(LingError::MalformedTree(format!("empty node ({label})")));
        }
        if label.is_empty() {
            // "( (S ...))" wrapper used by treebank files.
            return if children.len() == 1 { Ok(children.pop().expect("one child")) } else { ConstituencyTree::node("ROOT", children) };
        }
        ConstituencyTree::node(label, children)
    }
}

/// Parses `(LABEL child ...)` notation; leaves are `(POS token)` or bare tokens.
pub fn parse_bracketed_tree(text: &str) -> Result<ConstituencyTree, LingError> {
    let mut p = Parser { toks: lex(text), pos: 0 };
    if p.toks.is_empty() {
        return Err(LingError::MalformedTree("empty input".into()));
    }
    let tree = p.item()?;
    if p.pos != p.toks.len() {
        return Err(LingError::MalformedTree(format!("trailing input after token {}", p.pos)));
    }
    Ok(tree)
}

/// Mean over leaves of the number of right siblings summed along the path
/// from the root to the leaf.
pub fn yngve_score(tree: &ConstituencyTree) -> f64 {
    fn walk(t: &ConstituencyTree, depth: usize, sum: &mut usize, leaves: &mut usize) {
        if t.is_leaf() {
            *sum += depth;
            *leaves += 1;
            return;
        }
        let n = t.children.len();
        for (i, c) in t.children.iter().enumerate() {
            walk(c, depth + (n - 1 - i), sum, leaves);
        }
    }
    let (mut sum, mut leaves) = (0, 0);
    walk(tree, 0, &mut sum, &mut leaves);
    sum as f64 / leaves as f64
}

pub const FALLBACK_LABEL: &str = "X";

/// Right-branching binary tree over `tokens`: `(X t1 (X t2 (X t3 t4)))`.
pub fn fallback_tree(tokens: &[String]) -> Result<ConstituencyTree, LingError> {
    let (last, rest) = tokens.split_last().ok_or_else(|| LingError::InvalidArgument("no tokens".into()))?;
    let mut tree = ConstituencyTree::bare(last.as_str())?;
    for t in rest.iter().rev() {
        tree = ConstituencyTree::node(FALLBACK_LABEL, vec![ConstituencyTree::bare(t.as_str())?, tree])?;
    }
    Ok(tree)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parse_examples() {
        let t = parse_bracketed_tree("(S (NP (DT a) (NN dog)) (VP (VBD ran)))").unwrap();
        assert_eq!(t.leaves(), vec!["a", "dog", "ran"]);
        assert_eq!(t.to_bracketed(), "(S (NP (DT a) (NN dog)) (VP (VBD ran)))");
        assert!(parse_bracketed_tree("(S").is_err());
        assert!(parse_bracketed_tree("(S)").is_err());
        assert!(parse_bracketed_tree("()").is_err());
        assert!(parse_bracketed_tree("(S a))").is_err());
        assert!(parse_bracketed_tree("").is_err());
        assert_eq!(parse_bracketed_tree("( (S a b))").unwrap().to_bracketed(), "(S a b)");
    }

    #[test]
    fn yngve_examples() {
        assert_eq!(yngve_score(&parse_bracketed_tree("(NN x)").unwrap()), 0.0);
        assert_eq!(yngve_score(&parse_bracketed_tree("(S (A x) (B y))").unwrap()), 0.5);
        let left = parse_bracketed_tree("(X (X (X a b) c) d)").unwrap();
        let right = parse_bracketed_tree("(X a (X b (X c d)))").unwrap();
        // left: a=3, b=2, c=1, d=0; right: a=1, b=1, c=1, d=0
        assert_eq!(yngve_score(&left), 1.5);
        assert_eq!(yngve_score(&right), 0.75);
    }

    #[test]
    fn fallback_examples() {
        assert_eq!(yngve_score(&fallback_tree(&toks(&["a"])).unwrap()), 0.0);
        assert_eq!(yngve_score(&fallback_tree(&toks(&["a", "b"])).unwrap()), 0.5);
        assert_eq!(fallback_tree(&toks(&["a", "b", "c"])).unwrap().to_bracketed(), "(X a (X b c))");
        assert!(fallback_tree(&[]).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let t = parse_bracketed_tree("(S (NP (DT a) (NN dog)) ran)").unwrap();
        let back: ConstituencyTree = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        assert_eq!(back, t);
        assert!(serde_json::from_str::<ConstituencyTree>(r#"{"label":"S"}"#).is_err());
    }
}
