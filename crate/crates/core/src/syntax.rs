//! Dependency trees and treelet extraction.
//!
//! A treelet is a connected subgraph of a dependency tree with one to three
//! nodes. Treelets are delexicalized: a single node renders as its bare UPOS
//! tag, larger shapes render each node as `UPOS/DEPREL` with the children of a
//! node listed in parentheses, sorted lexicographically:
//!
//! ```text
//! NOUN                          one node
//! VERB/root(NOUN/obj)           parent and child
//! VERB/root(NOUN/obj(DET/det))  chain of three
//! NOUN/obj(ADJ/amod,DET/det)    parent with two children
//! ```

use std::collections::BTreeMap;
use std::fmt;

use crate::corpus::Document;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepNode {
    pub form: String,
    pub lemma: String,
    pub upos: String,
    pub deprel: String,
}

impl DepNode {
    pub fn new(form: &str, upos: &str, deprel: &str) -> Self {
        DepNode {
            form: form.to_string(),
            lemma: form.to_lowercase(),
            upos: upos.to_string(),
            deprel: deprel.to_string(),
        }
    }
}

/// A parsed sentence. `heads` uses CoNLL-U numbering: 0 is the root, `k` is
/// the k-th node (1-based).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepTree {
    nodes: Vec<DepNode>,
    heads: Vec<usize>,
}

impl DepTree {
    pub fn new(nodes: Vec<DepNode>, heads: Vec<usize>) -> Result<Self> {
        let n = nodes.len();
        if n == 0 {
            return Err(Error::Validation("empty dependency tree".into()));
        }
        if heads.len() != n {
            return Err(Error::Validation(format!(
                "{} heads for {n} nodes",
                heads.len()
            )));
        }
        for (i, &h) in heads.iter().enumerate() {
            if h > n {
                return Err(Error::Validation(format!("node {}: head {h} out of range", i + 1)));
            }
            if h == i + 1 {
                return Err(Error::Validation(format!("node {} is its own head", i + 1)));
            }
        }
        let roots = heads.iter().filter(|&&h| h == 0).count();
        if roots != 1 {
            return Err(Error::Validation(format!("expected exactly one root, found {roots}")));
        }
        // Walking up from any node must reach the root within n steps.
        for start in 0..n {
            let mut cur = start;
            let mut steps = 0;
            while heads[cur] != 0 {
                cur = heads[cur] - 1;
                steps += 1;
                if steps > n {
                    return Err(Error::Validation(format!(
                        "cycle through node {}",
                        start + 1
                    )));
                }
            }
        }
        Ok(DepTree { nodes, heads })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[DepNode] {
        &self.nodes
    }

    /// 0-based parent of node `i`, `None` for the root.
    pub fn head(&self, i: usize) -> Option<usize> {
        self.heads[i].checked_sub(1)
    }

    /// CoNLL-U HEAD value of node `i`.
    pub fn head_id(&self, i: usize) -> usize {
        self.heads[i]
    }

    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut children = vec![Vec::new(); self.len()];
        for i in 0..self.len() {
            if let Some(p) = self.head(i) {
                children[p].push(i);
            }
        }
        children
    }

    /// Lowercased surface forms.
    pub fn forms(&self) -> Vec<String> {
        self.nodes.iter().map(|n| n.form.to_lowercase()).collect()
    }

    pub fn upos_tags(&self) -> Vec<String> {
        self.nodes.iter().map(|n| n.upos.clone()).collect()
    }
}

/// Canonical treelet signature.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Treelet(String);

impl Treelet {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Parses a signature back into its node and edge counts.
    pub fn decode(signature: &str) -> Result<(usize, usize)> {
        fn node(s: &[u8], pos: &mut usize, nodes: &mut usize, edges: &mut usize) -> Result<()> {
            let start = *pos;
            while *pos < s.len() && !matches!(s[*pos], b'(' | b')' | b',') {
                *pos += 1;
            }
            if *pos == start {
                return Err(Error::Validation("empty treelet node".into()));
            }
            *nodes += 1;
            if *pos < s.len() && s[*pos] == b'(' {
                *pos += 1;
                loop {
                    node(s, pos, nodes, edges)?;
                    *edges += 1;
                    match s.get(*pos) {
                        Some(b',') => *pos += 1,
                        Some(b')') => {
                            *pos += 1;
                            break;
                        }
                        _ => return Err(Error::Validation("unbalanced treelet".into())),
                    }
                }
            }
            Ok(())
        }
        let bytes = signature.as_bytes();
        let (mut pos, mut nodes, mut edges) = (0, 0, 0);
        node(bytes, &mut pos, &mut nodes, &mut edges)?;
        if pos != bytes.len() {
            return Err(Error::Validation(format!("trailing input in {signature:?}")));
        }
        Ok((nodes, edges))
    }
}

impl fmt::Display for Treelet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn label(node: &DepNode) -> String {
    format!("{}/{}", node.upos, node.deprel)
}

fn render(parent: &DepNode, children: &mut [String]) -> String {
    children.sort();
    format!("{}({})", label(parent), children.join(","))
}

/// Every connected subgraph of one to three nodes, canonicalized.
pub fn extract_treelets(tree: &DepTree) -> BTreeMap<Treelet, usize> {
    let mut counts: BTreeMap<Treelet, usize> = BTreeMap::new();
    let mut add = |s: String| *counts.entry(Treelet(s)).or_default() += 1;
    let nodes = tree.nodes();
    let children = tree.children();

    for node in nodes {
        add(node.upos.clone());
    }
    for c in 0..tree.len() {
        let Some(p) = tree.head(c) else { continue };
        add(render(&nodes[p], &mut [label(&nodes[c])]));
        if let Some(g) = tree.head(p) {
            let inner = render(&nodes[p], &mut [label(&nodes[c])]);
            add(render(&nodes[g], &mut [inner]));
        }
    }
    for (p, kids) in children.iter().enumerate() {
        for (i, &a) in kids.iter().enumerate() {
            for &b in &kids[i + 1..] {
                add(render(&nodes[p], &mut [label(&nodes[a]), label(&nodes[b])]));
            }
        }
    }
    counts
}

/// Treelet multiset of a whole document. Documents without parses yield an
/// empty multiset and a warning.
pub fn treelet_counts(doc: &Document) -> BTreeMap<Treelet, usize> {
    let Some(parses) = &doc.parses else {
        log::warn!("document {} has no parses; treelet features are empty", doc.id);
        return BTreeMap::new();
    };
    let mut total = BTreeMap::new();
    for tree in parses {
        for (t, c) in extract_treelets(tree) {
            *total.entry(t).or_default() += c;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;

    fn tree(spec: &[(&str, &str, usize)]) -> DepTree {
        let nodes = spec.iter().map(|(u, d, _)| DepNode::new("w", u, d)).collect();
        DepTree::new(nodes, spec.iter().map(|s| s.2).collect()).unwrap()
    }

    fn total(m: &BTreeMap<Treelet, usize>) -> usize {
        m.values().sum()
    }

    #[test]
    fn single_node() {
        let t = tree(&[("NOUN", "root", 0)]);
        let m = extract_treelets(&t);
        assert_eq!(m.len(), 1);
        assert_eq!(m[&Treelet("NOUN".into())], 1);
    }

    #[test]
    fn chain_of_three() {
        let t = tree(&[("DET", "det", 2), ("NOUN", "obj", 3), ("VERB", "root", 0)]);
        let m = extract_treelets(&t);
        assert_eq!(total(&m), 6);
        assert!(m.contains_key(&Treelet("VERB/root(NOUN/obj(DET/det))".into())));
        assert!(m.contains_key(&Treelet("NOUN/obj(DET/det)".into())));
    }

    #[test]
    fn star_with_three_children() {
        let t = tree(&[
            ("VERB", "root", 0),
            ("NOUN", "nsubj", 1),
            ("NOUN", "obj", 1),
            ("ADV", "advmod", 1),
        ]);
        let m = extract_treelets(&t);
        assert_eq!(total(&m), 10);
        assert_eq!(m[&Treelet("VERB/root(ADV/advmod,NOUN/obj)".into())], 1);
    }

    #[test]
    fn sibling_order_does_not_matter() {
        let a = tree(&[("NOUN", "obj", 0), ("DET", "det", 1), ("ADJ", "amod", 1)]);
        let b = tree(&[("NOUN", "obj", 0), ("ADJ", "amod", 1), ("DET", "det", 1)]);
        assert_eq!(extract_treelets(&a), extract_treelets(&b));
        assert!(extract_treelets(&a).contains_key(&Treelet("NOUN/obj(ADJ/amod,DET/det)".into())));
    }

    #[test]
    fn signatures_decode() {
        assert_eq!(Treelet::decode("NOUN").unwrap(), (1, 0));
        assert_eq!(Treelet::decode("VERB/root(NOUN/obj(DET/det))").unwrap(), (3, 2));
        assert_eq!(Treelet::decode("NOUN/obj(ADJ/amod,DET/det)").unwrap(), (3, 2));
        assert!(Treelet::decode("NOUN/obj(").is_err());
    }

    #[test]
    fn invalid_trees_rejected() {
        let n = || DepNode::new("w", "X", "dep");
        assert!(DepTree::new(vec![n(), n()], vec![2, 1]).is_err());
        assert!(DepTree::new(vec![n(), n()], vec![0, 0]).is_err());
        assert!(DepTree::new(vec![n()], vec![1]).is_err());
        assert!(DepTree::new(vec![n(), n()], vec![0, 3]).is_err());
        assert!(DepTree::new(vec![n(), n(), n()], vec![0, 3, 2]).is_err());
    }

    #[test]
    fn document_aggregation() {
        let t = tree(&[("INTJ", "root", 0)]);
        let doc = Document::new("d", "yes yes", Label::Fraud)
            .with_parses(vec![t.clone(), t])
            .unwrap();
        let m = treelet_counts(&doc);
        assert_eq!(m[&Treelet("INTJ".into())], 2);
        assert!(treelet_counts(&Document::new("e", "x", Label::Fraud)).is_empty());
    }
}
