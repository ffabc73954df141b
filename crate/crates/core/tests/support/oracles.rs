//! Brute-force reference implementations and random input generators shared
//! by the integration tests. Each oracle takes the slow obvious route so it
//! shares no code path with the library.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use stylo::syntax::{DepNode, DepTree};

pub const UPOS: [&str; 5] = ["NOUN", "VERB", "DET", "ADJ", "ADP"];
pub const DEPREL: [&str; 4] = ["nsubj", "obj", "det", "amod"];

/// A uniformly shuffled random tree of `n` nodes with small tag alphabets,
/// so distinct subgraphs often share a signature.
pub fn random_tree(rng: &mut impl Rng, n: usize) -> DepTree {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut heads = vec![0usize; n];
    for k in 1..n {
        let parent = order[rng.gen_range(0..k)];
        heads[order[k]] = parent + 1;
    }
    let nodes = (0..n)
        .map(|i| {
            let deprel = if heads[i] == 0 { "root" } else { DEPREL[rng.gen_range(0..DEPREL.len())] };
            DepNode::new(&format!("w{i}"), UPOS[rng.gen_range(0..UPOS.len())], deprel)
        })
        .collect();
    DepTree::new(nodes, heads).expect("generated tree is valid")
}

fn render_subtree(tree: &DepTree, subset: &BTreeSet<usize>, node: usize) -> String {
    let n = &tree.nodes()[node];
    let mut kids: Vec<String> = subset
        .iter()
        .filter(|&&c| tree.head(c) == Some(node))
        .map(|&c| render_subtree(tree, subset, c))
        .collect();
    if kids.is_empty() {
        return format!("{}/{}", n.upos, n.deprel);
    }
    kids.sort();
    format!("{}/{}({})", n.upos, n.deprel, kids.join(","))
}

/// Treelet counts by enumerating every node subset of size one to three and
/// keeping the connected ones.
pub fn brute_treelets(tree: &DepTree) -> BTreeMap<String, usize> {
    let n = tree.len();
    let mut out = BTreeMap::new();
    let mut subsets: Vec<BTreeSet<usize>> = Vec::new();
    for a in 0..n {
        subsets.push([a].into());
        for b in a + 1..n {
            subsets.push([a, b].into());
            for c in b + 1..n {
                subsets.push([a, b, c].into());
            }
        }
    }
    for s in subsets {
        let internal_edges = s.iter().filter(|&&v| tree.head(v).is_some_and(|h| s.contains(&h))).count();
        if internal_edges + 1 != s.len() {
            continue;
        }
        let sig = if s.len() == 1 {
            tree.nodes()[*s.iter().next().unwrap()].upos.clone()
        } else {
            let root = *s
                .iter()
                .find(|&&v| !tree.head(v).is_some_and(|h| s.contains(&h)))
                .expect("connected subset has a top node");
            render_subtree(tree, &s, root)
        };
        *out.entry(sig).or_insert(0) += 1;
    }
    out
}

/// N-gram counts by explicit index arithmetic.
pub fn brute_ngrams(tokens: &[String], n: usize) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    if tokens.len() < n {
        return out;
    }
    for start in 0..=tokens.len() - n {
        let mut gram = String::new();
        for k in 0..n {
            if k > 0 {
                gram.push(' ');
            }
            gram.push_str(&tokens[start + k]);
        }
        *out.entry(gram).or_insert(0) += 1;
    }
    out
}

/// Category counts by scanning the raw (word, category) list for every token.
pub fn brute_lexicon_counts(tokens: &[String], pairs: &[(String, String)]) -> BTreeMap<String, usize> {
    let mut out: BTreeMap<String, usize> = pairs.iter().map(|(_, c)| (c.clone(), 0)).collect();
    for t in tokens {
        let cats: BTreeSet<&String> = pairs
            .iter()
            .filter(|(w, _)| w.to_lowercase() == t.to_lowercase())
            .map(|(_, c)| c)
            .collect();
        for c in cats {
            *out.get_mut(c).unwrap() += 1;
        }
    }
    out
}

/// Connective spans: collect every occurrence of every form, then walk left
/// to right taking the longest occurrence that starts at the cursor.
pub fn brute_connective_spans(tokens: &[String], forms: &[Vec<String>]) -> Vec<(usize, usize)> {
    let mut occurrences: BTreeSet<(usize, usize)> = BTreeSet::new();
    for f in forms {
        for start in 0..tokens.len() {
            if start + f.len() <= tokens.len() && (0..f.len()).all(|k| tokens[start + k] == f[k]) {
                occurrences.insert((start, start + f.len()));
            }
        }
    }
    let mut out = Vec::new();
    let mut cursor = 0;
    while cursor < tokens.len() {
        match occurrences.iter().filter(|(s, _)| *s == cursor).map(|&(_, e)| e).max() {
            Some(end) => {
                out.push((cursor, end));
                cursor = end;
            }
            None => cursor += 1,
        }
    }
    out
}

/// The eight indicators of a candidate span, spelled out by hand.
pub fn brute_indicators(tokens: &[String], pos: &[String], start: usize, end: usize) -> BTreeSet<String> {
    let form = tokens[start..end].join(" ");
    let (pw, pp) = if start == 0 {
        ("BOS".to_string(), "BOS".to_string())
    } else {
        (tokens[start - 1].clone(), pos[start - 1].clone())
    };
    let (nw, np) = if end == tokens.len() {
        ("EOS".to_string(), "EOS".to_string())
    } else {
        (tokens[end].clone(), pos[end].clone())
    };
    [
        format!("conn={form}"),
        format!("prev={pw}"),
        format!("next={nw}"),
        format!("prev_pos={pp}"),
        format!("next_pos={np}"),
        format!("conn_pos={}", pos[start..end].join("_")),
        format!("prev_conn={pw}|{form}"),
        format!("conn_next={form}|{nw}"),
    ]
    .into_iter()
    .map(|s| format!("connective:{s}"))
    .collect()
}

/// Random lowercase tokens over a tiny vocabulary, so repeats are common.
pub fn random_tokens(rng: &mut impl Rng, vocab: &[&str], max_len: usize) -> Vec<String> {
    let len = rng.gen_range(0..=max_len);
    (0..len).map(|_| vocab[rng.gen_range(0..vocab.len())].to_string()).collect()
}

/// Central-difference derivative of `f` at `x` along coordinate `i`.
pub fn central_difference(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut up = x.to_vec();
    let mut down = x.to_vec();
    up[i] += h;
    down[i] -= h;
    (f(&up) - f(&down)) / (2.0 * h)
}

/// Golden-section minimization of a unimodal function on [lo, hi].
pub fn golden_section(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - phi * (hi - lo);
    let mut b = lo + phi * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > tol {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - phi * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + phi * (hi - lo);
            fb = f(b);
        }
    }
    (lo + hi) / 2.0
}

/// Pearson correlation straight from the covariance definition.
pub fn covariance_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
    let (mx, my) = (mean(x), mean(y));
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
    let sx = (x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / n).sqrt();
    let sy = (y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / n).sqrt();
    if sx == 0.0 || sy == 0.0 {
        0.0
    } else {
        cov / (sx * sy)
    }
}

/// Two-sided p-value of a correlation through the regularized incomplete beta
/// function, the closed form of the Student t tail.
pub fn beta_p_value(r: f64, n: usize) -> f64 {
    if r == 0.0 || n < 3 {
        return 1.0;
    }
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t2 = r * r * df / (1.0 - r * r);
    statrs::function::beta::beta_reg(df / 2.0, 0.5, df / (df + t2))
}
