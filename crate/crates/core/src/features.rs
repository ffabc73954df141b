//! Sparse count vectorization over named feature families.
//!
//! Every feature name carries its family tag as a prefix
//! (`ngram23:described previously`, `treelet:PROPN`), so spaces built from
//! several families never collide.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, Label};
use crate::discourse::{DiscourseAnnotator, DiscourseCounts};
use crate::error::{Error, Result};
use crate::lexicon::{Lexicon, LexiconKind, PronounLayer};
use crate::par;
use crate::seed::fnv1a;
use crate::syntax::treelet_counts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureFamily {
    #[serde(rename = "unigram")]
    Unigram,
    #[serde(rename = "ngram23")]
    Ngram23,
    #[serde(rename = "polarity")]
    Polarity,
    #[serde(rename = "causal")]
    Causal,
    #[serde(rename = "inquirer")]
    Inquirer,
    #[serde(rename = "pronoun")]
    Pronoun,
    #[serde(rename = "hedge")]
    Hedge,
    #[serde(rename = "treelet")]
    Treelet,
    #[serde(rename = "connective")]
    Connective,
    #[serde(rename = "rel_lvl1")]
    RelLvl1,
    #[serde(rename = "rel_lvl2")]
    RelLvl2,
}

impl FeatureFamily {
    pub const ALL: [FeatureFamily; 11] = [
        FeatureFamily::Unigram,
        FeatureFamily::Ngram23,
        FeatureFamily::Polarity,
        FeatureFamily::Causal,
        FeatureFamily::Inquirer,
        FeatureFamily::Pronoun,
        FeatureFamily::Hedge,
        FeatureFamily::Treelet,
        FeatureFamily::Connective,
        FeatureFamily::RelLvl1,
        FeatureFamily::RelLvl2,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            FeatureFamily::Unigram => "unigram",
            FeatureFamily::Ngram23 => "ngram23",
            FeatureFamily::Polarity => "polarity",
            FeatureFamily::Causal => "causal",
            FeatureFamily::Inquirer => "inquirer",
            FeatureFamily::Pronoun => "pronoun",
            FeatureFamily::Hedge => "hedge",
            FeatureFamily::Treelet => "treelet",
            FeatureFamily::Connective => "connective",
            FeatureFamily::RelLvl1 => "rel_lvl1",
            FeatureFamily::RelLvl2 => "rel_lvl2",
        }
    }

    pub fn lexicon_kind(self) -> Option<LexiconKind> {
        match self {
            FeatureFamily::Polarity => Some(LexiconKind::Polarity),
            FeatureFamily::Causal => Some(LexiconKind::Causal),
            FeatureFamily::Inquirer => Some(LexiconKind::Inquirer),
            FeatureFamily::Pronoun => Some(LexiconKind::Pronoun),
            FeatureFamily::Hedge => Some(LexiconKind::Hedge),
            _ => None,
        }
    }

    pub fn is_discourse(self) -> bool {
        matches!(
            self,
            FeatureFamily::Connective | FeatureFamily::RelLvl1 | FeatureFamily::RelLvl2
        )
    }

    /// Prefixed feature name.
    pub fn name(self, raw: &str) -> String {
        format!("{}:{raw}", self.tag())
    }

    /// Splits a prefixed name into its family and raw part.
    pub fn split(name: &str) -> Result<(FeatureFamily, &str)> {
        let (tag, raw) = name
            .split_once(':')
            .ok_or_else(|| Error::Validation(format!("feature name {name:?} has no family prefix")))?;
        Ok((tag.parse()?, raw))
    }
}

impl fmt::Display for FeatureFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for FeatureFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureFamily::ALL
            .into_iter()
            .find(|f| f.tag() == s)
            .ok_or_else(|| Error::Config(format!("unknown feature family {s:?}")))
    }
}

/// Bijective name/index map over prefixed feature names.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpace {
    id: u64,
    names: Vec<String>,
    index_of: HashMap<String, usize>,
    category_of: Vec<FeatureFamily>,
}

impl FeatureSpace {
    /// Builds a space in the given name order. Names must be unique and prefixed.
    pub fn from_names(names: Vec<String>) -> Result<Self> {
        let mut index_of = HashMap::with_capacity(names.len());
        let mut category_of = Vec::with_capacity(names.len());
        let mut hash_input = Vec::new();
        for (i, name) in names.iter().enumerate() {
            if index_of.insert(name.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate feature name {name:?}")));
            }
            category_of.push(FeatureFamily::split(name)?.0);
            hash_input.extend_from_slice(name.as_bytes());
            hash_input.push(b'\n');
        }
        Ok(FeatureSpace {
            id: fnv1a(&hash_input),
            names,
            index_of,
            category_of,
        })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index_of.get(name).copied()
    }

    pub fn category_of(&self, index: usize) -> FeatureFamily {
        self.category_of[index]
    }

    pub fn families(&self) -> BTreeSet<FeatureFamily> {
        self.category_of.iter().copied().collect()
    }

    pub fn family_size(&self, family: FeatureFamily) -> usize {
        self.category_of.iter().filter(|&&f| f == family).count()
    }

    pub fn indices_of(&self, family: FeatureFamily) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.category_of[i] == family).collect()
    }
}

/// Sparse non-negative vector. Entries are sorted by index and never zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    entries: Vec<(usize, f64)>,
    space_id: u64,
}

impl FeatureVector {
    pub fn new(space: &FeatureSpace, entries: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        Self::with_space_id(space.id(), space.len(), entries)
    }

    pub(crate) fn with_space_id(
        space_id: u64,
        dim: usize,
        entries: impl IntoIterator<Item = (usize, f64)>,
    ) -> Result<Self> {
        let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
        for (i, v) in entries {
            if i >= dim {
                return Err(Error::Validation(format!("feature index {i} outside a {dim}-feature space")));
            }
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Validation(format!("feature {i} has invalid value {v}")));
            }
            *merged.entry(i).or_default() += v;
        }
        Ok(FeatureVector {
            entries: merged.into_iter().filter(|&(_, v)| v != 0.0).collect(),
            space_id,
        })
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn space_id(&self) -> u64 {
        self.space_id
    }

    pub fn get(&self, index: usize) -> f64 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map(|pos| self.entries[pos].1)
            .unwrap_or(0.0)
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }
}

/// Design matrix: one row per document in corpus order, with aligned labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    space: FeatureSpace,
    rows: Vec<FeatureVector>,
    labels: Vec<Label>,
    /// Token count of each document, used for relative frequencies.
    lengths: Vec<usize>,
    doc_ids: Vec<String>,
    /// Fold-grouping key per row (pair id or document id).
    groups: Vec<String>,
}

impl FeatureMatrix {
    pub fn new(
        space: FeatureSpace,
        rows: Vec<FeatureVector>,
        labels: Vec<Label>,
        lengths: Vec<usize>,
        doc_ids: Vec<String>,
        groups: Vec<String>,
    ) -> Result<Self> {
        let n = rows.len();
        if labels.len() != n || lengths.len() != n || doc_ids.len() != n || groups.len() != n {
            return Err(Error::Validation(format!(
                "matrix with {n} rows has {} labels, {} lengths, {} ids, {} groups",
                labels.len(),
                lengths.len(),
                doc_ids.len(),
                groups.len()
            )));
        }
        for row in &rows {
            if row.space_id != space.id() {
                return Err(Error::SpaceMismatch {
                    expected: space.id(),
                    found: row.space_id,
                });
            }
        }
        Ok(FeatureMatrix {
            space,
            rows,
            labels,
            lengths,
            doc_ids,
            groups,
        })
    }

    /// Dense constructor for synthetic data. Columns are named
    /// `unigram:f00000`, `unigram:f00001`, ... and lengths are row sums.
    pub fn from_dense(rows: &[Vec<f64>], labels: Vec<Label>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let names = (0..dim).map(|j| FeatureFamily::Unigram.name(&format!("f{j:05}"))).collect();
        let space = FeatureSpace::from_names(names)?;
        let mut sparse = Vec::with_capacity(rows.len());
        let mut lengths = Vec::with_capacity(rows.len());
        for row in rows {
            if row.len() != dim {
                return Err(Error::Validation("ragged dense matrix".into()));
            }
            sparse.push(FeatureVector::new(&space, row.iter().copied().enumerate())?);
            lengths.push(row.iter().sum::<f64>().round().max(0.0) as usize);
        }
        let ids: Vec<String> = (0..rows.len()).map(|i| format!("r{i}")).collect();
        let groups = ids.iter().map(|i| format!("doc:{i}")).collect();
        Self::new(space, sparse, labels, lengths, ids, groups)
    }

    pub fn space(&self) -> &FeatureSpace {
        &self.space
    }

    pub fn rows(&self) -> &[FeatureVector] {
        &self.rows
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn groups(&self) -> &[String] {
        &self.groups
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.space.len()
    }

    pub fn with_groups(mut self, groups: Vec<String>) -> Result<Self> {
        if groups.len() != self.rows.len() {
            return Err(Error::Validation("group list length differs from row count".into()));
        }
        self.groups = groups;
        Ok(self)
    }

    /// Stable digest of space, labels and every stored value.
    pub fn fingerprint(&self) -> u64 {
        let mut bytes = Vec::with_capacity(16 + self.rows.len() * 8);
        bytes.extend_from_slice(&self.space.id().to_le_bytes());
        for (row, label) in self.rows.iter().zip(&self.labels) {
            bytes.push(label.as_int());
            for &(i, v) in row.entries() {
                bytes.extend_from_slice(&(i as u64).to_le_bytes());
                bytes.extend_from_slice(&v.to_bits().to_le_bytes());
            }
            bytes.push(0xff);
        }
        fnv1a(&bytes)
    }

    /// Submatrix restricted to the given families, with a re-indexed space.
    pub fn select_families(&self, families: &[FeatureFamily]) -> Result<FeatureMatrix> {
        let keep: Vec<usize> = (0..self.space.len())
            .filter(|&i| families.contains(&self.space.category_of(i)))
            .collect();
        let mut remap = vec![usize::MAX; self.space.len()];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
        }
        let space = FeatureSpace::from_names(keep.iter().map(|&i| self.space.names[i].clone()).collect())?;
        let rows = self
            .rows
            .iter()
            .map(|r| FeatureVector {
                entries: r
                    .entries
                    .iter()
                    .filter(|(i, _)| remap[*i] != usize::MAX)
                    .map(|&(i, v)| (remap[i], v))
                    .collect(),
                space_id: space.id(),
            })
            .collect();
        FeatureMatrix::new(
            space,
            rows,
            self.labels.clone(),
            self.lengths.clone(),
            self.doc_ids.clone(),
            self.groups.clone(),
        )
    }

    /// Writes `matrix.tsv` (sparse triplets), `features.tsv` and `rows.tsv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut matrix = String::new();
        matrix.push_str(&format!(
            "#stylo-sparse-v1\trows={}\tcols={}\tspace={:016x}\n",
            self.n_rows(),
            self.n_features(),
            self.space.id()
        ));
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, v) in row.entries() {
                matrix.push_str(&format!("{r}\t{c}\t{v}\n"));
            }
        }
        let mut features = String::new();
        for (i, name) in self.space.names().iter().enumerate() {
            if name.contains(['\t', '\n', '\r']) {
                return Err(Error::Validation(format!("feature name {name:?} contains a separator")));
            }
            features.push_str(&format!("{i}\t{}\t{name}\n", self.space.category_of(i)));
        }
        let mut rows = String::new();
        for i in 0..self.n_rows() {
            rows.push_str(&format!(
                "{i}\t{}\t{}\t{}\t{}\n",
                self.doc_ids[i],
                self.labels[i].as_int(),
                self.lengths[i],
                self.groups[i]
            ));
        }
        for (name, content) in [("matrix.tsv", matrix), ("features.tsv", features), ("rows.tsv", rows)] {
            let path = dir.join(name);
            let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            f.write_all(content.as_bytes()).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    /// Reads the three files written by [`FeatureMatrix::write`].
    pub fn read(dir: &Path) -> Result<FeatureMatrix> {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read_to_string(&p).map(|s| (p.clone(), s)).map_err(|e| Error::io(&p, e))
        };

        let (fpath, features) = read("features.tsv")?;
        let mut names = Vec::new();
        for (lineno, line) in features.lines().enumerate() {
            let mut cols = line.splitn(3, '\t');
            let (Some(idx), Some(_family), Some(name)) = (cols.next(), cols.next(), cols.next()) else {
                return Err(Error::parse(&fpath, lineno + 1, "expected index<TAB>family<TAB>name"));
            };
            if idx.parse::<usize>().ok() != Some(names.len()) {
                return Err(Error::parse(&fpath, lineno + 1, "feature indices must be contiguous"));
            }
            names.push(name.to_string());
        }
        let space = FeatureSpace::from_names(names)?;

        let (rpath, rows_txt) = read("rows.tsv")?;
        let (mut ids, mut labels, mut lengths, mut groups) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (lineno, line) in rows_txt.lines().enumerate() {
            let cols: Vec<&str> = line.split('\t').collect();
            let bad = || Error::parse(&rpath, lineno + 1, "expected row<TAB>id<TAB>label<TAB>length<TAB>group");
            if cols.len() != 5 {
                return Err(bad());
            }
            ids.push(cols[1].to_string());
            labels.push(cols[2].parse().ok().and_then(Label::from_int).ok_or_else(bad)?);
            lengths.push(cols[3].parse().map_err(|_| bad())?);
            groups.push(cols[4].to_string());
        }

        let (mpath, matrix) = read("matrix.tsv")?;
        let mut lines = matrix.lines();
        let header = lines.next().unwrap_or_default();
        let expected_header = format!(
            "#stylo-sparse-v1\trows={}\tcols={}\tspace={:016x}",
            ids.len(),
            space.len(),
            space.id()
        );
        if header != expected_header {
            return Err(Error::parse(&mpath, 1, format!("header {header:?} does not match sidecars")));
        }
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); ids.len()];
        for (lineno, line) in lines.enumerate() {
            let bad = || Error::parse(&mpath, lineno + 2, "expected row<TAB>col<TAB>value");
            let mut cols = line.split('\t');
            let r: usize = cols.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let c: usize = cols.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let v: f64 = cols.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            per_row.get_mut(r).ok_or_else(bad)?.push((c, v));
        }
        let rows = per_row
            .into_iter()
            .map(|e| FeatureVector::new(&space, e))
            .collect::<Result<Vec<_>>>()?;
        FeatureMatrix::new(space, rows, labels, lengths, ids, groups)
    }
}

/// All contiguous `n`-token windows joined by a single space, with counts.
pub fn extract_ngrams(tokens: &[String], n: usize) -> Result<BTreeMap<String, usize>> {
    if !(1..=3).contains(&n) {
        return Err(Error::Config(format!("n-gram order {n} not in 1..=3")));
    }
    let mut counts = BTreeMap::new();
    for window in tokens.windows(n) {
        *counts.entry(window.join(" ")).or_default() += 1;
    }
    Ok(counts)
}

/// Per-category token counts. Every lexicon category is present, zero when unseen.
pub fn lexicon_counts(tokens: &[String], lexicon: &Lexicon) -> BTreeMap<String, usize> {
    let mut counts: BTreeMap<String, usize> =
        lexicon.categories().iter().map(|c| (c.clone(), 0)).collect();
    for token in tokens {
        for category in lexicon.lookup(token) {
            if let Some(c) = counts.get_mut(category) {
                *c += 1;
            }
        }
    }
    counts
}

/// The configured featurizers.
#[derive(Debug, Clone, Default)]
pub struct Extractors {
    pub lexicons: BTreeMap<LexiconKind, Lexicon>,
    pub pronoun_layer: PronounLayer,
    pub discourse: Option<DiscourseAnnotator>,
    /// Keep n-grams inside sentences when parses are available.
    pub sentence_bounded_ngrams: bool,
}

impl Extractors {
    pub fn with_lexicon(mut self, lexicon: Lexicon) -> Self {
        self.lexicons.insert(lexicon.kind, lexicon);
        self
    }

    fn lexicon(&self, family: FeatureFamily) -> Result<Option<Lexicon>> {
        let Some(kind) = family.lexicon_kind() else {
            return Ok(None);
        };
        let lex = self
            .lexicons
            .get(&kind)
            .ok_or_else(|| Error::Config(format!("feature family {family} needs a {kind} lexicon")))?;
        Ok(Some(match kind {
            LexiconKind::Pronoun => lex.pronoun_layer(self.pronoun_layer),
            _ => lex.clone(),
        }))
    }

    /// Fixed inventory for closed families (lexicon categories, connective
    /// forms, relation labels); `None` for open vocabularies.
    pub fn inventory(&self, family: FeatureFamily) -> Result<Option<Vec<String>>> {
        if let Some(lex) = self.lexicon(family)? {
            return Ok(Some(lex.categories().to_vec()));
        }
        if family.is_discourse() {
            let annotator = self.discourse_annotator(family)?;
            return Ok(Some(match family {
                FeatureFamily::Connective => annotator.lexicon.form_strings(),
                FeatureFamily::RelLvl1 => annotator.lvl1.labels().to_vec(),
                _ => annotator.lvl2.labels().to_vec(),
            }));
        }
        Ok(None)
    }

    fn discourse_annotator(&self, family: FeatureFamily) -> Result<&DiscourseAnnotator> {
        self.discourse
            .as_ref()
            .ok_or_else(|| Error::Config(format!("feature family {family} needs trained discourse models")))
    }

    fn ngram_streams<'a>(&self, doc: &'a Document) -> Vec<std::borrow::Cow<'a, [String]>> {
        match (&doc.parses, self.sentence_bounded_ngrams) {
            (Some(parses), true) => parses.iter().map(|t| t.forms().into()).collect(),
            _ => vec![doc.tokens.as_slice().into()],
        }
    }

    /// Token count used for relative frequencies of this document.
    pub fn document_length(&self, doc: &Document) -> usize {
        self.ngram_streams(doc).iter().map(|s| s.len()).sum()
    }

    /// Prefixed feature counts of one document for the selected families.
    /// Zero counts are omitted.
    pub fn document_features(
        &self,
        doc: &Document,
        families: &BTreeSet<FeatureFamily>,
    ) -> Result<BTreeMap<String, f64>> {
        let mut out = BTreeMap::new();
        let mut put = |family: FeatureFamily, raw: &str, count: usize| {
            if count > 0 {
                *out.entry(family.name(raw)).or_insert(0.0) += count as f64;
            }
        };
        let mut discourse: Option<DiscourseCounts> = None;
        for &family in families {
            match family {
                FeatureFamily::Unigram | FeatureFamily::Ngram23 => {
                    let orders: &[usize] = if family == FeatureFamily::Unigram { &[1] } else { &[2, 3] };
                    for stream in self.ngram_streams(doc) {
                        for &n in orders {
                            for (g, c) in extract_ngrams(&stream, n)? {
                                put(family, &g, c);
                            }
                        }
                    }
                }
                FeatureFamily::Treelet => {
                    for (t, c) in treelet_counts(doc) {
                        put(family, t.as_str(), c);
                    }
                }
                f if f.lexicon_kind().is_some() => {
                    let lex = self.lexicon(f)?.expect("lexicon family");
                    for (cat, c) in lexicon_counts(&doc.tokens, &lex) {
                        put(f, &cat, c);
                    }
                }
                f => {
                    if discourse.is_none() {
                        discourse = Some(self.discourse_annotator(f)?.discourse_counts(doc));
                    }
                    let counts = discourse.as_ref().expect("computed above");
                    let map = match f {
                        FeatureFamily::Connective => &counts.connectives,
                        FeatureFamily::RelLvl1 => &counts.lvl1,
                        _ => &counts.lvl2,
                    };
                    for (name, &c) in map {
                        put(f, name, c);
                    }
                }
            }
        }
        Ok(out)
    }
}

fn check_families(families: &BTreeSet<FeatureFamily>) -> Result<()> {
    if families.is_empty() {
        return Err(Error::Config("no feature family selected".into()));
    }
    Ok(())
}

fn space_from_features(
    per_doc: &[BTreeMap<String, f64>],
    families: &BTreeSet<FeatureFamily>,
    extractors: &Extractors,
) -> Result<FeatureSpace> {
    let mut names: BTreeSet<String> = BTreeSet::new();
    for &family in families {
        if let Some(inventory) = extractors.inventory(family)? {
            names.extend(inventory.iter().map(|raw| family.name(raw)));
        }
    }
    for doc in per_doc {
        names.extend(doc.keys().cloned());
    }
    FeatureSpace::from_names(names.into_iter().collect())
}

fn per_document(
    corpus: &Corpus,
    families: &BTreeSet<FeatureFamily>,
    extractors: &Extractors,
) -> Result<Vec<BTreeMap<String, f64>>> {
    par::map_slice(corpus.documents(), |doc| extractors.document_features(doc, families))
        .into_iter()
        .collect()
}

/// Union of all feature names seen in the corpus for the selected families,
/// plus the full inventory of closed families, in sorted order.
pub fn build_space(
    corpus: &Corpus,
    families: &BTreeSet<FeatureFamily>,
    extractors: &Extractors,
) -> Result<FeatureSpace> {
    check_families(families)?;
    if corpus.is_empty() {
        return Err(Error::Validation("cannot build a feature space from an empty corpus".into()));
    }
    let per_doc = per_document(corpus, families, extractors)?;
    space_from_features(&per_doc, families, extractors)
}

fn assemble(
    corpus: &Corpus,
    space: FeatureSpace,
    per_doc: Vec<BTreeMap<String, f64>>,
    extractors: &Extractors,
) -> Result<FeatureMatrix> {
    let rows = per_doc
        .into_iter()
        .map(|feats| {
            FeatureVector::new(
                &space,
                feats.into_iter().filter_map(|(name, v)| space.index_of(&name).map(|i| (i, v))),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let docs = corpus.documents();
    FeatureMatrix::new(
        space,
        rows,
        corpus.labels(),
        docs.iter().map(|d| extractors.document_length(d)).collect(),
        docs.iter().map(|d| d.id.clone()).collect(),
        corpus.pair_groups(),
    )
}

/// Raw counts of each space feature per document. Features outside the space
/// are dropped.
pub fn vectorize(corpus: &Corpus, space: &FeatureSpace, extractors: &Extractors) -> Result<FeatureMatrix> {
    let families = space.families();
    let per_doc = per_document(corpus, &families, extractors)?;
    assemble(corpus, space.clone(), per_doc, extractors)
}

/// [`build_space`] followed by [`vectorize`] in one featurization pass.
pub fn featurize(
    corpus: &Corpus,
    families: &BTreeSet<FeatureFamily>,
    extractors: &Extractors,
) -> Result<FeatureMatrix> {
    check_families(families)?;
    if corpus.is_empty() {
        return Err(Error::Validation("cannot featurize an empty corpus".into()));
    }
    let per_doc = per_document(corpus, families, extractors)?;
    let space = space_from_features(&per_doc, families, extractors)?;
    assemble(corpus, space, per_doc, extractors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn polarity() -> Lexicon {
        Lexicon::from_pairs(
            LexiconKind::Polarity,
            [("good", "positive"), ("great", "positive"), ("bad", "negative"), ("odd", "both"), ("table", "neutral")],
        )
        .unwrap()
    }

    fn families(f: &[FeatureFamily]) -> BTreeSet<FeatureFamily> {
        f.iter().copied().collect()
    }

    fn toy() -> Corpus {
        Corpus::new(vec![
            Document::new("a", "the good cat", Label::Fraud),
            Document::new("b", "the bad dog sat", Label::Control),
        ])
        .unwrap()
    }

    #[test]
    fn ngram_examples() {
        let m = extract_ngrams(&toks("a b c"), 2).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m["a b"], 1);
        assert_eq!(m["b c"], 1);
        assert!(extract_ngrams(&[], 1).unwrap().is_empty());
        assert!(matches!(extract_ngrams(&toks("a"), 4), Err(Error::Config(_))));
        assert!(matches!(extract_ngrams(&toks("a"), 0), Err(Error::Config(_))));
    }

    #[test]
    fn lexicon_count_examples() {
        let m = lexicon_counts(&toks("good bad great x"), &polarity());
        assert_eq!(m["positive"], 2);
        assert_eq!(m["negative"], 1);
        assert_eq!(m["both"], 0);
        assert_eq!(m["neutral"], 0);
        let empty = lexicon_counts(&[], &polarity());
        assert_eq!(empty.len(), 4);
        assert!(empty.values().all(|&c| c == 0));
    }

    #[test]
    fn space_sizes() {
        let ex = Extractors::default().with_lexicon(polarity());
        let s = build_space(&toy(), &families(&[FeatureFamily::Unigram]), &ex).unwrap();
        assert_eq!(s.len(), 6);
        let s = build_space(&toy(), &families(&[FeatureFamily::Unigram, FeatureFamily::Polarity]), &ex).unwrap();
        assert_eq!(s.len(), 6 + 4);
        assert_eq!(s.family_size(FeatureFamily::Polarity), 4);
        assert!(matches!(build_space(&toy(), &BTreeSet::new(), &ex), Err(Error::Config(_))));
        let missing = Extractors::default();
        assert!(matches!(
            build_space(&toy(), &families(&[FeatureFamily::Hedge]), &missing),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn vectorize_counts() {
        let corpus = Corpus::new(vec![
            Document::new("d", "a a b", Label::Fraud),
            Document::new("e", "", Label::Control),
        ])
        .unwrap();
        let space = FeatureSpace::from_names(vec!["unigram:a".into(), "unigram:b".into(), "unigram:c".into()]).unwrap();
        let m = vectorize(&corpus, &space, &Extractors::default()).unwrap();
        assert_eq!(m.rows()[0].entries(), &[(0, 2.0), (1, 1.0)]);
        assert!(m.rows()[1].entries().is_empty());
    }

    #[test]
    fn space_is_bijective_and_prefixed() {
        let s = FeatureSpace::from_names(vec!["unigram:x".into(), "treelet:NOUN".into()]).unwrap();
        for (i, n) in s.names().iter().enumerate() {
            assert_eq!(s.index_of(n), Some(i));
        }
        assert_eq!(s.category_of(1), FeatureFamily::Treelet);
        assert!(FeatureSpace::from_names(vec!["x".into()]).is_err());
        assert!(FeatureSpace::from_names(vec!["unigram:x".into(), "unigram:x".into()]).is_err());
    }

    #[test]
    fn rows_from_another_space_rejected() {
        let a = FeatureSpace::from_names(vec!["unigram:a".into()]).unwrap();
        let b = FeatureSpace::from_names(vec!["unigram:b".into()]).unwrap();
        let row = FeatureVector::new(&a, [(0, 1.0)]).unwrap();
        let err = FeatureMatrix::new(b, vec![row], vec![Label::Fraud], vec![1], vec!["x".into()], vec!["g".into()]);
        assert!(matches!(err, Err(Error::SpaceMismatch { .. })));
    }

    #[test]
    fn matrix_files_roundtrip() {
        let ex = Extractors::default().with_lexicon(polarity());
        let m = featurize(&toy(), &families(&[FeatureFamily::Unigram, FeatureFamily::Ngram23, FeatureFamily::Polarity]), &ex).unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.write(dir.path()).unwrap();
        let back = FeatureMatrix::read(dir.path()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.fingerprint(), m.fingerprint());
    }

    fn random_tokens(rng: &mut impl Rng, len: usize) -> Vec<String> {
        let vocab = ["a", "b", "c", "d", "good", "bad", "odd"];
        (0..len).map(|_| vocab[rng.gen_range(0..vocab.len())].to_string()).collect()
    }

    #[test]
    fn ngrams_match_nested_loop() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let t = random_tokens(&mut rng, 50);
            let mut oracle: BTreeMap<String, usize> = BTreeMap::new();
            for i in 0..t.len() {
                if i + 3 <= t.len() {
                    let mut g = String::new();
                    for k in 0..3 {
                        if k > 0 {
                            g.push(' ');
                        }
                        g.push_str(&t[i + k]);
                    }
                    *oracle.entry(g).or_default() += 1;
                }
            }
            assert_eq!(extract_ngrams(&t, 3).unwrap(), oracle);
        }
    }

    #[test]
    fn vectorize_matches_dense_counting() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let docs: Vec<Document> = (0..8)
            .map(|i| Document::new(format!("d{i}"), random_tokens(&mut rng, 30).join(" "), Label::from(i % 2 == 0)))
            .collect();
        let corpus = Corpus::new(docs).unwrap();
        let m = featurize(&corpus, &families(&[FeatureFamily::Unigram]), &Extractors::default()).unwrap();
        for (d, row) in corpus.documents().iter().zip(m.rows()) {
            let mut dense = vec![0.0; m.n_features()];
            for t in &d.tokens {
                let j = m.space().names().iter().position(|n| n == &format!("unigram:{t}")).unwrap();
                dense[j] += 1.0;
            }
            for (j, &expected) in dense.iter().enumerate() {
                assert_eq!(row.get(j), expected);
            }
        }
    }

    proptest! {
        #[test]
        fn unigram_sums_and_order_monotone(words in proptest::collection::vec("[a-e]", 0..40)) {
            let text = words.join(" ");
            let doc = Document::new("x", text, Label::Fraud);
            let ex = Extractors::default();
            let feats = ex.document_features(&doc, &families(&[FeatureFamily::Unigram])).unwrap();
            prop_assert_eq!(feats.values().sum::<f64>() as usize, doc.tokens.len());
            let c = |n| extract_ngrams(&doc.tokens, n).unwrap().values().sum::<usize>();
            prop_assert!(c(1) >= c(2) && c(2) >= c(3));
        }

        #[test]
        fn family_union_equals_merge(a in proptest::collection::vec("[a-d]", 0..20), b in proptest::collection::vec("[a-d]", 0..20)) {
            let corpus = Corpus::new(vec![
                Document::new("x", a.join(" "), Label::Fraud),
                Document::new("y", b.join(" "), Label::Control),
            ]).unwrap();
            let ex = Extractors::default().with_lexicon(polarity());
            let named = |fams: &[FeatureFamily]| -> Vec<BTreeMap<String, f64>> {
                let m = featurize(&corpus, &families(fams), &ex).unwrap();
                m.rows().iter().map(|r| r.entries().iter().map(|&(i, v)| (m.space().name(i).to_string(), v)).collect()).collect()
            };
            let both = named(&[FeatureFamily::Unigram, FeatureFamily::Polarity]);
            let uni = named(&[FeatureFamily::Unigram]);
            let pol = named(&[FeatureFamily::Polarity]);
            for i in 0..2 {
                let mut merged = uni[i].clone();
                merged.extend(pol[i].clone());
                prop_assert_eq!(&both[i], &merged);
            }
        }

        #[test]
        fn vectorize_is_permutation_equivariant(seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let docs: Vec<Document> = (0..5)
                .map(|i| Document::new(format!("d{i}"), random_tokens(&mut rng, 10).join(" "), Label::from(i % 2 == 0)))
                .collect();
            let corpus = Corpus::new(docs.clone()).unwrap();
            let ex = Extractors::default();
            let space = build_space(&corpus, &families(&[FeatureFamily::Unigram, FeatureFamily::Ngram23]), &ex).unwrap();
            let m = vectorize(&corpus, &space, &ex).unwrap();
            let mut perm: Vec<usize> = (0..5).collect();
            rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
            let permuted = Corpus::new(perm.iter().map(|&i| docs[i].clone()).collect()).unwrap();
            let pm = vectorize(&permuted, &space, &ex).unwrap();
            for (k, &i) in perm.iter().enumerate() {
                prop_assert_eq!(&pm.rows()[k], &m.rows()[i]);
            }
        }
    }
}
