//! Corpus ingestion: the JSON-lines manifest, text normalization, tokenization
//! and CoNLL-U parse sidecars.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::syntax::{DepNode, DepTree};

/// Binary document class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Control = 0,
    Fraud = 1,
}

impl Label {
    pub fn from_int(v: i64) -> Option<Label> {
        match v {
            0 => Some(Label::Control),
            1 => Some(Label::Fraud),
            _ => None,
        }
    }

    pub fn as_int(self) -> u8 {
        self as u8
    }

    pub fn is_positive(self) -> bool {
        self == Label::Fraud
    }
}

impl From<bool> for Label {
    fn from(positive: bool) -> Self {
        if positive {
            Label::Fraud
        } else {
            Label::Control
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub tokens: Vec<String>,
    pub label: Label,
    pub pair_id: Option<String>,
    pub year: Option<i32>,
    pub parses: Option<Vec<DepTree>>,
}

impl Document {
    /// Builds a document and tokenizes its text.
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: Label) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        Document {
            id: id.into(),
            text,
            tokens,
            label,
            pair_id: None,
            year: None,
            parses: None,
        }
    }

    pub fn with_parses(mut self, parses: Vec<DepTree>) -> Result<Self> {
        if parses.iter().map(DepTree::len).sum::<usize>() == 0 {
            return Err(Error::Validation(format!(
                "document {}: parse sidecar has no tokens",
                self.id
            )));
        }
        self.parses = Some(parses);
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    documents: Vec<Document>,
    class_counts: BTreeMap<Label, usize>,
}

impl Corpus {
    /// Validates ids, pairing and parse sidecars.
    pub fn new(documents: Vec<Document>) -> Result<Self> {
        let mut seen = HashSet::new();
        for doc in &documents {
            if !seen.insert(doc.id.as_str()) {
                return Err(Error::Validation(format!("duplicate document id {:?}", doc.id)));
            }
            if let Some(parses) = &doc.parses {
                if parses.iter().map(DepTree::len).sum::<usize>() == 0 {
                    return Err(Error::Validation(format!(
                        "document {}: parse sidecar has no tokens",
                        doc.id
                    )));
                }
            }
        }

        let fraud_pairs: HashSet<&str> = documents
            .iter()
            .filter(|d| d.label == Label::Fraud)
            .filter_map(|d| d.pair_id.as_deref())
            .collect();
        let mut controls_per_pair: HashMap<&str, usize> = HashMap::new();
        for doc in documents.iter().filter(|d| d.label == Label::Control) {
            if let Some(pair) = doc.pair_id.as_deref().filter(|p| fraud_pairs.contains(p)) {
                let count = controls_per_pair.entry(pair).or_default();
                *count += 1;
                if *count > 1 {
                    return Err(Error::Validation(format!(
                        "pair_id {pair:?} is shared by more than one control document"
                    )));
                }
            }
        }

        let mut class_counts = BTreeMap::new();
        class_counts.insert(Label::Control, 0);
        class_counts.insert(Label::Fraud, 0);
        for doc in &documents {
            *class_counts.entry(doc.label).or_default() += 1;
        }
        Ok(Corpus {
            documents,
            class_counts,
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn class_counts(&self) -> &BTreeMap<Label, usize> {
        &self.class_counts
    }

    pub fn labels(&self) -> Vec<Label> {
        self.documents.iter().map(|d| d.label).collect()
    }

    /// Rewrites every document's text with `rules` and re-tokenizes it.
    pub fn normalize(&mut self, rules: &NormalizationRules) {
        for doc in &mut self.documents {
            doc.text = normalize_text(&doc.text, rules);
            doc.tokens = tokenize(&doc.text);
        }
    }

    /// Group key per document for pair-aware folding: the pair id, or the
    /// document's own id when unpaired.
    pub fn pair_groups(&self) -> Vec<String> {
        self.documents
            .iter()
            .map(|d| match &d.pair_id {
                Some(p) => format!("pair:{p}"),
                None => format!("doc:{}", d.id),
            })
            .collect()
    }
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    pub path: PathBuf,
    pub label: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub year: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conllu_path: Option<PathBuf>,
}

pub fn read_manifest_rows(path: &Path) -> Result<Vec<ManifestRow>> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (lineno, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: ManifestRow = serde_json::from_str(line)
            .map_err(|e| Error::parse(path, lineno + 1, e.to_string()))?;
        rows.push(row);
    }
    Ok(rows)
}

/// Loads a corpus from a JSON-lines manifest. Relative paths resolve against
/// the manifest's directory. Tokens are filled with [`tokenize`] on the raw text.
pub fn load_manifest(path: &Path) -> Result<Corpus> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let rows = read_manifest_rows(path)?;
    let mut documents = Vec::with_capacity(rows.len());
    for row in rows {
        let label = Label::from_int(row.label).ok_or_else(|| {
            Error::Validation(format!("document {}: label {} not in {{0,1}}", row.id, row.label))
        })?;
        let text_path = base.join(&row.path);
        let text = fs::read_to_string(&text_path).map_err(|e| Error::io(&text_path, e))?;
        let mut doc = Document::new(row.id, text, label);
        doc.pair_id = row.pair_id;
        doc.year = row.year;
        if let Some(conllu) = row.conllu_path {
            doc = doc.with_parses(load_conllu(&base.join(conllu))?)?;
        }
        documents.push(doc);
    }
    Corpus::new(documents)
}

/// Writes a corpus as a manifest plus one text file (and CoNLL-U sidecar,
/// when parsed) per document into `dir`.
pub fn write_manifest(corpus: &Corpus, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut lines = String::new();
    for (i, doc) in corpus.documents().iter().enumerate() {
        let text_name = PathBuf::from(format!("doc{i:05}.txt"));
        let text_path = dir.join(&text_name);
        fs::write(&text_path, &doc.text).map_err(|e| Error::io(&text_path, e))?;
        let conllu_path = match &doc.parses {
            Some(parses) => {
                let name = PathBuf::from(format!("doc{i:05}.conllu"));
                let p = dir.join(&name);
                fs::write(&p, write_conllu(parses)).map_err(|e| Error::io(&p, e))?;
                Some(name)
            }
            None => None,
        };
        let row = ManifestRow {
            id: doc.id.clone(),
            path: text_name,
            label: i64::from(doc.label.as_int()),
            pair_id: doc.pair_id.clone(),
            year: doc.year,
            conllu_path,
        };
        lines.push_str(&serde_json::to_string(&row)?);
        lines.push('\n');
    }
    let manifest = dir.join("manifest.jsonl");
    fs::write(&manifest, lines).map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NormalizationRules {
    /// Lowercase British form to American form.
    pub spelling_map: HashMap<String, String>,
    pub strip_chars: Vec<char>,
    /// Whitespace-delimited words (e.g. `Dr.`) whose trailing period is dropped.
    pub abbreviation_periods: Vec<String>,
}

impl NormalizationRules {
    pub fn new(
        spelling_map: HashMap<String, String>,
        strip_chars: impl IntoIterator<Item = char>,
        abbreviation_periods: Vec<String>,
    ) -> Result<Self> {
        for key in spelling_map.keys() {
            if key.is_empty()
                || key.chars().any(char::is_whitespace)
                || key.to_lowercase() != *key
            {
                return Err(Error::Validation(format!(
                    "spelling map key {key:?} must be a single lowercase token"
                )));
            }
        }
        Ok(NormalizationRules {
            spelling_map,
            strip_chars: strip_chars.into_iter().collect(),
            abbreviation_periods,
        })
    }

    /// Reads a `british<TAB>american` file; `#` lines are comments.
    pub fn load_spelling_map(path: &Path) -> Result<HashMap<String, String>> {
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut map = HashMap::new();
        for (lineno, line) in content.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (from, to) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, lineno + 1, "expected british<TAB>american"))?;
            map.insert(from.trim().to_lowercase(), to.trim().to_string());
        }
        Ok(map)
    }
}

/// Applies, in order: character stripping, abbreviation-period removal and
/// British-to-American respelling of whole alphabetic words. Whitespace and
/// every other character are preserved.
pub fn normalize_text(text: &str, rules: &NormalizationRules) -> String {
    let stripped: String = if rules.strip_chars.is_empty() {
        text.to_string()
    } else {
        text.chars().filter(|c| !rules.strip_chars.contains(c)).collect()
    };

    let unabbreviated = if rules.abbreviation_periods.is_empty() {
        stripped
    } else {
        let mut out = String::with_capacity(stripped.len());
        for segment in split_keep_whitespace(&stripped) {
            let is_abbrev = rules
                .abbreviation_periods
                .iter()
                .any(|a| a.ends_with('.') && a.eq_ignore_ascii_case(segment));
            if is_abbrev {
                out.push_str(&segment[..segment.len() - 1]);
            } else {
                out.push_str(segment);
            }
        }
        out
    };

    if rules.spelling_map.is_empty() {
        return unabbreviated;
    }
    let mut out = String::with_capacity(unabbreviated.len());
    let mut word = String::new();
    for c in unabbreviated.chars() {
        if c.is_alphabetic() {
            word.push(c);
        } else {
            flush_word(&mut word, &mut out, &rules.spelling_map);
            out.push(c);
        }
    }
    flush_word(&mut word, &mut out, &rules.spelling_map);
    out
}

fn split_keep_whitespace(text: &str) -> Vec<&str> {
    let mut segments = Vec::new();
    let mut start = 0;
    let mut in_space: Option<bool> = None;
    for (i, c) in text.char_indices() {
        let space = c.is_whitespace();
        if in_space.is_some_and(|s| s != space) {
            segments.push(&text[start..i]);
            start = i;
        }
        in_space = Some(space);
    }
    if start < text.len() {
        segments.push(&text[start..]);
    }
    segments
}

fn flush_word(word: &mut String, out: &mut String, map: &HashMap<String, String>) {
    if word.is_empty() {
        return;
    }
    match map.get(&word.to_lowercase()) {
        Some(replacement) => out.push_str(&match_case(word, replacement)),
        None => out.push_str(word),
    }
    word.clear();
}

fn match_case(original: &str, replacement: &str) -> String {
    let mut chars = original.chars();
    let first_upper = chars.next().is_some_and(char::is_uppercase);
    let all_upper = first_upper && original.chars().count() > 1 && original.chars().all(char::is_uppercase);
    if all_upper {
        replacement.to_uppercase()
    } else if first_upper {
        let mut r = replacement.chars();
        match r.next() {
            Some(f) => f.to_uppercase().chain(r).collect(),
            None => String::new(),
        }
    } else {
        replacement.to_string()
    }
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric()
}

/// Lowercases, splits on whitespace, then peels leading and trailing
/// punctuation off each word, one token per punctuation character.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut tokens = Vec::new();
    for word in lower.split_whitespace() {
        let chars: Vec<char> = word.chars().collect();
        let lead = chars.iter().take_while(|c| is_punct(**c)).count();
        if lead == chars.len() {
            tokens.extend(chars.iter().map(|c| c.to_string()));
            continue;
        }
        let trail = chars.iter().rev().take_while(|c| is_punct(**c)).count();
        tokens.extend(chars[..lead].iter().map(|c| c.to_string()));
        tokens.push(chars[lead..chars.len() - trail].iter().collect());
        tokens.extend(chars[chars.len() - trail..].iter().map(|c| c.to_string()));
    }
    tokens
}

/// Reads a CoNLL-U file into one tree per sentence. Multiword-token ranges
/// (`1-2`) and empty nodes (`1.1`) are skipped.
pub fn load_conllu(path: &Path) -> Result<Vec<DepTree>> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_conllu(&content, path)
}

pub fn parse_conllu(content: &str, path: &Path) -> Result<Vec<DepTree>> {
    struct Pending {
        nodes: Vec<DepNode>,
        heads: Vec<usize>,
        lines: Vec<usize>,
    }

    fn finish(pending: &mut Pending, path: &Path, trees: &mut Vec<DepTree>) -> Result<()> {
        if pending.nodes.is_empty() {
            return Ok(());
        }
        let n = pending.nodes.len();
        for (head, line) in pending.heads.iter().zip(&pending.lines) {
            if *head > n {
                return Err(Error::parse(
                    path,
                    *line,
                    format!("HEAD {head} out of range for a {n}-token sentence"),
                ));
            }
        }
        let first_line = pending.lines[0];
        let tree = DepTree::new(std::mem::take(&mut pending.nodes), std::mem::take(&mut pending.heads))
            .map_err(|e| Error::parse(path, first_line, e.to_string()))?;
        pending.lines.clear();
        trees.push(tree);
        Ok(())
    }

    let mut trees = Vec::new();
    let mut pending = Pending {
        nodes: Vec::new(),
        heads: Vec::new(),
        lines: Vec::new(),
    };
    for (idx, raw) in content.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            finish(&mut pending, path, &mut trees)?;
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 10 tab-separated columns, found {}", cols.len()),
            ));
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let id: usize = cols[0]
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad ID {:?}", cols[0])))?;
        if id != pending.nodes.len() + 1 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected ID {}, found {id}", pending.nodes.len() + 1),
            ));
        }
        let head: usize = cols[6]
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad HEAD {:?}", cols[6])))?;
        pending.nodes.push(DepNode {
            form: cols[1].to_string(),
            lemma: cols[2].to_string(),
            upos: cols[3].to_string(),
            deprel: cols[7].to_string(),
        });
        pending.heads.push(head);
        pending.lines.push(lineno);
    }
    finish(&mut pending, path, &mut trees)?;
    Ok(trees)
}

/// Renders trees as CoNLL-U with the unretained columns set to `_`.
pub fn write_conllu(trees: &[DepTree]) -> String {
    let mut out = String::new();
    for tree in trees {
        for (i, node) in tree.nodes().iter().enumerate() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t_\t_\t{}\t{}\t_\t_\n",
                i + 1,
                node.form,
                node.lemma,
                node.upos,
                tree.head_id(i),
                node.deprel
            ));
        }
        out.push('\n');
    }
    out
}
