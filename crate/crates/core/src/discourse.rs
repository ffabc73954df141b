//! Explicit discourse connectives: candidate matching against a connective
//! lexicon, a connective-vs-not classifier, level-1 and level-2 relation
//! classifiers, and per-document aggregation into feature counts.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Label};
use crate::error::{Error, Result};
use crate::features::{FeatureFamily, FeatureMatrix, FeatureSpace, FeatureVector};
use crate::logreg::{self, LogRegModel, Penalty, TrainConfig};

/// Sentinel word and tag before the first token of a sentence.
pub const BOS: &str = "BOS";
/// Sentinel word and tag after the last token of a sentence.
pub const EOS: &str = "EOS";

pub const LEVEL1_RELATIONS: [&str; 4] = ["Comparison", "Contingency", "Expansion", "Temporal"];

/// Default level-2 label set: the eleven most frequent explicit second-level senses.
pub const DEFAULT_LEVEL2_RELATIONS: [&str; 11] = [
    "Alternative",
    "Asynchronous",
    "Cause",
    "Concession",
    "Condition",
    "Conjunction",
    "Contrast",
    "Instantiation",
    "List",
    "Restatement",
    "Synchrony",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectiveLexicon {
    forms: Vec<Vec<String>>,
    by_first: HashMap<String, Vec<usize>>,
}

impl ConnectiveLexicon {
    pub fn new<S: AsRef<str>>(forms: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for form in forms {
            let tokens: Vec<String> = form
                .as_ref()
                .split_whitespace()
                .map(str::to_lowercase)
                .collect();
            if tokens.is_empty() {
                return Err(Error::Validation("empty connective form".into()));
            }
            seen.insert(tokens);
        }
        if seen.is_empty() {
            return Err(Error::Validation("connective lexicon has no forms".into()));
        }
        let forms: Vec<Vec<String>> = seen.into_iter().collect();
        let mut by_first: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, f) in forms.iter().enumerate() {
            by_first.entry(f[0].clone()).or_default().push(i);
        }
        // Longest first, so the first hit at a position is the longest match.
        for ids in by_first.values_mut() {
            ids.sort_by(|&a, &b| forms[b].len().cmp(&forms[a].len()).then(a.cmp(&b)));
        }
        Ok(ConnectiveLexicon { forms, by_first })
    }

    /// One form per line; blank and `#` lines ignored.
    pub fn load(path: &Path) -> Result<Self> {
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(
            content
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn forms(&self) -> &[Vec<String>] {
        &self.forms
    }

    pub fn form_strings(&self) -> Vec<String> {
        self.forms.iter().map(|f| f.join(" ")).collect()
    }

    pub fn len(&self) -> usize {
        self.forms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forms.is_empty()
    }

    /// Half-open spans of lexicon forms: at each position the longest form
    /// wins, and matching resumes after it.
    pub fn match_spans(&self, tokens: &[String]) -> Vec<(usize, usize)> {
        let mut spans = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let hit = self.by_first.get(&tokens[i]).and_then(|ids| {
                ids.iter()
                    .map(|&id| &self.forms[id])
                    .find(|f| i + f.len() <= tokens.len() && tokens[i..i + f.len()] == f[..])
            });
            match hit {
                Some(form) => {
                    spans.push((i, i + form.len()));
                    i += form.len();
                }
                None => i += 1,
            }
        }
        spans
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectiveCandidate {
    pub doc_id: String,
    pub sentence: usize,
    pub start: usize,
    pub end: usize,
    pub form: String,
    pub prev_word: String,
    pub prev_pos: String,
    pub next_word: String,
    pub next_pos: String,
    pub pos_seq: Vec<String>,
}

impl ConnectiveCandidate {
    /// Candidate for `tokens[start..end]` with one token of context each side.
    pub fn from_span(
        doc_id: &str,
        sentence: usize,
        tokens: &[String],
        pos: &[String],
        start: usize,
        end: usize,
    ) -> Result<Self> {
        if tokens.len() != pos.len() {
            return Err(Error::Validation(format!(
                "{} tokens but {} POS tags",
                tokens.len(),
                pos.len()
            )));
        }
        if start >= end || end > tokens.len() {
            return Err(Error::Validation(format!(
                "span [{start}, {end}) outside a {}-token sentence",
                tokens.len()
            )));
        }
        let (prev_word, prev_pos) = match start.checked_sub(1) {
            Some(p) => (tokens[p].to_lowercase(), pos[p].clone()),
            None => (BOS.to_string(), BOS.to_string()),
        };
        let (next_word, next_pos) = if end < tokens.len() {
            (tokens[end].to_lowercase(), pos[end].clone())
        } else {
            (EOS.to_string(), EOS.to_string())
        };
        Ok(ConnectiveCandidate {
            doc_id: doc_id.to_string(),
            sentence,
            start,
            end,
            form: tokens[start..end].join(" ").to_lowercase(),
            prev_word,
            prev_pos,
            next_word,
            next_pos,
            pos_seq: pos[start..end].to_vec(),
        })
    }
}

/// All lexicon matches in a document, sentence by sentence. POS comes from
/// the parse sidecar; documents without parses yield no candidates.
pub fn match_candidates(doc: &Document, lexicon: &ConnectiveLexicon) -> Vec<ConnectiveCandidate> {
    let Some(parses) = &doc.parses else {
        log::warn!("document {} has no parses; no discourse candidates", doc.id);
        return Vec::new();
    };
    let mut out = Vec::new();
    for (s, tree) in parses.iter().enumerate() {
        let tokens = tree.forms();
        let pos = tree.upos_tags();
        for (start, end) in lexicon.match_spans(&tokens) {
            out.push(
                ConnectiveCandidate::from_span(&doc.id, s, &tokens, &pos, start, end)
                    .expect("spans come from the same sentence"),
            );
        }
    }
    out
}

/// The eight indicator features of a candidate, as prefixed feature names.
pub fn candidate_indicators(c: &ConnectiveCandidate) -> Vec<String> {
    let pos = c.pos_seq.join("_");
    [
        format!("conn={}", c.form),
        format!("prev={}", c.prev_word),
        format!("next={}", c.next_word),
        format!("prev_pos={}", c.prev_pos),
        format!("next_pos={}", c.next_pos),
        format!("conn_pos={pos}"),
        format!("prev_conn={}|{}", c.prev_word, c.form),
        format!("conn_next={}|{}", c.form, c.next_word),
    ]
    .iter()
    .map(|raw| FeatureFamily::Connective.name(raw))
    .collect()
}

/// Indicator vector over `space`; indicators outside the space are dropped.
pub fn candidate_features(c: &ConnectiveCandidate, space: &FeatureSpace) -> FeatureVector {
    FeatureVector::new(
        space,
        candidate_indicators(c)
            .iter()
            .filter_map(|n| space.index_of(n))
            .map(|i| (i, 1.0)),
    )
    .expect("indices come from the space")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiscourseTask {
    Connective,
    Lvl1,
    Lvl2,
}

impl fmt::Display for DiscourseTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiscourseTask::Connective => "connective",
            DiscourseTask::Lvl1 => "lvl1",
            DiscourseTask::Lvl2 => "lvl2",
        })
    }
}

impl FromStr for DiscourseTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "connective" => Ok(DiscourseTask::Connective),
            "lvl1" => Ok(DiscourseTask::Lvl1),
            "lvl2" => Ok(DiscourseTask::Lvl2),
            _ => Err(Error::Config(format!("unknown discourse task {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationLabel {
    pub level: u8,
    pub name: String,
}

impl RelationLabel {
    pub fn new(level: u8, name: &str, level2_set: &[String]) -> Result<Self> {
        let ok = match level {
            1 => LEVEL1_RELATIONS.contains(&name),
            2 => level2_set.iter().any(|l| l == name),
            _ => false,
        };
        if !ok {
            return Err(Error::Validation(format!("{name:?} is not a level-{level} relation")));
        }
        Ok(RelationLabel {
            level,
            name: name.to_string(),
        })
    }
}

/// One line of a training annotation file. `span` is half-open.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedCandidate {
    pub tokens: Vec<String>,
    pub pos: Vec<String>,
    pub span: [usize; 2],
    pub is_connective: bool,
    #[serde(default)]
    pub lvl1: Option<String>,
    #[serde(default)]
    pub lvl2: Option<String>,
}

impl AnnotatedCandidate {
    pub fn candidate(&self) -> Result<ConnectiveCandidate> {
        ConnectiveCandidate::from_span("", 0, &self.tokens, &self.pos, self.span[0], self.span[1])
    }

    fn target(&self, task: DiscourseTask) -> Option<String> {
        match task {
            DiscourseTask::Connective => Some(connective_class(self.is_connective).to_string()),
            DiscourseTask::Lvl1 => self.lvl1.clone().filter(|_| self.is_connective),
            DiscourseTask::Lvl2 => self.lvl2.clone().filter(|_| self.is_connective),
        }
    }
}

pub fn load_annotations(path: &Path) -> Result<Vec<AnnotatedCandidate>> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let a: AnnotatedCandidate =
            serde_json::from_str(line).map_err(|e| Error::parse(path, lineno + 1, e.to_string()))?;
        a.candidate().map_err(|e| Error::parse(path, lineno + 1, e.to_string()))?;
        out.push(a);
    }
    Ok(out)
}

const CONNECTIVE: &str = "connective";
const NON_CONNECTIVE: &str = "non-connective";

fn connective_class(yes: bool) -> &'static str {
    if yes {
        CONNECTIVE
    } else {
        NON_CONNECTIVE
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscourseTrainConfig {
    pub penalty: Penalty,
    pub c: f64,
    pub level2_labels: Vec<String>,
    pub seed: u64,
}

impl Default for DiscourseTrainConfig {
    fn default() -> Self {
        DiscourseTrainConfig {
            penalty: Penalty::L2,
            c: 1.0,
            level2_labels: DEFAULT_LEVEL2_RELATIONS.iter().map(|s| s.to_string()).collect(),
            seed: 0,
        }
    }
}

/// A trained discourse classifier: one logistic regression per class
/// (one-vs-rest), or a single binary model for connective identification.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscourseModel {
    pub task: DiscourseTask,
    labels: Vec<String>,
    space: FeatureSpace,
    /// (class, model) for each class seen in training.
    models: Vec<(String, LogRegModel)>,
}

impl DiscourseModel {
    /// Full label set of the task.
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn space(&self) -> &FeatureSpace {
        &self.space
    }

    /// Predicted class name. One-vs-rest ties go to the earlier class.
    pub fn predict(&self, c: &ConnectiveCandidate) -> String {
        let x = candidate_features(c, &self.space);
        if self.task == DiscourseTask::Connective {
            let p = self.models[0].1.predict_proba(&x).expect("own space");
            return connective_class(p >= 0.5).to_string();
        }
        let mut best: Option<(&str, f64)> = None;
        for (class, model) in &self.models {
            let p = model.predict_proba(&x).expect("own space");
            if best.map_or(true, |(_, bp)| p > bp) {
                best = Some((class, p));
            }
        }
        best.expect("at least two classes").0.to_string()
    }

    pub fn is_connective(&self, c: &ConnectiveCandidate) -> bool {
        self.predict(c) == CONNECTIVE
    }

    /// Accuracy over the annotations relevant to this model's task.
    pub fn accuracy(&self, annotated: &[AnnotatedCandidate]) -> Result<f64> {
        let mut total = 0usize;
        let mut correct = 0usize;
        for a in annotated {
            let Some(target) = a.target(self.task) else { continue };
            total += 1;
            if self.predict(&a.candidate()?) == target {
                correct += 1;
            }
        }
        if total == 0 {
            return Err(Error::Validation(format!("no annotations usable for the {} task", self.task)));
        }
        Ok(correct as f64 / total as f64)
    }

    fn to_file(&self) -> Result<DiscourseModelFile> {
        Ok(DiscourseModelFile {
            task: self.task,
            labels: self.labels.clone(),
            features: self.space.names().to_vec(),
            models: self
                .models
                .iter()
                .map(|(class, m)| Ok((class.clone(), serde_json::from_str(&m.to_json(&self.space)?)?)))
                .collect::<Result<_>>()?,
        })
    }

    fn from_file(file: DiscourseModelFile) -> Result<Self> {
        let space = FeatureSpace::from_names(file.features)?;
        let models = file
            .models
            .into_iter()
            .map(|(class, json)| Ok((class, LogRegModel::from_json(&json.to_string(), &space)?)))
            .collect::<Result<Vec<_>>>()?;
        if models.is_empty() {
            return Err(Error::Validation("discourse model without classifiers".into()));
        }
        Ok(DiscourseModel {
            task: file.task,
            labels: file.labels,
            space,
            models,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DiscourseModelFile {
    task: DiscourseTask,
    labels: Vec<String>,
    features: Vec<String>,
    models: Vec<(String, serde_json::Value)>,
}

/// Fits the classifier for `task` on the candidate features of `annotated`.
pub fn train_discourse_model(
    annotated: &[AnnotatedCandidate],
    task: DiscourseTask,
    cfg: &DiscourseTrainConfig,
) -> Result<DiscourseModel> {
    let mut candidates = Vec::new();
    let mut targets = Vec::new();
    for a in annotated {
        let Some(target) = a.target(task) else { continue };
        let level = match task {
            DiscourseTask::Lvl1 => Some(1),
            DiscourseTask::Lvl2 => Some(2),
            DiscourseTask::Connective => None,
        };
        if let Some(level) = level {
            RelationLabel::new(level, &target, &cfg.level2_labels)?;
        }
        candidates.push(a.candidate()?);
        targets.push(target);
    }
    let classes: BTreeSet<&String> = targets.iter().collect();
    if classes.len() < 2 {
        return Err(Error::Training(format!(
            "the {task} task needs at least two classes, found {}",
            classes.len()
        )));
    }

    let names: BTreeSet<String> = candidates.iter().flat_map(candidate_indicators).collect();
    let space = FeatureSpace::from_names(names.into_iter().collect())?;
    let rows: Vec<FeatureVector> = candidates.iter().map(|c| candidate_features(c, &space)).collect();
    let n = rows.len();
    let ids: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
    let mut train_cfg = TrainConfig::new(cfg.penalty, cfg.c);
    train_cfg.seed = cfg.seed;

    let fit = |positive: &str| -> Result<LogRegModel> {
        let labels = targets.iter().map(|t| Label::from(t == positive)).collect();
        let x = FeatureMatrix::new(space.clone(), rows.clone(), labels, vec![0; n], ids.clone(), ids.clone())?;
        logreg::train(&x, &train_cfg)
    };

    let (labels, models) = match task {
        DiscourseTask::Connective => (
            vec![NON_CONNECTIVE.to_string(), CONNECTIVE.to_string()],
            vec![(CONNECTIVE.to_string(), fit(CONNECTIVE)?)],
        ),
        DiscourseTask::Lvl1 | DiscourseTask::Lvl2 => {
            let labels = if task == DiscourseTask::Lvl1 {
                LEVEL1_RELATIONS.iter().map(|s| s.to_string()).collect()
            } else {
                cfg.level2_labels.clone()
            };
            let models = classes
                .iter()
                .map(|class| Ok(((*class).clone(), fit(class)?)))
                .collect::<Result<Vec<_>>>()?;
            (labels, models)
        }
    };
    Ok(DiscourseModel {
        task,
        labels,
        space,
        models,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DiscourseCounts {
    pub connectives: BTreeMap<String, usize>,
    pub lvl1: BTreeMap<String, usize>,
    pub lvl2: BTreeMap<String, usize>,
}

/// Lexicon plus the three trained classifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscourseAnnotator {
    pub lexicon: ConnectiveLexicon,
    pub connective: DiscourseModel,
    pub lvl1: DiscourseModel,
    pub lvl2: DiscourseModel,
}

impl DiscourseAnnotator {
    pub fn new(
        lexicon: ConnectiveLexicon,
        connective: DiscourseModel,
        lvl1: DiscourseModel,
        lvl2: DiscourseModel,
    ) -> Result<Self> {
        for (m, t) in [
            (&connective, DiscourseTask::Connective),
            (&lvl1, DiscourseTask::Lvl1),
            (&lvl2, DiscourseTask::Lvl2),
        ] {
            if m.task != t {
                return Err(Error::Validation(format!("expected a {t} model, got {}", m.task)));
            }
        }
        Ok(DiscourseAnnotator {
            lexicon,
            connective,
            lvl1,
            lvl2,
        })
    }

    /// Trains all three classifiers from one annotation set.
    pub fn train(
        lexicon: ConnectiveLexicon,
        annotated: &[AnnotatedCandidate],
        cfg: &DiscourseTrainConfig,
    ) -> Result<Self> {
        Self::new(
            lexicon,
            train_discourse_model(annotated, DiscourseTask::Connective, cfg)?,
            train_discourse_model(annotated, DiscourseTask::Lvl1, cfg)?,
            train_discourse_model(annotated, DiscourseTask::Lvl2, cfg)?,
        )
    }

    /// Counts of classified connectives by form, and of their predicted
    /// level-1 and level-2 relations.
    pub fn discourse_counts(&self, doc: &Document) -> DiscourseCounts {
        let mut counts = DiscourseCounts::default();
        for c in match_candidates(doc, &self.lexicon) {
            if !self.connective.is_connective(&c) {
                continue;
            }
            *counts.lvl1.entry(self.lvl1.predict(&c)).or_default() += 1;
            *counts.lvl2.entry(self.lvl2.predict(&c)).or_default() += 1;
            *counts.connectives.entry(c.form).or_default() += 1;
        }
        counts
    }

    pub fn to_json(&self) -> Result<String> {
        let file = AnnotatorFile {
            connectives: self.lexicon.form_strings(),
            connective: self.connective.to_file()?,
            lvl1: self.lvl1.to_file()?,
            lvl2: self.lvl2.to_file()?,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: AnnotatorFile = serde_json::from_str(json)?;
        Self::new(
            ConnectiveLexicon::new(&file.connectives)?,
            DiscourseModel::from_file(file.connective)?,
            DiscourseModel::from_file(file.lvl1)?,
            DiscourseModel::from_file(file.lvl2)?,
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&json)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct AnnotatorFile {
    connectives: Vec<String>,
    connective: DiscourseModelFile,
    lvl1: DiscourseModelFile,
    lvl2: DiscourseModelFile,
}
