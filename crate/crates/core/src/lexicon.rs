//! Word-category lexicons behind the polarity, causal, Inquirer, pronoun and
//! hedge features. Every resource uses the same `word<TAB>category` format.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LexiconKind {
    Polarity,
    Causal,
    Inquirer,
    Pronoun,
    Hedge,
}

impl LexiconKind {
    pub const ALL: [LexiconKind; 5] = [
        LexiconKind::Polarity,
        LexiconKind::Causal,
        LexiconKind::Inquirer,
        LexiconKind::Pronoun,
        LexiconKind::Hedge,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LexiconKind::Polarity => "polarity",
            LexiconKind::Causal => "causal",
            LexiconKind::Inquirer => "inquirer",
            LexiconKind::Pronoun => "pronoun",
            LexiconKind::Hedge => "hedge",
        }
    }
}

impl fmt::Display for LexiconKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LexiconKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LexiconKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown lexicon kind {s:?}")))
    }
}

/// Which category layer of a pronoun lexicon to count. Pronoun files tag each
/// word twice: `person:<group>` and `lemma:<lemma>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PronounLayer {
    #[default]
    Person,
    Lemma,
    Both,
}

static EMPTY: BTreeSet<String> = BTreeSet::new();

#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    pub name: String,
    pub kind: LexiconKind,
    entries: HashMap<String, BTreeSet<String>>,
    categories: Vec<String>,
}

impl Lexicon {
    /// Parses lexicon text. `origin` is only used in error messages.
    pub fn parse(content: &str, kind: LexiconKind, name: &str, origin: &Path) -> Result<Self> {
        let mut entries: HashMap<String, BTreeSet<String>> = HashMap::new();
        for (lineno, raw) in content.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (word, category) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(origin, lineno + 1, "expected word<TAB>category"))?;
            let word = word.trim().to_lowercase();
            let category = category.trim();
            if word.is_empty() || category.is_empty() {
                return Err(Error::parse(origin, lineno + 1, "empty word or category"));
            }
            entries.entry(word).or_default().insert(category.to_string());
        }
        if entries.is_empty() {
            return Err(Error::Validation(format!(
                "lexicon {} has no entries",
                origin.display()
            )));
        }
        Ok(Self::from_entries(name, kind, entries))
    }

    fn from_entries(name: &str, kind: LexiconKind, entries: HashMap<String, BTreeSet<String>>) -> Self {
        let categories: BTreeSet<&String> = entries.values().flatten().collect();
        let categories = categories.into_iter().cloned().collect();
        Lexicon {
            name: name.to_string(),
            kind,
            entries,
            categories,
        }
    }

    pub fn from_pairs<'a>(
        kind: LexiconKind,
        pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self> {
        let text: String = pairs
            .into_iter()
            .map(|(w, c)| format!("{w}\t{c}\n"))
            .collect();
        Self::parse(&text, kind, kind.as_str(), Path::new("<inline>"))
    }

    /// Looks up the lowercased token; absent words map to the empty set.
    pub fn lookup(&self, token: &str) -> &BTreeSet<String> {
        let hit = if token.chars().any(char::is_uppercase) {
            self.entries.get(&token.to_lowercase())
        } else {
            self.entries.get(token)
        };
        hit.unwrap_or(&EMPTY)
    }

    /// All category labels, sorted.
    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Keeps only the categories starting with `prefix`, dropping words left
    /// without a category.
    pub fn restrict_to_prefix(&self, prefix: &str) -> Lexicon {
        let entries = self
            .entries
            .iter()
            .filter_map(|(w, cats)| {
                let kept: BTreeSet<String> =
                    cats.iter().filter(|c| c.starts_with(prefix)).cloned().collect();
                (!kept.is_empty()).then(|| (w.clone(), kept))
            })
            .collect();
        Self::from_entries(&self.name, self.kind, entries)
    }

    /// The pronoun layer view of this lexicon. Non-pronoun lexicons and files
    /// without layer prefixes are returned unchanged.
    pub fn pronoun_layer(&self, layer: PronounLayer) -> Lexicon {
        let layered = self
            .categories
            .iter()
            .any(|c| c.starts_with("person:") || c.starts_with("lemma:"));
        if self.kind != LexiconKind::Pronoun || !layered {
            return self.clone();
        }
        match layer {
            PronounLayer::Person => self.restrict_to_prefix("person:"),
            PronounLayer::Lemma => self.restrict_to_prefix("lemma:"),
            PronounLayer::Both => self.clone(),
        }
    }
}

pub fn load_lexicon(path: &Path, kind: LexiconKind) -> Result<Lexicon> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| kind.as_str().to_string());
    Lexicon::parse(&content, kind, &name, path)
}

/// Same as [`load_lexicon`] with the kind given by name.
pub fn load_lexicon_named(path: &Path, kind: &str) -> Result<Lexicon> {
    load_lexicon(path, kind.parse()?)
}
