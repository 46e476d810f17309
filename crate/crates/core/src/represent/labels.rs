use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{RepresentError, Result};

pub const NOISE: &str = "NOISE";
pub const UNKNOWN: &str = "UNKNOWN";

/// Hierarchical network label such as `DMN-PCC-MID`: a functional name
/// followed by increasingly specific anatomical qualifiers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RsnLabel {
    tokens: Vec<String>,
}

impl RsnLabel {
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn raw(&self) -> String {
        self.tokens.join("-")
    }

    /// First token.
    pub fn functional_name(&self) -> &str {
        &self.tokens[0]
    }
}

impl fmt::Display for RsnLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw())
    }
}

impl FromStr for RsnLabel {
    type Err = RepresentError;
    fn from_str(s: &str) -> Result<Self> {
        parse_label(s)
    }
}

impl TryFrom<String> for RsnLabel {
    type Error = RepresentError;
    fn try_from(s: String) -> Result<Self> {
        parse_label(&s)
    }
}

impl From<RsnLabel> for String {
    fn from(l: RsnLabel) -> String {
        l.raw()
    }
}

pub fn parse_label(raw: &str) -> Result<RsnLabel> {
    if raw.is_empty() {
        return Err(RepresentError::EmptyLabel);
    }
    let mut tokens = Vec::new();
    for (i, tok) in raw.split('-').enumerate() {
        if tok.is_empty() {
            return Err(RepresentError::EmptyToken {
                label: raw.to_string(),
                position: i,
            });
        }
        if !tok.chars().all(|c| c.is_ascii_alphanumeric()) {
            return Err(RepresentError::InvalidToken(tok.to_string()));
        }
        tokens.push(tok.to_ascii_uppercase());
    }
    Ok(RsnLabel { tokens })
}

/// Ordered, duplicate-free class list. `NOISE` and `UNKNOWN` are always
/// present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    labels: Vec<RsnLabel>,
    index: HashMap<RsnLabel, usize>,
}

impl LabelSet {
    /// Keeps first occurrences in order, then appends the reserved labels if
    /// they were not given.
    pub fn new<I: IntoIterator<Item = RsnLabel>>(labels: I) -> Self {
        let mut set = LabelSet {
            labels: Vec::new(),
            index: HashMap::new(),
        };
        for l in labels {
            set.push(l);
        }
        for reserved in [NOISE, UNKNOWN] {
            set.push(parse_label(reserved).expect("reserved label"));
        }
        set
    }

    fn push(&mut self, l: RsnLabel) {
        if !self.index.contains_key(&l) {
            self.index.insert(l.clone(), self.labels.len());
            self.labels.push(l);
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &RsnLabel) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, i: usize) -> Option<&RsnLabel> {
        self.labels.get(i)
    }

    pub fn labels(&self) -> &[RsnLabel] {
        &self.labels
    }

    pub fn noise_index(&self) -> usize {
        self.index[&parse_label(NOISE).unwrap()]
    }

    /// One label per line, in index order.
    pub fn to_text(&self) -> String {
        self.labels.iter().map(|l| format!("{l}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let labels = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| parse_label(l.trim()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(labels))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Expert labels of group components, keyed by component index.
pub type ComponentLabels = BTreeMap<usize, RsnLabel>;

/// `index<TAB>LABEL` rows; blank lines and `#` comments are skipped.
pub fn parse_component_labels(text: &str) -> Result<ComponentLabels> {
    let mut out = ComponentLabels::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || RepresentError::LabelsFile(format!("line {}: {line:?}", n + 1));
        let (idx, label) = line.split_once('\t').ok_or_else(bad)?;
        let idx: usize = idx.trim().parse().map_err(|_| bad())?;
        if out.insert(idx, parse_label(label.trim())?).is_some() {
            return Err(RepresentError::LabelsFile(format!("duplicate component {idx}")));
        }
    }
    Ok(out)
}

pub fn format_component_labels(labels: &ComponentLabels) -> String {
    labels.iter().map(|(i, l)| format!("{i}\t{l}\n")).collect()
}

pub fn read_component_labels(path: &Path) -> Result<ComponentLabels> {
    parse_component_labels(&std::fs::read_to_string(path)?)
}

pub fn write_component_labels(path: &Path, labels: &ComponentLabels) -> Result<()> {
    std::fs::write(path, format_component_labels(labels))?;
    Ok(())
}
