//! Column-format NER corpora: tokens, IOB2 label sequences and typed mentions.
//!
//! Everything in here is immutable once built. Sentences are validated at
//! construction, so any [`Sentence`] reachable from a [`Dataset`] carries a
//! well-formed IOB2 label sequence whose types belong to the dataset's
//! [`TypeSet`].

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of an entity type inside a [`TypeSet`].
pub type TypeId = usize;

/// Number of contiguous outside tokens a mention needs on one side to count
/// as having usable context.
pub const CONTEXT_WINDOW: usize = 3;

const DOCSTART: &str = "-DOCSTART-";
const SYNTHETIC_MARKER: &str = "# synthetic";

/// Ordered, fixed list of entity type names.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct TypeSet {
    names: Vec<String>,
}

impl TypeSet {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(Error::TypeSet(format!(
                "need at least 2 types, got {}",
                names.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if name.is_empty() || name.chars().any(char::is_whitespace) {
                return Err(Error::TypeSet(format!("bad type name {name:?}")));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::TypeSet(format!("duplicate type name {name}")));
            }
        }
        Ok(Self { names })
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

    pub fn name(&self, id: TypeId) -> &str {
        &self.names[id]
    }

    pub fn index_of(&self, name: &str) -> Option<TypeId> {
        self.names.iter().position(|n| n == name)
    }

    /// Size of the IOB label inventory, `2K + 1`.
    pub fn label_count(&self) -> usize {
        2 * self.names.len() + 1
    }
}

impl Default for TypeSet {
    fn default() -> Self {
        Self {
            names: vec!["PER".into(), "LOC".into(), "ORG".into()],
        }
    }
}

impl TryFrom<Vec<String>> for TypeSet {
    type Error = Error;
    fn try_from(names: Vec<String>) -> Result<Self> {
        TypeSet::new(names)
    }
}

impl From<TypeSet> for Vec<String> {
    fn from(ts: TypeSet) -> Self {
        ts.names
    }
}

/// One IOB label. Types are referenced by their index in a [`TypeSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    O,
    B(TypeId),
    I(TypeId),
}

impl Label {
    pub fn parse(s: &str, typeset: &TypeSet) -> Result<Label> {
        if s == "O" {
            return Ok(Label::O);
        }
        let (prefix, name) = s
            .split_once('-')
            .ok_or_else(|| Error::InvalidIob(format!("malformed label {s:?}")))?;
        let t = typeset
            .index_of(name)
            .ok_or_else(|| Error::UnknownType(name.to_string()))?;
        match prefix {
            "B" => Ok(Label::B(t)),
            "I" => Ok(Label::I(t)),
            _ => Err(Error::InvalidIob(format!("malformed label {s:?}"))),
        }
    }

    pub fn render(&self, typeset: &TypeSet) -> String {
        match *self {
            Label::O => "O".to_string(),
            Label::B(t) => format!("B-{}", typeset.name(t)),
            Label::I(t) => format!("I-{}", typeset.name(t)),
        }
    }

    pub fn type_id(&self) -> Option<TypeId> {
        match *self {
            Label::O => None,
            Label::B(t) | Label::I(t) => Some(t),
        }
    }

    /// Dense index used by the tagger's output layers: `O` is 0, `B-t` is
    /// `1 + 2t`, `I-t` is `2 + 2t`.
    pub fn index(&self) -> usize {
        match *self {
            Label::O => 0,
            Label::B(t) => 1 + 2 * t,
            Label::I(t) => 2 + 2 * t,
        }
    }

    pub fn from_index(index: usize) -> Label {
        match index {
            0 => Label::O,
            i if i % 2 == 1 => Label::B((i - 1) / 2),
            i => Label::I((i - 2) / 2),
        }
    }
}

/// A single whitespace-free token.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Token {
    surface: String,
    starts_upper: bool,
}

impl Token {
    pub fn new(surface: impl Into<String>) -> Result<Token> {
        let surface = surface.into();
        if surface.is_empty() || surface.chars().any(char::is_whitespace) {
            return Err(Error::InvalidIob(format!("bad token {surface:?}")));
        }
        let starts_upper = surface.chars().next().is_some_and(char::is_uppercase);
        Ok(Token {
            surface,
            starts_upper,
        })
    }

    pub fn surface(&self) -> &str {
        &self.surface
    }

    pub fn starts_upper(&self) -> bool {
        self.starts_upper
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.surface)
    }
}

/// A typed mention spanning tokens `start..=end`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mention {
    pub start: usize,
    pub end: usize,
    pub type_id: TypeId,
    pub surface: String,
}

impl Mention {
    pub fn token_count(&self) -> usize {
        self.end - self.start + 1
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub index: usize,
    pub reason: String,
}

/// Checks IOB2 well-formedness. An `I-t` is only legal right after a `B-t`
/// or `I-t` of the same type.
pub fn validate_iob(labels: &[Label]) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut prev = Label::O;
    for (index, &label) in labels.iter().enumerate() {
        if let Label::I(t) = label {
            if prev.type_id() != Some(t) {
                let reason = match prev {
                    Label::O if index == 0 => "I- at sentence start".to_string(),
                    Label::O => "I- after O".to_string(),
                    _ => "I- after a different type".to_string(),
                };
                out.push(Violation { index, reason });
            }
        }
        prev = label;
    }
    out
}

/// Rewrites IOB1 labels (where `I-t` opens a chunk and `B-t` only separates
/// adjacent chunks of the same type) into IOB2.
pub fn iob1_to_iob2(labels: &[Label]) -> Vec<Label> {
    let mut out = Vec::with_capacity(labels.len());
    let mut prev = Label::O;
    for &label in labels {
        let converted = match label {
            Label::I(t) if prev.type_id() != Some(t) => Label::B(t),
            other => other,
        };
        out.push(converted);
        prev = label;
    }
    out
}

/// Makes any label sequence valid IOB2 by rewriting each orphan `I-t` to
/// `B-t`. Valid sequences come back unchanged.
pub fn repair_iob(labels: &[Label]) -> Vec<Label> {
    let mut out: Vec<Label> = Vec::with_capacity(labels.len());
    for &label in labels {
        let prev = out.last().copied().unwrap_or(Label::O);
        out.push(match label {
            Label::I(t) if prev.type_id() != Some(t) => Label::B(t),
            other => other,
        });
    }
    out
}

/// Builds the IOB2 sequence of length `n` encoding `mentions`.
pub fn labels_from_mentions(n: usize, mentions: &[Mention]) -> Vec<Label> {
    let mut labels = vec![Label::O; n];
    for m in mentions {
        labels[m.start] = Label::B(m.type_id);
        for label in &mut labels[m.start + 1..=m.end] {
            *label = Label::I(m.type_id);
        }
    }
    labels
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    tokens: Vec<Token>,
    labels: Vec<Label>,
    doc_id: Option<String>,
    synthetic: bool,
}

impl Sentence {
    pub fn new(tokens: Vec<Token>, labels: Vec<Label>, doc_id: Option<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::InvalidIob("empty sentence".into()));
        }
        if tokens.len() != labels.len() {
            return Err(Error::InvalidIob(format!(
                "{} tokens but {} labels",
                tokens.len(),
                labels.len()
            )));
        }
        if let Some(v) = validate_iob(&labels).first() {
            return Err(Error::InvalidIob(format!(
                "{} at index {}",
                v.reason, v.index
            )));
        }
        Ok(Sentence {
            tokens,
            labels,
            doc_id,
            synthetic: false,
        })
    }

    /// Convenience constructor from surface and label strings.
    pub fn from_strs(tokens: &[&str], labels: &[&str], typeset: &TypeSet) -> Result<Self> {
        let tokens = tokens
            .iter()
            .map(|t| Token::new(*t))
            .collect::<Result<Vec<_>>>()?;
        let labels = labels
            .iter()
            .map(|l| Label::parse(l, typeset))
            .collect::<Result<Vec<_>>>()?;
        Sentence::new(tokens, labels, None)
    }

    pub fn with_synthetic(mut self, synthetic: bool) -> Self {
        self.synthetic = synthetic;
        self
    }

    pub fn with_doc_id(mut self, doc_id: Option<String>) -> Self {
        self.doc_id = doc_id;
        self
    }

    /// Same tokens, new labels. The labels are validated.
    pub fn relabel(&self, labels: Vec<Label>) -> Result<Sentence> {
        Ok(
            Sentence::new(self.tokens.clone(), labels, self.doc_id.clone())?
                .with_synthetic(self.synthetic),
        )
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn doc_id(&self) -> Option<&str> {
        self.doc_id.as_deref()
    }

    pub fn is_synthetic(&self) -> bool {
        self.synthetic
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(Token::surface)
    }

    pub fn span_surface(&self, start: usize, end: usize) -> String {
        self.tokens[start..=end]
            .iter()
            .map(Token::surface)
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn mentions(&self) -> Vec<Mention> {
        extract_mentions(self)
    }
}

/// Maximal `B I*` runs, ordered by start.
pub fn extract_mentions(sentence: &Sentence) -> Vec<Mention> {
    let labels = sentence.labels();
    let mut out = Vec::new();
    let mut i = 0;
    while i < labels.len() {
        if let Label::B(t) = labels[i] {
            let mut j = i;
            while j + 1 < labels.len() && labels[j + 1] == Label::I(t) {
                j += 1;
            }
            out.push(Mention {
                start: i,
                end: j,
                type_id: t,
                surface: sentence.span_surface(i, j),
            });
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

fn outside_run_before(labels: &[Label], start: usize) -> usize {
    labels[..start]
        .iter()
        .rev()
        .take_while(|l| **l == Label::O)
        .count()
}

fn outside_run_after(labels: &[Label], end: usize) -> usize {
    labels[end + 1..]
        .iter()
        .take_while(|l| **l == Label::O)
        .count()
}

pub fn is_eligible(sentence: &Sentence, mention: &Mention) -> bool {
    let labels = sentence.labels();
    outside_run_before(labels, mention.start) >= CONTEXT_WINDOW
        || outside_run_after(labels, mention.end) >= CONTEXT_WINDOW
}

/// Mentions with at least three contiguous `O` tokens directly before or
/// directly after them, inside the sentence. Punctuation counts as context.
pub fn eligible_mentions(sentence: &Sentence) -> Vec<Mention> {
    extract_mentions(sentence)
        .into_iter()
        .filter(|m| is_eligible(sentence, m))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    sentences: Vec<Sentence>,
    typeset: TypeSet,
}

impl Dataset {
    pub fn new(sentences: Vec<Sentence>, typeset: TypeSet) -> Result<Self> {
        let k = typeset.len();
        for (index, s) in sentences.iter().enumerate() {
            if let Some(t) = s
                .labels()
                .iter()
                .filter_map(Label::type_id)
                .find(|&t| t >= k)
            {
                return Err(Error::Misaligned {
                    index,
                    msg: format!("type id {t} outside a type set of size {k}"),
                });
            }
        }
        Ok(Dataset { sentences, typeset })
    }

    pub fn empty(typeset: TypeSet) -> Self {
        Dataset {
            sentences: Vec::new(),
            typeset,
        }
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn typeset(&self) -> &TypeSet {
        &self.typeset
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn into_sentences(self) -> Vec<Sentence> {
        self.sentences
    }

    pub fn mention_count(&self) -> usize {
        self.sentences.iter().map(|s| s.mentions().len()).sum()
    }

    pub fn label_sequences(&self) -> Vec<Vec<Label>> {
        self.sentences.iter().map(|s| s.labels().to_vec()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&DatasetRepr::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Dataset> {
        serde_json::from_str::<DatasetRepr>(text)?.try_into()
    }
}

#[derive(Serialize, Deserialize)]
struct SentenceRepr {
    tokens: Vec<String>,
    labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    doc_id: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    synthetic: bool,
}

#[derive(Serialize, Deserialize)]
struct DatasetRepr {
    types: TypeSet,
    sentences: Vec<SentenceRepr>,
}

impl From<&Dataset> for DatasetRepr {
    fn from(ds: &Dataset) -> Self {
        DatasetRepr {
            types: ds.typeset.clone(),
            sentences: ds
                .sentences
                .iter()
                .map(|s| SentenceRepr {
                    tokens: s.surfaces().map(str::to_string).collect(),
                    labels: s.labels().iter().map(|l| l.render(&ds.typeset)).collect(),
                    doc_id: s.doc_id.clone(),
                    synthetic: s.synthetic,
                })
                .collect(),
        }
    }
}

impl TryFrom<DatasetRepr> for Dataset {
    type Error = Error;
    fn try_from(repr: DatasetRepr) -> Result<Dataset> {
        let sentences = repr
            .sentences
            .into_iter()
            .map(|s| {
                let tokens: Vec<&str> = s.tokens.iter().map(String::as_str).collect();
                let labels: Vec<&str> = s.labels.iter().map(String::as_str).collect();
                Ok(Sentence::from_strs(&tokens, &labels, &repr.types)?
                    .with_doc_id(s.doc_id)
                    .with_synthetic(s.synthetic))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(sentences, repr.types)
    }
}

/// Label scheme of a column file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Scheme {
    /// IOB1 if any chunk opens with `I-`, IOB2 otherwise.
    #[default]
    Auto,
    Iob1,
    Iob2,
}

/// Parses CoNLL column format with automatic IOB1 detection.
pub fn parse_conll(text: &str, typeset: &TypeSet) -> Result<Dataset> {
    parse_conll_with(text, typeset, Scheme::Auto)
}

pub fn parse_conll_with(text: &str, typeset: &TypeSet, scheme: Scheme) -> Result<Dataset> {
    struct Raw {
        tokens: Vec<Token>,
        labels: Vec<Label>,
        doc_id: Option<String>,
        synthetic: bool,
        first_line: usize,
    }

    let mut raw: Vec<Raw> = Vec::new();
    let mut tokens = Vec::new();
    let mut labels = Vec::new();
    let mut first_line = 0;
    let mut doc: Option<usize> = None;
    let mut synthetic = false;

    let mut flush = |tokens: &mut Vec<Token>,
                     labels: &mut Vec<Label>,
                     synthetic: &mut bool,
                     first_line: usize,
                     doc: Option<usize>| {
        if !tokens.is_empty() {
            raw.push(Raw {
                tokens: std::mem::take(tokens),
                labels: std::mem::take(labels),
                doc_id: doc.map(|d| d.to_string()),
                synthetic: *synthetic,
                first_line,
            });
        }
        *synthetic = false;
    };

    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            flush(&mut tokens, &mut labels, &mut synthetic, first_line, doc);
            continue;
        }
        if trimmed == SYNTHETIC_MARKER && tokens.is_empty() {
            synthetic = true;
            continue;
        }
        let cols: Vec<&str> = trimmed.split_whitespace().collect();
        if cols[0] == DOCSTART {
            flush(&mut tokens, &mut labels, &mut synthetic, first_line, doc);
            doc = Some(doc.map_or(0, |d| d + 1));
            continue;
        }
        if cols.len() < 2 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected at least 2 columns, found {}", cols.len()),
            });
        }
        let label = Label::parse(cols[cols.len() - 1], typeset).map_err(|e| match e {
            Error::UnknownType(t) => Error::UnknownType(t),
            other => Error::Parse {
                line: line_no,
                msg: other.to_string(),
            },
        })?;
        if tokens.is_empty() {
            first_line = line_no;
        }
        tokens.push(Token::new(cols[0]).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?);
        labels.push(label);
    }
    flush(&mut tokens, &mut labels, &mut synthetic, first_line, doc);

    let iob1 = match scheme {
        Scheme::Iob1 => true,
        Scheme::Iob2 => false,
        Scheme::Auto => raw.iter().any(|r| !validate_iob(&r.labels).is_empty()),
    };

    let sentences = raw
        .into_iter()
        .map(|r| {
            let labels = if iob1 {
                iob1_to_iob2(&r.labels)
            } else {
                r.labels
            };
            Sentence::new(r.tokens, labels, r.doc_id)
                .map(|s| s.with_synthetic(r.synthetic))
                .map_err(|e| Error::Parse {
                    line: r.first_line,
                    msg: e.to_string(),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(sentences, typeset.clone())
}

/// Writes two-column CoNLL text. Document changes emit a `-DOCSTART-` line
/// and augmented sentences are preceded by a `# synthetic` marker.
pub fn to_conll(dataset: &Dataset) -> String {
    let mut out = String::new();
    let mut current_doc: Option<&str> = None;
    for s in dataset.sentences() {
        if let Some(doc) = s.doc_id() {
            if current_doc != Some(doc) {
                out.push_str(DOCSTART);
                out.push_str(" O\n\n");
                current_doc = Some(doc);
            }
        }
        if s.is_synthetic() {
            out.push_str(SYNTHETIC_MARKER);
            out.push('\n');
        }
        for (tok, label) in s.tokens().iter().zip(s.labels()) {
            out.push_str(tok.surface());
            out.push(' ');
            out.push_str(&label.render(dataset.typeset()));
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// Target of a type mapping: a type name in the target set, or removal.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MapTarget {
    To(String),
    Drop,
}

pub type TypeMapping = BTreeMap<String, MapTarget>;

/// Rewrites mention types through `mapping`; dropped mentions become `O`.
pub fn map_types(dataset: &Dataset, mapping: &TypeMapping, target: &TypeSet) -> Result<Dataset> {
    let source = dataset.typeset();
    let mut table: Vec<Option<Option<TypeId>>> = vec![None; source.len()];
    for (t, name) in source.names().iter().enumerate() {
        if let Some(to) = mapping.get(name) {
            table[t] = Some(match to {
                MapTarget::Drop => None,
                MapTarget::To(n) => Some(
                    target
                        .index_of(n)
                        .ok_or_else(|| Error::UnknownType(n.clone()))?,
                ),
            });
        }
    }

    let sentences = dataset
        .sentences()
        .iter()
        .map(|s| {
            let labels = s
                .labels()
                .iter()
                .map(|&l| {
                    let Some(t) = l.type_id() else {
                        return Ok(Label::O);
                    };
                    let mapped =
                        table[t].ok_or_else(|| Error::UnmappedType(source.name(t).to_string()))?;
                    Ok(match (l, mapped) {
                        (_, None) => Label::O,
                        (Label::B(_), Some(u)) => Label::B(u),
                        (_, Some(u)) => Label::I(u),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            s.relabel(labels)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(sentences, target.clone())
}
