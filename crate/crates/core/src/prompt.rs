//! Deterministic prompt construction.
//!
//! A prompt is assembled from three parts: a [`PromptFormat`] (preamble,
//! example template, test template, separator), an ordered list of
//! [`LabeledExample`]s (the order IS the permutation), and a test input.
//! Rendering is byte-deterministic; a checked-in corpus of formats with
//! golden renderings keeps the output stable across refactors.
//!
//! Templates use `{input}` and `{label}` placeholders. Substitution is
//! single-pass: placeholder-looking text inside a dataset input is copied
//! verbatim, never expanded.

use std::collections::BTreeSet;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ClassId;

/// Largest example count for which [`enumerate_permutations`] will run
/// (6! = 720 orderings). Beyond this, sample orderings instead.
pub const PERMUTATION_CAP: usize = 6;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("{template} template must contain {{{placeholder}}} exactly once, found {found}")]
    PlaceholderCount {
        template: &'static str,
        placeholder: &'static str,
        found: usize,
    },
    #[error("{template} template contains unknown placeholder {{{name}}}")]
    UnknownPlaceholder {
        template: &'static str,
        name: String,
    },
    #[error("{template} template has an unclosed '{{' at byte {at}")]
    UnclosedBrace { template: &'static str, at: usize },
    #[error("example input must be non-empty")]
    EmptyExampleInput,
    #[error("label space must be non-empty")]
    EmptyLabelSpace,
    #[error("label name must be non-empty")]
    EmptyLabelName,
    #[error("duplicate label name `{0}`")]
    DuplicateLabelName(String),
    #[error("labels `{a}` and `{b}` share first token `{token}`; provide an explicit token map with distinct tokens")]
    SharedFirstToken { a: String, b: String, token: String },
    #[error("token map has {tokens} entries for {names} label names")]
    TokenMapLength { names: usize, tokens: usize },
    #[error("empty token in token map for label `{0}`")]
    EmptyToken(String),
    #[error("{n} examples exceed the permutation cap of {PERMUTATION_CAP}; sample orderings instead of enumerating")]
    PermutationCapExceeded { n: usize },
    #[error("sequence of length {len} is not a permutation of 0..{len}")]
    NotAPermutation { len: usize },
    #[error("permutation index {index} out of range for {n} examples ({count} orderings)")]
    PermutationIndexOutOfRange { index: u64, n: usize, count: u64 },
    #[error("training pool has {pool} items, need at least {k}")]
    InsufficientPool { pool: usize, k: usize },
    #[error("example label `{0}` is not in the label space")]
    UnknownLabel(String),
    #[error("prompt spec has no label space")]
    MissingLabelSpace,
    #[error("unknown format id `{0}`")]
    UnknownFormatId(String),
    #[error("duplicate format id `{0}` in corpus")]
    DuplicateFormatId(String),
    #[error("format corpus line {line}: {source}")]
    CorpusParse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("reading format corpus: {0}")]
    CorpusIo(#[from] std::io::Error),
}

// ─── Formats ─────────────────────────────────────────────────────────────────

/// Textual template a prompt is rendered through.
///
/// `example_template` must contain `{input}` and `{label}` exactly once;
/// `test_template` must contain `{input}` exactly once and no `{label}`,
/// so the rendered prompt ends at the answer cue. `separator` joins the
/// preamble (when non-empty), example blocks, and the test block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptFormat {
    pub format_id: String,
    #[serde(default)]
    pub preamble: String,
    pub example_template: String,
    pub test_template: String,
    pub separator: String,
}

impl PromptFormat {
    /// Checks both templates' placeholder structure.
    pub fn validate(&self) -> Result<(), PromptError> {
        parse_template(&self.example_template, TemplateKind::Example)?;
        parse_template(&self.test_template, TemplateKind::Test)?;
        Ok(())
    }
}

/// One training example as it appears in the prompt: the input text and
/// the rendered answer (a label name for classification, an answer span
/// for generation).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub input: String,
    pub label: String,
}

impl LabeledExample {
    pub fn new(input: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            input: input.into(),
            label: label.into(),
        }
    }
}

/// Ordered label names for a classification task, with the single token
/// that stands in for each label when reading next-token probabilities.
///
/// By default the token is the label name's first whitespace word;
/// multi-token names are scored by that first token only. Two labels
/// resolving to the same token make scoring ambiguous and are rejected
/// at construction; supply an explicit token map to disambiguate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LabelSpaceRaw", into = "LabelSpaceRaw")]
pub struct LabelSpace {
    names: Vec<String>,
    token_map: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LabelSpaceRaw {
    names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    token_map: Option<Vec<String>>,
}

impl From<LabelSpace> for LabelSpaceRaw {
    fn from(s: LabelSpace) -> Self {
        Self {
            names: s.names,
            token_map: s.token_map,
        }
    }
}

impl TryFrom<LabelSpaceRaw> for LabelSpace {
    type Error = PromptError;

    fn try_from(raw: LabelSpaceRaw) -> Result<Self, PromptError> {
        match raw.token_map {
            Some(tokens) => LabelSpace::with_token_map(raw.names, tokens),
            None => LabelSpace::new(raw.names),
        }
    }
}

impl LabelSpace {
    /// Label space scoring each label by the first whitespace word of its
    /// name.
    pub fn new(names: Vec<String>) -> Result<Self, PromptError> {
        let space = Self {
            names,
            token_map: None,
        };
        space.validate()?;
        Ok(space)
    }

    /// Label space with explicit scoring tokens, one per label name.
    pub fn with_token_map(names: Vec<String>, tokens: Vec<String>) -> Result<Self, PromptError> {
        if tokens.len() != names.len() {
            return Err(PromptError::TokenMapLength {
                names: names.len(),
                tokens: tokens.len(),
            });
        }
        let space = Self {
            names,
            token_map: Some(tokens),
        };
        space.validate()?;
        Ok(space)
    }

    fn validate(&self) -> Result<(), PromptError> {
        if self.names.is_empty() {
            return Err(PromptError::EmptyLabelSpace);
        }
        let mut seen_names = BTreeSet::new();
        for name in &self.names {
            if name.trim().is_empty() {
                return Err(PromptError::EmptyLabelName);
            }
            if !seen_names.insert(name.as_str()) {
                return Err(PromptError::DuplicateLabelName(name.clone()));
            }
        }
        let mut token_owner: Vec<(&str, &str)> = Vec::new();
        for i in 0..self.names.len() {
            let token = self.token_of(i)?;
            if let Some(&(_, owner)) = token_owner.iter().find(|(t, _)| *t == token) {
                return Err(PromptError::SharedFirstToken {
                    a: owner.to_string(),
                    b: self.names[i].clone(),
                    token: token.to_string(),
                });
            }
            token_owner.push((token, &self.names[i]));
        }
        Ok(())
    }

    fn token_of(&self, i: usize) -> Result<&str, PromptError> {
        match &self.token_map {
            Some(map) => {
                let t = map[i].as_str();
                if t.is_empty() {
                    return Err(PromptError::EmptyToken(self.names[i].clone()));
                }
                Ok(t)
            }
            // Validated non-blank, so a first word exists.
            None => Ok(self.names[i].split_whitespace().next().unwrap()),
        }
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

    pub fn name(&self, class: ClassId) -> &str {
        &self.names[class.0]
    }

    /// Scoring token for a class.
    pub fn first_token(&self, class: ClassId) -> &str {
        self.token_of(class.0).expect("validated at construction")
    }

    pub fn first_tokens(&self) -> Vec<&str> {
        (0..self.names.len())
            .map(|i| self.token_of(i).expect("validated"))
            .collect()
    }

    pub fn class_of_name(&self, name: &str) -> Option<ClassId> {
        self.names.iter().position(|n| n == name).map(ClassId)
    }

    pub fn classes(&self) -> impl Iterator<Item = ClassId> {
        (0..self.names.len()).map(ClassId)
    }
}

/// Everything needed to render one prompt: the format, the ordered
/// training examples (their order is the permutation), and the test
/// input. `label_space` is present for classification and drives label
/// probability queries; generation tasks leave it empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub format: PromptFormat,
    pub examples: Vec<LabeledExample>,
    pub test_input: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_space: Option<LabelSpace>,
}

impl PromptSpec {
    /// Same prompt with the test slot replaced; used for content-free
    /// probes.
    pub fn with_test_input(&self, test_input: impl Into<String>) -> Self {
        Self {
            test_input: test_input.into(),
            ..self.clone()
        }
    }

    pub fn require_label_space(&self) -> Result<&LabelSpace, PromptError> {
        self.label_space
            .as_ref()
            .ok_or(PromptError::MissingLabelSpace)
    }

    /// Example labels in prompt order.
    pub fn ordered_labels(&self) -> Vec<String> {
        self.examples.iter().map(|e| e.label.clone()).collect()
    }
}

// ─── Template parsing and rendering ──────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Input,
    Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TemplateKind {
    Example,
    Test,
}

impl TemplateKind {
    fn name(self) -> &'static str {
        match self {
            TemplateKind::Example => "example",
            TemplateKind::Test => "test",
        }
    }
}

fn parse_template(template: &str, kind: TemplateKind) -> Result<Vec<Segment>, PromptError> {
    let mut segments = Vec::new();
    let mut literal = String::new();
    let mut rest = template;
    let mut offset = 0;
    while let Some(open) = rest.find('{') {
        literal.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after.find('}').ok_or(PromptError::UnclosedBrace {
            template: kind.name(),
            at: offset + open,
        })?;
        let name = &after[..close];
        if !literal.is_empty() {
            segments.push(Segment::Literal(std::mem::take(&mut literal)));
        }
        match name {
            "input" => segments.push(Segment::Input),
            "label" => segments.push(Segment::Label),
            other => {
                return Err(PromptError::UnknownPlaceholder {
                    template: kind.name(),
                    name: other.to_string(),
                })
            }
        }
        offset += open + 1 + close + 1;
        rest = &after[close + 1..];
    }
    literal.push_str(rest);
    if !literal.is_empty() {
        segments.push(Segment::Literal(literal));
    }
    let inputs = segments.iter().filter(|s| **s == Segment::Input).count();
    let labels = segments.iter().filter(|s| **s == Segment::Label).count();
    let (want_inputs, want_labels) = match kind {
        TemplateKind::Example => (1, 1),
        TemplateKind::Test => (1, 0),
    };
    if inputs != want_inputs {
        return Err(PromptError::PlaceholderCount {
            template: kind.name(),
            placeholder: "input",
            found: inputs,
        });
    }
    if labels != want_labels {
        return Err(PromptError::PlaceholderCount {
            template: kind.name(),
            placeholder: "label",
            found: labels,
        });
    }
    Ok(segments)
}

fn fill(segments: &[Segment], input: &str, label: Option<&str>) -> String {
    let mut out = String::new();
    for segment in segments {
        match segment {
            Segment::Literal(text) => out.push_str(text),
            Segment::Input => out.push_str(input),
            Segment::Label => out.push_str(label.expect("label slot in example template only")),
        }
    }
    out
}

/// Renders the prompt: preamble (when non-empty), example blocks in
/// order, and the test block, joined by the format separator. The output
/// ends at the answer cue with no trailing whitespace added.
pub fn render(spec: &PromptSpec) -> Result<String, PromptError> {
    let example_segments = parse_template(&spec.format.example_template, TemplateKind::Example)?;
    let test_segments = parse_template(&spec.format.test_template, TemplateKind::Test)?;
    let mut blocks = Vec::with_capacity(spec.examples.len() + 2);
    if !spec.format.preamble.is_empty() {
        blocks.push(spec.format.preamble.clone());
    }
    for example in &spec.examples {
        if example.input.is_empty() {
            return Err(PromptError::EmptyExampleInput);
        }
        blocks.push(fill(
            &example_segments,
            &example.input,
            Some(&example.label),
        ));
    }
    blocks.push(fill(&test_segments, &spec.test_input, None));
    Ok(blocks.join(&spec.format.separator))
}

// ─── Permutations ────────────────────────────────────────────────────────────

/// `n!` as a `u64`; callers stay below [`PERMUTATION_CAP`], far from
/// overflow.
pub fn factorial(n: usize) -> u64 {
    (1..=n as u64).product()
}

/// All orderings of `0..n` in lexicographic order. `n` is capped at
/// [`PERMUTATION_CAP`].
pub fn permutation_indices(n: usize) -> Result<Vec<Vec<usize>>, PromptError> {
    if n > PERMUTATION_CAP {
        return Err(PromptError::PermutationCapExceeded { n });
    }
    let count = factorial(n);
    let mut out = Vec::with_capacity(count as usize);
    for index in 0..count {
        out.push(nth_permutation(n, index)?);
    }
    Ok(out)
}

/// All orderings of the examples, lexicographic by original position.
pub fn enumerate_permutations<T: Clone>(examples: &[T]) -> Result<Vec<Vec<T>>, PromptError> {
    Ok(permutation_indices(examples.len())?
        .into_iter()
        .map(|perm| perm.into_iter().map(|i| examples[i].clone()).collect())
        .collect())
}

/// The `index`-th ordering of `0..n` in lexicographic order, decoded via
/// the factorial number system.
pub fn nth_permutation(n: usize, index: u64) -> Result<Vec<usize>, PromptError> {
    if n > PERMUTATION_CAP {
        return Err(PromptError::PermutationCapExceeded { n });
    }
    let count = factorial(n);
    if index >= count {
        return Err(PromptError::PermutationIndexOutOfRange { index, n, count });
    }
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut digits = Vec::with_capacity(n);
    let mut rem = index;
    for place in (0..n).rev() {
        let f = factorial(place);
        digits.push((rem / f) as usize);
        rem %= f;
    }
    Ok(digits.into_iter().map(|d| remaining.remove(d)).collect())
}

/// Lexicographic rank of an ordering of `0..len` (inverse of
/// [`nth_permutation`]).
pub fn permutation_index(perm: &[usize]) -> Result<u64, PromptError> {
    let n = perm.len();
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(PromptError::NotAPermutation { len: n });
        }
        seen[p] = true;
    }
    let mut index = 0u64;
    for (i, &p) in perm.iter().enumerate() {
        let smaller_unused = perm[i + 1..].iter().filter(|&&q| q < p).count() as u64;
        index += smaller_unused * factorial(n - 1 - i);
    }
    Ok(index)
}

/// Reorders examples by a permutation of their positions.
pub fn apply_permutation<T: Clone>(examples: &[T], perm: &[usize]) -> Result<Vec<T>, PromptError> {
    if perm.len() != examples.len() {
        return Err(PromptError::NotAPermutation { len: perm.len() });
    }
    let mut seen = vec![false; perm.len()];
    let mut out = Vec::with_capacity(perm.len());
    for &p in perm {
        if p >= examples.len() || seen[p] {
            return Err(PromptError::NotAPermutation { len: perm.len() });
        }
        seen[p] = true;
        out.push(examples[p].clone());
    }
    Ok(out)
}

// ─── Training-set sampling ───────────────────────────────────────────────────

/// Draws `n_sets` training sets of `k` distinct pool items each,
/// reproducibly from `seed`. Draws are independent across sets (the same
/// item may appear in two different sets) and deliberately ignore class
/// balance: unbalanced label compositions are part of what downstream
/// diagnostics measure.
pub fn sample_training_sets<T: Clone>(
    pool: &[T],
    k: usize,
    n_sets: usize,
    seed: u64,
) -> Result<Vec<Vec<T>>, PromptError> {
    if pool.len() < k {
        return Err(PromptError::InsufficientPool {
            pool: pool.len(),
            k,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sets = Vec::with_capacity(n_sets);
    for _ in 0..n_sets {
        let picked = rand::seq::index::sample(&mut rng, pool.len(), k);
        sets.push(picked.iter().map(|i| pool[i].clone()).collect());
    }
    Ok(sets)
}

/// Counts examples per class in label-space order.
pub fn class_balance(spec: &PromptSpec) -> Result<Vec<(ClassId, usize)>, PromptError> {
    let space = spec.require_label_space()?;
    let mut counts: Vec<(ClassId, usize)> = space.classes().map(|c| (c, 0)).collect();
    for example in &spec.examples {
        let class = space
            .class_of_name(&example.label)
            .ok_or_else(|| PromptError::UnknownLabel(example.label.clone()))?;
        counts[class.0].1 += 1;
    }
    Ok(counts)
}

// ─── Format corpus ───────────────────────────────────────────────────────────

/// One record of the checked-in format corpus: a format plus, for
/// classification formats, the label names it was designed for.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusFormat {
    #[serde(flatten)]
    pub format: PromptFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CorpusFormat {
    pub fn label_space(&self) -> Result<Option<LabelSpace>, PromptError> {
        self.label_names.clone().map(LabelSpace::new).transpose()
    }
}

/// The corpus shipped with the crate.
pub fn builtin_corpus() -> Vec<CorpusFormat> {
    parse_format_corpus(include_str!("../data/formats.jsonl")).expect("builtin corpus is valid")
}

/// Parses a line-delimited format corpus, validating each format and the
/// uniqueness of format ids.
pub fn parse_format_corpus(text: &str) -> Result<Vec<CorpusFormat>, PromptError> {
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: CorpusFormat =
            serde_json::from_str(line).map_err(|source| PromptError::CorpusParse {
                line: i + 1,
                source,
            })?;
        record.format.validate()?;
        if let Some(names) = &record.label_names {
            LabelSpace::new(names.clone())?;
        }
        if !ids.insert(record.format.format_id.clone()) {
            return Err(PromptError::DuplicateFormatId(
                record.format.format_id.clone(),
            ));
        }
        out.push(record);
    }
    Ok(out)
}

pub fn load_format_corpus(path: &Path) -> Result<Vec<CorpusFormat>, PromptError> {
    parse_format_corpus(&std::fs::read_to_string(path)?)
}

pub fn find_format<'a>(
    corpus: &'a [CorpusFormat],
    format_id: &str,
) -> Result<&'a CorpusFormat, PromptError> {
    corpus
        .iter()
        .find(|f| f.format.format_id == format_id)
        .ok_or_else(|| PromptError::UnknownFormatId(format_id.to_string()))
}
