//! Data model and line-delimited record I/O for image corpora, query sets,
//! attribute schemes, and prediction files.
//!
//! Every file is one JSON object per line. Blank lines are skipped; line
//! numbers in errors are 1-based and count blank lines.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::attributes::{Prediction, PredictionSet, PredictionTable};
use crate::error::{Error, Result};

/// Label string used for the neutral (N/A) category in every file format.
pub const NEUTRAL_LABEL: &str = "na";

/// A demographic attribute value: one of `m` groups, or neutral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AttributeLabel {
    Group(usize),
    Neutral,
}

impl AttributeLabel {
    /// Signed weight in the two-group case: group 0 is +1, group 1 is -1,
    /// neutral is 0. Groups beyond 1 also weigh 0.
    pub fn sign(self) -> i64 {
        match self {
            AttributeLabel::Group(0) => 1,
            AttributeLabel::Group(1) => -1,
            _ => 0,
        }
    }

    pub fn group(self) -> Option<usize> {
        match self {
            AttributeLabel::Group(g) => Some(g),
            AttributeLabel::Neutral => None,
        }
    }

    pub fn is_neutral(self) -> bool {
        self == AttributeLabel::Neutral
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeScheme {
    name: String,
    group_names: Vec<String>,
    allows_neutral: bool,
}

impl AttributeScheme {
    pub fn new(
        name: impl Into<String>,
        group_names: Vec<String>,
        allows_neutral: bool,
    ) -> Result<Self> {
        if group_names.len() < 2 {
            return Err(Error::InvalidScheme(format!(
                "need at least 2 groups, got {}",
                group_names.len()
            )));
        }
        let mut seen = HashSet::new();
        for g in &group_names {
            if g.is_empty() || g == NEUTRAL_LABEL {
                return Err(Error::InvalidScheme(format!("reserved or empty group name {g:?}")));
            }
            if !seen.insert(g.as_str()) {
                return Err(Error::InvalidScheme(format!("duplicate group name {g:?}")));
            }
        }
        Ok(Self { name: name.into(), group_names, allows_neutral })
    }

    /// The binary `gender` scheme: group 0 `male`, group 1 `female`, with N/A.
    pub fn gender() -> Self {
        Self::new("gender", vec!["male".into(), "female".into()], true)
            .expect("static scheme is valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn group_names(&self) -> &[String] {
        &self.group_names
    }

    /// Number of non-neutral groups.
    pub fn m(&self) -> usize {
        self.group_names.len()
    }

    pub fn allows_neutral(&self) -> bool {
        self.allows_neutral
    }

    pub fn parse_label(&self, s: &str) -> Option<AttributeLabel> {
        if s == NEUTRAL_LABEL {
            return self.allows_neutral.then_some(AttributeLabel::Neutral);
        }
        self.group_names.iter().position(|g| g == s).map(AttributeLabel::Group)
    }

    pub fn label_name(&self, label: AttributeLabel) -> &str {
        match label {
            AttributeLabel::Group(g) => &self.group_names[g],
            AttributeLabel::Neutral => NEUTRAL_LABEL,
        }
    }

    /// Checks that `label` is representable in this scheme.
    pub fn check(&self, label: AttributeLabel) -> Result<()> {
        match label {
            AttributeLabel::Group(g) if g >= self.m() => Err(Error::InvalidInput(format!(
                "group index {g} out of range for scheme {:?} with {} groups",
                self.name,
                self.m()
            ))),
            AttributeLabel::Neutral if !self.allows_neutral => Err(Error::InvalidInput(format!(
                "scheme {:?} has no neutral category",
                self.name
            ))),
            _ => Ok(()),
        }
    }

    /// Class order used for tie-breaking: groups by index, neutral last.
    pub fn classes(&self) -> Vec<AttributeLabel> {
        let mut out: Vec<_> = (0..self.m()).map(AttributeLabel::Group).collect();
        if self.allows_neutral {
            out.push(AttributeLabel::Neutral);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub embedding: Vec<f64>,
    pub label: Option<AttributeLabel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub id: String,
    pub text: String,
    pub embedding: Vec<f64>,
    pub relevant_ids: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub d: usize,
    pub images: Vec<ImageRecord>,
    pub queries: Vec<QueryRecord>,
    pub scheme: AttributeScheme,
}

impl Corpus {
    /// Ground-truth labels of every labeled image.
    pub fn labels(&self) -> LabelIndex {
        LabelIndex::new(
            self.scheme.m(),
            self.images.iter().filter_map(|im| im.label.map(|l| (im.id.clone(), l))),
        )
    }

    pub fn query(&self, id: &str) -> Option<&QueryRecord> {
        self.queries.iter().find(|q| q.id == id)
    }
}

/// Lookup table from image id to attribute label, plus the group count
/// needed to measure imbalance over all groups (including empty ones).
#[derive(Debug, Clone, Default)]
pub struct LabelIndex {
    groups: usize,
    map: HashMap<String, AttributeLabel>,
}

impl LabelIndex {
    pub fn new(groups: usize, entries: impl IntoIterator<Item = (String, AttributeLabel)>) -> Self {
        Self { groups, map: entries.into_iter().collect() }
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn get(&self, id: &str) -> Result<AttributeLabel> {
        self.map.get(id).copied().ok_or_else(|| Error::MissingLabel(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl From<&PredictionSet> for LabelIndex {
    fn from(p: &PredictionSet) -> Self {
        LabelIndex::new(
            p.groups(),
            p.iter().map(|(id, pred)| (id.to_string(), pred.label)),
        )
    }
}

#[derive(Deserialize)]
struct RawImage {
    id: String,
    vec: Vec<f64>,
    #[serde(default)]
    label: Option<String>,
}

#[derive(Serialize)]
struct RawImageOut<'a> {
    id: &'a str,
    vec: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<&'a str>,
}

#[derive(Serialize, Deserialize)]
struct RawQuery {
    id: String,
    text: String,
    vec: Vec<f64>,
    relevant: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct RawScheme {
    name: String,
    groups: Vec<String>,
    allows_neutral: bool,
}

#[derive(Serialize, Deserialize)]
struct RawPrediction {
    id: String,
    label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    query: Option<String>,
}

#[derive(Deserialize)]
struct RawPrompted {
    query: String,
    label: String,
    vec: Vec<f64>,
}

fn lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String)>> {
    reader
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|s| (i + 1, s)).map_err(Error::from))
        .filter(|r| !matches!(r, Ok((_, s)) if s.trim().is_empty()))
}

fn decode<T: for<'de> Deserialize<'de>>(line: usize, text: &str) -> Result<T> {
    serde_json::from_str(text)
        .map_err(|e| Error::MalformedRecord { line, reason: e.to_string() })
}

fn check_vector(line: usize, v: &[f64], d: usize) -> Result<()> {
    if v.len() != d {
        return Err(Error::MalformedRecord {
            line,
            reason: format!("expected {d} components, got {}", v.len()),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::MalformedRecord { line, reason: "non-finite component".into() });
    }
    Ok(())
}

fn check_id(line: usize, id: &str, seen: &mut HashSet<String>) -> Result<()> {
    if id.is_empty() {
        return Err(Error::MalformedRecord { line, reason: "empty id".into() });
    }
    if !seen.insert(id.to_string()) {
        return Err(Error::DuplicateId { line, id: id.to_string() });
    }
    Ok(())
}

/// Length of the `vec` array on the first non-blank line, if any.
pub fn sniff_dimension(text: &str) -> Result<Option<usize>> {
    #[derive(Deserialize)]
    struct VecOnly {
        vec: Vec<f64>,
    }
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: VecOnly = decode(i + 1, line)?;
        return Ok(Some(rec.vec.len()));
    }
    Ok(None)
}

pub fn parse_image_records<R: BufRead>(
    reader: R,
    d: usize,
    scheme: &AttributeScheme,
) -> Result<Vec<ImageRecord>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for item in lines(reader) {
        let (line, text) = item?;
        let raw: RawImage = decode(line, &text)?;
        check_id(line, &raw.id, &mut seen)?;
        check_vector(line, &raw.vec, d)?;
        let label = match raw.label {
            None => None,
            Some(s) => Some(
                scheme
                    .parse_label(&s)
                    .ok_or(Error::UnknownLabel { line, label: s })?,
            ),
        };
        out.push(ImageRecord { id: raw.id, embedding: raw.vec, label });
    }
    Ok(out)
}

pub fn parse_query_records<R: BufRead>(reader: R, d: usize) -> Result<Vec<QueryRecord>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for item in lines(reader) {
        let (line, text) = item?;
        let raw: RawQuery = decode(line, &text)?;
        check_id(line, &raw.id, &mut seen)?;
        check_vector(line, &raw.vec, d)?;
        out.push(QueryRecord {
            id: raw.id,
            text: raw.text,
            embedding: raw.vec,
            relevant_ids: raw.relevant.into_iter().collect(),
        });
    }
    Ok(out)
}

/// Reads a scheme file: a single record with `name`, `groups`, `allows_neutral`.
pub fn parse_scheme<R: BufRead>(reader: R) -> Result<AttributeScheme> {
    let mut first = None;
    for item in lines(reader) {
        let (line, text) = item?;
        if first.is_some() {
            return Err(Error::MalformedRecord { line, reason: "scheme file holds one record".into() });
        }
        first = Some(decode::<RawScheme>(line, &text)?);
    }
    let raw = first.ok_or(Error::MalformedRecord { line: 1, reason: "empty scheme file".into() })?;
    AttributeScheme::new(raw.name, raw.groups, raw.allows_neutral)
}

/// Reads vectors that must carry a label, e.g. class embeddings. Returns
/// `(id, label, vector)` triples in file order.
pub fn parse_labeled_vectors<R: BufRead>(
    reader: R,
    d: usize,
    scheme: &AttributeScheme,
) -> Result<Vec<(String, AttributeLabel, Vec<f64>)>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for item in lines(reader) {
        let (line, text) = item?;
        let raw: RawImage = decode(line, &text)?;
        check_id(line, &raw.id, &mut seen)?;
        check_vector(line, &raw.vec, d)?;
        let s = raw.label.ok_or(Error::MalformedRecord { line, reason: "missing label".into() })?;
        let label = scheme.parse_label(&s).ok_or(Error::UnknownLabel { line, label: s })?;
        out.push((raw.id, label, raw.vec));
    }
    Ok(out)
}

/// Prompted embeddings grouped by query id.
pub type PromptedVectors = BTreeMap<String, Vec<(AttributeLabel, Vec<f64>)>>;

/// Reads prompted-query embeddings: records with `query`, `label`, `vec`.
/// Returns `query -> [(label, vector)]` in file order per query.
pub fn parse_prompted_vectors<R: BufRead>(
    reader: R,
    d: usize,
    scheme: &AttributeScheme,
) -> Result<PromptedVectors> {
    let mut out = PromptedVectors::new();
    for item in lines(reader) {
        let (line, text) = item?;
        let raw: RawPrompted = decode(line, &text)?;
        check_vector(line, &raw.vec, d)?;
        let label = scheme
            .parse_label(&raw.label)
            .ok_or(Error::UnknownLabel { line, label: raw.label })?;
        out.entry(raw.query).or_default().push((label, raw.vec));
    }
    Ok(out)
}

/// Reads a prediction file. Records without a `query` field go to the global
/// set; records with one apply only to that query's candidate pool.
/// A missing `confidence` reads as 1.
pub fn parse_prediction_records<R: BufRead>(
    reader: R,
    scheme: &AttributeScheme,
) -> Result<PredictionTable> {
    let mut table = PredictionTable::new(scheme.m());
    let mut seen = HashSet::new();
    for item in lines(reader) {
        let (line, text) = item?;
        let raw: RawPrediction = decode(line, &text)?;
        let key = format!("{}\u{0}{}", raw.query.as_deref().unwrap_or(""), raw.id);
        if raw.id.is_empty() {
            return Err(Error::MalformedRecord { line, reason: "empty id".into() });
        }
        if !seen.insert(key) {
            return Err(Error::DuplicateId { line, id: raw.id });
        }
        let label = scheme
            .parse_label(&raw.label)
            .ok_or(Error::UnknownLabel { line, label: raw.label })?;
        let confidence = raw.confidence.unwrap_or(1.0);
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::MalformedRecord { line, reason: format!("confidence {confidence} outside [0, 1]") });
        }
        let set = match raw.query {
            Some(q) => table.query_mut(&q),
            None => table.global_mut(),
        };
        set.insert(raw.id, Prediction { label, confidence });
    }
    Ok(table)
}

pub fn write_image_records<W: Write>(
    mut w: W,
    images: &[ImageRecord],
    scheme: &AttributeScheme,
) -> Result<()> {
    for im in images {
        let raw = RawImageOut {
            id: &im.id,
            vec: &im.embedding,
            label: im.label.map(|l| scheme.label_name(l)),
        };
        serde_json::to_writer(&mut w, &raw).map_err(|e| Error::Io(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_query_records<W: Write>(mut w: W, queries: &[QueryRecord]) -> Result<()> {
    for q in queries {
        let raw = RawQuery {
            id: q.id.clone(),
            text: q.text.clone(),
            vec: q.embedding.clone(),
            relevant: q.relevant_ids.iter().cloned().collect(),
        };
        serde_json::to_writer(&mut w, &raw).map_err(|e| Error::Io(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_scheme<W: Write>(mut w: W, scheme: &AttributeScheme) -> Result<()> {
    let raw = RawScheme {
        name: scheme.name.clone(),
        groups: scheme.group_names.clone(),
        allows_neutral: scheme.allows_neutral,
    };
    serde_json::to_writer(&mut w, &raw).map_err(|e| Error::Io(e.to_string()))?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Writes a prediction set. When `query` is given every record carries it.
pub fn write_prediction_records<W: Write>(
    mut w: W,
    predictions: &PredictionSet,
    scheme: &AttributeScheme,
    query: Option<&str>,
) -> Result<()> {
    for (id, p) in predictions.iter() {
        let raw = RawPrediction {
            id: id.to_string(),
            label: scheme.label_name(p.label).to_string(),
            confidence: Some(p.confidence),
            query: query.map(str::to_string),
        };
        serde_json::to_writer(&mut w, &raw).map_err(|e| Error::Io(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupCount {
    pub group: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryCoverage {
    pub query_id: String,
    pub relevant: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub k: usize,
    pub images: usize,
    pub queries: usize,
    pub group_counts: Vec<GroupCount>,
    pub neutral: usize,
    pub unlabeled: usize,
    /// Share of group 0 among non-neutral labeled images; `None` when there are none.
    pub alpha: Option<f64>,
    pub coverage: Vec<QueryCoverage>,
    pub warnings: Vec<String>,
}

const NORM_TOLERANCE: f64 = 1e-3;

/// Cross-checks a parsed corpus for retrieval at bag size `k`.
///
/// Unknown relevant ids are errors; thin groups and non-unit embeddings are
/// warnings.
pub fn validate_corpus(corpus: &Corpus, k: usize) -> Result<ValidationReport> {
    let ids: HashSet<&str> = corpus.images.iter().map(|im| im.id.as_str()).collect();
    let mut coverage = Vec::with_capacity(corpus.queries.len());
    for q in &corpus.queries {
        if let Some(missing) = q.relevant_ids.iter().find(|r| !ids.contains(r.as_str())) {
            return Err(Error::UnknownRelevantId {
                query_id: q.id.clone(),
                image_id: missing.clone(),
            });
        }
        coverage.push(QueryCoverage { query_id: q.id.clone(), relevant: q.relevant_ids.len() });
    }

    let m = corpus.scheme.m();
    let mut counts = vec![0usize; m];
    let (mut neutral, mut unlabeled) = (0, 0);
    let mut off_norm = 0usize;
    for im in &corpus.images {
        match im.label {
            Some(AttributeLabel::Group(g)) if g < m => counts[g] += 1,
            Some(AttributeLabel::Group(g)) => {
                return Err(Error::InvalidInput(format!("image {:?} has group {g} >= {m}", im.id)))
            }
            Some(AttributeLabel::Neutral) => neutral += 1,
            None => unlabeled += 1,
        }
        let norm = im.embedding.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            off_norm += 1;
        }
    }

    let mut warnings = Vec::new();
    let labeled: usize = counts.iter().sum();
    if labeled > 0 {
        for (g, &c) in counts.iter().enumerate() {
            if (c as f64) < k as f64 / 2.0 {
                warnings.push(format!(
                    "group {} has {c} < K/2",
                    corpus.scheme.group_names()[g]
                ));
            }
        }
    }
    if off_norm > 0 {
        warnings.push(format!(
            "{off_norm} embedding(s) deviate from unit norm by more than {NORM_TOLERANCE}"
        ));
    }

    Ok(ValidationReport {
        k,
        images: corpus.images.len(),
        queries: corpus.queries.len(),
        group_counts: counts
            .iter()
            .zip(corpus.scheme.group_names())
            .map(|(&count, g)| GroupCount { group: g.clone(), count })
            .collect(),
        neutral,
        unlabeled,
        alpha: (labeled > 0).then(|| counts[0] as f64 / labeled as f64),
        coverage,
        warnings,
    })
}
