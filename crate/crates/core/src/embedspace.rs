//! Concept-space bookkeeping and word-vector tables.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Uniform};

use crate::error::{shape_err, Result, TceError};
use crate::rng::{stream, Stream};

/// An (attribute, object) pair by index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Concept {
    pub attr: usize,
    pub obj: usize,
}

impl Concept {
    pub fn new(attr: usize, obj: usize) -> Self {
        Self { attr, obj }
    }
}

/// Attribute and object vocabularies plus the seen/unseen split.
///
/// `seen` and `unseen` are kept sorted and are disjoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptSpace {
    attributes: Vec<String>,
    objects: Vec<String>,
    seen: Vec<Concept>,
    unseen: Vec<Concept>,
}

impl ConceptSpace {
    pub fn new(
        attributes: Vec<String>,
        objects: Vec<String>,
        seen: impl IntoIterator<Item = Concept>,
        unseen: impl IntoIterator<Item = Concept>,
    ) -> Result<Self> {
        check_names("attribute", &attributes)?;
        check_names("object", &objects)?;
        let seen: BTreeSet<Concept> = seen.into_iter().collect();
        let unseen: BTreeSet<Concept> = unseen.into_iter().collect();
        for c in seen.iter().chain(&unseen) {
            if c.attr >= attributes.len() || c.obj >= objects.len() {
                return Err(TceError::Index(format!(
                    "concept ({}, {}) outside {}x{} space",
                    c.attr,
                    c.obj,
                    attributes.len(),
                    objects.len()
                )));
            }
        }
        if let Some(c) = seen.intersection(&unseen).next() {
            return Err(TceError::Validation(format!(
                "concept {}|{} is both seen and unseen",
                attributes[c.attr], objects[c.obj]
            )));
        }
        if seen.is_empty() {
            return Err(TceError::Validation("no seen concepts".into()));
        }
        Ok(Self {
            attributes,
            objects,
            seen: seen.into_iter().collect(),
            unseen: unseen.into_iter().collect(),
        })
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn objects(&self) -> &[String] {
        &self.objects
    }

    pub fn num_attrs(&self) -> usize {
        self.attributes.len()
    }

    pub fn num_objs(&self) -> usize {
        self.objects.len()
    }

    pub fn seen(&self) -> &[Concept] {
        &self.seen
    }

    pub fn unseen(&self) -> &[Concept] {
        &self.unseen
    }

    pub fn is_seen(&self, c: Concept) -> bool {
        self.seen.binary_search(&c).is_ok()
    }

    pub fn is_unseen(&self, c: Concept) -> bool {
        self.unseen.binary_search(&c).is_ok()
    }

    /// Seen and unseen concepts together, sorted by (attr, obj). This is the
    /// column enumeration used for scoring.
    pub fn all_concepts(&self) -> Vec<Concept> {
        let mut all: Vec<Concept> = self.seen.iter().chain(&self.unseen).copied().collect();
        all.sort_unstable();
        all
    }

    pub fn attr_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a == name)
    }

    pub fn obj_index(&self, name: &str) -> Option<usize> {
        self.objects.iter().position(|o| o == name)
    }

    pub fn concept_name(&self, c: Concept) -> String {
        format!("{}|{}", self.attributes[c.attr], self.objects[c.obj])
    }

    /// Every attribute and every object must occur in some seen concept,
    /// otherwise it cannot be learned.
    pub fn check_coverage(&self) -> Result<()> {
        let mut attrs = vec![false; self.attributes.len()];
        let mut objs = vec![false; self.objects.len()];
        for c in &self.seen {
            attrs[c.attr] = true;
            objs[c.obj] = true;
        }
        if let Some(a) = attrs.iter().position(|x| !x) {
            return Err(TceError::Validation(format!(
                "attribute {} appears in no seen concept",
                self.attributes[a]
            )));
        }
        if let Some(o) = objs.iter().position(|x| !x) {
            return Err(TceError::Validation(format!(
                "object {} appears in no seen concept",
                self.objects[o]
            )));
        }
        Ok(())
    }
}

fn check_names(kind: &str, names: &[String]) -> Result<()> {
    if names.is_empty() {
        return Err(TceError::Validation(format!("empty {kind} list")));
    }
    let mut set = HashSet::new();
    for n in names {
        if n.is_empty() || n.chars().any(|c| c.is_whitespace() || ",|;".contains(c)) {
            return Err(TceError::Validation(format!("invalid {kind} name {n:?}")));
        }
        if !set.insert(n.as_str()) {
            return Err(TceError::Validation(format!("duplicate {kind} name {n:?}")));
        }
    }
    Ok(())
}

const SPLIT_RETRIES: usize = 10_000;

/// Randomly splits `attributes x objects` into seen and unseen concepts.
///
/// `round(seen_fraction * m * n)` concepts are seen, and the seen set must
/// cover every attribute and object; sampling is retried until it does.
pub fn split_concepts(
    attributes: Vec<String>,
    objects: Vec<String>,
    seen_fraction: f64,
    seed: u64,
) -> Result<ConceptSpace> {
    if !(seen_fraction > 0.0 && seen_fraction < 1.0) {
        return Err(TceError::Config(format!(
            "seen fraction must lie in (0, 1), got {seen_fraction}"
        )));
    }
    let (m, n) = (attributes.len(), objects.len());
    let mut all: Vec<Concept> = (0..m).flat_map(|a| (0..n).map(move |o| Concept::new(a, o))).collect();
    let k = (seen_fraction * (m * n) as f64).round() as usize;
    if k == 0 || k < m.max(n) {
        return Err(TceError::Config(format!(
            "{k} seen concepts cannot cover {m} attributes and {n} objects"
        )));
    }
    let mut rng = stream(seed, Stream::Split);
    for _ in 0..SPLIT_RETRIES {
        all.shuffle(&mut rng);
        let space = ConceptSpace::new(
            attributes.clone(),
            objects.clone(),
            all[..k].iter().copied(),
            all[k..].iter().copied(),
        )?;
        if space.check_coverage().is_ok() {
            return Ok(space);
        }
    }
    Err(TceError::Config(format!(
        "no covering split with {k} seen concepts found after {SPLIT_RETRIES} attempts"
    )))
}

/// Semantic embedding of a concept: `e_a + e_o`.
pub fn concept_semantic(e_a: &[f64], e_o: &[f64]) -> Result<Vec<f64>> {
    if e_a.len() != e_o.len() {
        return Err(shape_err!(
            "attribute vector has {} dims, object vector {}",
            e_a.len(),
            e_o.len()
        ));
    }
    Ok(e_a.iter().zip(e_o).map(|(a, o)| a + o).collect())
}

/// Vectors read from a whitespace-separated `token v1 ... vD` stream.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedVectors {
    pub dim: Option<usize>,
    pub vectors: HashMap<String, Vec<f64>>,
}

/// Parses the text word-vector format. When `keep` is given only those tokens
/// are retained, but every line is still validated.
pub fn parse_word_vectors<R: BufRead>(reader: R, keep: Option<&HashSet<String>>) -> Result<ParsedVectors> {
    let mut out = ParsedVectors::default();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| TceError::Format(format!("line {}: {e}", lineno + 1)))?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else {
            continue;
        };
        let values = fields
            .map(|f| match f.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(TceError::Format(format!("line {}: bad component {f:?}", lineno + 1))),
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.is_empty() {
            return Err(TceError::Format(format!(
                "line {}: token {token:?} has no components",
                lineno + 1
            )));
        }
        match out.dim {
            None => out.dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(TceError::Format(format!(
                    "line {}: {} components, earlier lines have {d}",
                    lineno + 1,
                    values.len()
                )))
            }
            Some(_) => {}
        }
        if keep.is_none_or(|k| k.contains(token)) {
            out.vectors.entry(token.to_string()).or_insert(values);
        }
    }
    Ok(out)
}

/// Word vectors for a fixed vocabulary. Lookups of the tokens it was built
/// for never fail.
#[derive(Debug, Clone, PartialEq)]
pub struct WordVecTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    fallback: Vec<String>,
}

const FALLBACK_RANGE: f64 = 0.1;

impl WordVecTable {
    /// Builds a table for `required` from parsed vectors; tokens that are
    /// missing get a seeded uniform vector in [-0.1, 0.1].
    pub fn from_parsed(parsed: ParsedVectors, required: &[String], default_dim: usize, seed: u64) -> Result<Self> {
        let dim = parsed.dim.unwrap_or(default_dim);
        if dim == 0 {
            return Err(TceError::Config("word vector dimension must be positive".into()));
        }
        let mut rng = stream(seed, Stream::Fallback);
        let dist = Uniform::new_inclusive(-FALLBACK_RANGE, FALLBACK_RANGE).expect("finite");
        let mut vectors = HashMap::with_capacity(required.len());
        let mut fallback = Vec::new();
        let mut source = parsed.vectors;
        for token in required {
            if vectors.contains_key(token) {
                continue;
            }
            let v = match source.remove(token) {
                Some(v) => v,
                None => {
                    log::warn!("no word vector for {token:?}, using random fallback");
                    fallback.push(token.clone());
                    (0..dim).map(|_| dist.sample(&mut rng)).collect()
                }
            };
            vectors.insert(token.clone(), v);
        }
        Ok(Self { dim, vectors, fallback })
    }

    /// Table where every token uses the random fallback.
    pub fn random(required: &[String], dim: usize, seed: u64) -> Result<Self> {
        Self::from_parsed(ParsedVectors::default(), required, dim, seed)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    /// Tokens that were not found in the source file.
    pub fn fallback_tokens(&self) -> &[String] {
        &self.fallback
    }

    /// Stacks the vectors of `tokens` as matrix rows.
    pub fn matrix(&self, tokens: &[String]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((tokens.len(), self.dim));
        for (mut row, t) in out.rows_mut().into_iter().zip(tokens) {
            let v = self
                .get(t)
                .ok_or_else(|| TceError::Index(format!("no vector for token {t:?}")))?;
            row.assign(&ndarray::ArrayView1::from(v));
        }
        Ok(out)
    }
}

/// Reads a word-vector file, keeping only `required` tokens.
pub fn load_word_vectors(path: &Path, required: &[String], default_dim: usize, seed: u64) -> Result<WordVecTable> {
    let file = File::open(path).map_err(|e| TceError::io(path.display().to_string(), e))?;
    let keep: HashSet<String> = required.iter().cloned().collect();
    let parsed = parse_word_vectors(BufReader::new(file), Some(&keep))?;
    WordVecTable::from_parsed(parsed, required, default_dim, seed)
}

/// Renders `token v1 ... vD` lines; values use the shortest representation
/// that parses back to the same `f64`.
pub fn format_word_vectors<'a>(entries: impl IntoIterator<Item = (&'a str, &'a [f64])>) -> String {
    let mut out = String::new();
    for (token, values) in entries {
        out.push_str(token);
        for v in values {
            out.push(' ');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}
