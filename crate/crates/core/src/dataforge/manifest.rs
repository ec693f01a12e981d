//! Dataset manifest format.
//!
//! ```text
//! attrs: a1,a2
//! objs: o1,o2
//! feature_dim: 3
//! seen: a1|o1;a2|o2
//! unseen: a1|o2;a2|o1
//! encoding: text            (optional; "bin" needs a features sidecar)
//! features: data.bin        (bin only, relative to the manifest)
//! train,a1,o1,0.5,1.25,-3
//! test,a2,o1,0.0,2.0,1e-3
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Header lines come
//! first. In the binary encoding rows carry only `split,attr,obj` and the
//! sidecar holds `rows x feature_dim` little-endian `f32` values.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{Dataset, Split};
use crate::embedspace::{Concept, ConceptSpace};
use crate::error::{Result, TceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Encoding {
    #[default]
    Text,
    Bin,
}

impl Encoding {
    pub fn as_str(self) -> &'static str {
        match self {
            Encoding::Text => "text",
            Encoding::Bin => "bin",
        }
    }
}

impl std::str::FromStr for Encoding {
    type Err = TceError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Encoding::Text),
            "bin" => Ok(Encoding::Bin),
            other => Err(TceError::Config(format!("unknown encoding {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    /// 1-based line number in the manifest.
    pub line: usize,
    pub split: Split,
    pub attr: String,
    pub obj: String,
    /// Empty in the binary encoding.
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub attrs: Vec<String>,
    pub objs: Vec<String>,
    pub feature_dim: usize,
    pub seen: Vec<(String, String)>,
    pub unseen: Vec<(String, String)>,
    pub encoding: Encoding,
    pub sidecar: Option<String>,
    pub rows: Vec<ManifestRow>,
}

const KEYS: [&str; 7] = ["attrs", "objs", "feature_dim", "seen", "unseen", "encoding", "features"];

fn format_err(line: usize, msg: impl std::fmt::Display) -> TceError {
    TceError::Format(format!("line {line}: {msg}"))
}

fn split_list(value: &str, sep: char) -> Vec<String> {
    value
        .split(sep)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

fn parse_pairs(value: &str, line: usize) -> Result<Vec<(String, String)>> {
    split_list(value, ';')
        .into_iter()
        .map(|p| match p.split_once('|') {
            Some((a, o)) if !a.is_empty() && !o.is_empty() && !o.contains('|') => {
                Ok((a.trim().to_string(), o.trim().to_string()))
            }
            _ => Err(format_err(line, format!("bad concept {p:?}, expected attr|obj"))),
        })
        .collect()
}

/// Parses manifest text. Structural checks only; names are resolved by
/// [`build_dataset`].
pub fn parse_manifest(text: &str) -> Result<Manifest> {
    let mut header: HashMap<&str, (usize, &str)> = HashMap::new();
    let mut raw_rows: Vec<(usize, &str)> = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let is_row = Split::ALL
            .iter()
            .any(|s| l.strip_prefix(s.as_str()).is_some_and(|r| r.starts_with(',')));
        if is_row {
            raw_rows.push((line, l));
            continue;
        }
        if !raw_rows.is_empty() {
            return Err(format_err(line, "header line after sample rows"));
        }
        let (key, value) = l
            .split_once(':')
            .ok_or_else(|| format_err(line, format!("expected `key: value` or a sample row, got {l:?}")))?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(format_err(line, format!("unknown header key {key:?}")));
        }
        if header.insert(key, (line, value.trim())).is_some() {
            return Err(format_err(line, format!("duplicate header key {key:?}")));
        }
    }
    let required = |key: &str| -> Result<(usize, &str)> {
        header
            .get(key)
            .copied()
            .ok_or_else(|| TceError::Format(format!("missing header key {key:?}")))
    };
    let attrs = split_list(required("attrs")?.1, ',');
    let objs = split_list(required("objs")?.1, ',');
    let (fd_line, fd) = required("feature_dim")?;
    let feature_dim: usize = fd
        .parse()
        .ok()
        .filter(|&d| d > 0)
        .ok_or_else(|| format_err(fd_line, format!("feature_dim must be a positive integer, got {fd:?}")))?;
    let (seen_line, seen) = required("seen")?;
    let seen = parse_pairs(seen, seen_line)?;
    let unseen = match header.get("unseen") {
        Some(&(l, v)) => parse_pairs(v, l)?,
        None => Vec::new(),
    };
    let encoding = match header.get("encoding") {
        Some(&(l, v)) => v
            .parse()
            .map_err(|_| format_err(l, format!("unknown encoding {v:?}")))?,
        None => Encoding::Text,
    };
    let sidecar = header.get("features").map(|&(_, v)| v.to_string());
    match (encoding, &sidecar) {
        (Encoding::Bin, None) => return Err(TceError::Format("binary encoding needs a `features:` sidecar".into())),
        (Encoding::Text, Some(_)) => {
            return Err(TceError::Format("`features:` sidecar given for text encoding".into()))
        }
        _ => {}
    }
    let mut rows = Vec::with_capacity(raw_rows.len());
    for (line, l) in raw_rows {
        let mut fields = l.split(',').map(str::trim);
        let split: Split = fields
            .next()
            .unwrap_or_default()
            .parse()
            .map_err(|_| format_err(line, "bad split"))?;
        let attr = fields.next().unwrap_or_default().to_string();
        let obj = fields.next().unwrap_or_default().to_string();
        if attr.is_empty() || obj.is_empty() {
            return Err(format_err(line, "row needs split,attr,obj"));
        }
        let features = fields
            .map(|f| match f.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(format_err(line, format!("bad feature value {f:?}"))),
            })
            .collect::<Result<Vec<f64>>>()?;
        let expected = match encoding {
            Encoding::Text => feature_dim,
            Encoding::Bin => 0,
        };
        if features.len() != expected {
            return Err(format_err(
                line,
                format!("{} feature values, expected {expected}", features.len()),
            ));
        }
        rows.push(ManifestRow {
            line,
            split,
            attr,
            obj,
            features,
        });
    }
    Ok(Manifest {
        attrs,
        objs,
        feature_dim,
        seen,
        unseen,
        encoding,
        sidecar,
        rows,
    })
}

/// Decodes `rows x dim` little-endian `f32` values.
pub fn decode_sidecar(bytes: &[u8], rows: usize, dim: usize) -> Result<Array2<f64>> {
    let expected = rows
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| TceError::Format("sidecar size overflows".into()))?;
    if bytes.len() != expected {
        return Err(TceError::Format(format!(
            "sidecar holds {} bytes, expected {expected} for {rows} rows of {dim} values",
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if let Some(k) = values.iter().position(|v| !v.is_finite()) {
        return Err(TceError::Format(format!(
            "non-finite value in sidecar row {}",
            k / dim.max(1)
        )));
    }
    Array2::from_shape_vec((rows, dim), values).map_err(|e| TceError::Format(e.to_string()))
}

/// Encodes features as little-endian `f32`. Values that are not exactly
/// representable in `f32` are rounded.
pub fn encode_sidecar(features: &Array2<f64>) -> Vec<u8> {
    features.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

fn resolve(names: &[String], name: &str, kind: &str, line: usize) -> Result<usize> {
    names
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| TceError::Validation(format!("line {line}: unknown {kind} {name:?}")))
}

/// Builds a validated dataset. `sidecar` supplies the features of a binary
/// manifest and must be `None` for text manifests.
pub fn build_dataset(manifest: &Manifest, sidecar: Option<Array2<f64>>) -> Result<Dataset> {
    let pairs = |list: &[(String, String)]| -> Result<Vec<Concept>> {
        list.iter()
            .map(|(a, o)| {
                Ok(Concept::new(
                    resolve(&manifest.attrs, a, "attribute", 0)?,
                    resolve(&manifest.objs, o, "object", 0)?,
                ))
            })
            .collect()
    };
    let space = ConceptSpace::new(
        manifest.attrs.clone(),
        manifest.objs.clone(),
        pairs(&manifest.seen)?,
        pairs(&manifest.unseen)?,
    )?;
    let n = manifest.rows.len();
    let mut labels = Vec::with_capacity(n);
    let mut splits = Vec::with_capacity(n);
    for row in &manifest.rows {
        let c = Concept::new(
            resolve(&manifest.attrs, &row.attr, "attribute", row.line)?,
            resolve(&manifest.objs, &row.obj, "object", row.line)?,
        );
        if row.split == Split::Train && !space.is_seen(c) {
            return Err(TceError::Validation(format!(
                "line {}: train row labeled with unseen concept {}|{}",
                row.line, row.attr, row.obj
            )));
        }
        if !space.is_seen(c) && !space.is_unseen(c) {
            return Err(TceError::Validation(format!(
                "line {}: concept {}|{} is neither seen nor unseen",
                row.line, row.attr, row.obj
            )));
        }
        labels.push(c);
        splits.push(row.split);
    }
    let features = match (manifest.encoding, sidecar) {
        (Encoding::Text, None) => {
            let flat: Vec<f64> = manifest.rows.iter().flat_map(|r| r.features.iter().copied()).collect();
            Array2::from_shape_vec((n, manifest.feature_dim), flat).map_err(|e| TceError::Format(e.to_string()))?
        }
        (Encoding::Bin, Some(f)) => {
            if f.dim() != (n, manifest.feature_dim) {
                return Err(TceError::Format(format!(
                    "sidecar is {}x{}, manifest declares {n}x{}",
                    f.nrows(),
                    f.ncols(),
                    manifest.feature_dim
                )));
            }
            f
        }
        (Encoding::Text, Some(_)) => {
            return Err(TceError::Precondition("text manifest does not take a sidecar".into()))
        }
        (Encoding::Bin, None) => return Err(TceError::Precondition("binary manifest needs its sidecar".into())),
    };
    let dataset = Dataset::new(space, features, labels, splits)?;
    dataset.check_mixed_splits()?;
    Ok(dataset)
}

pub fn load_feature_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| TceError::io(path.display().to_string(), e))?;
    let manifest = parse_manifest(&text)?;
    let sidecar = match &manifest.sidecar {
        Some(name) => {
            let p = path.parent().unwrap_or(Path::new(".")).join(name);
            let bytes = fs::read(&p).map_err(|e| TceError::io(p.display().to_string(), e))?;
            Some(decode_sidecar(&bytes, manifest.rows.len(), manifest.feature_dim)?)
        }
        None => None,
    };
    build_dataset(&manifest, sidecar)
}

/// Renders the manifest text of `dataset`. For the binary encoding the rows
/// omit features and the header points at `sidecar`.
pub fn render_manifest(dataset: &Dataset, encoding: Encoding, sidecar: Option<&str>) -> Result<String> {
    let space = dataset.space();
    let pairs = |cs: &[Concept]| cs.iter().map(|&c| space.concept_name(c)).collect::<Vec<_>>().join(";");
    let mut out = String::new();
    let w = &mut out;
    writeln!(w, "attrs: {}", space.attributes().join(",")).expect("string write");
    writeln!(w, "objs: {}", space.objects().join(",")).expect("string write");
    writeln!(w, "feature_dim: {}", dataset.feature_dim()).expect("string write");
    writeln!(w, "seen: {}", pairs(space.seen())).expect("string write");
    writeln!(w, "unseen: {}", pairs(space.unseen())).expect("string write");
    match (encoding, sidecar) {
        (Encoding::Text, _) => {}
        (Encoding::Bin, Some(name)) => {
            writeln!(w, "encoding: bin\nfeatures: {name}").expect("string write");
        }
        (Encoding::Bin, None) => return Err(TceError::Precondition("binary encoding needs a sidecar name".into())),
    }
    for (i, (&c, &s)) in dataset.labels().iter().zip(dataset.splits()).enumerate() {
        write!(w, "{s},{},{}", space.attributes()[c.attr], space.objects()[c.obj]).expect("string write");
        if encoding == Encoding::Text {
            for v in dataset.raw_features().row(i) {
                write!(w, ",{v}").expect("string write");
            }
        }
        w.push('\n');
    }
    Ok(out)
}

/// Writes `dataset` to `path`; the binary encoding puts the features in a
/// sidecar next to it named after the manifest with a `.bin` extension.
pub fn write_feature_dataset(dataset: &Dataset, path: &Path, encoding: Encoding) -> Result<()> {
    let io = |p: &Path, e| TceError::io(p.display().to_string(), e);
    let sidecar_name = match encoding {
        Encoding::Text => None,
        Encoding::Bin => {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| TceError::Config(format!("bad manifest path {}", path.display())))?;
            Some(format!("{stem}.bin"))
        }
    };
    let text = render_manifest(dataset, encoding, sidecar_name.as_deref())?;
    fs::write(path, text).map_err(|e| io(path, e))?;
    if let Some(name) = sidecar_name {
        let p = path.parent().unwrap_or(Path::new(".")).join(name);
        fs::write(&p, encode_sidecar(dataset.raw_features())).map_err(|e| io(&p, e))?;
    }
    Ok(())
}
