//! Tab-separated phase files.
//!
//! ```text
//! #dim 4
//! 1	member:m1	0:1.5 3:2
//! 0	member:m2,job:j7	1:-0.25
//! ```
//!
//! Columns are the label, comma-separated `type:id` entity pairs, and
//! space-separated `index:value` features. Either of the last two may be
//! empty. Files are named `phase_<t>.tsv`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{LabeledExample, PhaseDataset};
use crate::sparse::SparseVector;

pub fn phase_file_name(t: usize) -> String {
    format!("phase_{t}.tsv")
}

/// Phase index encoded in a `phase_<t>.tsv` file name.
pub fn phase_index_of(path: &Path) -> Option<usize> {
    path.file_name()?
        .to_str()?
        .strip_prefix("phase_")?
        .strip_suffix(".tsv")?
        .parse()
        .ok()
}

pub fn parse_phase(path: &Path) -> Result<PhaseDataset> {
    let t = phase_index_of(path).ok_or_else(|| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        message: "file name is not phase_<t>.tsv".into(),
    })?;
    let text = fs::read_to_string(path)?;
    parse_phase_str(&text, t, &path.display().to_string())
}

/// Parses file contents; `origin` names the source in error messages.
pub fn parse_phase_str(text: &str, phase_index: usize, origin: &str) -> Result<PhaseDataset> {
    let err = |line: usize, message: String| Error::Parse {
        path: origin.to_string(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let dim = loop {
        match lines.next() {
            None => return Err(err(0, "missing `#dim <p>` header".into())),
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((n, l)) => {
                let p = l
                    .strip_prefix("#dim")
                    .map(str::trim)
                    .ok_or_else(|| err(n, "expected `#dim <p>` header".into()))?;
                break p.parse::<usize>().map_err(|e| err(n, format!("bad dimension: {e}")))?;
            }
        }
    };

    let mut examples = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(err(n, format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let label = match fields[0] {
            "0" => 0,
            "1" => 1,
            other => return Err(err(n, format!("label must be 0 or 1, found `{other}`"))),
        };

        let mut entity_ids = BTreeMap::new();
        for pair in fields[1].split(',').filter(|s| !s.is_empty()) {
            let (ty, id) = pair
                .split_once(':')
                .ok_or_else(|| err(n, format!("entity `{pair}` is not type:id")))?;
            if ty.is_empty() || id.is_empty() {
                return Err(err(n, format!("empty entity type or id in `{pair}`")));
            }
            if entity_ids.insert(ty.to_string(), id.to_string()).is_some() {
                return Err(err(n, format!("duplicate entity type `{ty}`")));
            }
        }

        let mut pairs = Vec::new();
        for token in fields[2].split(' ').filter(|s| !s.is_empty()) {
            let (idx, val) = token
                .split_once(':')
                .ok_or_else(|| err(n, format!("feature `{token}` is not index:value")))?;
            let idx: usize = idx.parse().map_err(|e| err(n, format!("bad index `{idx}`: {e}")))?;
            let val: f64 = val.parse().map_err(|e| err(n, format!("bad value `{val}`: {e}")))?;
            if idx >= dim {
                return Err(err(n, format!("index {idx} out of range for dim {dim}")));
            }
            pairs.push((idx, val));
        }
        let features = SparseVector::new(dim, pairs).map_err(|e| err(n, e.to_string()))?;
        examples.push(LabeledExample {
            features,
            label,
            entity_ids,
            offset: 0.0,
        });
    }
    PhaseDataset::new(phase_index, dim, examples)
}

/// Inverse of [`parse_phase_str`]. Offsets are not part of the format and
/// must be zero; entity names may not contain separators.
pub fn serialize_phase(data: &PhaseDataset) -> Result<String> {
    let mut out = format!("#dim {}\n", data.feature_dim);
    for (i, ex) in data.examples.iter().enumerate() {
        if ex.offset != 0.0 {
            return Err(Error::Validation(format!("example {i} has a non-zero offset")));
        }
        let mut entities = Vec::with_capacity(ex.entity_ids.len());
        for (ty, id) in &ex.entity_ids {
            let bad = |s: &str| s.is_empty() || s.contains([':', ',', '\t', '\n', '\r']);
            if bad(ty) || bad(id) {
                return Err(Error::Validation(format!("example {i} has an unencodable entity `{ty}:{id}`")));
            }
            entities.push(format!("{ty}:{id}"));
        }
        let _ = write!(out, "{}\t{}\t", ex.label, entities.join(","));
        let features: Vec<String> = ex.features.iter().map(|(j, v)| format!("{j}:{v}")).collect();
        out.push_str(&features.join(" "));
        out.push('\n');
    }
    Ok(out)
}

pub fn write_phase(dir: &Path, data: &PhaseDataset) -> Result<PathBuf> {
    let path = dir.join(phase_file_name(data.phase_index));
    fs::write(&path, serialize_phase(data)?)?;
    Ok(path)
}

/// Loads every `phase_<t>.tsv` in `dir`; phases must be contiguous from 0.
pub fn load_stream(dir: &Path) -> Result<Vec<PhaseDataset>> {
    let mut paths: Vec<(usize, PathBuf)> = fs::read_dir(dir)?
        .filter_map(|entry| {
            let path = entry.ok()?.path();
            phase_index_of(&path).map(|t| (t, path))
        })
        .collect();
    paths.sort();
    for (expected, (t, _)) in paths.iter().enumerate() {
        if *t != expected {
            return Err(Error::Validation(format!(
                "phase files in {} are not contiguous: missing phase_{expected}.tsv",
                dir.display()
            )));
        }
    }
    paths.iter().map(|(_, p)| parse_phase(p)).collect()
}

pub fn write_stream(dir: &Path, stream: &[PhaseDataset]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for data in stream {
        write_phase(dir, data)?;
    }
    Ok(())
}
