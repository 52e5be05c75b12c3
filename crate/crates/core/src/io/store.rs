//! On-disk model store: one directory per round.
//!
//! ```text
//! <store>/round_<t>/meta
//! <store>/round_<t>/fixed.model
//! <store>/round_<t>/random_<entity_type>.models
//! <store>/round_<t>/buffer.records
//! ```
//!
//! Every file is JSON lines. The first line is a header carrying the format
//! version and the number of records that follow, which catches truncation.
//! Floats are written in shortest round-trip form and read back exactly.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hessian::{HessianMode, PriorDistribution};
use crate::model::{GlmModel, GlmixModel, PhaseDataset};
use crate::scheduler::{ScheduleConfig, StreamState};
use crate::trainer::GlmixPriors;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMeta {
    pub version: u32,
    /// Next phase to consume; the directory is named after `t - 1`.
    pub t: usize,
    pub counter: usize,
    pub lambda_f: f64,
    pub hessian_mode: HessianMode,
    pub has_model: bool,
    /// Entity types present in the model and in the priors respectively.
    pub model_entity_types: Vec<String>,
    pub prior_entity_types: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ComponentRecord {
    id: Option<String>,
    model: Option<GlmModel>,
    prior: Option<PriorDistribution>,
}

pub fn round_dir(store: &Path, t: usize) -> PathBuf {
    store.join(format!("round_{t}"))
}

fn integrity(path: &Path, message: impl Into<String>) -> Error {
    Error::Integrity {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = Vec::new();
    let header = Header {
        version: FORMAT_VERSION,
        records: records.len(),
    };
    let to_err = |e: serde_json::Error| integrity(path, e.to_string());
    serde_json::to_writer(&mut out, &header).map_err(to_err)?;
    out.push(b'\n');
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(to_err)?;
        out.push(b'\n');
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&out)?;
    file.sync_all()?;
    Ok(())
}

fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Header = lines
        .next()
        .ok_or_else(|| integrity(path, "empty file"))
        .and_then(|l| serde_json::from_str(l).map_err(|e| integrity(path, format!("bad header: {e}"))))?;
    if header.version != FORMAT_VERSION {
        return Err(Error::StoreVersion {
            found: header.version,
            expected: FORMAT_VERSION,
        });
    }
    let records = lines
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| integrity(path, format!("record {i}: {e}"))))
        .collect::<Result<Vec<T>>>()?;
    if records.len() != header.records || !text.ends_with('\n') {
        return Err(integrity(
            path,
            format!("expected {} records, found {}", header.records, records.len()),
        ));
    }
    Ok(records)
}

fn random_file(entity_type: &str) -> String {
    format!("random_{entity_type}.models")
}

/// Writes `state` as round `state.t - 1` (the round that produced it).
///
/// Files go to a temporary directory that is renamed into place, so a
/// crash never leaves a half-written round behind.
pub fn save_round(store: &Path, state: &StreamState, config: &ScheduleConfig) -> Result<PathBuf> {
    let t = state.t.saturating_sub(1);
    fs::create_dir_all(store)?;
    let final_dir = round_dir(store, t);
    let tmp = store.join(format!(".round_{t}.tmp"));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;

    let model_entity_types: Vec<String> =
        state.current.iter().flat_map(|m| m.random_effects.keys().cloned()).collect();
    let prior_entity_types: Vec<String> =
        state.priors.iter().flat_map(|p| p.random.keys().cloned()).collect();
    let mut entity_types: Vec<String> =
        model_entity_types.iter().chain(&prior_entity_types).cloned().collect();
    entity_types.sort();
    entity_types.dedup();

    let meta = RoundMeta {
        version: FORMAT_VERSION,
        t: state.t,
        counter: state.counter,
        lambda_f: config.lambda_f,
        hessian_mode: config.hessian_mode,
        has_model: state.current.is_some(),
        model_entity_types,
        prior_entity_types,
    };
    write_records(&tmp.join("meta"), &[meta])?;

    write_records(
        &tmp.join("fixed.model"),
        &[ComponentRecord {
            id: None,
            model: state.current.as_ref().map(|m| m.fixed.clone()),
            prior: state.priors.as_ref().map(|p| p.fixed.clone()),
        }],
    )?;

    let no_models = BTreeMap::new();
    let no_priors = BTreeMap::new();
    for ty in &entity_types {
        let models = state.current.as_ref().and_then(|m| m.random_effects.get(ty)).unwrap_or(&no_models);
        let priors = state.priors.as_ref().and_then(|p| p.random.get(ty)).unwrap_or(&no_priors);
        let mut ids: Vec<&String> = models.keys().chain(priors.keys()).collect();
        ids.sort();
        ids.dedup();
        let records: Vec<ComponentRecord> = ids
            .into_iter()
            .map(|id| ComponentRecord {
                id: Some(id.clone()),
                model: models.get(id).cloned(),
                prior: priors.get(id).cloned(),
            })
            .collect();
        write_records(&tmp.join(random_file(ty)), &records)?;
    }

    let buffer: Vec<&PhaseDataset> = state.history.iter().collect();
    write_records(&tmp.join("buffer.records"), &buffer)?;

    if final_dir.exists() {
        fs::remove_dir_all(&final_dir)?;
    }
    fs::rename(&tmp, &final_dir)?;
    Ok(final_dir)
}

/// Reads a round directory back into the state it was saved from.
pub fn load_round(dir: &Path) -> Result<(StreamState, RoundMeta)> {
    let meta_path = dir.join("meta");
    let mut meta: Vec<RoundMeta> = read_records(&meta_path)?;
    if meta.len() != 1 {
        return Err(integrity(&meta_path, "expected exactly one meta record"));
    }
    let meta = meta.remove(0);
    if meta.version != FORMAT_VERSION {
        return Err(Error::StoreVersion {
            found: meta.version,
            expected: FORMAT_VERSION,
        });
    }

    let fixed_path = dir.join("fixed.model");
    let mut fixed: Vec<ComponentRecord> = read_records(&fixed_path)?;
    if fixed.len() != 1 {
        return Err(integrity(&fixed_path, "expected exactly one fixed record"));
    }
    let fixed = fixed.remove(0);

    let mut random_models = BTreeMap::new();
    let mut random_priors = BTreeMap::new();
    let mut entity_types: Vec<&String> =
        meta.model_entity_types.iter().chain(&meta.prior_entity_types).collect();
    entity_types.sort();
    entity_types.dedup();
    for ty in entity_types {
        let path = dir.join(random_file(ty));
        let records: Vec<ComponentRecord> = read_records(&path)?;
        let mut models = BTreeMap::new();
        let mut priors = BTreeMap::new();
        for r in records {
            let id = r.id.ok_or_else(|| integrity(&path, "random-effect record without id"))?;
            if let Some(m) = r.model {
                models.insert(id.clone(), m);
            }
            if let Some(p) = r.prior {
                p.validate()?;
                priors.insert(id, p);
            }
        }
        if meta.model_entity_types.contains(ty) {
            random_models.insert(ty.clone(), models);
        } else if !models.is_empty() {
            return Err(integrity(&path, "models for an entity type missing from meta"));
        }
        if meta.prior_entity_types.contains(ty) {
            random_priors.insert(ty.clone(), priors);
        } else if !priors.is_empty() {
            return Err(integrity(&path, "priors for an entity type missing from meta"));
        }
    }

    let current = match (meta.has_model, fixed.model) {
        (true, Some(fixed_model)) => Some(GlmixModel {
            fixed: fixed_model,
            random_effects: random_models,
        }),
        (false, None) => None,
        _ => return Err(integrity(&fixed_path, "model presence disagrees with meta")),
    };
    let priors = match fixed.prior {
        Some(prior) => {
            prior.validate()?;
            Some(GlmixPriors {
                fixed: prior,
                random: random_priors,
            })
        }
        None => None,
    };
    let history: Vec<PhaseDataset> = read_records(&dir.join("buffer.records"))?;
    for d in &history {
        d.validate()?;
    }

    Ok((
        StreamState {
            t: meta.t,
            counter: meta.counter,
            current,
            priors,
            history: VecDeque::from(history),
        },
        meta,
    ))
}

/// Directory of the newest round in `store`, if any.
pub fn latest_round(store: &Path) -> Result<Option<PathBuf>> {
    if !store.exists() {
        return Ok(None);
    }
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in fs::read_dir(store)? {
        let path = entry?.path();
        let t = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("round_"))
            .and_then(|n| n.parse::<usize>().ok());
        if let (Some(t), true) = (t, path.is_dir()) {
            if best.as_ref().map_or(true, |(b, _)| t > *b) {
                best = Some((t, path));
            }
        }
    }
    Ok(best.map(|(_, p)| p))
}

pub fn load_latest(store: &Path) -> Result<Option<(StreamState, RoundMeta)>> {
    latest_round(store)?.map(|dir| load_round(&dir)).transpose()
}
