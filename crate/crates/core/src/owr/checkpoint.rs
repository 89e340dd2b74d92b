//! Per-step checkpoints so interrupted runs can resume.
//!
//! A checkpoint for completed step `t` is four files in one directory:
//! `step_t.owrw` (extractor, previous extractor and rotation-head weights),
//! `step_t.json` (everything else), and `step_t.exemplars.owrd` /
//! `step_t.reserved.owrd` (stored samples).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ClassModel, ExemplarMemory, MethodConfig, OwrModel};
use crate::datagen::io::{read_dataset, write_dataset};
use crate::datagen::{Dataset, ImageShape, Sample};
use crate::dg::{DgConfig, DgPlugin, RotationHead, TransformPool};
use crate::error::{Error, Result};
use crate::numerics::{snapshot, Mlp, MlpSpec, Tensor};

const FORMAT: u32 = 1;

#[derive(Serialize, Deserialize)]
struct PluginMeta {
    config: DgConfig,
    pool: TransformPool,
    iterations: u64,
    head: Option<(MlpSpec, f64)>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format: u32,
    step: usize,
    seed: u64,
    config: MethodConfig,
    shape: ImageShape,
    extractor: MlpSpec,
    has_previous: bool,
    classes: ClassModel,
    known: BTreeSet<u32>,
    memory_capacity: usize,
    plugin: Option<PluginMeta>,
}

/// A restored model together with the plugin state it was trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: OwrModel,
    pub plugin: Option<DgPlugin>,
}

fn paths(dir: &Path, t: usize) -> [PathBuf; 4] {
    [
        dir.join(format!("step_{t}.owrw")),
        dir.join(format!("step_{t}.json")),
        dir.join(format!("step_{t}.exemplars.owrd")),
        dir.join(format!("step_{t}.reserved.owrd")),
    ]
}

fn to_dataset<'a>(shape: ImageShape, samples: impl Iterator<Item = &'a Sample>) -> Result<Dataset> {
    Dataset::from_samples(shape, samples.cloned().collect())
}

/// Writes the state after the model's last completed step and returns the
/// sidecar path.
pub fn save_checkpoint(dir: &Path, model: &OwrModel, plugin: Option<&DgPlugin>) -> Result<PathBuf> {
    if model.step == 0 {
        return Err(Error::Contract("no completed step to checkpoint".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let t = model.step - 1;
    let [weights, sidecar, exemplars, reserved] = paths(dir, t);

    let mut tensors: Vec<&Tensor> = model.extractor.params();
    if let Some(prev) = &model.previous {
        tensors.extend(prev.params());
    }
    let head = plugin.and_then(|p| p.head.as_ref());
    if let Some(h) = head {
        tensors.extend(h.mlp.params());
    }
    snapshot::write(&weights, &tensors)?;

    write_dataset(&exemplars, &to_dataset(model.shape, model.memory.samples())?)?;
    write_dataset(&reserved, &to_dataset(model.shape, model.reserved.values().flatten())?)?;

    let meta = Sidecar {
        format: FORMAT,
        step: model.step,
        seed: model.seed,
        config: model.config.clone(),
        shape: model.shape,
        extractor: model.extractor.spec().clone(),
        has_previous: model.previous.is_some(),
        classes: model.classes.clone(),
        known: model.known.clone(),
        memory_capacity: model.memory.capacity,
        plugin: plugin.map(|p| PluginMeta {
            config: p.config.clone(),
            pool: p.pool.clone(),
            iterations: p.iterations,
            head: head.map(|h| (h.mlp.spec().clone(), h.xi)),
        }),
    };
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&sidecar, text).map_err(|e| Error::io(&sidecar, e))?;
    Ok(sidecar)
}

fn take_mlp(spec: &MlpSpec, tensors: &mut std::vec::IntoIter<Tensor>, name: &str) -> Result<Mlp> {
    let mut mlp = Mlp::new(spec)?;
    let count = mlp.params().len();
    let chunk: Vec<Tensor> = tensors.by_ref().take(count).collect();
    if chunk.len() != count {
        return Err(Error::Parse {
            source_name: name.to_string(),
            offset: 0,
            message: format!("weight file holds too few tensors for a {:?} network", spec.layer_widths),
        });
    }
    mlp.load_params(&chunk)?;
    Ok(mlp)
}

/// Restores the state saved after step `t`.
pub fn load_checkpoint(dir: &Path, t: usize) -> Result<Checkpoint> {
    let [weights, sidecar, exemplars, reserved] = paths(dir, t);
    let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let meta: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Parse {
        source_name: sidecar.display().to_string(),
        offset: 0,
        message: e.to_string(),
    })?;
    if meta.format != FORMAT {
        return Err(Error::Config(format!("{}: unsupported checkpoint format {}", sidecar.display(), meta.format)));
    }
    let name = weights.display().to_string();
    let mut tensors = snapshot::read(&weights)?.into_iter();
    let extractor = take_mlp(&meta.extractor, &mut tensors, &name)?;
    let previous = if meta.has_previous {
        Some(take_mlp(&meta.extractor, &mut tensors, &name)?)
    } else {
        None
    };
    let plugin = match meta.plugin {
        None => None,
        Some(p) => {
            let head = match p.head {
                Some((spec, xi)) => Some(RotationHead {
                    mlp: take_mlp(&spec, &mut tensors, &name)?,
                    xi,
                }),
                None => None,
            };
            Some(DgPlugin {
                config: p.config,
                pool: p.pool,
                head,
                iterations: p.iterations,
            })
        }
    };
    if tensors.next().is_some() {
        return Err(Error::Parse {
            source_name: name,
            offset: 0,
            message: "weight file holds more tensors than the sidecar describes".into(),
        });
    }

    let mut memory = ExemplarMemory::new(meta.memory_capacity);
    for s in read_dataset(&exemplars)?.samples() {
        memory.per_class.entry(s.class_id).or_default().push(s.clone());
    }
    let mut held: BTreeMap<u32, Vec<Sample>> = BTreeMap::new();
    for s in read_dataset(&reserved)?.samples() {
        held.entry(s.class_id).or_default().push(s.clone());
    }
    let model = OwrModel {
        config: meta.config,
        shape: meta.shape,
        extractor,
        previous,
        classes: meta.classes,
        known: meta.known,
        step: meta.step,
        memory,
        reserved: held,
        seed: meta.seed,
    };
    Ok(Checkpoint { model, plugin })
}

/// Highest step index with a complete checkpoint in `dir`.
pub fn latest_checkpoint(dir: &Path) -> Option<usize> {
    let entries = fs::read_dir(dir).ok()?;
    entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            name.strip_prefix("step_")?.strip_suffix(".json")?.parse::<usize>().ok()
        })
        .filter(|&t| paths(dir, t).iter().all(|p| p.exists()))
        .max()
}
