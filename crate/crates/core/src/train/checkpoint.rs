//! Checkpoint directory: `model.json` (variant), `profile.txt`, a
//! `params.manifest` index with one `name file` line per tensor, the tensors
//! themselves in RVT1, and `optimizer.json` with the step count when
//! optimizer moments are saved.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::AdamState;
use crate::arch::{build_model, ArchProfile, Model, ModelVariant};
use crate::error::{Error, Result};
use crate::tensor::{read_tensor, write_tensor, Rng, Tensor};

const MANIFEST: &str = "params.manifest";

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    variant: ModelVariant,
}

#[derive(Serialize, Deserialize)]
struct OptimizerMeta {
    step: u64,
}

fn named_tensors(model: &mut Model<f32>) -> Vec<(String, &mut Tensor<f32>)> {
    model.params_mut().into_iter().map(|p| (p.name, p.value)).collect()
}

pub fn save_checkpoint(dir: &Path, model: &mut Model<f32>, profile: &ArchProfile, opt: Option<&AdamState<f32>>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = ModelMeta { variant: model.plan().variant };
    let p = dir.join("model.json");
    std::fs::write(&p, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&p, e))?;
    profile.save(&dir.join("profile.txt"))?;
    let mut manifest = String::new();
    let mut write = |name: &str, t: &Tensor<f32>| -> Result<()> {
        let file = format!("{name}.rvt");
        write_tensor(&dir.join(&file), t)?;
        writeln!(manifest, "{name} {file}").unwrap();
        Ok(())
    };
    let names: Vec<String> = model.params_mut().into_iter().map(|p| p.name).collect();
    for (name, t) in named_tensors(model) {
        write(&name, t)?;
    }
    for (name, t) in model.buffers_mut() {
        write(&name, t)?;
    }
    if let Some(state) = opt.filter(|s| !s.m.is_empty()) {
        for ((name, m), v) in names.iter().zip(&state.m).zip(&state.v) {
            write(&format!("adam.m.{name}"), m)?;
            write(&format!("adam.v.{name}"), v)?;
        }
        let p = dir.join("optimizer.json");
        std::fs::write(&p, serde_json::to_string(&OptimizerMeta { step: state.step })?).map_err(|e| Error::io(&p, e))?;
    }
    let p = dir.join(MANIFEST);
    std::fs::write(&p, manifest).map_err(|e| Error::io(&p, e))
}

fn read_manifest(dir: &Path) -> Result<Vec<(String, String)>> {
    let p = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let mut it = l.split_whitespace();
            match (it.next(), it.next(), it.next()) {
                (Some(n), Some(f), None) => Ok((n.to_string(), f.to_string())),
                _ => Err(Error::Format(format!("bad manifest line {l:?}"))),
            }
        })
        .collect()
}

/// Rebuilds the model stored in `dir` together with its profile and, when
/// present, the optimizer state.
pub fn load_checkpoint(dir: &Path) -> Result<(Model<f32>, ArchProfile, Option<AdamState<f32>>)> {
    let p = dir.join("model.json");
    let meta: ModelMeta = serde_json::from_str(&std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?)?;
    let profile = ArchProfile::load(&dir.join("profile.txt"))?;
    let mut model = build_model::<f32>(meta.variant, &profile, &mut Rng::new(0))?;
    let files: std::collections::HashMap<String, String> = read_manifest(dir)?.into_iter().collect();
    let load = |name: &str, into: &mut Tensor<f32>| -> Result<()> {
        let file = files.get(name).ok_or_else(|| Error::Format(format!("checkpoint lacks {name}")))?;
        let t: Tensor<f32> = read_tensor(&dir.join(file))?;
        if t.dims() != into.dims() {
            return Err(Error::Format(format!("{name} has shape {:?}, expected {:?}", t.dims(), into.dims())));
        }
        *into = t;
        Ok(())
    };
    let mut names = Vec::new();
    let mut shapes = Vec::new();
    for (name, t) in named_tensors(&mut model) {
        load(&name, t)?;
        shapes.push(t.dims().to_vec());
        names.push(name);
    }
    for (name, t) in model.buffers_mut() {
        load(&name, t)?;
    }
    let opt_path = dir.join("optimizer.json");
    let opt = if opt_path.exists() {
        let meta: OptimizerMeta =
            serde_json::from_str(&std::fs::read_to_string(&opt_path).map_err(|e| Error::io(&opt_path, e))?)?;
        let mut state = AdamState { step: meta.step, m: Vec::new(), v: Vec::new() };
        for (name, dims) in names.iter().zip(&shapes) {
            let mut m = Tensor::zeros(dims);
            let mut v = Tensor::zeros(dims);
            load(&format!("adam.m.{name}"), &mut m)?;
            load(&format!("adam.v.{name}"), &mut v)?;
            state.m.push(m);
            state.v.push(v);
        }
        Some(state)
    } else {
        None
    };
    Ok((model, profile, opt))
}
