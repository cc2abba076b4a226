use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, ConvBlock, Head, ModelState};
use crate::error::{Error, Result};
use crate::interchange::{InterchangeReader, InterchangeWriter};
use crate::tensor::Tensor;

pub const MODEL_FILE: &str = "model.json";
const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ModelManifest {
    format_version: u32,
    input_channels: usize,
    input_size: usize,
    channels: Vec<usize>,
    num_classes: usize,
    seed: u64,
    freeze_flags: Vec<bool>,
    head_frozen: bool,
}

/// Write `model` as interchange tensors plus `model.json`.
pub fn save_model(model: &ModelState, dir: &Path) -> Result<()> {
    let mut w = InterchangeWriter::create(dir)?;
    for (j, b) in model.blocks.iter().enumerate() {
        let n = j + 1;
        w.write(
            &format!("block{n}.weight"),
            &Tensor::from_f32(vec![b.out_channels, b.in_channels, 3, 3], b.weight.clone())?,
        )?;
        w.write(&format!("block{n}.bias"), &Tensor::from_f32(vec![b.out_channels], b.bias.clone())?)?;
    }
    let h = &model.head;
    w.write(
        "head.weight",
        &Tensor::from_f32(vec![h.classes, h.features], h.weight.clone())?,
    )?;
    w.write("head.bias", &Tensor::from_f32(vec![h.classes], h.bias.clone())?)?;
    w.finish()?;

    let manifest = ModelManifest {
        format_version: MODEL_FORMAT_VERSION,
        input_channels: model.arch.input_channels,
        input_size: model.arch.input_size,
        channels: model.arch.channels.clone(),
        num_classes: h.classes,
        seed: model.seed,
        freeze_flags: model.freeze_flags.clone(),
        head_frozen: model.head_frozen,
    };
    let path = dir.join(MODEL_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("serializable");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_model(dir: &Path) -> Result<ModelState> {
    let path = dir.join(MODEL_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    let version = value.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let m: ModelManifest =
        serde_json::from_value(value).map_err(|source| Error::Json { path, source })?;
    let arch = Architecture {
        input_channels: m.input_channels,
        input_size: m.input_size,
        channels: m.channels,
    };
    arch.validate()?;
    if m.freeze_flags.len() != arch.num_blocks() {
        return Err(Error::manifest("freeze_flags", "length differs from block count"));
    }

    let r = InterchangeReader::open(dir)?;
    let read = |name: &str, shape: Vec<usize>| -> Result<Vec<f32>> {
        let t = r.read(name)?;
        if t.shape() != shape.as_slice() {
            return Err(Error::Shape {
                expected: shape,
                actual: t.shape().to_vec(),
            });
        }
        Ok(t.expect_f32()?.to_vec())
    };
    let mut blocks = Vec::new();
    for j in 0..arch.num_blocks() {
        let (cin, cout) = (arch.block_in_channels(j), arch.channels[j]);
        let n = j + 1;
        blocks.push(ConvBlock {
            in_channels: cin,
            out_channels: cout,
            weight: read(&format!("block{n}.weight"), vec![cout, cin, 3, 3])?,
            bias: read(&format!("block{n}.bias"), vec![cout])?,
        });
    }
    let features = arch.feature_dim();
    let head = Head {
        features,
        classes: m.num_classes,
        weight: read("head.weight", vec![m.num_classes, features])?,
        bias: read("head.bias", vec![m.num_classes])?,
    };
    Ok(ModelState {
        arch,
        blocks,
        head,
        freeze_flags: m.freeze_flags,
        head_frozen: m.head_frozen,
        seed: m.seed,
    })
}
