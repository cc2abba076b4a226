//! Forgetting dissection: which conv block of a retrained model lost the
//! old model's evidence first.
//!
//! For each image and block, the old model's representative map is the
//! channel whose binarized evidence best overlaps the ground-truth mask. The
//! new model's representative is then the channel that best overlaps the old
//! representative, and that overlap is the block's IoU. The block with the
//! largest consecutive IoU drop is the image's weakest block; the most
//! frequent weakest block over the sample set is the forgetting block.
//!
//! Blocks are 1-based in curves, results and exported names.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interchange::{InterchangeReader, InterchangeWriter};
use crate::micronet::ModelState;
use crate::pda::{self, Binarize, OcclusionConfig, Sweep};
use crate::tensor::BinaryMask;

/// Intersection over union; 0 when either mask is empty.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(Error::Shape {
            expected: vec![a.height(), a.width()],
            actual: vec![b.height(), b.width()],
        });
    }
    let (mut inter, mut union, mut na, mut nb) = (0u32, 0u32, 0u32, 0u32);
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        inter += (x & y) as u32;
        union += (x | y) as u32;
        na += x as u32;
        nb += y as u32;
    }
    if na == 0 || nb == 0 {
        return Ok(0.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Index and IoU of the mask best matching `reference`; ties go to the
/// lowest index. If every mask scores 0 the result is `(0, 0.0)`.
pub fn best_match(masks: &[BinaryMask], reference: &BinaryMask) -> Result<(usize, f64)> {
    if masks.is_empty() {
        return Err(Error::Invalid("no candidate maps".into()));
    }
    let mut best = (0, 0.0);
    for (i, m) in masks.iter().enumerate() {
        let v = iou(m, reference)?;
        if v > best.1 {
            best = (i, v);
        }
    }
    Ok(best)
}

/// [`best_match`] over signed maps binarized with `policy`.
pub fn representative_map(
    maps: &[pda::ActivationDifferenceMap],
    reference: &BinaryMask,
    policy: Binarize,
) -> Result<(usize, f64)> {
    let masks: Vec<BinaryMask> = maps.iter().map(|m| m.binarize(policy)).collect();
    best_match(&masks, reference)
}

/// Per-block IoUs between old and new representatives for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouCurve {
    pub ious: Vec<f64>,
    /// Channel of the old model's representative map per block.
    pub rm_old: Vec<usize>,
    /// Channel of the new model's representative map per block.
    pub rm_new: Vec<usize>,
}

/// Old-model representatives of one image: per block, the chosen channel,
/// its IoU with the ground truth, and its binarized map.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageReference {
    pub id: String,
    pub blocks: Vec<(usize, f64, BinaryMask)>,
}

impl ImageReference {
    /// `masks[block][channel]` are the old model's binarized maps.
    pub fn from_masks(id: &str, masks: &[Vec<BinaryMask>], gt: &BinaryMask) -> Result<Self> {
        let blocks = masks
            .iter()
            .map(|block| {
                let (i, v) = best_match(block, gt)?;
                Ok((i, v, block[i].clone()))
            })
            .collect::<Result<_>>()?;
        Ok(ImageReference { id: id.to_string(), blocks })
    }

    /// Compare the new model's binarized maps against the stored representatives.
    pub fn curve(&self, new_masks: &[Vec<BinaryMask>]) -> Result<IouCurve> {
        if new_masks.len() != self.blocks.len() {
            return Err(Error::Architecture(format!(
                "new model has {} blocks, reference has {}",
                new_masks.len(),
                self.blocks.len()
            )));
        }
        let mut curve = IouCurve { ious: Vec::new(), rm_old: Vec::new(), rm_new: Vec::new() };
        for ((old, _, mask), block) in self.blocks.iter().zip(new_masks) {
            let (i, v) = best_match(block, mask)?;
            curve.ious.push(v);
            curve.rm_old.push(*old);
            curve.rm_new.push(i);
        }
        Ok(curve)
    }
}

fn sweep_masks(sweep: &Sweep, blocks: usize, policy: Binarize) -> Result<Vec<Vec<BinaryMask>>> {
    (0..blocks)
        .map(|b| Ok(sweep.block_maps(b)?.iter().map(|m| m.binarize(policy)).collect()))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DissectConfig {
    pub occlusion: OcclusionConfig,
    pub binarize: Binarize,
}

/// One member of the sample set: an image (flat f32 in `[0, 1]`) and its mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleImage {
    pub id: String,
    pub image: Vec<f32>,
    pub gt: BinaryMask,
}

pub fn iou_curve(
    old: &ModelState,
    new: &ModelState,
    image: &[f32],
    gt: &BinaryMask,
    cfg: &DissectConfig,
) -> Result<IouCurve> {
    if !old.same_architecture(new) {
        return Err(Error::Architecture("old and new models differ in block layout".into()));
    }
    let k = old.num_blocks();
    let r = ImageReference::from_masks("", &sweep_masks(&pda::sweep(old, image, &cfg.occlusion)?, k, cfg.binarize)?, gt)?;
    r.curve(&sweep_masks(&pda::sweep(new, image, &cfg.occlusion)?, k, cfg.binarize)?)
}

/// Weakest block (1-based) of a curve: the largest drop `ious[j-1] - ious[j]`
/// with a virtual 1.0 before block 1. Ties go to the earliest block.
///
/// # Panics
/// If `ious` is empty.
pub fn detect_drop(ious: &[f64]) -> usize {
    assert!(!ious.is_empty(), "detect_drop needs at least one block");
    let mut prev = 1.0;
    let mut best = (1, f64::NEG_INFINITY);
    for (j, &v) in ious.iter().enumerate() {
        let d = prev - v;
        if d > best.1 {
            best = (j + 1, d);
        }
        prev = v;
    }
    best.0
}

/// Most frequent value; ties go to the smallest.
pub fn mode(blocks: &[usize]) -> Option<usize> {
    let mut counts = BTreeMap::new();
    for &b in blocks {
        *counts.entry(b).or_insert(0usize) += 1;
    }
    let mut best: Option<(usize, usize)> = None;
    for (b, n) in counts {
        if best.is_none_or(|(_, m)| n > m) {
            best = Some((b, n));
        }
    }
    best.map(|(b, _)| b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResult {
    pub id: String,
    pub ious: Vec<f64>,
    pub b: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissectionResult {
    pub per_image: Vec<ImageResult>,
    #[serde(rename = "F")]
    pub forgetting_block: usize,
    /// Representative indices behind each image's curve.
    #[serde(skip)]
    pub curves: Vec<IouCurve>,
}

impl DissectionResult {
    pub fn from_curves(ids: &[String], curves: Vec<IouCurve>) -> Result<Self> {
        if curves.is_empty() {
            return Err(Error::EmptySampleSet);
        }
        let per_image: Vec<ImageResult> = ids
            .iter()
            .zip(&curves)
            .map(|(id, c)| ImageResult { id: id.clone(), ious: c.ious.clone(), b: detect_drop(&c.ious) })
            .collect();
        let l: Vec<usize> = per_image.iter().map(|r| r.b).collect();
        Ok(DissectionResult {
            forgetting_block: mode(&l).expect("non-empty"),
            per_image,
            curves,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable") + "\n"
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json { path: path.to_path_buf(), source })
    }
}

/// The old model's representatives for a whole sample set. Building it once
/// lets several new models be dissected against the same old model, or pins
/// the representatives of an earlier model across later increments.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceCache {
    blocks: usize,
    images: Vec<ImageReference>,
}

impl ReferenceCache {
    pub fn build(old: &ModelState, samples: &[SampleImage], cfg: &DissectConfig) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptySampleSet);
        }
        let k = old.num_blocks();
        let images = samples
            .par_iter()
            .map(|s| {
                let sw = pda::sweep(old, &s.image, &cfg.occlusion)?;
                ImageReference::from_masks(&s.id, &sweep_masks(&sw, k, cfg.binarize)?, &s.gt)
            })
            .collect::<Result<_>>()?;
        Ok(ReferenceCache { blocks: k, images })
    }

    pub fn images(&self) -> &[ImageReference] {
        &self.images
    }

    /// Dissect `new` on the same samples (in the same order) the cache was built from.
    pub fn dissect(&self, new: &ModelState, samples: &[SampleImage], cfg: &DissectConfig) -> Result<DissectionResult> {
        if samples.len() != self.images.len() || samples.iter().zip(&self.images).any(|(s, r)| s.id != r.id) {
            return Err(Error::Invalid("sample set differs from the one the reference was built on".into()));
        }
        if new.num_blocks() != self.blocks {
            return Err(Error::Architecture(format!(
                "new model has {} blocks, reference has {}",
                new.num_blocks(),
                self.blocks
            )));
        }
        let curves = samples
            .par_iter()
            .zip(&self.images)
            .map(|(s, r)| {
                let sw = pda::sweep(new, &s.image, &cfg.occlusion)?;
                r.curve(&sweep_masks(&sw, self.blocks, cfg.binarize)?)
            })
            .collect::<Result<Vec<_>>>()?;
        let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
        DissectionResult::from_curves(&ids, curves)
    }
}

/// Dissect `new` against `old` over the sample set.
pub fn dissect(
    samples: &[SampleImage],
    old: &ModelState,
    new: &ModelState,
    cfg: &DissectConfig,
) -> Result<DissectionResult> {
    if !old.same_architecture(new) {
        return Err(Error::Architecture("old and new models differ in block layout".into()));
    }
    ReferenceCache::build(old, samples, cfg)?.dissect(new, samples, cfg)
}

pub const OLD_MODEL: &str = "old";
pub const NEW_MODEL: &str = "new";

/// Write one image's maps for `model` and its mask into an interchange
/// directory, keeping whatever the directory already holds.
pub fn export_image(dir: &Path, model: &str, sample: &SampleImage, sweep: &Sweep) -> Result<()> {
    let mut w = InterchangeWriter::append(dir)?;
    pda::export_sweep(&mut w, model, sweep)?;
    w.write(&pda::gt_name(&sample.id), &sample.gt.to_tensor())?;
    w.finish()?;
    Ok(())
}

/// `masks[block][channel]` for `model` in an exported directory.
fn read_exported(r: &InterchangeReader, model: &str, policy: Binarize) -> Result<Vec<Vec<BinaryMask>>> {
    let prefix = format!("fm/{model}/");
    let mut found: BTreeMap<usize, BTreeMap<usize, String>> = BTreeMap::new();
    for name in r.names() {
        let Some(rest) = name.strip_prefix(&prefix) else { continue };
        let parsed = rest
            .split_once('/')
            .and_then(|(b, c)| Some((b.parse::<usize>().ok()?, c.parse::<usize>().ok()?)));
        let Some((b, c)) = parsed else {
            return Err(Error::manifest("name", format!("malformed map name `{name}`")));
        };
        found.entry(b).or_default().insert(c, name.to_string());
    }
    if found.is_empty() {
        return Err(Error::manifest("tensors", format!("no maps under `{prefix}`")));
    }
    let mut out = Vec::new();
    for (expect_b, (b, channels)) in (1..).zip(&found) {
        if *b != expect_b {
            return Err(Error::manifest("name", format!("block {expect_b} of `{model}` is missing")));
        }
        let mut masks = Vec::new();
        for (expect_c, (c, name)) in (0..).zip(channels) {
            if *c != expect_c {
                return Err(Error::manifest("name", format!("`{prefix}{b}/{expect_c}` is missing")));
            }
            let t = r.read(name)?;
            let values = t.expect_f32()?;
            let &[h, w] = t.shape() else {
                return Err(Error::Shape { expected: vec![0, 0], actual: t.shape().to_vec() });
            };
            masks.push(pda::binarize_values(values, h, w, policy));
        }
        out.push(masks);
    }
    Ok(out)
}

/// Dissect from exported maps: every subdirectory of `root` is one image
/// holding `fm/old/<block>/<channel>`, `fm/new/<block>/<channel>` and
/// `gt/<image-id>`. Images are taken in subdirectory name order.
pub fn dissect_exported(root: &Path, policy: Binarize) -> Result<DissectionResult> {
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs = Vec::new();
    for e in entries {
        let e = e.map_err(|e| Error::io(root, e))?;
        if e.path().is_dir() {
            dirs.push(e.path());
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let mut ids = Vec::new();
    let mut curves = Vec::new();
    for dir in dirs {
        let r = InterchangeReader::open(&dir)?;
        let gts: Vec<&str> = r.names().filter(|n| n.starts_with("gt/")).collect();
        let [gt_name] = gts.as_slice() else {
            return Err(Error::manifest("tensors", format!("{} needs exactly one gt/<image-id>", dir.display())));
        };
        let id = gt_name["gt/".len()..].to_string();
        let gt = BinaryMask::from_tensor(&r.read(gt_name)?)?;
        let old = read_exported(&r, OLD_MODEL, policy)?;
        let new = read_exported(&r, NEW_MODEL, policy)?;
        let shape = |m: &[Vec<BinaryMask>]| m.iter().map(Vec::len).collect::<Vec<_>>();
        if shape(&old) != shape(&new) {
            return Err(Error::Architecture(format!("old and new maps differ in layout in {}", dir.display())));
        }
        let reference = ImageReference::from_masks(&id, &old, &gt)?;
        curves.push(reference.curve(&new)?);
        ids.push(id);
    }
    DissectionResult::from_curves(&ids, curves)
}
