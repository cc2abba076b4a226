//! Class-incremental training: critical freezing, the freezing/fine-tuning
//! baselines, evaluation, and the multi-seed scenario runner.
//!
//! Critical freezing first fine-tunes a throwaway probe copy of the old model
//! for a short while, dissects (old, probe) to find the forgetting block F,
//! then restarts from the old model with blocks `1..F` frozen and trains
//! normally. Block numbers in plans are 1-based.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cfd::{self, DissectConfig, DissectionResult, ReferenceCache, SampleImage};
use crate::config::{join, render, KeyValues};
use crate::error::{Error, Result};
use crate::micronet::{argmax, Architecture, ModelState, TrainConfig};
use crate::pda::{self, ActivationDifferenceMap, Aggregation, Binarize, OcclusionConfig, Replacement, Target};
use crate::shapeworld::{gen_dataset, make_stream, Dataset, TaskStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Critical,
    FineTune,
    /// Freeze exactly this block (1-based).
    FreezeBlock(usize),
    /// All conv blocks frozen, head trainable.
    FreezeExtractor,
    /// Head frozen, all conv blocks trainable.
    FreezeHead,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Critical => f.write_str("critical"),
            Strategy::FineTune => f.write_str("finetune"),
            Strategy::FreezeBlock(j) => write!(f, "freeze-block-{j}"),
            Strategy::FreezeExtractor => f.write_str("freeze-extractor"),
            Strategy::FreezeHead => f.write_str("freeze-head"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "critical" => Ok(Strategy::Critical),
            "finetune" => Ok(Strategy::FineTune),
            "freeze-extractor" => Ok(Strategy::FreezeExtractor),
            "freeze-head" => Ok(Strategy::FreezeHead),
            _ => match s.strip_prefix("freeze-block-").map(str::parse::<usize>) {
                Some(Ok(j)) if j >= 1 => Ok(Strategy::FreezeBlock(j)),
                _ => Err(Error::Invalid(format!("unknown strategy `{s}`"))),
            },
        }
    }
}

impl Serialize for Strategy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezePlan {
    pub strategy: Strategy,
    /// Only set for critical plans.
    pub forgetting_block: Option<usize>,
    /// 1-based blocks held fixed.
    pub frozen: Vec<usize>,
    pub head_frozen: bool,
}

impl FreezePlan {
    /// Freeze the blocks strictly before `f`.
    pub fn critical(f: usize, blocks: usize) -> Result<Self> {
        if f == 0 || f > blocks {
            return Err(Error::Index { what: "forgetting block", index: f, limit: blocks + 1 });
        }
        Ok(FreezePlan {
            strategy: Strategy::Critical,
            forgetting_block: Some(f),
            frozen: (1..f).collect(),
            head_frozen: false,
        })
    }

    pub fn baseline(strategy: Strategy, blocks: usize) -> Result<Self> {
        let (frozen, head_frozen) = match strategy {
            Strategy::Critical => {
                return Err(Error::Invalid("critical plans come from dissection, not a baseline".into()))
            }
            Strategy::FineTune => (vec![], false),
            Strategy::FreezeBlock(j) if (1..=blocks).contains(&j) => (vec![j], false),
            Strategy::FreezeBlock(j) => {
                return Err(Error::Index { what: "frozen block", index: j, limit: blocks + 1 })
            }
            Strategy::FreezeExtractor => ((1..=blocks).collect(), false),
            Strategy::FreezeHead => (vec![], true),
        };
        Ok(FreezePlan { strategy, forgetting_block: None, frozen, head_frozen })
    }

    /// Reset `m`'s freeze flags to exactly this plan.
    pub fn apply(&self, m: &mut ModelState) -> Result<()> {
        m.unfreeze_all();
        for &j in &self.frozen {
            m.set_block_frozen(j - 1, true)?;
        }
        m.set_head_frozen(self.head_frozen);
        Ok(())
    }
}

/// Hyperparameters of one incremental step.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementConfig {
    pub train: TrainConfig,
    pub probe_epochs: usize,
    /// Seeds the new head rows.
    pub head_seed: u64,
}

impl Default for IncrementConfig {
    fn default() -> Self {
        IncrementConfig {
            train: TrainConfig { epochs: 8, lr: 0.001, ..TrainConfig::default() },
            probe_epochs: 1,
            head_seed: 0,
        }
    }
}

pub struct CriticalOutcome {
    pub model: ModelState,
    pub plan: FreezePlan,
    /// Dissection of (old, probe); absent when F was forced.
    pub dissection: Option<DissectionResult>,
}

/// Critical freezing on one new task. `data` holds only the new task's
/// samples. With `forced_block` the probe and dissection are skipped.
pub fn critical_freeze_train(
    old: &ModelState,
    new_classes: usize,
    data: &[(&[f32], usize)],
    samples: &[SampleImage],
    dissect: &DissectConfig,
    cfg: &IncrementConfig,
    forced_block: Option<usize>,
) -> Result<CriticalOutcome> {
    let start = old.expand_head(new_classes, cfg.head_seed)?;
    let (f, dissection) = match forced_block {
        Some(f) => (f, None),
        None => {
            if samples.is_empty() {
                return Err(Error::EmptySampleSet);
            }
            let reference = ReferenceCache::build(old, samples, dissect)?;
            let (f, r) = probe_forgetting_block(&start, data, &reference, samples, dissect, cfg)?;
            (f, Some(r))
        }
    };
    let plan = FreezePlan::critical(f, old.num_blocks())?;
    let mut model = start;
    plan.apply(&mut model)?;
    model.fit(data, &cfg.train)?;
    Ok(CriticalOutcome { model, plan, dissection })
}

/// Fine-tune a copy of `start` for the probe epochs and dissect it against a
/// prepared reference of the old model.
pub fn probe_forgetting_block(
    start: &ModelState,
    data: &[(&[f32], usize)],
    reference: &ReferenceCache,
    samples: &[SampleImage],
    dissect: &DissectConfig,
    cfg: &IncrementConfig,
) -> Result<(usize, DissectionResult)> {
    let mut probe = start.clone();
    probe.unfreeze_all();
    probe.fit(data, &TrainConfig { epochs: cfg.probe_epochs, ..cfg.train.clone() })?;
    let r = reference.dissect(&probe, samples, dissect)?;
    Ok((r.forgetting_block, r))
}

pub fn baseline_train(
    old: &ModelState,
    new_classes: usize,
    data: &[(&[f32], usize)],
    strategy: Strategy,
    cfg: &IncrementConfig,
) -> Result<(ModelState, FreezePlan)> {
    let plan = FreezePlan::baseline(strategy, old.num_blocks())?;
    let mut model = old.expand_head(new_classes, cfg.head_seed)?;
    plan.apply(&mut model)?;
    model.fit(data, &cfg.train)?;
    Ok((model, plan))
}

/// Top-1 accuracy.
pub fn evaluate(m: &ModelState, data: &[(&[f32], usize)]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let c = m.num_classes();
    let mut hits = 0usize;
    for &(x, y) in data {
        if y >= c {
            return Err(Error::Index { what: "label", index: y, limit: c });
        }
        let t = m.trace(x)?;
        hits += (argmax(&t.logits) == y) as usize;
    }
    Ok(hits as f64 / data.len() as f64)
}

/// SplitMix64 finaliser over `seed` and a stage tag, so every stage of a run
/// draws from its own stream.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplacementKind {
    DatasetChannelMean,
    FixedGray,
}

impl FromStr for ReplacementKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dataset-channel-mean" => Ok(ReplacementKind::DatasetChannelMean),
            "fixed-gray" => Ok(ReplacementKind::FixedGray),
            _ => Err(Error::Invalid(format!(
                "unknown replacement `{s}` (expected dataset-channel-mean or fixed-gray)"
            ))),
        }
    }
}

impl fmt::Display for ReplacementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReplacementKind::DatasetChannelMean => "dataset-channel-mean",
            ReplacementKind::FixedGray => "fixed-gray",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub seeds: Vec<u64>,
    pub per_class: usize,
    pub test_fraction: f64,
    pub channels: Vec<usize>,
    pub base_classes: usize,
    pub increments: Vec<usize>,
    pub base_epochs: usize,
    pub increment_epochs: usize,
    pub probe_epochs: usize,
    pub base_lr: f64,
    pub increment_lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub sample_set: usize,
    pub strategies: Vec<Strategy>,
    pub joint: bool,
    pub window: usize,
    pub stride: usize,
    pub replacement: ReplacementKind,
    pub gray: f32,
    pub aggregation: Aggregation,
    pub binarize: Binarize,
    /// Keep the base model's representatives for every later increment
    /// instead of recomputing them from each increment's old model.
    pub cache_reference: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seeds: vec![1],
            per_class: 100,
            test_fraction: 0.2,
            channels: Architecture::default().channels,
            base_classes: 4,
            increments: vec![1, 1],
            base_epochs: 15,
            increment_epochs: 8,
            probe_epochs: 1,
            base_lr: 0.01,
            increment_lr: 0.001,
            momentum: 0.9,
            batch_size: 4,
            sample_set: 20,
            strategies: vec![
                Strategy::Critical,
                Strategy::FineTune,
                Strategy::FreezeBlock(1),
                Strategy::FreezeBlock(2),
                Strategy::FreezeBlock(3),
                Strategy::FreezeBlock(4),
                Strategy::FreezeExtractor,
                Strategy::FreezeHead,
            ],
            joint: true,
            window: OcclusionConfig::DEFAULT_WINDOW,
            stride: OcclusionConfig::DEFAULT_STRIDE,
            replacement: ReplacementKind::DatasetChannelMean,
            gray: OcclusionConfig::DEFAULT_GRAY,
            aggregation: Aggregation::SpatialMean,
            binarize: Binarize::Positive,
            cache_reference: false,
        }
    }
}

impl ScenarioConfig {
    pub const KEYS: &'static [&'static str] = &[
        "seeds",
        "per_class",
        "test_fraction",
        "channels",
        "base_classes",
        "increments",
        "base_epochs",
        "increment_epochs",
        "probe_epochs",
        "base_lr",
        "increment_lr",
        "momentum",
        "batch_size",
        "sample_set",
        "strategies",
        "joint",
        "window",
        "stride",
        "replacement",
        "gray",
        "aggregation",
        "binarize",
        "cache_reference",
    ];

    /// Defaults overridden by whatever keys `kv` sets. Unknown keys are rejected.
    pub fn from_config(kv: &KeyValues) -> Result<Self> {
        kv.reject_unknown(Self::KEYS)?;
        let mut c = ScenarioConfig::default();
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = kv.get(stringify!($field))? {
                    c.$field = v;
                }
            };
        }
        macro_rules! take_list {
            ($field:ident) => {
                if let Some(v) = kv.get_list(stringify!($field))? {
                    c.$field = v;
                }
            };
        }
        take_list!(seeds);
        take!(per_class);
        take!(test_fraction);
        take_list!(channels);
        take!(base_classes);
        take_list!(increments);
        take!(base_epochs);
        take!(increment_epochs);
        take!(probe_epochs);
        take!(base_lr);
        take!(increment_lr);
        take!(momentum);
        take!(batch_size);
        take!(sample_set);
        take_list!(strategies);
        take!(joint);
        take!(window);
        take!(stride);
        take!(replacement);
        take!(gray);
        take!(aggregation);
        take!(binarize);
        take!(cache_reference);
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Invalid("at least one seed is required".into()));
        }
        if self.increments.is_empty() {
            return Err(Error::Invalid("a scenario needs at least one increment".into()));
        }
        if self.sample_set == 0 {
            return Err(Error::EmptySampleSet);
        }
        let arch = self.architecture();
        arch.validate()?;
        OcclusionConfig {
            window: self.window,
            stride: self.stride,
            replacement: Replacement::FixedGray { value: self.gray },
            aggregation: self.aggregation,
        }
        .validate(arch.input_size)?;
        if !(0.0..=1.0).contains(&self.gray) {
            return Err(Error::Invalid(format!("gray must be in [0, 1], got {}", self.gray)));
        }
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch_size must be positive".into()));
        }
        for s in &self.strategies {
            if let Strategy::FreezeBlock(j) = s {
                if *j > self.channels.len() {
                    return Err(Error::Index { what: "frozen block", index: *j, limit: self.channels.len() + 1 });
                }
            }
        }
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        Architecture { channels: self.channels.clone(), ..Architecture::default() }
    }

    /// The effective configuration as `key=value` lines, in `KEYS` order.
    pub fn to_config(&self) -> String {
        render(&[
            ("seeds", join(&self.seeds)),
            ("per_class", self.per_class.to_string()),
            ("test_fraction", self.test_fraction.to_string()),
            ("channels", join(&self.channels)),
            ("base_classes", self.base_classes.to_string()),
            ("increments", join(&self.increments)),
            ("base_epochs", self.base_epochs.to_string()),
            ("increment_epochs", self.increment_epochs.to_string()),
            ("probe_epochs", self.probe_epochs.to_string()),
            ("base_lr", self.base_lr.to_string()),
            ("increment_lr", self.increment_lr.to_string()),
            ("momentum", self.momentum.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("sample_set", self.sample_set.to_string()),
            ("strategies", join(&self.strategies)),
            ("joint", self.joint.to_string()),
            ("window", self.window.to_string()),
            ("stride", self.stride.to_string()),
            ("replacement", self.replacement.to_string()),
            ("gray", self.gray.to_string()),
            ("aggregation", self.aggregation.name().to_string()),
            ("binarize", self.binarize.to_string()),
            ("cache_reference", self.cache_reference.to_string()),
        ])
    }

    pub fn occlusion(&self, dataset: &Dataset, train_ids: &[usize]) -> OcclusionConfig {
        let replacement = match self.replacement {
            ReplacementKind::DatasetChannelMean => {
                Replacement::DatasetChannelMean { values: dataset.channel_mean(train_ids).to_vec() }
            }
            ReplacementKind::FixedGray => Replacement::FixedGray { value: self.gray },
        };
        OcclusionConfig { window: self.window, stride: self.stride, replacement, aggregation: self.aggregation }
    }
}

/// One accuracy cell: model after `phase` (0 = base) evaluated on `task`.
/// Tasks not yet seen at that phase have no accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub strategy: String,
    pub seed: u64,
    pub task: usize,
    pub phase: usize,
    pub accuracy: Option<f64>,
}

/// Old-task accuracy: over all increments, test samples of earlier tasks
/// pooled, then averaged across increments. New-task accuracy: the task just
/// learned, averaged across increments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: String,
    pub seed: u64,
    pub old_task: f64,
    pub new_task: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementRecord {
    pub seed: u64,
    pub increment: usize,
    pub plan: FreezePlan,
    /// (old, probe) dissection behind the critical plan.
    pub probe: DissectionResult,
    /// (old, fine-tuned) dissection.
    pub finetune: DissectionResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub name: String,
    pub map: ActivationDifferenceMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioMetrics {
    pub rows: Vec<MetricRow>,
    pub summary: Vec<StrategySummary>,
    pub increments: Vec<IncrementRecord>,
    pub heatmaps: Vec<Heatmap>,
}

impl ScenarioMetrics {
    /// Mean over seeds of `(old_task, new_task)` for one strategy label.
    pub fn mean_summary(&self, strategy: &str) -> Option<(f64, f64)> {
        let v: Vec<&StrategySummary> = self.summary.iter().filter(|s| s.strategy == strategy).collect();
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        Some((v.iter().map(|s| s.old_task).sum::<f64>() / n, v.iter().map(|s| s.new_task).sum::<f64>() / n))
    }
}

pub const JOINT: &str = "joint";

/// Dataset, task stream, sample set and dissection settings of one seed.
pub struct ScenarioData {
    pub dataset: Dataset,
    images: Vec<Vec<f32>>,
    pub stream: TaskStream,
    /// The first `sample_set` test images of the base task.
    pub samples: Vec<SampleImage>,
    pub dissect: DissectConfig,
}

impl ScenarioData {
    pub fn new(cfg: &ScenarioConfig, seed: u64) -> Result<Self> {
        Self::from_dataset(cfg, gen_dataset(seed, cfg.per_class)?)
    }

    pub fn from_dataset(cfg: &ScenarioConfig, dataset: Dataset) -> Result<Self> {
        let (train, test) = dataset.split(cfg.test_fraction)?;
        let stream = make_stream(&dataset, &train, &test, cfg.base_classes, &cfg.increments)?;
        let images: Vec<Vec<f32>> = dataset.samples.iter().map(|s| s.image_f32()).collect();
        let samples: Vec<SampleImage> = stream
            .task(0)
            .test_ids()
            .iter()
            .take(cfg.sample_set)
            .map(|&i| SampleImage {
                id: i.to_string(),
                image: images[i].clone(),
                gt: dataset.samples[i].seg.clone(),
            })
            .collect();
        if samples.is_empty() {
            return Err(Error::EmptySampleSet);
        }
        let dissect = DissectConfig { occlusion: cfg.occlusion(&dataset, &train), binarize: cfg.binarize };
        Ok(ScenarioData { dataset, images, stream, samples, dissect })
    }

    pub fn pairs(&self, ids: &[usize]) -> Vec<(&[f32], usize)> {
        ids.iter().map(|&i| (self.images[i].as_slice(), self.dataset.samples[i].label)).collect()
    }

    /// Training pairs of task `t` only.
    pub fn train(&self, t: usize) -> Vec<(&[f32], usize)> {
        self.pairs(self.stream.train_ids(t))
    }

    pub fn test(&self, t: usize) -> Vec<(&[f32], usize)> {
        self.pairs(self.stream.task(t).test_ids())
    }

    /// Test samples of tasks `0..t` pooled.
    pub fn test_before(&self, t: usize) -> Vec<(&[f32], usize)> {
        (0..t).flat_map(|k| self.test(k)).collect()
    }
}

impl ScenarioConfig {
    pub fn base_train(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.base_epochs,
            lr: self.base_lr,
            momentum: self.momentum,
            batch_size: self.batch_size,
            seed: derive_seed(seed, 1),
        }
    }

    /// Settings of increment `t` (1-based) for a run seeded with `seed`.
    pub fn increment(&self, seed: u64, t: usize) -> IncrementConfig {
        IncrementConfig {
            train: TrainConfig {
                epochs: self.increment_epochs,
                lr: self.increment_lr,
                momentum: self.momentum,
                batch_size: self.batch_size,
                seed: derive_seed(seed, 200 + t as u64),
            },
            probe_epochs: self.probe_epochs,
            head_seed: derive_seed(seed, 100 + t as u64),
        }
    }
}

/// Accuracy table and summary of one strategy given its model after every phase.
fn score(p: &ScenarioData, label: &str, seed: u64, models: &[&ModelState]) -> Result<(Vec<MetricRow>, StrategySummary)> {
    let tasks = p.stream.len();
    let mut rows = Vec::new();
    for (phase, m) in models.iter().enumerate() {
        for task in 0..tasks {
            let accuracy = if task <= phase { Some(evaluate(m, &p.test(task))?) } else { None };
            rows.push(MetricRow { strategy: label.to_string(), seed, task, phase, accuracy });
        }
    }
    let (mut old, mut new) = (0.0, 0.0);
    for t in 1..tasks {
        old += evaluate(models[t], &p.test_before(t))?;
        new += evaluate(models[t], &p.test(t))?;
    }
    let n = (tasks - 1) as f64;
    Ok((rows, StrategySummary { strategy: label.to_string(), seed, old_task: old / n, new_task: new / n }))
}

fn run_seed(cfg: &ScenarioConfig, seed: u64) -> Result<ScenarioMetrics> {
    let p = ScenarioData::new(cfg, seed)?;
    let arch = cfg.architecture();
    let tasks = p.stream.len();

    let mut base = ModelState::init(arch.clone(), p.stream.task(0).classes.len(), seed)?;
    let base_train = cfg.base_train(seed);
    base.fit(&p.train(0), &base_train)?;
    let inc_cfg = |t: usize| cfg.increment(seed, t);

    let base_reference = if cfg.cache_reference {
        Some(ReferenceCache::build(&base, &p.samples, &p.dissect)?)
    } else {
        None
    };

    // One chain of models per strategy; fine-tuning is always run because
    // every increment's dissection compares against it.
    let mut chains: Vec<(Strategy, Vec<ModelState>)> = Vec::new();
    let mut labels: Vec<Strategy> = cfg.strategies.clone();
    if !labels.contains(&Strategy::FineTune) {
        labels.push(Strategy::FineTune);
    }
    for s in &labels {
        chains.push((*s, vec![base.clone()]));
    }

    let mut increments = Vec::new();
    let mut heatmaps = Vec::new();
    for t in 1..tasks {
        let data = p.train(t);
        let new_classes = p.stream.task(t).classes.len();
        let ic = inc_cfg(t);
        let mut critical_plan = None;
        let mut probe_result = None;
        for (s, chain) in chains.iter_mut() {
            let old = chain.last().expect("base model");
            let model = match s {
                Strategy::Critical => {
                    let reference = match &base_reference {
                        Some(r) => r.clone(),
                        None => ReferenceCache::build(old, &p.samples, &p.dissect)?,
                    };
                    let start = old.expand_head(new_classes, ic.head_seed)?;
                    let (f, r) = probe_forgetting_block(&start, &data, &reference, &p.samples, &p.dissect, &ic)?;
                    let plan = FreezePlan::critical(f, old.num_blocks())?;
                    let mut m = start;
                    plan.apply(&mut m)?;
                    m.fit(&data, &ic.train)?;
                    critical_plan = Some(plan);
                    probe_result = Some(r);
                    m
                }
                _ => baseline_train(old, new_classes, &data, *s, &ic)?.0,
            };
            chain.push(model);
        }

        let ft = &chains.iter().find(|(s, _)| *s == Strategy::FineTune).expect("always run").1;
        let (old, tuned) = (&ft[t - 1], &ft[t]);
        let finetune = match &base_reference {
            Some(r) => r.dissect(tuned, &p.samples, &p.dissect)?,
            None => cfd::dissect(&p.samples, old, tuned, &p.dissect)?,
        };

        // evidence maps of the first sample at the forgetting block
        let f = finetune.forgetting_block;
        let curve = &finetune.curves[0];
        let first = &p.samples[0];
        for (tag, m, channel) in [("old", old, curve.rm_old[f - 1]), ("new", tuned, curve.rm_new[f - 1])] {
            let map = pda::sweep(m, &first.image, &p.dissect.occlusion)?.map(Target::Unit { block: f - 1, channel })?;
            heatmaps.push(Heatmap { name: format!("seed{seed}-inc{t}-{tag}-block{f}"), map });
        }

        if let (Some(plan), Some(probe)) = (critical_plan, probe_result) {
            increments.push(IncrementRecord { seed, increment: t, plan, probe, finetune });
        } else {
            increments.push(IncrementRecord {
                seed,
                increment: t,
                plan: FreezePlan::baseline(Strategy::FineTune, arch.num_blocks())?,
                probe: finetune.clone(),
                finetune,
            });
        }
    }

    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (s, chain) in &chains {
        if !cfg.strategies.contains(s) {
            continue;
        }
        let models: Vec<&ModelState> = chain.iter().collect();
        let (r, sm) = score(&p, &s.to_string(), seed, &models)?;
        rows.extend(r);
        summary.push(sm);
    }

    if cfg.joint {
        let all: Vec<usize> = (0..tasks).flat_map(|t| p.stream.train_ids(t).to_vec()).collect();
        let mut joint = ModelState::init(arch, p.stream.seen_classes(tasks - 1), seed)?;
        joint.fit(&p.pairs(&all), &TrainConfig { seed: derive_seed(seed, 2), ..base_train })?;
        let models = vec![&joint; tasks];
        let (r, sm) = score(&p, JOINT, seed, &models)?;
        rows.extend(r);
        summary.push(sm);
    }

    Ok(ScenarioMetrics { rows, summary, increments, heatmaps })
}

/// Run every seed of the scenario. Seeds run in parallel on the current
/// rayon pool; results are merged in seed order.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioMetrics> {
    cfg.validate()?;
    let runs: Vec<ScenarioMetrics> = cfg.seeds.par_iter().map(|&s| run_seed(cfg, s)).collect::<Result<_>>()?;
    let mut out = ScenarioMetrics { rows: vec![], summary: vec![], increments: vec![], heatmaps: vec![] };
    for r in runs {
        out.rows.extend(r.rows);
        out.summary.extend(r.summary);
        out.increments.extend(r.increments);
        out.heatmaps.extend(r.heatmaps);
    }
    Ok(out)
}
