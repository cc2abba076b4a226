//! Occlusion-based prediction difference analysis.
//!
//! A sweep slides a `window × window` patch over the input with a fixed
//! stride, replaces the patch with a constant per channel, and records how
//! every block's feature maps (aggregated to one scalar each) and the logits
//! respond. One sweep costs one clean pass plus one pass per window, and
//! yields difference maps for every channel of every block at once.
//!
//! The value of a pixel is the mean of `a(x) - a(x with window replaced)`
//! over all windows covering it; pixels no window covers stay 0.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interchange::InterchangeWriter;
use crate::micronet::{ModelState, Rect, Trace};
use crate::tensor::{BinaryMask, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Replacement {
    /// Per-channel mean of the dataset, one value per input channel.
    DatasetChannelMean { values: Vec<f32> },
    FixedGray { value: f32 },
}

impl Replacement {
    pub fn name(&self) -> &'static str {
        match self {
            Replacement::DatasetChannelMean { .. } => "dataset-channel-mean",
            Replacement::FixedGray { .. } => "fixed-gray",
        }
    }

    fn fill(&self, channels: usize) -> Result<Vec<f32>> {
        let v = match self {
            Replacement::DatasetChannelMean { values } => {
                if values.len() != channels {
                    return Err(Error::Invalid(format!(
                        "replacement has {} channel values, model expects {channels}",
                        values.len()
                    )));
                }
                values.clone()
            }
            Replacement::FixedGray { value } => vec![*value; channels],
        };
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("replacement value".into()));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    #[default]
    SpatialMean,
    SpatialMax,
}

impl Aggregation {
    pub fn name(self) -> &'static str {
        match self {
            Aggregation::SpatialMean => "spatial-mean",
            Aggregation::SpatialMax => "spatial-max",
        }
    }

    fn apply(self, v: &[f32]) -> f64 {
        match self {
            Aggregation::SpatialMean => v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64,
            Aggregation::SpatialMax => v.iter().fold(f32::NEG_INFINITY, |m, &x| m.max(x)) as f64,
        }
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spatial-mean" => Ok(Aggregation::SpatialMean),
            "spatial-max" => Ok(Aggregation::SpatialMax),
            _ => Err(Error::Invalid(format!(
                "unknown aggregation `{s}` (expected spatial-mean or spatial-max)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionConfig {
    pub window: usize,
    pub stride: usize,
    pub replacement: Replacement,
    pub aggregation: Aggregation,
}

impl OcclusionConfig {
    pub const DEFAULT_WINDOW: usize = 8;
    pub const DEFAULT_STRIDE: usize = 4;
    pub const DEFAULT_GRAY: f32 = 0.5;

    /// Default window, stride and aggregation with the given replacement.
    pub fn new(replacement: Replacement) -> Self {
        OcclusionConfig {
            window: Self::DEFAULT_WINDOW,
            stride: Self::DEFAULT_STRIDE,
            replacement,
            aggregation: Aggregation::SpatialMean,
        }
    }

    pub fn validate(&self, side: usize) -> Result<()> {
        if self.stride == 0 || self.window < self.stride {
            return Err(Error::Invalid(format!(
                "occlusion needs window >= stride >= 1 (window {}, stride {})",
                self.window, self.stride
            )));
        }
        if self.window > side {
            return Err(Error::Invalid(format!(
                "occlusion window {} exceeds input side {side}",
                self.window
            )));
        }
        Ok(())
    }

    /// Window rectangles in row-major order of their top-left corners, placed
    /// at `0, stride, 2·stride, …` while the window still fits.
    pub fn windows(&self, side: usize) -> Vec<Rect> {
        let starts: Vec<usize> = (0..=side - self.window).step_by(self.stride).collect();
        let mut out = Vec::with_capacity(starts.len() * starts.len());
        for &y in &starts {
            for &x in &starts {
                out.push(Rect {
                    y0: y,
                    y1: y + self.window,
                    x0: x,
                    x1: x + self.window,
                });
            }
        }
        out
    }
}

/// What a difference map measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    /// Aggregated output of channel `channel` of block `block` (0-based).
    Unit { block: usize, channel: usize },
    /// Pre-softmax logit of a class.
    Logit { class: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationDifferenceMap {
    pub target: Target,
    /// f32 `[side, side]`, signed; positive is evidence for the target.
    pub values: Tensor,
    pub config: OcclusionConfig,
}

impl ActivationDifferenceMap {
    pub fn data(&self) -> &[f32] {
        self.values.as_f32().expect("maps are f32")
    }

    pub fn side(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn binarize(&self, policy: Binarize) -> BinaryMask {
        binarize_values(self.data(), self.side(), self.side(), policy)
    }
}

/// Scalar responses of one forward pass.
#[derive(Debug, Clone)]
struct Response {
    /// `units[block][channel]`.
    units: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

impl Response {
    fn of(t: &Trace<f32>, agg: Aggregation) -> Self {
        let units = t
            .layers
            .iter()
            .map(|l| {
                let n = (l.side / 2) * (l.side / 2);
                l.pooled.chunks_exact(n).map(|c| agg.apply(c)).collect()
            })
            .collect();
        Response {
            units,
            logits: t.logits.iter().map(|&v| v as f64).collect(),
        }
    }

    fn get(&self, target: Target) -> f64 {
        match target {
            Target::Unit { block, channel } => self.units[block][channel],
            Target::Logit { class } => self.logits[class],
        }
    }
}

/// Responses of one image under every occlusion window.
#[derive(Debug, Clone)]
pub struct Sweep {
    side: usize,
    channels: Vec<usize>,
    classes: usize,
    windows: Vec<Rect>,
    base: Response,
    occluded: Vec<Response>,
    passes: usize,
    config: OcclusionConfig,
}

/// Run the occlusion sweep of `image` (flat `[C, side, side]`, values in
/// `[0, 1]`) through `model`. Windows are evaluated in parallel on the
/// current rayon pool and merged by window index.
pub fn sweep(model: &ModelState, image: &[f32], cfg: &OcclusionConfig) -> Result<Sweep> {
    let arch = model.architecture();
    let side = arch.input_size;
    cfg.validate(side)?;
    let fill = cfg.replacement.fill(arch.input_channels)?;
    let passes = AtomicUsize::new(0);
    let base = model.trace(image)?;
    passes.fetch_add(1, Ordering::Relaxed);
    let windows = cfg.windows(side);
    let occluded: Vec<Response> = windows
        .par_iter()
        .map_init(
            || model.empty_trace(),
            |scratch, &r| {
                model.trace_with_patch(&base, r, &fill, scratch);
                passes.fetch_add(1, Ordering::Relaxed);
                Response::of(scratch, cfg.aggregation)
            },
        )
        .collect();
    Ok(Sweep {
        side,
        channels: arch.channels.clone(),
        classes: model.num_classes(),
        windows,
        base: Response::of(&base, cfg.aggregation),
        occluded,
        passes: passes.into_inner(),
        config: cfg.clone(),
    })
}

impl Sweep {
    /// Forward passes performed, including the unoccluded one.
    pub fn passes(&self) -> usize {
        self.passes
    }

    pub fn num_windows(&self) -> usize {
        self.windows.len()
    }

    pub fn map(&self, target: Target) -> Result<ActivationDifferenceMap> {
        match target {
            Target::Unit { block, channel } => {
                let k = self.channels.len();
                if block >= k {
                    return Err(Error::Index { what: "block", index: block, limit: k });
                }
                if channel >= self.channels[block] {
                    return Err(Error::Index {
                        what: "channel",
                        index: channel,
                        limit: self.channels[block],
                    });
                }
            }
            Target::Logit { class } => {
                if class >= self.classes {
                    return Err(Error::Index { what: "class", index: class, limit: self.classes });
                }
            }
        }
        let side = self.side;
        let mut sum = vec![0.0f64; side * side];
        let mut count = vec![0u32; side * side];
        let a = self.base.get(target);
        for (r, resp) in self.windows.iter().zip(&self.occluded) {
            let delta = a - resp.get(target);
            for y in r.y0..r.y1 {
                for x in r.x0..r.x1 {
                    sum[y * side + x] += delta;
                    count[y * side + x] += 1;
                }
            }
        }
        let values: Vec<f32> = sum
            .iter()
            .zip(&count)
            .map(|(&s, &c)| if c == 0 { 0.0 } else { (s / c as f64) as f32 })
            .collect();
        Ok(ActivationDifferenceMap {
            target,
            values: Tensor::from_f32(vec![side, side], values)?,
            config: self.config.clone(),
        })
    }

    /// One map per channel of `block`, in channel order.
    pub fn block_maps(&self, block: usize) -> Result<Vec<ActivationDifferenceMap>> {
        let k = self.channels.len();
        let n = *self.channels.get(block).ok_or(Error::Index { what: "block", index: block, limit: k })?;
        (0..n).map(|channel| self.map(Target::Unit { block, channel })).collect()
    }
}

pub fn activation_difference_map(
    model: &ModelState,
    image: &[f32],
    block: usize,
    channel: usize,
    cfg: &OcclusionConfig,
) -> Result<ActivationDifferenceMap> {
    check_unit(model, block, Some(channel))?;
    sweep(model, image, cfg)?.map(Target::Unit { block, channel })
}

pub fn all_maps(
    model: &ModelState,
    image: &[f32],
    block: usize,
    cfg: &OcclusionConfig,
) -> Result<Vec<ActivationDifferenceMap>> {
    check_unit(model, block, None)?;
    sweep(model, image, cfg)?.block_maps(block)
}

pub fn prediction_difference(
    model: &ModelState,
    image: &[f32],
    class: usize,
    cfg: &OcclusionConfig,
) -> Result<ActivationDifferenceMap> {
    if class >= model.num_classes() {
        return Err(Error::Index { what: "class", index: class, limit: model.num_classes() });
    }
    sweep(model, image, cfg)?.map(Target::Logit { class })
}

// Validate indices before paying for a sweep.
fn check_unit(model: &ModelState, block: usize, channel: Option<usize>) -> Result<()> {
    let ch = &model.architecture().channels;
    if block >= ch.len() {
        return Err(Error::Index { what: "block", index: block, limit: ch.len() });
    }
    match channel {
        Some(c) if c >= ch[block] => Err(Error::Index { what: "channel", index: c, limit: ch[block] }),
        _ => Ok(()),
    }
}

/// How a signed map becomes a pixel set.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Binarize {
    /// Pixels with value > 0.
    #[default]
    Positive,
    /// The `ceil(q·N)` largest values; equal values are taken in index order.
    TopQuantile(f64),
}

impl Binarize {
    pub fn top_quantile(q: f64) -> Result<Self> {
        if q > 0.0 && q <= 1.0 {
            Ok(Binarize::TopQuantile(q))
        } else {
            Err(Error::Invalid(format!("quantile must lie in (0, 1], got {q}")))
        }
    }
}

impl fmt::Display for Binarize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Binarize::Positive => f.write_str("positive"),
            Binarize::TopQuantile(q) => write!(f, "top:{q}"),
        }
    }
}

impl FromStr for Binarize {
    type Err = Error;

    /// `positive` or `top:<q>`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "positive" {
            return Ok(Binarize::Positive);
        }
        match s.strip_prefix("top:").map(str::parse::<f64>) {
            Some(Ok(q)) => Binarize::top_quantile(q),
            _ => Err(Error::Invalid(format!("unknown binarization `{s}` (expected positive or top:<q>)"))),
        }
    }
}

/// Binarize a row-major `height × width` map.
pub fn binarize_values(values: &[f32], height: usize, width: usize, policy: Binarize) -> BinaryMask {
    match policy {
        Binarize::Positive => {
            let bits = values.iter().map(|&v| u8::from(v > 0.0)).collect();
            BinaryMask::from_bits(height, width, bits).expect("bits are 0/1")
        }
        Binarize::TopQuantile(q) => {
            let n = values.len();
            let k = ((q * n as f64).ceil() as usize).min(n);
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
            let mut bits = vec![0u8; n];
            for &i in &order[..k] {
                bits[i] = 1;
            }
            BinaryMask::from_bits(height, width, bits).expect("bits are 0/1")
        }
    }
}

/// Interchange name of a unit map: `fm/<model>/<block>/<channel>`, block 1-based.
pub fn fm_name(model: &str, block: usize, channel: usize) -> String {
    format!("fm/{model}/{}/{channel}", block + 1)
}

pub fn gt_name(image_id: &str) -> String {
    format!("gt/{image_id}")
}

/// Write every unit map of `sweep` under `fm/<model>/…`.
pub fn export_sweep(w: &mut InterchangeWriter, model: &str, sweep: &Sweep) -> Result<()> {
    for block in 0..sweep.channels.len() {
        for m in sweep.block_maps(block)? {
            if let Target::Unit { block, channel } = m.target {
                w.write(&fm_name(model, block, channel), &m.values)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::micronet::Architecture;

    fn gray(v: f32) -> OcclusionConfig {
        OcclusionConfig::new(Replacement::FixedGray { value: v })
    }

    fn small_model(seed: u64) -> ModelState {
        let arch = Architecture { input_channels: 3, input_size: 16, channels: vec![4, 6] };
        ModelState::init(arch, 3, seed).unwrap()
    }

    fn image(seed: u64, n: usize) -> Vec<f32> {
        (0..n).map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f32 / 1000.0).collect()
    }

    #[test]
    fn window_grid() {
        let w = gray(0.5).windows(64);
        assert_eq!(w.len(), 15 * 15);
        assert_eq!(w[1], Rect { y0: 0, y1: 8, x0: 4, x1: 12 });
        assert_eq!(w.last().unwrap().y1, 64);
    }

    #[test]
    fn bad_configs() {
        let mut c = gray(0.5);
        c.stride = 0;
        assert!(c.validate(64).is_err());
        c.stride = 9;
        assert!(c.validate(64).is_err());
        c.stride = 4;
        c.window = 65;
        assert!(c.validate(64).is_err());
        let m = small_model(1);
        let c = OcclusionConfig::new(Replacement::DatasetChannelMean { values: vec![0.5; 2] });
        assert!(sweep(&m, &image(0, 3 * 256), &c).is_err());
    }

    #[test]
    fn constant_image_gives_zero_maps() {
        let m = small_model(2);
        let img = vec![0.3f32; 3 * 256];
        let mut cfg = gray(0.3);
        cfg.window = 4;
        cfg.stride = 2;
        let s = sweep(&m, &img, &cfg).unwrap();
        for b in 0..2 {
            for map in s.block_maps(b).unwrap() {
                assert!(map.data().iter().all(|&v| v == 0.0));
            }
        }
        assert!(s.map(Target::Logit { class: 1 }).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_window_is_uniform() {
        let m = small_model(3);
        let img = image(1, 3 * 256);
        let mut cfg = gray(0.0);
        cfg.window = 16;
        cfg.stride = 16;
        let map = activation_difference_map(&m, &img, 1, 2, &cfg).unwrap();
        let a = m.trace(&img).unwrap();
        let z = m.trace(&vec![0.0; 3 * 256]).unwrap();
        let mean = |t: &Trace<f32>| t.layers[1].pooled[2 * 16..3 * 16].iter().map(|&v| v as f64).sum::<f64>() / 16.0;
        let expect = (mean(&a) - mean(&z)) as f32;
        assert!(map.data().iter().all(|&v| v == expect));

        let p = prediction_difference(&m, &img, 0, &cfg).unwrap();
        let expect = (a.logits[0] as f64 - z.logits[0] as f64) as f32;
        assert!(p.data().iter().all(|&v| v == expect));
    }

    #[test]
    fn maps_match_brute_force_occlusion() {
        let m = small_model(4);
        let img = image(2, 3 * 256);
        let mut cfg = gray(0.5);
        cfg.window = 6;
        cfg.stride = 4;
        cfg.aggregation = Aggregation::SpatialMax;
        let s = sweep(&m, &img, &cfg).unwrap();
        let map = s.map(Target::Unit { block: 0, channel: 1 }).unwrap();

        // oracle: occlude by hand, full forward, accumulate per pixel
        let agg = |t: &Trace<f32>| t.layers[0].pooled[64..128].iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
        let a0 = agg(&m.trace(&img).unwrap());
        let mut sum = vec![0.0f64; 256];
        let mut cnt = vec![0u32; 256];
        for y0 in [0usize, 4, 8] {
            for x0 in [0usize, 4, 8] {
                let mut occ = img.clone();
                for c in 0..3 {
                    for y in y0..y0 + 6 {
                        for x in x0..x0 + 6 {
                            occ[c * 256 + y * 16 + x] = 0.5;
                        }
                    }
                }
                let d = a0 - agg(&m.trace(&occ).unwrap());
                for y in y0..y0 + 6 {
                    for x in x0..x0 + 6 {
                        sum[y * 16 + x] += d;
                        cnt[y * 16 + x] += 1;
                    }
                }
            }
        }
        for i in 0..256 {
            let want = if cnt[i] == 0 { 0.0 } else { (sum[i] / cnt[i] as f64) as f32 };
            assert_eq!(map.data()[i], want, "pixel {i}");
        }
        // columns and rows 14..16 are never covered
        assert_eq!(map.data()[15], 0.0);
    }

    #[test]
    fn all_maps_agree_with_single_maps() {
        let m = small_model(5);
        let img = image(3, 3 * 256);
        let cfg = gray(0.5);
        let all = all_maps(&m, &img, 1, &cfg).unwrap();
        assert_eq!(all.len(), 6);
        for (c, map) in all.iter().enumerate() {
            assert_eq!(map, &activation_difference_map(&m, &img, 1, c, &cfg).unwrap());
        }
    }

    #[test]
    fn pass_count_is_windows_plus_one() {
        let m = small_model(6);
        let s = sweep(&m, &image(4, 3 * 256), &gray(0.5)).unwrap();
        assert_eq!(s.num_windows(), 9);
        assert_eq!(s.passes(), 10);
    }

    #[test]
    fn index_errors() {
        let m = small_model(7);
        let img = image(5, 3 * 256);
        let cfg = gray(0.5);
        assert!(matches!(all_maps(&m, &img, 2, &cfg), Err(Error::Index { what: "block", .. })));
        assert!(matches!(
            activation_difference_map(&m, &img, 0, 4, &cfg),
            Err(Error::Index { what: "channel", .. })
        ));
        assert!(matches!(prediction_difference(&m, &img, 3, &cfg), Err(Error::Index { what: "class", .. })));
    }

    #[test]
    fn parallel_sweep_is_bit_identical() {
        let m = small_model(8);
        let img = image(6, 3 * 256);
        let mut cfg = gray(0.2);
        cfg.window = 4;
        cfg.stride = 1;
        let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let wide = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = serial.install(|| sweep(&m, &img, &cfg).unwrap().block_maps(1).unwrap());
        let b = wide.install(|| sweep(&m, &img, &cfg).unwrap().block_maps(1).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn positive_binarization() {
        let mask = binarize_values(&[-1.0, 0.0, 2.0], 1, 3, Binarize::Positive);
        assert_eq!(mask.bits(), &[0, 0, 1]);
        assert!(binarize_values(&[-1.0; 4], 2, 2, Binarize::Positive).is_empty());
    }

    #[test]
    fn quantile_bounds() {
        assert!(Binarize::top_quantile(0.0).is_err());
        assert!(Binarize::top_quantile(1.5).is_err());
        assert!(Binarize::top_quantile(1.0).is_ok());
        assert_eq!("top:0.25".parse::<Binarize>().unwrap(), Binarize::TopQuantile(0.25));
        assert_eq!("positive".parse::<Binarize>().unwrap(), Binarize::Positive);
        assert!("top:2".parse::<Binarize>().is_err());
        assert!("median".parse::<Binarize>().is_err());
    }

    #[test]
    fn quantile_selects_exact_count_with_index_tiebreak() {
        // coarse values force many ties
        let values: Vec<f32> = (0..4096).map(|i| ((i * 7919) % 13) as f32).collect();
        let mask = binarize_values(&values, 64, 64, Binarize::TopQuantile(0.25));
        assert_eq!(mask.count(), 1024);

        // oracle: threshold value, then fill the remainder in index order
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let cut = sorted[1023];
        let above = values.iter().filter(|&&v| v > cut).count();
        let mut need = 1024 - above;
        for (i, &v) in values.iter().enumerate() {
            let want = if v > cut {
                true
            } else if v == cut && need > 0 {
                need -= 1;
                true
            } else {
                false
            };
            assert_eq!(mask.bits()[i] == 1, want, "pixel {i}");
        }
    }

    #[test]
    fn names() {
        assert_eq!(fm_name("old", 0, 7), "fm/old/1/7");
        assert_eq!(gt_name("12"), "gt/12");
    }
}
