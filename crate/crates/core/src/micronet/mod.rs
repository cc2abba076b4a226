//! A small convolutional classifier with `K` blocks of
//! `conv3x3 (pad 1) -> ReLU -> maxpool 2x2`, global average pooling and a
//! linear head.
//!
//! [`Network`] is generic over the scalar so the same code runs in f32 for
//! training and analysis and in f64 for gradient checking. [`ModelState`] is
//! the f32 instantiation used everywhere else.
//!
//! Block numbers in external names (tensor names, freeze plans, dissection
//! output) are 1-based; indices into [`Network::blocks`] are 0-based.

mod io;
pub mod kernels;
mod train;

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign};

use num_traits::{Float, FromPrimitive};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{self, KeyValues};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use io::{load_model, save_model, MODEL_FILE};
pub use kernels::Rect;
pub use train::{Gradients, Sgd, TrainConfig};

/// Floating-point element type the network can run in.
pub trait Scalar:
    Float + FromPrimitive + AddAssign + MulAssign + Send + Sync + Debug + Default + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
pub(crate) fn sc<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("finite conversion")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub input_channels: usize,
    pub input_size: usize,
    pub channels: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            input_channels: 3,
            input_size: 64,
            channels: vec![8, 16, 32, 64],
        }
    }
}

impl Architecture {
    pub const KEYS: [&'static str; 3] = ["input_channels", "input_size", "channels"];

    pub fn num_blocks(&self) -> usize {
        self.channels.len()
    }

    /// Spatial side of the input to block `j` (0-based).
    pub fn block_input_side(&self, j: usize) -> usize {
        self.input_size >> j
    }

    pub fn block_in_channels(&self, j: usize) -> usize {
        if j == 0 {
            self.input_channels
        } else {
            self.channels[j - 1]
        }
    }

    pub fn feature_dim(&self) -> usize {
        *self.channels.last().expect("validated")
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.channels.len();
        if k < 2 {
            return Err(Error::Architecture(format!("need at least 2 blocks, got {k}")));
        }
        if self.input_channels == 0 || self.channels.contains(&0) {
            return Err(Error::Architecture("zero channels".into()));
        }
        if self.input_size == 0 || self.input_size % (1 << k) != 0 {
            return Err(Error::Architecture(format!(
                "input size {} is not divisible by 2^{k}",
                self.input_size
            )));
        }
        Ok(())
    }

    pub fn from_config(kv: &KeyValues) -> Result<Self> {
        let d = Architecture::default();
        let arch = Architecture {
            input_channels: kv.get("input_channels")?.unwrap_or(d.input_channels),
            input_size: kv.get("input_size")?.unwrap_or(d.input_size),
            channels: kv.get_list("channels")?.unwrap_or(d.channels),
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        kv.reject_unknown(&Self::KEYS)?;
        Self::from_config(&kv)
    }

    pub fn to_config(&self) -> String {
        config::render(&[
            ("input_channels", self.input_channels.to_string()),
            ("input_size", self.input_size.to_string()),
            ("channels", config::join(&self.channels)),
        ])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `out × in × 3 × 3`, row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head<T> {
    pub features: usize,
    pub classes: usize,
    /// `classes × features`, row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub(crate) arch: Architecture,
    pub(crate) blocks: Vec<ConvBlock<T>>,
    pub(crate) head: Head<T>,
    pub(crate) freeze_flags: Vec<bool>,
    pub(crate) head_frozen: bool,
    pub(crate) seed: u64,
}

/// The f32 model used for training, analysis and persistence.
pub type ModelState = Network<f32>;

/// Per-block outputs for one image plus the final logits.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockActivations {
    /// One `[channels, h, w]` tensor per block (after pooling).
    pub blocks: Vec<Tensor>,
    pub logits: Vec<f32>,
}

/// Every intermediate buffer of a forward pass, kept for backprop and for
/// incremental recomputation under occlusion.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    pub layers: Vec<LayerTrace<T>>,
    pub features: Vec<T>,
    pub logits: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct LayerTrace<T> {
    /// Input to the block with a one-pixel zero border: `in × (side+2)²`.
    pub padded: Vec<T>,
    /// Post-ReLU convolution output: `out × side²`.
    pub act: Vec<T>,
    /// Block output after pooling: `out × (side/2)²`.
    pub pooled: Vec<T>,
    pub side: usize,
}

impl<T: Scalar> Network<T> {
    pub fn init(arch: Architecture, num_classes: usize, seed: u64) -> Result<Self> {
        arch.validate()?;
        if num_classes == 0 {
            return Err(Error::Invalid("num_classes must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blocks = Vec::with_capacity(arch.num_blocks());
        for j in 0..arch.num_blocks() {
            let (cin, cout) = (arch.block_in_channels(j), arch.channels[j]);
            // He: std = sqrt(2 / fan_in)
            let normal = Normal::new(0.0, (2.0 / (cin * 9) as f64).sqrt()).unwrap();
            let weight = (0..cout * cin * 9).map(|_| sc(normal.sample(&mut rng))).collect();
            blocks.push(ConvBlock {
                in_channels: cin,
                out_channels: cout,
                weight,
                bias: vec![T::zero(); cout],
            });
        }
        let features = arch.feature_dim();
        let normal = Normal::new(0.0, (1.0 / features as f64).sqrt()).unwrap();
        let head = Head {
            features,
            classes: num_classes,
            weight: (0..num_classes * features)
                .map(|_| sc(normal.sample(&mut rng)))
                .collect(),
            bias: vec![T::zero(); num_classes],
        };
        let k = arch.num_blocks();
        Ok(Network {
            arch,
            blocks,
            head,
            freeze_flags: vec![false; k],
            head_frozen: false,
            seed,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn num_classes(&self) -> usize {
        self.head.classes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn blocks(&self) -> &[ConvBlock<T>] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [ConvBlock<T>] {
        &mut self.blocks
    }

    pub fn head(&self) -> &Head<T> {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut Head<T> {
        &mut self.head
    }

    pub fn freeze_flags(&self) -> &[bool] {
        &self.freeze_flags
    }

    pub fn head_frozen(&self) -> bool {
        self.head_frozen
    }

    /// Freeze or unfreeze block `j` (0-based).
    pub fn set_block_frozen(&mut self, j: usize, frozen: bool) -> Result<()> {
        let k = self.blocks.len();
        let flag = self.freeze_flags.get_mut(j).ok_or(Error::Index {
            what: "block",
            index: j,
            limit: k,
        })?;
        *flag = frozen;
        Ok(())
    }

    pub fn set_head_frozen(&mut self, frozen: bool) {
        self.head_frozen = frozen;
    }

    pub fn unfreeze_all(&mut self) {
        self.freeze_flags.iter_mut().for_each(|f| *f = false);
        self.head_frozen = false;
    }

    /// Same architecture (block count and channel widths).
    pub fn same_architecture<U>(&self, other: &Network<U>) -> bool {
        self.arch == other.arch
    }

    /// Convert every parameter to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let conv = |v: &[T]| v.iter().map(|x| sc::<U>(x.to_f64().unwrap())).collect();
        Network {
            arch: self.arch.clone(),
            blocks: self
                .blocks
                .iter()
                .map(|b| ConvBlock {
                    in_channels: b.in_channels,
                    out_channels: b.out_channels,
                    weight: conv(&b.weight),
                    bias: conv(&b.bias),
                })
                .collect(),
            head: Head {
                features: self.head.features,
                classes: self.head.classes,
                weight: conv(&self.head.weight),
                bias: conv(&self.head.bias),
            },
            freeze_flags: self.freeze_flags.clone(),
            head_frozen: self.head_frozen,
            seed: self.seed,
        }
    }

    /// Parameter groups in canonical order with their external names.
    pub fn param_groups(&self) -> Vec<(String, &[T])> {
        let mut out = Vec::new();
        for (j, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{}.weight", j + 1), b.weight.as_slice()));
            out.push((format!("block{}.bias", j + 1), b.bias.as_slice()));
        }
        out.push(("head.weight".to_string(), self.head.weight.as_slice()));
        out.push(("head.bias".to_string(), self.head.bias.as_slice()));
        out
    }

    pub fn param_groups_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for b in &mut self.blocks {
            out.push(&mut b.weight);
            out.push(&mut b.bias);
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    fn check_image(&self, image: &[T]) -> Result<()> {
        let s = self.arch.input_size;
        let n = self.arch.input_channels * s * s;
        if image.len() != n {
            return Err(Error::Shape {
                expected: vec![self.arch.input_channels, s, s],
                actual: vec![image.len()],
            });
        }
        Ok(())
    }

    /// Allocate a trace with correctly sized, zeroed buffers.
    pub fn empty_trace(&self) -> Trace<T> {
        let layers = self
            .blocks
            .iter()
            .enumerate()
            .map(|(j, b)| {
                let side = self.arch.block_input_side(j);
                LayerTrace {
                    padded: vec![T::zero(); b.in_channels * (side + 2) * (side + 2)],
                    act: vec![T::zero(); b.out_channels * side * side],
                    pooled: vec![T::zero(); b.out_channels * (side / 2) * (side / 2)],
                    side,
                }
            })
            .collect();
        Trace {
            layers,
            features: vec![T::zero(); self.head.features],
            logits: vec![T::zero(); self.head.classes],
        }
    }

    /// Full forward pass over a flat `channels × side²` image.
    pub fn trace(&self, image: &[T]) -> Result<Trace<T>> {
        self.check_image(image)?;
        let mut t = self.empty_trace();
        let s = self.arch.input_size;
        kernels::pad_region(image, self.arch.input_channels, s, &mut t.layers[0].padded, Rect::full(s));
        for j in 0..self.blocks.len() {
            let side = t.layers[j].side;
            self.run_block(&mut t, j, Rect::full(side));
        }
        self.finish_head(&mut t);
        Ok(t)
    }

    /// Recompute block `j` where its input changed inside `changed` (input
    /// coordinates); returns the changed region of the block output.
    fn run_block(&self, t: &mut Trace<T>, j: usize, changed: Rect) -> Rect {
        let b = &self.blocks[j];
        let side = t.layers[j].side;
        let conv_rect = changed.dilate(1, side);
        let pool_rect = conv_rect.pooled(side / 2);
        {
            let l = &mut t.layers[j];
            kernels::conv3x3_relu(
                &l.padded,
                b.in_channels,
                side,
                &b.weight,
                &b.bias,
                b.out_channels,
                &mut l.act,
                conv_rect,
            );
            kernels::maxpool2(&l.act, b.out_channels, side, &mut l.pooled, pool_rect);
        }
        if j + 1 < self.blocks.len() {
            let (cur, next) = t.layers.split_at_mut(j + 1);
            kernels::pad_region(&cur[j].pooled, b.out_channels, side / 2, &mut next[0].padded, pool_rect);
        }
        pool_rect
    }

    fn finish_head(&self, t: &mut Trace<T>) {
        let last = t.layers.last().expect("K >= 2");
        let n = (last.side / 2) * (last.side / 2);
        let inv = sc::<T>(1.0 / n as f64);
        for (c, f) in t.features.iter_mut().enumerate() {
            let mut s = T::zero();
            for &v in &last.pooled[c * n..(c + 1) * n] {
                s += v;
            }
            *f = s * inv;
        }
        let h = &self.head;
        for (c, l) in t.logits.iter_mut().enumerate() {
            let mut s = h.bias[c];
            for (w, x) in h.weight[c * h.features..(c + 1) * h.features].iter().zip(&t.features) {
                s += *w * *x;
            }
            *l = s;
        }
    }

    /// Forward pass for `base`'s image with the input rectangle `patch`
    /// overwritten by `fill` (one value per input channel). `scratch` must
    /// come from [`Network::empty_trace`]; it is overwritten. Only regions
    /// reachable from the patch are recomputed.
    pub fn trace_with_patch(&self, base: &Trace<T>, patch: Rect, fill: &[T], scratch: &mut Trace<T>) {
        for (s, b) in scratch.layers.iter_mut().zip(&base.layers) {
            s.padded.copy_from_slice(&b.padded);
            s.act.copy_from_slice(&b.act);
            s.pooled.copy_from_slice(&b.pooled);
        }
        let side = self.arch.input_size;
        let ps = side + 2;
        let l0 = &mut scratch.layers[0].padded;
        for (c, &v) in fill.iter().enumerate().take(self.arch.input_channels) {
            for y in patch.y0..patch.y1 {
                let row = c * ps * ps + (y + 1) * ps + 1;
                l0[row + patch.x0..row + patch.x1].fill(v);
            }
        }
        let mut changed = patch;
        for j in 0..self.blocks.len() {
            if changed.is_empty() {
                break;
            }
            changed = self.run_block(scratch, j, changed);
        }
        self.finish_head(scratch);
    }

    /// Add Gaussian noise with std `scale × std(block weights)` to the weights of block `j` (0-based).
    pub fn perturb_block(&mut self, j: usize, scale: f64, seed: u64) -> Result<()> {
        let k = self.blocks.len();
        let b = self.blocks.get_mut(j).ok_or(Error::Index {
            what: "block",
            index: j,
            limit: k,
        })?;
        let n = b.weight.len() as f64;
        let mean = b.weight.iter().map(|w| w.to_f64().unwrap()).sum::<f64>() / n;
        let var = b
            .weight
            .iter()
            .map(|w| (w.to_f64().unwrap() - mean).powi(2))
            .sum::<f64>()
            / n;
        let sigma = scale * var.sqrt();
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::Invalid(format!("bad noise scale {sigma}")));
        }
        let normal = Normal::new(0.0, sigma).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in &mut b.weight {
            *w += sc::<T>(normal.sample(&mut rng));
        }
        Ok(())
    }

    /// Grow the head by `extra` classes. Old rows are copied verbatim; new
    /// rows are drawn from N(0, 0.01²) with zero bias.
    pub fn expand_head(&self, extra: usize, seed: u64) -> Result<Self> {
        if extra == 0 {
            return Err(Error::Invalid("expand_head needs extra_classes >= 1".into()));
        }
        let mut out = self.clone();
        let normal = Normal::new(0.0, 0.01).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = out.head.features;
        out.head
            .weight
            .extend((0..extra * f).map(|_| sc::<T>(normal.sample(&mut rng))));
        out.head.bias.extend(std::iter::repeat_n(T::zero(), extra));
        out.head.classes += extra;
        Ok(out)
    }
}

impl ModelState {
    /// Run the model on a `[channels, side, side]` f32 image.
    pub fn forward(&self, image: &Tensor) -> Result<BlockActivations> {
        let s = self.arch.input_size;
        let expected = vec![self.arch.input_channels, s, s];
        if image.shape() != expected.as_slice() {
            return Err(Error::Shape {
                expected,
                actual: image.shape().to_vec(),
            });
        }
        let t = self.trace(image.expect_f32()?)?;
        let blocks = t
            .layers
            .iter()
            .zip(&self.blocks)
            .map(|(l, b)| {
                Tensor::from_f32(vec![b.out_channels, l.side / 2, l.side / 2], l.pooled.clone())
                    .expect("sized by construction")
            })
            .collect();
        Ok(BlockActivations {
            blocks,
            logits: t.logits,
        })
    }

    /// Index of the largest logit (first on ties).
    pub fn predict(&self, image: &[f32]) -> Result<usize> {
        let t = self.trace(image)?;
        Ok(argmax(&t.logits))
    }
}

pub(crate) fn argmax<T: PartialOrd + Copy>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_image(arch: &Architecture, seed: u64) -> Vec<f32> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = arch.input_channels * arch.input_size * arch.input_size;
        (0..n).map(|_| rng.random::<f32>()).collect()
    }

    #[test]
    fn init_is_deterministic() {
        let a = ModelState::init(Architecture::default(), 4, 3).unwrap();
        let b = ModelState::init(Architecture::default(), 4, 3).unwrap();
        assert_eq!(a, b);
        let c = ModelState::init(Architecture::default(), 4, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn default_architecture() {
        let m = ModelState::init(Architecture::default(), 4, 0).unwrap();
        assert_eq!(m.num_blocks(), 4);
        let widths: Vec<usize> = m.blocks().iter().map(|b| b.out_channels).collect();
        assert_eq!(widths, vec![8, 16, 32, 64]);
        assert_eq!(m.head().classes, 4);
        assert_eq!(m.head().weight.len(), 4 * 64);
        assert!(m.freeze_flags().iter().all(|f| !f));
    }

    #[test]
    fn rejects_bad_architectures() {
        let one_block = Architecture { channels: vec![8], ..Default::default() };
        assert!(ModelState::init(one_block, 4, 0).is_err());
        let zero = Architecture { channels: vec![8, 0], ..Default::default() };
        assert!(ModelState::init(zero, 4, 0).is_err());
        let odd = Architecture { input_size: 30, ..Default::default() };
        assert!(ModelState::init(odd, 4, 0).is_err());
    }

    #[test]
    fn architecture_config_round_trip() {
        let a = Architecture { input_channels: 1, input_size: 16, channels: vec![4, 6] };
        assert_eq!(Architecture::parse(&a.to_config()).unwrap(), a);
        assert!(Architecture::parse("depth=3").is_err());
    }

    #[test]
    fn zero_image_gives_bias_logits() {
        let m = ModelState::init(Architecture::default(), 4, 1).unwrap();
        let img = Tensor::from_f32(vec![3, 64, 64], vec![0.0; 3 * 64 * 64]).unwrap();
        let out = m.forward(&img).unwrap();
        assert_eq!(out.logits, vec![0.0; 4]);
        assert_eq!(out.blocks.len(), 4);
        assert_eq!(out.blocks[3].shape(), &[64, 4, 4]);
    }

    #[test]
    fn forward_is_pure() {
        let arch = Architecture::default();
        let m = ModelState::init(arch.clone(), 4, 1).unwrap();
        let img = Tensor::from_f32(vec![3, 64, 64], toy_image(&arch, 9)).unwrap();
        let a = m.forward(&img).unwrap();
        let b = m.forward(&img).unwrap();
        assert_eq!(a, b);
        assert!(a.logits.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn forward_rejects_wrong_shape() {
        let m = ModelState::init(Architecture::default(), 4, 1).unwrap();
        let img = Tensor::from_f32(vec![3, 32, 32], vec![0.0; 3 * 32 * 32]).unwrap();
        assert!(matches!(m.forward(&img), Err(Error::Shape { .. })));
    }

    /// Pencil-and-paper check: one input channel, 4×4 image, a single 3×3
    /// kernel, pooled to 2×2.
    #[test]
    fn hand_computed_first_block() {
        let arch = Architecture { input_channels: 1, input_size: 4, channels: vec![1, 1] };
        let mut m = ModelState::init(arch, 1, 0).unwrap();
        m.blocks[0].weight = vec![0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0];
        m.blocks[0].bias = vec![0.5];
        #[rustfmt::skip]
        let img = vec![
            1.0, 2.0, 0.0, 0.0,
            0.0, 1.0, 0.0, 3.0,
            0.0, 0.0, 1.0, 0.0,
            2.0, 0.0, 0.0, 1.0,
        ];
        let t = m.trace(&img).unwrap();
        // Cross-shaped Laplacian over a zero-padded image, plus 0.5, then ReLU.
        // e.g. (0,2): left 2 + 0.5 = 2.5; (1,2): down 1 + left 1 + right 3 + 0.5 = 5.5;
        // (1,1): up 2 - 4*1 + 0.5 < 0 -> 0.
        #[rustfmt::skip]
        let expected_act = vec![
            0.0, 0.0, 2.5, 3.5,
            2.5, 0.0, 5.5, 0.0,
            2.5, 2.5, 0.0, 5.5,
            0.0, 2.5, 2.5, 0.0,
        ];
        assert_eq!(t.layers[0].act, expected_act);
        assert_eq!(t.layers[0].pooled, vec![2.5, 5.5, 2.5, 5.5]);
    }

    #[test]
    fn patched_trace_matches_full_forward() {
        let arch = Architecture::default();
        let m = ModelState::init(arch.clone(), 4, 5).unwrap();
        let img = toy_image(&arch, 2);
        let base = m.trace(&img).unwrap();
        let mut scratch = m.empty_trace();
        let patch = Rect { y0: 20, y1: 28, x0: 40, x1: 48 };
        let fill = [0.3f32, 0.4, 0.5];
        m.trace_with_patch(&base, patch, &fill, &mut scratch);

        let mut occluded = img.clone();
        for (c, &v) in fill.iter().enumerate() {
            for y in patch.y0..patch.y1 {
                for x in patch.x0..patch.x1 {
                    occluded[c * 64 * 64 + y * 64 + x] = v;
                }
            }
        }
        let full = m.trace(&occluded).unwrap();
        for (a, b) in scratch.layers.iter().zip(&full.layers) {
            assert_eq!(a.pooled, b.pooled);
        }
        assert_eq!(scratch.logits, full.logits);
    }

    #[test]
    fn expand_head_keeps_old_rows() {
        let arch = Architecture::default();
        let m = ModelState::init(arch.clone(), 4, 5).unwrap();
        assert!(m.expand_head(0, 1).is_err());
        let e = m.expand_head(1, 9).unwrap();
        assert_eq!(e.num_classes(), 5);
        assert_eq!(&e.head().weight[..4 * 64], &m.head().weight[..]);
        assert_eq!(&e.head().bias[..4], &m.head().bias[..]);
        let img = toy_image(&arch, 3);
        let before = m.trace(&img).unwrap().logits;
        let after = e.trace(&img).unwrap().logits;
        assert_eq!(&after[..4], &before[..]);
    }

    #[test]
    fn perturb_touches_only_one_block() {
        let m = ModelState::init(Architecture::default(), 4, 5).unwrap();
        let mut p = m.clone();
        p.perturb_block(2, 0.5, 77).unwrap();
        for j in 0..4 {
            assert_eq!(m.blocks[j] == p.blocks[j], j != 2, "block {j}");
        }
        assert_eq!(m.head, p.head);
    }
}
