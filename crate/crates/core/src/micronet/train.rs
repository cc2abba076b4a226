use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{kernels, sc, Network, Scalar, Trace};
use crate::error::{Error, Result};

/// Gradients laid out like the parameters of a [`Network`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub blocks: Vec<(Vec<T>, Vec<T>)>,
    pub head_weight: Vec<T>,
    pub head_bias: Vec<T>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &Network<T>) -> Self {
        Gradients {
            blocks: net
                .blocks
                .iter()
                .map(|b| (vec![T::zero(); b.weight.len()], vec![T::zero(); b.bias.len()]))
                .collect(),
            head_weight: vec![T::zero(); net.head.weight.len()],
            head_bias: vec![T::zero(); net.head.bias.len()],
        }
    }

    /// Groups in the same order as [`Network::param_groups`].
    pub fn groups(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for (w, b) in &self.blocks {
            out.push(w);
            out.push(b);
        }
        out.push(&self.head_weight);
        out.push(&self.head_bias);
        out
    }
}

/// SGD with classical momentum: `v = μ·v + g; θ -= lr·v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd<T> {
    pub lr: f64,
    pub momentum: f64,
    velocity: Gradients<T>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(net: &Network<T>, lr: f64, momentum: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Invalid(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Invalid(format!("momentum must be in [0,1), got {momentum}")));
        }
        Ok(Sgd {
            lr,
            momentum,
            velocity: Gradients::zeros_like(net),
        })
    }

    fn apply(&mut self, net: &mut Network<T>, grads: &Gradients<T>) {
        let (lr, mu) = (sc::<T>(self.lr), sc::<T>(self.momentum));
        let step = |p: &mut [T], v: &mut [T], g: &[T]| {
            for ((p, v), &g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                *v = mu * *v + g;
                *p = *p - lr * *v;
            }
        };
        for (j, b) in net.blocks.iter_mut().enumerate() {
            if net.freeze_flags[j] {
                continue;
            }
            let (vw, vb) = &mut self.velocity.blocks[j];
            step(&mut b.weight, vw, &grads.blocks[j].0);
            step(&mut b.bias, vb, &grads.blocks[j].1);
        }
        if !net.head_frozen {
            step(&mut net.head.weight, &mut self.velocity.head_weight, &grads.head_weight);
            step(&mut net.head.bias, &mut self.velocity.head_bias, &grads.head_bias);
        }
    }
}

/// Mean softmax cross-entropy of `logits` against `label`, computed stably.
pub(crate) fn cross_entropy<T: Scalar>(logits: &[T], label: usize) -> (f64, Vec<f64>) {
    let l: Vec<f64> = logits.iter().map(|x| x.to_f64().unwrap()).collect();
    let max = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = l.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let loss = -(l[label] - max - z.ln());
    let probs = exps.into_iter().map(|e| e / z).collect();
    (loss, probs)
}

impl<T: Scalar> Network<T> {
    /// Mean cross-entropy over `batch` and its gradient. Gradients of frozen
    /// groups are left at zero and never computed.
    pub fn loss_and_grad(&self, batch: &[(&[T], usize)]) -> Result<(f64, Gradients<T>)> {
        if batch.is_empty() {
            return Err(Error::Invalid("empty batch".into()));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut total = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for &(image, label) in batch {
            if label >= self.head.classes {
                return Err(Error::Index {
                    what: "label",
                    index: label,
                    limit: self.head.classes,
                });
            }
            let trace = self.trace(image)?;
            let (loss, probs) = cross_entropy(&trace.logits, label);
            total += loss;
            let dlogits: Vec<T> = probs
                .iter()
                .enumerate()
                .map(|(c, p)| sc::<T>((p - if c == label { 1.0 } else { 0.0 }) * scale))
                .collect();
            self.backward(&trace, &dlogits, &mut grads);
        }
        let loss = total * scale;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss = {loss}")));
        }
        Ok((loss, grads))
    }

    fn backward(&self, t: &Trace<T>, dlogits: &[T], g: &mut Gradients<T>) {
        let h = &self.head;
        let f = h.features;
        if !self.head_frozen {
            for (c, &d) in dlogits.iter().enumerate() {
                g.head_bias[c] += d;
                for (gw, &x) in g.head_weight[c * f..(c + 1) * f].iter_mut().zip(&t.features) {
                    *gw += d * x;
                }
            }
        }
        let Some(lowest) = self.freeze_flags.iter().position(|&fz| !fz) else {
            return;
        };

        let k = self.blocks.len();
        let last = &t.layers[k - 1];
        let n = (last.side / 2) * (last.side / 2);
        let inv = sc::<T>(1.0 / n as f64);
        // gradient w.r.t. the last pooled output
        let mut dpooled = vec![T::zero(); last.pooled.len()];
        for fi in 0..f {
            let mut dfeat = T::zero();
            for (c, &d) in dlogits.iter().enumerate() {
                dfeat += h.weight[c * f + fi] * d;
            }
            dpooled[fi * n..(fi + 1) * n].fill(dfeat * inv);
        }

        for j in (lowest..k).rev() {
            let b = &self.blocks[j];
            let l = &t.layers[j];
            let side = l.side;
            let ps = side / 2;
            let mut dact = vec![T::zero(); l.act.len()];
            for c in 0..b.out_channels {
                let a = &l.act[c * side * side..(c + 1) * side * side];
                let da = &mut dact[c * side * side..(c + 1) * side * side];
                for y in 0..ps {
                    for x in 0..ps {
                        let i = kernels::pool_argmax(a, 2 * y * side + 2 * x, side);
                        if a[i] > T::zero() {
                            da[i] += dpooled[c * ps * ps + y * ps + x];
                        }
                    }
                }
            }
            let pside = side + 2;
            let npos = side * side;
            let kdim = b.in_channels * 9;
            let mut cols = Vec::new();
            kernels::im2col(&l.padded, b.in_channels, side, kernels::Rect::full(side), &mut cols);
            if !self.freeze_flags[j] {
                let (gw, gb) = &mut g.blocks[j];
                for oc in 0..b.out_channels {
                    let d = &dact[oc * npos..(oc + 1) * npos];
                    gb[oc] += d.iter().fold(T::zero(), |a, &v| a + v);
                    for kk in 0..kdim {
                        gw[oc * kdim + kk] += kernels::dot(d, &cols[kk * npos..(kk + 1) * npos]);
                    }
                }
            }
            if j > lowest {
                // d(cols) = Wᵀ·d(act), then scatter back onto the padded grid
                let dcols = &mut cols;
                dcols.fill(T::zero());
                for oc in 0..b.out_channels {
                    let d = &dact[oc * npos..(oc + 1) * npos];
                    for (kk, &wv) in b.weight[oc * kdim..(oc + 1) * kdim].iter().enumerate() {
                        kernels::axpy(&mut dcols[kk * npos..(kk + 1) * npos], wv, d);
                    }
                }
                let mut dpad = vec![T::zero(); l.padded.len()];
                for ic in 0..b.in_channels {
                    let dst = &mut dpad[ic * pside * pside..(ic + 1) * pside * pside];
                    for kk in 0..9 {
                        let (ky, kx) = (kk / 3, kk % 3);
                        let src = &dcols[(ic * 9 + kk) * npos..(ic * 9 + kk + 1) * npos];
                        for y in 0..side {
                            let row = &mut dst[(y + ky) * pside + kx..(y + ky) * pside + kx + side];
                            for (o, &v) in row.iter_mut().zip(&src[y * side..(y + 1) * side]) {
                                *o += v;
                            }
                        }
                    }
                }
                // strip the border to get d(previous pooled)
                let cin = b.in_channels;
                let mut prev = vec![T::zero(); cin * side * side];
                for c in 0..cin {
                    for y in 0..side {
                        let s = c * pside * pside + (y + 1) * pside + 1;
                        prev[c * side * side + y * side..c * side * side + (y + 1) * side]
                            .copy_from_slice(&dpad[s..s + side]);
                    }
                }
                dpooled = prev;
            }
        }
    }

    /// One SGD step on `batch`; returns the batch's mean cross-entropy.
    /// Frozen blocks (and a frozen head) are left bit-for-bit unchanged.
    pub fn train_step(&mut self, opt: &mut Sgd<T>, batch: &[(&[T], usize)]) -> Result<f64> {
        let (loss, grads) = self.loss_and_grad(batch)?;
        opt.apply(self, &grads);
        Ok(loss)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 15,
            lr: 0.01,
            momentum: 0.9,
            batch_size: 4,
            seed: 0,
        }
    }
}

impl<T: Scalar> Network<T> {
    /// Plain mini-batch training with a seeded shuffle each epoch. Returns the
    /// mean loss of every epoch.
    pub fn fit(&mut self, data: &[(&[T], usize)], cfg: &TrainConfig) -> Result<Vec<f64>> {
        if data.is_empty() {
            return Err(Error::Invalid("no training samples".into()));
        }
        if cfg.batch_size == 0 {
            return Err(Error::Invalid("batch_size must be positive".into()));
        }
        let mut opt = Sgd::new(self, cfg.lr, cfg.momentum)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut history = Vec::with_capacity(cfg.epochs);
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut sum = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<(&[T], usize)> = chunk.iter().map(|&i| data[i]).collect();
                sum += self.train_step(&mut opt, &batch)?;
                batches += 1;
            }
            history.push(sum / batches as f64);
        }
        Ok(history)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::micronet::{Architecture, ModelState};
    use rand::Rng;

    fn small() -> (Architecture, Vec<Vec<f64>>) {
        let arch = Architecture { input_channels: 3, input_size: 8, channels: vec![4, 4] };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let images = (0..3)
            .map(|_| (0..3 * 64).map(|_| rng.random::<f64>()).collect())
            .collect();
        (arch, images)
    }

    #[test]
    fn uniform_logits_give_ln_c() {
        let (loss, probs) = cross_entropy(&[0.0f32; 4], 2);
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!((loss - 1.3863).abs() < 1e-4);
        assert!(probs.iter().all(|p| (p - 0.25).abs() < 1e-12));
    }

    #[test]
    fn rejects_bad_inputs() {
        let (arch, images) = small();
        let mut net = Network::<f64>::init(arch, 3, 1).unwrap();
        assert!(Sgd::new(&net, 0.0, 0.9).is_err());
        let mut opt = Sgd::new(&net, 0.1, 0.9).unwrap();
        let batch = [(images[0].as_slice(), 3usize)];
        assert!(matches!(
            net.train_step(&mut opt, &batch),
            Err(Error::Index { what: "label", .. })
        ));
    }

    #[test]
    fn non_finite_loss_aborts() {
        let (arch, images) = small();
        let mut net = Network::<f64>::init(arch, 3, 1).unwrap();
        net.head.bias[0] = f64::INFINITY;
        let batch = [(images[0].as_slice(), 1usize)];
        assert!(matches!(net.loss_and_grad(&batch), Err(Error::NonFinite(_))));
    }

    /// Central differences on every coordinate of a tiny f64 model.
    #[test]
    fn gradient_matches_finite_differences() {
        let (arch, images) = small();
        let net = Network::<f64>::init(arch, 3, 7).unwrap();
        let batch: Vec<(&[f64], usize)> =
            images.iter().enumerate().map(|(i, im)| (im.as_slice(), i % 3)).collect();
        let (_, grads) = net.loss_and_grad(&batch).unwrap();
        let eps = 1e-5;
        let mut worst = 0.0f64;
        let n_groups = net.param_groups().len();
        for gi in 0..n_groups {
            let len = net.param_groups()[gi].1.len();
            for pi in 0..len {
                let mut plus = net.clone();
                plus.param_groups_mut()[gi][pi] += eps;
                let mut minus = net.clone();
                minus.param_groups_mut()[gi][pi] -= eps;
                let lp = plus.loss_and_grad(&batch).unwrap().0;
                let lm = minus.loss_and_grad(&batch).unwrap().0;
                let numeric = (lp - lm) / (2.0 * eps);
                let analytic = grads.groups()[gi][pi];
                let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max((analytic - numeric).abs() / denom);
            }
        }
        assert!(worst < 1e-5, "max relative error {worst}");
    }

    #[test]
    fn frozen_blocks_are_bit_identical() {
        let arch = Architecture { input_channels: 3, input_size: 16, channels: vec![4, 6, 8] };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let images: Vec<Vec<f32>> =
            (0..8).map(|_| (0..3 * 256).map(|_| rng.random::<f32>()).collect()).collect();
        let data: Vec<(&[f32], usize)> =
            images.iter().enumerate().map(|(i, im)| (im.as_slice(), i % 2)).collect();
        for pattern in 0..8u32 {
            let mut net = ModelState::init(arch.clone(), 2, 3).unwrap();
            for j in 0..3 {
                net.set_block_frozen(j, pattern & (1 << j) != 0).unwrap();
            }
            let before = net.clone();
            let cfg = TrainConfig { epochs: 3, batch_size: 3, lr: 0.05, ..Default::default() };
            net.fit(&data, &cfg).unwrap();
            for j in 0..3 {
                let frozen = pattern & (1 << j) != 0;
                assert_eq!(net.blocks[j] == before.blocks[j], frozen, "pattern {pattern} block {j}");
            }
            assert_ne!(net.head, before.head);
        }
    }

    #[test]
    fn head_only_training_changes_only_head() {
        let arch = Architecture { input_channels: 3, input_size: 16, channels: vec![4, 6] };
        let mut net = ModelState::init(arch, 2, 3).unwrap();
        for j in 0..2 {
            net.set_block_frozen(j, true).unwrap();
        }
        let before = net.clone();
        let img = vec![0.5f32; 3 * 256];
        let mut opt = Sgd::new(&net, 0.1, 0.9).unwrap();
        net.train_step(&mut opt, &[(img.as_slice(), 1)]).unwrap();
        assert_eq!(net.blocks, before.blocks);
        assert_ne!(net.head, before.head);
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let arch = Architecture { input_channels: 3, input_size: 16, channels: vec![4, 6] };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // class 1 images are bright, class 0 dark
        let images: Vec<(Vec<f32>, usize)> = (0..16)
            .map(|i| {
                let base = if i % 2 == 0 { 0.1 } else { 0.8 };
                ((0..3 * 256).map(|_| base + 0.1 * rng.random::<f32>()).collect(), i % 2)
            })
            .collect();
        let data: Vec<(&[f32], usize)> = images.iter().map(|(v, l)| (v.as_slice(), *l)).collect();
        let cfg = TrainConfig { epochs: 10, batch_size: 4, lr: 0.05, ..Default::default() };
        let mut a = ModelState::init(arch.clone(), 2, 5).unwrap();
        let mut b = ModelState::init(arch, 2, 5).unwrap();
        let ha = a.fit(&data, &cfg).unwrap();
        let hb = b.fit(&data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        assert!(ha.last().unwrap() < &ha[0]);
        assert!(ha.iter().all(|&l| l > 0.0));
    }
}
