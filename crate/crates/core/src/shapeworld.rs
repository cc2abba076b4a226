//! Synthetic single-object images with pixel-exact segmentation masks, and
//! class-incremental task streams over them.
//!
//! Each image is 3×64×64 u8: a textured background (seeded noise over a
//! linear gradient) with one solid-colour shape. The mask marks exactly the
//! pixels the shape was painted on. A pixel belongs to the shape when at least
//! two of its four sub-pixel sample points at offsets (0.25, 0.75) fall inside
//! the continuous geometry, i.e. rasterising at double resolution
//! and keeping 2×2 blocks with coverage ≥ 0.5.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interchange::{file_name_for, InterchangeReader, InterchangeWriter};
use crate::tensor::{BinaryMask, Tensor};

pub const IMAGE_SIZE: usize = 64;
pub const NUM_CLASSES: usize = 6;
pub const MIN_SHAPE_SIZE: f64 = 10.0;
pub const MAX_SHAPE_SIZE: f64 = 28.0;
pub const MIN_FOREGROUND: usize = 30;
pub const MAX_FOREGROUND: usize = 3000;
pub const INDEX_FILE: &str = "index.json";
const FG_CONTRAST: f64 = 70.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
    Cross,
    Ring,
    Star,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; NUM_CLASSES] = [
        ShapeKind::Circle,
        ShapeKind::Square,
        ShapeKind::Triangle,
        ShapeKind::Cross,
        ShapeKind::Ring,
        ShapeKind::Star,
    ];

    pub fn class_id(self) -> usize {
        self as usize
    }

    pub fn from_class(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }
}

/// Continuous shape geometry in pixel coordinates (pixel `(y, x)` spans
/// `[y, y+1) × [x, x+1)`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shape {
    pub kind: ShapeKind,
    pub cy: f64,
    pub cx: f64,
    /// Diameter or side length.
    pub size: f64,
}

impl Shape {
    pub fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let r = self.size / 2.0;
        match self.kind {
            ShapeKind::Circle => dy * dy + dx * dx <= r * r,
            ShapeKind::Square => dy.abs() <= r && dx.abs() <= r,
            ShapeKind::Ring => {
                let d2 = dy * dy + dx * dx;
                d2 <= r * r && d2 >= (0.5 * r) * (0.5 * r)
            }
            ShapeKind::Cross => {
                let arm = self.size / 6.0;
                (dy.abs() <= r && dx.abs() <= arm) || (dx.abs() <= r && dy.abs() <= arm)
            }
            ShapeKind::Triangle => {
                // equilateral, apex up, inscribed in the circle of radius r
                point_in_polygon(dy, dx, &regular_polygon(3, r, 0.0))
            }
            ShapeKind::Star => point_in_polygon(dy, dx, &regular_polygon(5, r, 0.5 * r)),
        }
    }

    /// Pixel-coverage rasterisation (≥ 2 of 4 sub-samples inside).
    pub fn rasterize(&self, side: usize) -> BinaryMask {
        BinaryMask::from_fn(side, side, |y, x| {
            let (y, x) = (y as f64, x as f64);
            let hits = [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)]
                .iter()
                .filter(|(oy, ox)| self.contains(y + oy, x + ox))
                .count();
            hits >= 2
        })
    }
}

/// Vertices (dy, dx) of a regular polygon, or of a star when `inner > 0`
/// (alternating outer/inner radii). The first vertex points up.
fn regular_polygon(points: usize, outer: f64, inner: f64) -> Vec<(f64, f64)> {
    let star = inner > 0.0;
    let n = if star { points * 2 } else { points };
    (0..n)
        .map(|i| {
            let a = -PI / 2.0 + 2.0 * PI * i as f64 / n as f64;
            let rad = if star && i % 2 == 1 { inner } else { outer };
            (rad * a.sin(), rad * a.cos())
        })
        .collect()
}

fn point_in_polygon(y: f64, x: f64, poly: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (yi, xi) = poly[i];
        let (yj, xj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: usize,
    /// u8 `[3, 64, 64]`.
    pub image: Tensor,
    pub label: usize,
    pub seg: BinaryMask,
}

impl Sample {
    /// Image scaled to `[0, 1]` as a flat f32 buffer.
    pub fn image_f32(&self) -> Vec<f32> {
        self.image
            .as_u8()
            .expect("sample images are u8")
            .iter()
            .map(|&v| v as f32 / 255.0)
            .collect()
    }

    pub fn image_tensor_f32(&self) -> Tensor {
        Tensor::from_f32(self.image.shape().to_vec(), self.image_f32()).expect("same shape")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub seed: u64,
    pub per_class: usize,
    pub samples: Vec<Sample>,
}

/// Render one sample from its own RNG substream.
pub fn render_sample(seed: u64, id: usize) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64);
    let label = id % NUM_CLASSES;
    let kind = ShapeKind::from_class(label).expect("in range");
    let side = IMAGE_SIZE as f64;

    let size = rng.random_range(MIN_SHAPE_SIZE..=MAX_SHAPE_SIZE);
    let margin = size / 2.0 + 1.0;
    let shape = Shape {
        kind,
        cy: rng.random_range(margin..side - margin),
        cx: rng.random_range(margin..side - margin),
        size,
    };
    // background: per-channel linear gradient plus uniform noise
    let mut grad = [[0.0f64; 3]; 3];
    for g in &mut grad {
        *g = [
            rng.random_range(30.0..140.0),
            rng.random_range(-40.0..40.0),
            rng.random_range(-40.0..40.0),
        ];
    }
    // the shape is brighter than the local background level by at least FG_CONTRAST in every channel
    let fg: [f64; 3] = std::array::from_fn(|c| rng.random_range(grad[c][0] + FG_CONTRAST..=255.0));
    let seg = shape.rasterize(IMAGE_SIZE);
    let n = IMAGE_SIZE * IMAGE_SIZE;
    let mut pixels = vec![0u8; 3 * n];
    for y in 0..IMAGE_SIZE {
        for x in 0..IMAGE_SIZE {
            let (fy, fx) = (y as f64 / side - 0.5, x as f64 / side - 0.5);
            for c in 0..3 {
                let noise: f64 = rng.random_range(-25.0..25.0);
                let v = if seg.get(y, x) {
                    fg[c]
                } else {
                    grad[c][0] + grad[c][1] * fy + grad[c][2] * fx + noise
                };
                pixels[c * n + y * IMAGE_SIZE + x] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Sample {
        id,
        image: Tensor::from_u8(vec![3, IMAGE_SIZE, IMAGE_SIZE], pixels).expect("sized"),
        label,
        seg,
    }
}

/// `per_class` samples of each of the six classes; sample `i` has class `i % 6`.
pub fn gen_dataset(seed: u64, per_class: usize) -> Result<Dataset> {
    if per_class < 10 {
        return Err(Error::Invalid(format!("per_class must be >= 10, got {per_class}")));
    }
    let samples = (0..per_class * NUM_CLASSES)
        .map(|id| render_sample(seed, id))
        .collect();
    Ok(Dataset {
        seed,
        per_class,
        samples,
    })
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        NUM_CLASSES
    }

    /// Per-channel mean intensity in `[0, 1]` over the given samples.
    pub fn channel_mean(&self, ids: &[usize]) -> [f32; 3] {
        let mut sum = [0u64; 3];
        let n = IMAGE_SIZE * IMAGE_SIZE;
        for &i in ids {
            let px = self.samples[i].image.as_u8().expect("u8");
            for (c, s) in sum.iter_mut().enumerate() {
                *s += px[c * n..(c + 1) * n].iter().map(|&v| v as u64).sum::<u64>();
            }
        }
        let count = (ids.len() * n).max(1) as f64;
        sum.map(|s| (s as f64 / count / 255.0) as f32)
    }

    /// Deterministic split: within each class, the first `1 - test_fraction`
    /// of samples (by id) train and the rest test.
    pub fn split(&self, test_fraction: f64) -> Result<(Vec<usize>, Vec<usize>)> {
        if !(0.0..1.0).contains(&test_fraction) || test_fraction == 0.0 {
            return Err(Error::Invalid(format!("test_fraction must be in (0,1), got {test_fraction}")));
        }
        let n_test = ((self.per_class as f64) * test_fraction).round().max(1.0) as usize;
        let n_train = self.per_class - n_test.min(self.per_class - 1);
        let mut train = Vec::new();
        let mut test = Vec::new();
        let mut seen = [0usize; NUM_CLASSES];
        for s in &self.samples {
            if seen[s.label] < n_train {
                train.push(s.id);
            } else {
                test.push(s.id);
            }
            seen[s.label] += 1;
        }
        Ok((train, test))
    }

    /// Emit as interchange tensors (`image/<id>`, `seg/<id>`) plus `index.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut w = InterchangeWriter::create(dir)?;
        let mut index = DatasetIndex {
            seed: self.seed,
            per_class: self.per_class,
            samples: BTreeMap::new(),
        };
        for s in &self.samples {
            let (img, seg) = (format!("image/{}", s.id), format!("seg/{}", s.id));
            w.write(&img, &s.image)?;
            w.write(&seg, &s.seg.to_tensor())?;
            index.samples.insert(
                s.id,
                IndexEntry {
                    label: s.label,
                    image: file_name_for(&img),
                    seg: file_name_for(&seg),
                },
            );
        }
        w.finish()?;
        let path = dir.join(INDEX_FILE);
        let text = serde_json::to_string_pretty(&index).expect("serializable");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(INDEX_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let index: DatasetIndex =
            serde_json::from_str(&text).map_err(|source| Error::Json { path, source })?;
        let r = InterchangeReader::open(dir)?;
        let mut samples = Vec::with_capacity(index.samples.len());
        for (expected, (&id, entry)) in index.samples.iter().enumerate() {
            if id != expected {
                return Err(Error::manifest("samples", format!("ids are not contiguous at {id}")));
            }
            let image = r.read(&format!("image/{id}"))?;
            if image.shape() != [3, IMAGE_SIZE, IMAGE_SIZE] {
                return Err(Error::Shape {
                    expected: vec![3, IMAGE_SIZE, IMAGE_SIZE],
                    actual: image.shape().to_vec(),
                });
            }
            image.expect_u8()?;
            let seg = BinaryMask::from_tensor(&r.read(&format!("seg/{id}"))?)?;
            samples.push(Sample {
                id,
                image,
                label: entry.label,
                seg,
            });
        }
        if samples.is_empty() {
            return Err(Error::EmptySampleSet);
        }
        Ok(Dataset {
            seed: index.seed,
            per_class: index.per_class,
            samples,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetIndex {
    seed: u64,
    per_class: usize,
    samples: BTreeMap<usize, IndexEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexEntry {
    label: usize,
    image: String,
    seg: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    pub classes: Vec<usize>,
    train: Vec<usize>,
    test: Vec<usize>,
}

impl Task {
    pub fn test_ids(&self) -> &[usize] {
        &self.test
    }
}

/// Ordered class-incremental tasks with disjoint class sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskStream {
    tasks: Vec<Task>,
}

/// Build a stream: the first `base_classes` class ids form task 0, then each
/// increment takes the next ids in order.
pub fn make_stream(
    dataset: &Dataset,
    train_ids: &[usize],
    test_ids: &[usize],
    base_classes: usize,
    increments: &[usize],
) -> Result<TaskStream> {
    let total = base_classes + increments.iter().sum::<usize>();
    if base_classes == 0 || increments.contains(&0) {
        return Err(Error::Invalid("every task needs at least one class".into()));
    }
    if total > dataset.num_classes() {
        return Err(Error::Invalid(format!(
            "stream needs {total} classes, dataset has {}",
            dataset.num_classes()
        )));
    }
    let mut tasks = Vec::new();
    let mut next = 0;
    for size in std::iter::once(base_classes).chain(increments.iter().copied()) {
        let classes: Vec<usize> = (next..next + size).collect();
        next += size;
        let pick = |ids: &[usize]| -> Vec<usize> {
            ids.iter()
                .copied()
                .filter(|&i| classes.contains(&dataset.samples[i].label))
                .collect()
        };
        tasks.push(Task {
            train: pick(train_ids),
            test: pick(test_ids),
            classes,
        });
    }
    Ok(TaskStream { tasks })
}

impl TaskStream {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn task(&self, t: usize) -> &Task {
        &self.tasks[t]
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    /// Training ids of task `t` only; earlier tasks' data is not reachable here.
    pub fn train_ids(&self, t: usize) -> &[usize] {
        &self.tasks[t].train
    }

    /// Classes of tasks `0..=t`.
    pub fn seen_classes(&self, t: usize) -> usize {
        self.tasks[..=t].iter().map(|k| k.classes.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn dataset_is_deterministic() {
        let a = gen_dataset(7, 10).unwrap();
        let b = gen_dataset(7, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, gen_dataset(8, 10).unwrap());
        assert!(gen_dataset(7, 9).is_err());
    }

    #[test]
    fn per_class_count() {
        let d = gen_dataset(1, 200).unwrap();
        assert_eq!(d.samples.len(), 1200);
        for c in 0..NUM_CLASSES {
            assert_eq!(d.samples.iter().filter(|s| s.label == c).count(), 200);
        }
    }

    #[test]
    fn sample_invariants() {
        let d = gen_dataset(3, 40).unwrap();
        for s in &d.samples {
            let n = s.seg.count();
            assert!((MIN_FOREGROUND..=MAX_FOREGROUND).contains(&n), "sample {} has {n}", s.id);
            // mask pixels carry exactly the foreground colour
            let px = s.image.as_u8().unwrap();
            let first = (0..64 * 64).find(|&i| s.seg.bits()[i] == 1).unwrap();
            for i in 0..64 * 64 {
                if s.seg.bits()[i] == 1 {
                    for c in 0..3 {
                        assert_eq!(px[c * 4096 + i], px[c * 4096 + first]);
                    }
                }
            }
        }
    }

    #[test]
    fn smallest_shapes_stay_above_floor() {
        for kind in ShapeKind::ALL {
            let s = Shape { kind, cy: 32.0, cx: 32.0, size: MIN_SHAPE_SIZE };
            let n = s.rasterize(64).count();
            assert!(n >= MIN_FOREGROUND, "{kind:?}: {n}");
        }
    }

    #[test]
    fn circle_pixel_count_bracket() {
        for r in [5.0f64, 7.5, 9.0, 12.3, 14.0] {
            let c = Shape { kind: ShapeKind::Circle, cy: 32.0, cx: 32.0, size: 2.0 * r };
            let n = c.rasterize(64).count() as f64;
            assert!(n >= PI * (r - 1.0).powi(2) && n <= PI * (r + 1.0).powi(2), "r={r} n={n}");
        }
    }

    /// Independent re-rasterisation: sample every pixel centre of a 128×128
    /// grid, then downsample 2×2 blocks at coverage ≥ 0.5.
    fn double_res_oracle(shape: &Shape) -> BinaryMask {
        let hi: Vec<bool> = (0..128 * 128)
            .map(|i| {
                let (y, x) = ((i / 128) as f64, (i % 128) as f64);
                shape.contains((y + 0.5) / 2.0, (x + 0.5) / 2.0)
            })
            .collect();
        BinaryMask::from_fn(64, 64, |y, x| {
            let c = [(0, 0), (0, 1), (1, 0), (1, 1)]
                .iter()
                .filter(|(dy, dx)| hi[(2 * y + dy) * 128 + 2 * x + dx])
                .count();
            c * 2 >= 4
        })
    }

    #[test]
    fn masks_match_double_resolution_oracle() {
        let d = gen_dataset(5, 10).unwrap();
        for s in &d.samples {
            let kind = ShapeKind::from_class(s.label).unwrap();
            // recover the geometry from the same RNG substream
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            rng.set_stream(s.id as u64);
            let size = rng.random_range(MIN_SHAPE_SIZE..=MAX_SHAPE_SIZE);
            let margin = size / 2.0 + 1.0;
            let shape = Shape {
                kind,
                cy: rng.random_range(margin..64.0 - margin),
                cx: rng.random_range(margin..64.0 - margin),
                size,
            };
            assert_eq!(double_res_oracle(&shape), s.seg, "sample {}", s.id);
        }
    }

    #[test]
    fn stream_shapes() {
        let d = gen_dataset(1, 10).unwrap();
        let (train, test) = d.split(0.2).unwrap();
        assert_eq!(train.len(), 48);
        assert_eq!(test.len(), 12);
        let s = make_stream(&d, &train, &test, 4, &[1, 1]).unwrap();
        let sizes: Vec<usize> = s.tasks().iter().map(|t| t.classes.len()).collect();
        assert_eq!(sizes, vec![4, 1, 1]);
        assert_eq!(s.seen_classes(1), 5);
        for t in 0..3 {
            for &i in s.train_ids(t) {
                assert!(s.task(t).classes.contains(&d.samples[i].label));
            }
        }
        let joint = make_stream(&d, &train, &test, 6, &[]).unwrap();
        assert_eq!(joint.len(), 1);
        assert!(make_stream(&d, &train, &test, 4, &[2, 1]).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = gen_dataset(2, 10).unwrap();
        d.save(dir.path()).unwrap();
        assert_eq!(Dataset::load(dir.path()).unwrap(), d);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn stream_tasks_are_disjoint(base in 1usize..6, incs in proptest::collection::vec(1usize..3, 0..4)) {
            let d = gen_dataset(0, 10).unwrap();
            let (train, test) = d.split(0.2).unwrap();
            match make_stream(&d, &train, &test, base, &incs) {
                Ok(s) => {
                    for a in 0..s.len() {
                        for b in a + 1..s.len() {
                            let ca = &s.task(a).classes;
                            prop_assert!(s.task(b).classes.iter().all(|c| !ca.contains(c)));
                            let ta = s.train_ids(a);
                            prop_assert!(s.train_ids(b).iter().all(|i| !ta.contains(i)));
                        }
                    }
                }
                Err(_) => prop_assert!(base + incs.iter().sum::<usize>() > 6),
            }
        }
    }
}
