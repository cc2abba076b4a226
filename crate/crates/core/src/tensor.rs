//! Dense row-major arrays and binary masks.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F64,
    U8,
}

impl DType {
    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
            DType::U8 => "u8",
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
            DType::U8 => 1,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(DType::F32),
            "f64" => Ok(DType::F64),
            "u8" => Ok(DType::U8),
            other => Err(Error::UnknownDtype(other.to_string())),
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl TensorData {
    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
            TensorData::U8(_) => DType::U8,
        }
    }

    fn get_f64(&self, i: usize) -> f64 {
        match self {
            TensorData::F32(v) => v[i] as f64,
            TensorData::F64(v) => v[i],
            TensorData::U8(v) => v[i] as f64,
        }
    }
}

/// A dense n-dimensional array. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Invalid(format!("shape {shape:?} has a zero extent")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Invalid(format!(
                "shape {shape:?} needs {n} elements, buffer has {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Self::new(shape, TensorData::F32(data))
    }

    pub fn from_f64(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::new(shape, TensorData::F64(data))
    }

    pub fn from_u8(shape: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        Self::new(shape, TensorData::U8(data))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.len() == 0
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<&[f64]> {
        match &self.data {
            TensorData::F64(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_u8(&self) -> Option<&[u8]> {
        match &self.data {
            TensorData::U8(v) => Some(v),
            _ => None,
        }
    }

    pub fn expect_f32(&self) -> Result<&[f32]> {
        self.as_f32().ok_or(Error::Dtype {
            expected: "f32",
            actual: self.dtype().name(),
        })
    }

    pub fn expect_u8(&self) -> Result<&[u8]> {
        self.as_u8().ok_or(Error::Dtype {
            expected: "u8",
            actual: self.dtype().name(),
        })
    }

    pub fn into_data(self) -> TensorData {
        self.data
    }

    pub fn strides(&self) -> Vec<usize> {
        strides_for(&self.shape)
    }

    /// Flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() {
            return Err(Error::Invalid(format!(
                "index rank {} != tensor rank {}",
                index.len(),
                self.shape.len()
            )));
        }
        let mut off = 0;
        for ((&i, &d), s) in index.iter().zip(&self.shape).zip(self.strides()) {
            if i >= d {
                return Err(Error::Index {
                    what: "tensor",
                    index: i,
                    limit: d,
                });
            }
            off += i * s;
        }
        Ok(off)
    }

    /// Element at a multi-index, widened to f64.
    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data.get_f64(self.offset(index)?))
    }

    /// Little-endian byte image of the buffer.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        match &self.data {
            TensorData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            TensorData::F64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            TensorData::U8(v) => v.clone(),
        }
    }

    pub fn from_le_bytes(shape: Vec<usize>, dtype: DType, bytes: &[u8]) -> Result<Self> {
        let data = match dtype {
            DType::F32 => TensorData::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::F64 => TensorData::F64(
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::U8 => TensorData::U8(bytes.to_vec()),
        };
        Tensor::new(shape, data)
    }

    /// Reduce over `axes` (all axes when `None`). Reduced axes are dropped from
    /// the shape; reducing everything yields a rank-0 tensor with one element.
    ///
    /// f32 and f64 inputs keep their dtype (accumulation is in f64); u8 inputs
    /// produce f64 so sums stay exact.
    pub fn reduce(&self, op: ReduceOp, axes: Option<&[usize]>) -> Result<Tensor> {
        let rank = self.shape.len();
        let mut reduced = vec![false; rank];
        match axes {
            None => reduced.iter_mut().for_each(|r| *r = true),
            Some(list) => {
                for &a in list {
                    if a >= rank {
                        return Err(Error::Axis { axis: a, rank });
                    }
                    reduced[a] = true;
                }
            }
        }
        let out_shape: Vec<usize> = self
            .shape
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| !r)
            .map(|(&d, _)| d)
            .collect();
        let out_len: usize = out_shape.iter().product();
        let count: usize = self
            .shape
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| r)
            .map(|(&d, _)| d)
            .product();

        let init = match op {
            ReduceOp::Sum | ReduceOp::Mean => 0.0,
            ReduceOp::Max => f64::NEG_INFINITY,
        };
        let mut acc = vec![init; out_len];
        let out_strides = strides_for(&out_shape);
        let mut index = vec![0usize; rank];
        for flat in 0..self.len() {
            let mut o = 0;
            let mut k = 0;
            for (axis, &i) in index.iter().enumerate() {
                if !reduced[axis] {
                    o += i * out_strides[k];
                    k += 1;
                }
            }
            let v = self.data.get_f64(flat);
            match op {
                ReduceOp::Sum | ReduceOp::Mean => acc[o] += v,
                ReduceOp::Max => {
                    if v > acc[o] {
                        acc[o] = v
                    }
                }
            }
            // advance the row-major multi-index
            for axis in (0..rank).rev() {
                index[axis] += 1;
                if index[axis] < self.shape[axis] {
                    break;
                }
                index[axis] = 0;
            }
        }
        if op == ReduceOp::Mean {
            acc.iter_mut().for_each(|a| *a /= count as f64);
        }
        let data = match self.dtype() {
            DType::F32 => TensorData::F32(acc.into_iter().map(|x| x as f32).collect()),
            DType::F64 | DType::U8 => TensorData::F64(acc),
        };
        Ok(Tensor {
            shape: out_shape,
            data,
        })
    }
}

pub(crate) fn strides_for(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// A 2-D set of pixels stored as 0/1 bytes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl BinaryMask {
    pub fn empty(height: usize, width: usize) -> Self {
        BinaryMask {
            height,
            width,
            bits: vec![0; height * width],
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::Shape {
                expected: vec![height, width],
                actual: vec![bits.len()],
            });
        }
        if let Some(bad) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::Invalid(format!("mask value {bad} is not 0 or 1")));
        }
        Ok(BinaryMask {
            height,
            width,
            bits,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(y, x) as u8);
            }
        }
        BinaryMask {
            height,
            width,
            bits,
        }
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let bits = t.expect_u8()?;
        match t.shape() {
            &[h, w] => Self::from_bits(h, w, bits.to_vec()),
            other => Err(Error::Shape {
                expected: vec![0, 0],
                actual: other.to_vec(),
            }),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            shape: vec![self.height, self.width],
            data: TensorData::U8(self.bits.clone()),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x] != 0
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decodes_little_endian_f32() {
        let bytes: Vec<u8> = [1.0f32, 2.0, 3.0, 4.0]
            .iter()
            .flat_map(|x| x.to_le_bytes())
            .collect();
        let t = Tensor::from_le_bytes(vec![2, 2], DType::F32, &bytes).unwrap();
        assert_eq!(t.shape(), &[2, 2]);
        assert_eq!(t.as_f32().unwrap(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn rejects_wrong_length() {
        assert!(Tensor::from_f32(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::from_f32(vec![0, 3], vec![]).is_err());
    }

    #[test]
    fn row_major_offsets() {
        let t = Tensor::from_u8(vec![2, 3, 4], vec![0; 24]).unwrap();
        assert_eq!(t.strides(), vec![12, 4, 1]);
        assert_eq!(t.offset(&[1, 2, 3]).unwrap(), 23);
        assert!(t.offset(&[2, 0, 0]).is_err());
    }

    #[test]
    fn mean_over_all_axes() {
        let t = Tensor::from_f32(vec![2], vec![2.0, 4.0]).unwrap();
        let m = t.reduce(ReduceOp::Mean, None).unwrap();
        assert_eq!(m.shape(), &[] as &[usize]);
        assert_eq!(m.as_f32().unwrap(), &[3.0]);
    }

    #[test]
    fn max_over_axis_one() {
        let t = Tensor::from_f32(vec![2, 2], vec![1.0, 5.0, 3.0, 2.0]).unwrap();
        let m = t.reduce(ReduceOp::Max, Some(&[1])).unwrap();
        assert_eq!(m.shape(), &[2]);
        assert_eq!(m.as_f32().unwrap(), &[5.0, 3.0]);
    }

    #[test]
    fn axis_out_of_range() {
        let t = Tensor::from_f32(vec![2, 2], vec![0.0; 4]).unwrap();
        assert!(matches!(
            t.reduce(ReduceOp::Sum, Some(&[2])),
            Err(Error::Axis { axis: 2, rank: 2 })
        ));
    }

    #[test]
    fn u8_sum_is_exact() {
        let t = Tensor::from_u8(vec![300, 300], vec![255; 90_000]).unwrap();
        let s = t.reduce(ReduceOp::Sum, None).unwrap();
        assert_eq!(s.as_f64().unwrap(), &[255.0 * 90_000.0]);
    }

    // Independent nested-loop oracle for rank-3 reductions.
    fn loop_oracle(data: &[f32], shape: [usize; 3], axis: usize, op: ReduceOp) -> Vec<f64> {
        let [a, b, c] = shape;
        let mut out = Vec::new();
        let dims = [a, b, c];
        let kept: Vec<usize> = (0..3).filter(|&d| d != axis).collect();
        for i in 0..dims[kept[0]] {
            for j in 0..dims[kept[1]] {
                let mut vals = Vec::new();
                for k in 0..dims[axis] {
                    let mut idx = [0usize; 3];
                    idx[kept[0]] = i;
                    idx[kept[1]] = j;
                    idx[axis] = k;
                    vals.push(data[idx[0] * b * c + idx[1] * c + idx[2]] as f64);
                }
                out.push(match op {
                    ReduceOp::Sum => vals.iter().sum(),
                    ReduceOp::Mean => vals.iter().sum::<f64>() / vals.len() as f64,
                    ReduceOp::Max => vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                });
            }
        }
        out
    }

    proptest! {
        #[test]
        fn reductions_match_loop_oracle(
            a in 1usize..5, b in 1usize..5, c in 1usize..5,
            axis in 0usize..3,
            op in prop_oneof![Just(ReduceOp::Sum), Just(ReduceOp::Mean), Just(ReduceOp::Max)],
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..a * b * c).map(|_| rng.random_range(-10.0..10.0)).collect();
            let t = Tensor::from_f32(vec![a, b, c], data.clone()).unwrap();
            let got = t.reduce(op, Some(&[axis])).unwrap();
            let want = loop_oracle(&data, [a, b, c], axis, op);
            for (g, w) in got.as_f32().unwrap().iter().zip(&want) {
                let tol = 1e-6 * w.abs().max(1.0);
                prop_assert!((*g as f64 - w).abs() <= tol, "{g} vs {w}");
            }
        }
    }
}
