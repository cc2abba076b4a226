//! Directory-based tensor interchange: a `manifest.json` plus one headerless
//! little-endian row-major file per tensor.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
const LAYOUT: &str = "row-major";
const BYTE_ORDER: &str = "little-endian";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub file: String,
    pub layout: String,
    pub byte_order: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tensors: Vec<TensorEntry>,
}

impl Default for Manifest {
    fn default() -> Self {
        Manifest {
            format_version: FORMAT_VERSION,
            tensors: Vec::new(),
        }
    }
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|source| Error::Json {
                path: path.clone(),
                source,
            })?;
        match value.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == FORMAT_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::Version {
                    found: v as u32,
                    expected: FORMAT_VERSION,
                })
            }
            None => return Err(Error::manifest("format_version", "missing or not an integer")),
        }
        let manifest: Manifest =
            serde_json::from_value(value).map_err(|source| Error::Json { path, source })?;
        for entry in &manifest.tensors {
            entry.validate()?;
        }
        Ok(manifest)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn entry(&self, name: &str) -> Result<&TensorEntry> {
        self.tensors
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::manifest("name", format!("no tensor named `{name}`")))
    }

    fn upsert(&mut self, entry: TensorEntry) {
        match self.tensors.iter_mut().find(|e| e.name == entry.name) {
            Some(slot) => *slot = entry,
            None => self.tensors.push(entry),
        }
    }
}

impl TensorEntry {
    fn validate(&self) -> Result<()> {
        DType::parse(&self.dtype)?;
        if self.layout != LAYOUT {
            return Err(Error::manifest("layout", format!("unsupported `{}`", self.layout)));
        }
        if self.byte_order != BYTE_ORDER {
            return Err(Error::manifest(
                "byte_order",
                format!("unsupported `{}`", self.byte_order),
            ));
        }
        if self.shape.iter().any(|&d| d == 0) {
            return Err(Error::manifest("shape", "zero extent"));
        }
        if self.file.contains('/') || self.file.contains('\\') || self.file.starts_with('.') {
            return Err(Error::manifest("file", format!("illegal file name `{}`", self.file)));
        }
        Ok(())
    }
}

/// File name used for a tensor: path separators become `.`.
pub fn file_name_for(name: &str) -> String {
    let stem: String = name
        .chars()
        .map(|c| if c == '/' || c == '\\' { '.' } else { c })
        .collect();
    format!("{}.bin", stem.trim_start_matches('.'))
}

fn read_entry(dir: &Path, entry: &TensorEntry) -> Result<Tensor> {
    let dtype = DType::parse(&entry.dtype)?;
    let path = dir.join(&entry.file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let expected = entry.shape.iter().product::<usize>() * dtype.size();
    if bytes.len() != expected {
        return Err(Error::ByteLength {
            name: entry.name.clone(),
            expected,
            actual: bytes.len(),
        });
    }
    Tensor::from_le_bytes(entry.shape.clone(), dtype, &bytes)
}

fn write_file(dir: &Path, name: &str, t: &Tensor) -> Result<TensorEntry> {
    let file = file_name_for(name);
    let path = dir.join(&file);
    fs::write(&path, t.to_le_bytes()).map_err(|e| Error::io(&path, e))?;
    Ok(TensorEntry {
        name: name.to_string(),
        dtype: t.dtype().name().to_string(),
        shape: t.shape().to_vec(),
        file,
        layout: LAYOUT.to_string(),
        byte_order: BYTE_ORDER.to_string(),
    })
}

/// Read the tensor `name` declared in `dir/manifest.json`.
pub fn read_tensor(dir: &Path, name: &str) -> Result<Tensor> {
    let manifest = Manifest::load(dir)?;
    read_entry(dir, manifest.entry(name)?)
}

/// Write `t` into `dir` and add (or replace) its manifest entry.
pub fn write_tensor(dir: &Path, name: &str, t: &Tensor) -> Result<TensorEntry> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = match Manifest::load(dir) {
        Ok(m) => m,
        Err(Error::MissingFile(_)) => Manifest::default(),
        Err(e) => return Err(e),
    };
    let entry = write_file(dir, name, t)?;
    manifest.upsert(entry.clone());
    manifest.save(dir)?;
    Ok(entry)
}

/// Batch writer: emits tensor files as they come and the manifest on `finish`.
pub struct InterchangeWriter {
    dir: PathBuf,
    manifest: Manifest,
}

impl InterchangeWriter {
    pub fn create(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(InterchangeWriter {
            dir,
            manifest: Manifest::default(),
        })
    }

    /// Like [`InterchangeWriter::create`] but keeps the entries of an existing manifest.
    pub fn append(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let manifest = match Manifest::load(&dir) {
            Ok(m) => m,
            Err(Error::MissingFile(_)) => Manifest::default(),
            Err(e) => return Err(e),
        };
        Ok(InterchangeWriter { dir, manifest })
    }

    pub fn write(&mut self, name: &str, t: &Tensor) -> Result<&TensorEntry> {
        let entry = write_file(&self.dir, name, t)?;
        self.manifest.upsert(entry);
        Ok(self.manifest.entry(name).expect("just inserted"))
    }

    pub fn finish(self) -> Result<Manifest> {
        self.manifest.save(&self.dir)?;
        Ok(self.manifest)
    }
}

/// An opened interchange directory with its manifest parsed once.
pub struct InterchangeReader {
    dir: PathBuf,
    manifest: Manifest,
}

impl InterchangeReader {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        let manifest = Manifest::load(&dir)?;
        Ok(InterchangeReader { dir, manifest })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.manifest.tensors.iter().map(|e| e.name.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.manifest.tensors.iter().any(|e| e.name == name)
    }

    pub fn read(&self, name: &str) -> Result<Tensor> {
        read_entry(&self.dir, self.manifest.entry(name)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::TensorData;
    use rand::{Rng, SeedableRng};

    fn random_tensor(rng: &mut impl Rng) -> Tensor {
        let rank = rng.random_range(1..=4);
        let shape: Vec<usize> = (0..rank).map(|_| rng.random_range(1..6)).collect();
        let n = shape.iter().product();
        let data = match rng.random_range(0..3) {
            // raw bit patterns so NaN payloads and signed zeros are exercised too
            0 => TensorData::F32((0..n).map(|_| f32::from_bits(rng.random())).collect()),
            1 => TensorData::F64((0..n).map(|_| f64::from_bits(rng.random())).collect()),
            _ => TensorData::U8((0..n).map(|_| rng.random()).collect()),
        };
        Tensor::new(shape, data).unwrap()
    }

    fn bits_equal(a: &Tensor, b: &Tensor) -> bool {
        a.shape() == b.shape() && a.dtype() == b.dtype() && a.to_le_bytes() == b.to_le_bytes()
    }

    #[test]
    fn round_trip_single() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tensor::from_f32(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let entry = write_tensor(dir.path(), "a/b", &t).unwrap();
        assert_eq!(entry.file, "a.b.bin");
        let back = read_tensor(dir.path(), "a/b").unwrap();
        assert!(bits_equal(&t, &back));
        // raw file carries no header
        let raw = fs::read(dir.path().join("a.b.bin")).unwrap();
        assert_eq!(raw.len(), 16);
        assert_eq!(&raw[..4], &1.0f32.to_le_bytes());
    }

    #[test]
    fn round_trip_random_hundred() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let tensors: Vec<Tensor> = (0..100).map(|_| random_tensor(&mut rng)).collect();
        let mut w = InterchangeWriter::create(dir.path()).unwrap();
        for (i, t) in tensors.iter().enumerate() {
            w.write(&format!("t/{i}"), t).unwrap();
        }
        w.finish().unwrap();
        let r = InterchangeReader::open(dir.path()).unwrap();
        for (i, t) in tensors.iter().enumerate() {
            assert!(bits_equal(t, &r.read(&format!("t/{i}")).unwrap()), "tensor {i}");
        }
    }

    #[test]
    fn missing_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tensor::from_u8(vec![3], vec![1, 2, 3]).unwrap();
        write_tensor(dir.path(), "x", &t).unwrap();
        fs::remove_file(dir.path().join("x.bin")).unwrap();
        assert!(matches!(read_tensor(dir.path(), "x"), Err(Error::MissingFile(_))));
        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(read_tensor(empty.path(), "x"), Err(Error::MissingFile(_))));
    }

    #[test]
    fn byte_length_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tensor::from_u8(vec![3], vec![1, 2, 3]).unwrap();
        write_tensor(dir.path(), "x", &t).unwrap();
        fs::write(dir.path().join("x.bin"), [1u8, 2]).unwrap();
        let err = read_tensor(dir.path(), "x").unwrap_err();
        assert!(matches!(err, Error::ByteLength { expected: 3, actual: 2, .. }));
    }

    #[test]
    fn unknown_dtype_names_field() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tensor::from_u8(vec![1], vec![1]).unwrap();
        write_tensor(dir.path(), "x", &t).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).unwrap().replace("\"u8\"", "\"i16\"");
        fs::write(&path, text).unwrap();
        let err = read_tensor(dir.path(), "x").unwrap_err();
        assert!(err.to_string().contains("dtype"), "{err}");
    }

    #[test]
    fn version_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join(MANIFEST_FILE),
            r#"{"format_version": 2, "tensors": []}"#,
        )
        .unwrap();
        assert!(matches!(
            Manifest::load(dir.path()),
            Err(Error::Version { found: 2, .. })
        ));
    }
}
