//! Single-file archive of named, shape-tagged tensors plus string metadata.
//!
//! The container is a safetensors file. Metadata always carries
//! `format_version`; everything else (network specs, training counters,
//! configuration) is added by the caller.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use pgcycle_autograd::{Float, Tensor};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;

use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const VERSION_KEY: &str = "format_version";

#[derive(Clone, Debug, PartialEq)]
struct Stored {
    dtype: Dtype,
    dims: [usize; 4],
    bytes: Vec<u8>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub metadata: BTreeMap<String, String>,
    tensors: BTreeMap<String, Stored>,
}

fn encode<T: Float>(t: &Tensor<T>) -> (Dtype, Vec<u8>) {
    match T::DTYPE {
        "f32" => (
            Dtype::F32,
            t.data().iter().flat_map(|v| (v.as_f64() as f32).to_le_bytes()).collect(),
        ),
        _ => (Dtype::F64, t.data().iter().flat_map(|v| v.as_f64().to_le_bytes()).collect()),
    }
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put<T: Float>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        let (dtype, bytes) = encode(t);
        self.tensors.insert(
            name.into(),
            Stored {
                dtype,
                dims: t.dims(),
                bytes,
            },
        );
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn dims(&self, name: &str) -> Option<[usize; 4]> {
        self.tensors.get(name).map(|s| s.dims)
    }

    /// Names stored under `prefix/`.
    pub fn names_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.tensors
            .keys()
            .filter(move |k| k.strip_prefix(prefix).is_some_and(|rest| rest.starts_with('/')))
            .map(|k| k.as_str())
    }

    /// Tensor `name`, converted to `T` if it was stored at another precision.
    pub fn get<T: Float>(&self, name: &str) -> Result<Tensor<T>> {
        let s = self
            .tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        let data: Vec<T> = match s.dtype {
            Dtype::F32 => s
                .bytes
                .chunks_exact(4)
                .map(|b| T::of(f32::from_le_bytes(b.try_into().unwrap()) as f64))
                .collect(),
            Dtype::F64 => s
                .bytes
                .chunks_exact(8)
                .map(|b| T::of(f64::from_le_bytes(b.try_into().unwrap())))
                .collect(),
            other => return Err(Error::Checkpoint(format!("{name}: unsupported dtype {other:?}"))),
        };
        Ok(Tensor::from_vec(s.dims, data)?)
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.metadata
            .get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::Checkpoint(format!("missing metadata key {key}")))
    }

    pub fn meta_parse<V: std::str::FromStr>(&self, key: &str) -> Result<V> {
        self.meta(key)?
            .parse()
            .map_err(|_| Error::Checkpoint(format!("metadata key {key} is malformed")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let views = self
            .tensors
            .iter()
            .map(|(name, s)| {
                let view = TensorView::new(s.dtype, s.dims.to_vec(), &s.bytes)
                    .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
                Ok((name.clone(), view))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut meta: HashMap<String, String> = self.metadata.clone().into_iter().collect();
        meta.insert(VERSION_KEY.into(), FORMAT_VERSION.to_string());
        let bytes = safetensors::serialize(views, &Some(meta)).map_err(|e| Error::Checkpoint(e.to_string()))?;
        // write-then-rename so an interrupted save never leaves a torn file
        let tmp = path.with_extension("partial");
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let corrupt = |e: safetensors::SafeTensorError| Error::Checkpoint(format!("{}: {e}", path.display()));
        let (_, header) = SafeTensors::read_metadata(&buf).map_err(corrupt)?;
        let mut metadata: BTreeMap<String, String> = header
            .metadata()
            .clone()
            .unwrap_or_default()
            .into_iter()
            .collect();
        let version = metadata
            .remove(VERSION_KEY)
            .ok_or_else(|| Error::Checkpoint(format!("{}: no format version", path.display())))?;
        if version != FORMAT_VERSION.to_string() {
            return Err(Error::Checkpoint(format!(
                "{}: format version {version}, expected {FORMAT_VERSION}",
                path.display()
            )));
        }
        let st = SafeTensors::deserialize(&buf).map_err(corrupt)?;
        let mut tensors = BTreeMap::new();
        for (name, view) in st.tensors() {
            let shape = view.shape();
            let dims: [usize; 4] = shape
                .try_into()
                .map_err(|_| Error::Checkpoint(format!("{name}: expected 4 dims, got {shape:?}")))?;
            tensors.insert(
                name,
                Stored {
                    dtype: view.dtype(),
                    dims,
                    bytes: view.data().to_vec(),
                },
            );
        }
        Ok(Self { metadata, tensors })
    }
}
