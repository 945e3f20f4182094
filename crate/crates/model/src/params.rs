//! Named trainable parameter sets with checksums and safetensors I/O.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Ordered collection of named variables. Insertion order is the checksum
/// and serialisation order.
#[derive(Clone, Debug)]
pub struct ParamStore {
    entries: Vec<(String, Var)>,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(dtype: DType, device: &Device) -> Self {
        Self {
            entries: Vec::new(),
            dtype,
            device: device.clone(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// Registers `name` with the given values and returns a tensor sharing
    /// storage with the variable, so later in-place updates are visible.
    pub fn insert(&mut self, name: impl Into<String>, values: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        let name = name.into();
        if self.entries.iter().any(|(n, _)| *n == name) {
            return Err(Error::Parameter(format!("duplicate parameter `{name}`")));
        }
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let handle = var.as_tensor().clone();
        self.entries.push((name, var));
        Ok(handle)
    }

    pub fn normal<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        std: f64,
        rng: &mut R,
    ) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let values = if std == 0.0 {
            vec![0.0; n]
        } else {
            // truncated at two standard deviations
            let dist = Normal::new(0.0, std).map_err(|e| Error::Parameter(e.to_string()))?;
            (0..n)
                .map(|_| loop {
                    let v: f64 = dist.sample(rng);
                    if v.abs() <= 2.0 * std {
                        break v;
                    }
                })
                .collect()
        };
        self.insert(name, values, shape)
    }

    pub fn constant(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        self.insert(name, vec![value; n], shape)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn vars(&self) -> Vec<Var> {
        self.entries.iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn num_elements(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.elem_count()).sum()
    }

    /// SHA-256 over every name, shape and value (as little-endian f64).
    pub fn checksum(&self) -> Result<String> {
        let mut h = Sha256::new();
        for (name, var) in &self.entries {
            h.update(name.as_bytes());
            for d in var.dims() {
                h.update((*d as u64).to_le_bytes());
            }
            let values = var.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
            for v in values {
                h.update(v.to_le_bytes());
            }
        }
        Ok(hex::encode(h.finalize()))
    }

    pub fn save(&self, path: &Path, metadata: HashMap<String, String>) -> Result<()> {
        let tensors: Vec<(String, Tensor)> = self
            .entries
            .iter()
            .map(|(n, v)| (n.clone(), v.as_tensor().clone()))
            .collect();
        safetensors::serialize_to_file(tensors.iter().map(|(n, t)| (n.as_str(), t)), Some(metadata), path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }

    /// Overwrites every parameter from `path`. Extra tensors in the file are
    /// ignored when `allow_extra`; missing ones are always an error.
    pub fn load(&self, path: &Path, allow_extra: bool) -> Result<HashMap<String, String>> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        self.load_bytes(&bytes, allow_extra)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }

    /// Header metadata of a checkpoint, without touching any parameter.
    pub fn read_metadata(path: &Path) -> Result<HashMap<String, String>> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let (_, meta) = safetensors::SafeTensors::read_metadata(&bytes)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Ok(meta.metadata().clone().unwrap_or_default())
    }

    /// Every tensor is validated before any parameter is overwritten, so a
    /// failed load leaves the store untouched.
    pub fn load_bytes(&self, bytes: &[u8], allow_extra: bool) -> Result<HashMap<String, String>> {
        let st = safetensors::SafeTensors::deserialize(bytes)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let (_, meta) = safetensors::SafeTensors::read_metadata(bytes)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        if !allow_extra {
            if let Some(extra) = st.names().into_iter().find(|n| self.get(n).is_none()) {
                return Err(Error::Checkpoint(format!("unexpected tensor `{extra}`")));
            }
        }
        let mut loaded = Vec::with_capacity(self.entries.len());
        for (name, var) in &self.entries {
            let view = st
                .tensor(name)
                .map_err(|_| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if view.shape() != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    view.shape(),
                    var.dims()
                )));
            }
            loaded.push(candle_core::safetensors::Load::load(&view, &self.device)?.to_dtype(self.dtype)?);
        }
        for ((_, var), t) in self.entries.iter().zip(&loaded) {
            var.set(t)?;
        }
        Ok(meta.metadata().clone().unwrap_or_default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store(seed: u64) -> ParamStore {
        let mut s = ParamStore::new(DType::F32, &Device::Cpu);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        s.normal("a.weight", &[3, 4], 0.02, &mut rng).unwrap();
        s.constant("a.bias", &[3], 0.0).unwrap();
        s
    }

    #[test]
    fn checksum_tracks_values() {
        let a = store(1);
        assert_eq!(a.checksum().unwrap(), store(1).checksum().unwrap());
        assert_ne!(a.checksum().unwrap(), store(2).checksum().unwrap());
        assert_eq!(a.num_elements(), 15);
        assert!(a.clone().insert("a.bias", vec![0.0], &[1]).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.safetensors");
        let a = store(1);
        let meta: HashMap<_, _> = [("k".to_string(), "v".to_string())].into();
        a.save(&path, meta).unwrap();
        let b = store(9);
        let got = b.load(&path, false).unwrap();
        assert_eq!(got["k"], "v");
        assert_eq!(a.checksum().unwrap(), b.checksum().unwrap());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.safetensors");
        store(1).save(&path, HashMap::new()).unwrap();
        let mut other = ParamStore::new(DType::F32, &Device::Cpu);
        other.constant("a.weight", &[4, 3], 0.0).unwrap();
        assert!(matches!(other.load(&path, true), Err(Error::Checkpoint(_))));
        assert!(other.load(&path, false).is_err());
    }
}
