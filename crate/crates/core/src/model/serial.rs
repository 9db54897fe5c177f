//! The "DDM1" model container: little-endian, a fixed header, a shape
//! table, then raw f32 parameters. Round-trips are bit-exact.

use std::path::Path;

use super::net::{Architecture, PatchClassifierModel};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"DDM1";
const VERSION: u32 = 1;

/// Serializes a model to the DDM1 container.
pub fn save_model(model: &PatchClassifierModel, path: &Path) -> Result<()> {
    let arch = &model.arch;
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    for v in [
        VERSION,
        arch.patch_size,
        arch.input_channels,
        arch.num_classes,
        arch.conv1_filters,
        arch.conv1_kernel,
        arch.conv2_filters,
        arch.conv2_kernel,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&model.train_seed.to_le_bytes());
    buf.extend_from_slice(&model.epochs_trained.to_le_bytes());
    let shapes = arch.tensor_shapes();
    buf.extend_from_slice(&(shapes.len() as u32).to_le_bytes());
    for (_, dims) in &shapes {
        buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for &d in dims {
            buf.extend_from_slice(&d.to_le_bytes());
        }
    }
    for (_, tensor) in model.tensors() {
        for &v in tensor {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.bytes.len() {
            return Err(Error::Model(format!(
                "truncated file: expected at least {} bytes, found {}",
                self.at + n,
                self.bytes.len()
            )));
        }
        let slice = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Loads and validates a DDM1 container.
pub fn load_model(path: &Path) -> Result<PatchClassifierModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor {
        bytes: &bytes,
        at: 0,
    };
    if cur.take(4)? != MAGIC {
        return Err(Error::Model("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Model(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let arch = Architecture {
        patch_size: cur.u32()?,
        input_channels: cur.u32()?,
        num_classes: cur.u32()?,
        conv1_filters: cur.u32()?,
        conv1_kernel: cur.u32()?,
        conv2_filters: cur.u32()?,
        conv2_kernel: cur.u32()?,
    };
    arch.validate()?;
    let train_seed = cur.u64()?;
    let epochs_trained = cur.u32()?;

    let expected_shapes = arch.tensor_shapes();
    let count = cur.u32()? as usize;
    if count != expected_shapes.len() {
        return Err(Error::Model(format!(
            "shape table has {count} tensors, expected {}",
            expected_shapes.len()
        )));
    }
    for (name, dims) in &expected_shapes {
        let ndim = cur.u32()? as usize;
        if ndim != dims.len() {
            return Err(Error::Model(format!(
                "tensor {name}: rank {ndim}, expected {}",
                dims.len()
            )));
        }
        for &want in dims {
            let got = cur.u32()?;
            if got != want {
                return Err(Error::Model(format!(
                    "tensor {name}: dimension {got}, expected {want}"
                )));
            }
        }
    }

    let mut model = PatchClassifierModel::zeroed(arch)?;
    model.train_seed = train_seed;
    model.epochs_trained = epochs_trained;
    for (_, tensor) in model.tensors_mut() {
        for v in tensor.iter_mut() {
            *v = f32::from_le_bytes(cur.take(4)?.try_into().unwrap());
        }
    }
    if cur.at != bytes.len() {
        return Err(Error::Model(format!(
            "trailing data: file is {} bytes, expected {}",
            bytes.len(),
            cur.at
        )));
    }
    if !model.all_finite() {
        return Err(Error::Model("non-finite parameter".into()));
    }
    Ok(model)
}
