//! Model checkpoints: a byte-stable named-parameter archive with a JSON
//! manifest of the architecture.
//!
//! Layout (all integers little-endian):
//!   magic "M3CK" | version u32 | manifest_len u32 | manifest JSON bytes |
//!   param_count u32 | for each parameter:
//!     name_len u32 | name bytes | rank u32 | dims u64* | values f64*
//!
//! Values are always stored in 64-bit precision regardless of the store's
//! scalar type.

use super::{M3Config, M3Model};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"M3CK";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    config: M3Config,
    vocab_size: usize,
    precision: String,
}

pub fn save_checkpoint<S: Scalar>(
    path: &Path,
    model: &M3Model,
    store: &ParamStore<S>,
) -> Result<()> {
    let manifest = serde_json::to_vec(&Manifest {
        config: model.config.clone(),
        vocab_size: model.vocab_size,
        precision: S::NAME.to_string(),
    })
    .map_err(|e| Error::Checkpoint(format!("manifest encoding failed: {e}")))?;

    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(manifest.len() as u32).to_le_bytes())?;
    out.write_all(&manifest)?;
    out.write_all(&(store.len() as u32).to_le_bytes())?;
    for p in store.iter() {
        let name = p.name.as_bytes();
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name)?;
        out.write_all(&(p.value.rank() as u32).to_le_bytes())?;
        for &d in p.value.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in p.value.data() {
            out.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    Ok(())
}

pub struct LoadedModel<S: Scalar> {
    pub model: M3Model,
    pub store: ParamStore<S>,
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<LoadedModel<S>> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path).map_err(|e| {
        Error::Checkpoint(format!("cannot open {}: {e}", path.display()))
    })?);

    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a checkpoint".into()));
    }
    let version = read_u32(&mut file)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let manifest_len = read_u32(&mut file)? as usize;
    let mut manifest_bytes = vec![0u8; manifest_len];
    file.read_exact(&mut manifest_bytes)?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| Error::Checkpoint(format!("bad manifest: {e}")))?;

    // Rebuild the parameter skeleton in canonical registration order, then
    // overwrite the freshly initialized values with the stored ones.
    let mut store: ParamStore<S> = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = M3Model::init(manifest.config, manifest.vocab_size, &mut store, &mut rng)?;

    let count = read_u32(&mut file)? as usize;
    if count != store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {count} parameters, model expects {}",
            store.len()
        )));
    }
    for _ in 0..count {
        let name_len = read_u32(&mut file)? as usize;
        let mut name = vec![0u8; name_len];
        file.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("non-utf8 parameter name".into()))?;
        let rank = read_u32(&mut file)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            file.read_exact(&mut b)?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            let mut b = [0u8; 8];
            file.read_exact(&mut b)?;
            data.push(S::of_f64(f64::from_le_bytes(b)));
        }
        let id = store.by_name(&name).ok_or_else(|| {
            Error::Checkpoint(format!("unexpected parameter `{name}` in checkpoint"))
        })?;
        let tensor = Tensor::new(shape, data)?;
        if !tensor.all_finite() {
            return Err(Error::Checkpoint(format!(
                "parameter `{name}` contains non-finite values"
            )));
        }
        store.set_value(id, tensor).map_err(|e| {
            Error::Checkpoint(format!("parameter `{name}`: {e}"))
        })?;
    }
    Ok(LoadedModel { model, store })
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
