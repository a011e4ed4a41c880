//! Checkpoint file format.
//!
//! A checkpoint is a versioned binary container:
//!
//! ```text
//! magic            4 bytes  b"HMCP"
//! format_version   u32 LE
//! header_len       u64 LE
//! header           header_len bytes of JSON (kind, hyperparameters, layer
//!                  specs, vocabulary hashes, sub-model checkpoint hashes,
//!                  batch-norm constants)
//! param_count      u32 LE
//! per parameter, in declaration order:
//!   name_len u32 LE, name bytes (UTF-8)
//!   trainable u8
//!   ndim u32 LE, dims (u64 LE each)
//!   data: numel * f32 LE
//! ```
//!
//! Parameters are stored as little-endian 32-bit floats. Loading rebuilds the
//! executable graph from the header's hyperparameters and fills every
//! parameter by name; a missing or extra parameter is a hard error.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{LayerSpec, ModelGraph, ModelHyper, ModelKind};
use crate::nn::{BN_EPSILON, BN_MOMENTUM};
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"HMCP";

#[derive(Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    hyper: ModelHyper,
    layer_specs: Vec<LayerSpec>,
    vocab_hashes: BTreeMap<String, String>,
    sub_model_hashes: BTreeMap<String, String>,
    bn_epsilon: f64,
    bn_momentum: f64,
}

/// Writes `graph` to `path`.
pub fn save_model(graph: &ModelGraph, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&CHECKPOINT_FORMAT_VERSION.to_le_bytes())?;
    let header = Header {
        kind: graph.kind,
        hyper: graph.hyper.clone(),
        layer_specs: graph.layer_specs.clone(),
        vocab_hashes: graph.vocab_hashes.clone(),
        sub_model_hashes: graph.sub_model_hashes.clone(),
        bn_epsilon: BN_EPSILON,
        bn_momentum: BN_MOMENTUM,
    };
    let header_json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    out.write_all(&(header_json.len() as u64).to_le_bytes())?;
    out.write_all(&header_json)?;
    out.write_all(&(graph.store.len() as u32).to_le_bytes())?;
    for p in graph.store.iter() {
        out.write_all(&(p.name.len() as u32).to_le_bytes())?;
        out.write_all(p.name.as_bytes())?;
        out.write_all(&[u8::from(p.trainable)])?;
        let shape = p.tensor.shape();
        out.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in p.data() {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

/// Loads a checkpoint, rebuilding the graph from its recorded
/// hyperparameters and overwriting every parameter from the stored blobs.
pub fn load_model(path: &Path) -> Result<ModelGraph> {
    let bad = |msg: String| Error::Checkpoint(format!("{}: {msg}", path.display()));
    let mut file = BufReader::new(std::fs::File::open(path)?);
    let magic = read_exact::<4>(&mut file)?;
    if &magic != MAGIC {
        return Err(bad("not a model checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(read_exact::<4>(&mut file)?);
    if version != CHECKPOINT_FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let header_len = u64::from_le_bytes(read_exact::<8>(&mut file)?) as usize;
    let mut header_json = vec![0u8; header_len];
    file.read_exact(&mut header_json)?;
    let header: Header =
        serde_json::from_slice(&header_json).map_err(|e| bad(format!("bad header: {e}")))?;

    // Seed is irrelevant: every parameter is overwritten below.
    let mut graph = ModelGraph::assemble(header.kind, header.hyper, header.vocab_hashes, 0);
    graph.layer_specs = header.layer_specs;
    graph.sub_model_hashes = header.sub_model_hashes;

    let param_count = u32::from_le_bytes(read_exact::<4>(&mut file)?) as usize;
    if param_count != graph.store.len() {
        return Err(bad(format!(
            "checkpoint has {param_count} parameters, architecture expects {}",
            graph.store.len()
        )));
    }
    let mut trainable_flags: Vec<(String, bool)> = Vec::with_capacity(param_count);
    for _ in 0..param_count {
        let name_len = u32::from_le_bytes(read_exact::<4>(&mut file)?) as usize;
        let mut name = vec![0u8; name_len];
        file.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| bad("non-UTF-8 parameter name".into()))?;
        let trainable = read_exact::<1>(&mut file)?[0] != 0;
        let ndim = u32::from_le_bytes(read_exact::<4>(&mut file)?) as usize;
        let mut numel = 1usize;
        for _ in 0..ndim {
            numel = numel.saturating_mul(u64::from_le_bytes(read_exact::<8>(&mut file)?) as usize);
        }
        let mut data = vec![0.0f64; numel];
        let mut buf = [0u8; 4];
        for slot in data.iter_mut() {
            file.read_exact(&mut buf)?;
            *slot = f32::from_le_bytes(buf) as f64;
        }
        graph
            .store
            .load_data(&name, data)
            .map_err(|e| bad(e.to_string()))?;
        trainable_flags.push((name, trainable));
    }
    for (name, trainable) in trainable_flags {
        let id = graph.store.id_of(&name).expect("loaded above");
        graph.store.get_mut(id).trainable = trainable;
    }
    Ok(graph)
}

/// sha-256 of a file, hex-encoded; used for the full model's sub-model
/// checkpoint manifest.
pub fn file_sha256(path: &Path) -> Result<String> {
    let mut file = BufReader::new(std::fs::File::open(path)?);
    let mut h = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    let mut hex = String::with_capacity(64);
    use std::fmt::Write as _;
    for byte in h.finalize() {
        let _ = write!(hex, "{byte:02x}");
    }
    Ok(hex)
}
