//! Checkpoint container: `MSFCN1` magic, JSON header, raw little-endian
//! f32 parameter blobs, then optional momentum blobs in the same order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::graph::Params;
use crate::msfcn::{build, MsfcnConfig};
use crate::tensor::Tensor;

const MAGIC: &[u8; 6] = b"MSFCN1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[derive(Default)]
pub struct TrainState {
    pub iteration: u64,
    pub epoch: u64,
    pub rng_seed: u64,
    pub rng_word_pos: u128,
}


#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: MsfcnConfig,
    pub params: Params<f32>,
    pub momentum: Option<Params<f32>>,
    pub state: TrainState,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    dims: [usize; 4],
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: MsfcnConfig,
    iteration: u64,
    epoch: u64,
    rng_seed: u64,
    rng_word_pos: String,
    params: Vec<ParamEntry>,
    has_momentum: bool,
}

/// Canonical parameter order and shapes for a config, derived from the
/// graph the config builds.
fn canonical_entries(config: &MsfcnConfig) -> Result<Vec<ParamEntry>> {
    let graph = build(config)?;
    Ok(graph
        .params
        .iter()
        .map(|p| ParamEntry {
            name: p.name.clone(),
            dims: p.dims,
        })
        .collect())
}

fn check_params_match(entries: &[ParamEntry], params: &Params<f32>) -> Result<()> {
    if entries.len() != params.len() {
        return Err(NnError::CheckpointMismatch(format!(
            "{} parameters stored, graph declares {}",
            params.len(),
            entries.len()
        )));
    }
    for e in entries {
        let t = params.get(&e.name).ok_or_else(|| {
            NnError::CheckpointMismatch(format!("parameter {} missing", e.name))
        })?;
        if t.dims() != e.dims {
            return Err(NnError::CheckpointMismatch(format!(
                "parameter {} has shape {:?}, expected {:?}",
                e.name,
                t.dims(),
                e.dims
            )));
        }
    }
    Ok(())
}

fn write_blobs(out: &mut impl Write, entries: &[ParamEntry], params: &Params<f32>) -> Result<()> {
    for e in entries {
        for &v in &params[&e.name].data {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_blobs(input: &mut impl Read, entries: &[ParamEntry]) -> Result<Params<f32>> {
    let mut params = Params::new();
    let mut buf = Vec::new();
    for e in entries {
        let count: usize = e.dims.iter().product();
        buf.resize(count * 4, 0);
        input.read_exact(&mut buf).map_err(|_| {
            NnError::CheckpointMismatch(format!("blob for {} is truncated", e.name))
        })?;
        let data = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let [n, c, h, w] = e.dims;
        params.insert(e.name.clone(), Tensor::from_vec(n, c, h, w, data)?);
    }
    Ok(params)
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let entries = canonical_entries(&ckpt.config)?;
    check_params_match(&entries, &ckpt.params)?;
    if let Some(m) = &ckpt.momentum {
        check_params_match(&entries, m)?;
    }
    let header = Header {
        version: 1,
        config: ckpt.config.clone(),
        iteration: ckpt.state.iteration,
        epoch: ckpt.state.epoch,
        rng_seed: ckpt.state.rng_seed,
        rng_word_pos: ckpt.state.rng_word_pos.to_string(),
        params: entries,
        has_momentum: ckpt.momentum.is_some(),
    };
    let header_json = serde_json::to_vec(&header)?;

    let mut out = BufWriter::new(File::create(path).map_err(|source| NnError::IoAt {
        path: path.to_path_buf(),
        source,
    })?);
    out.write_all(MAGIC)?;
    out.write_all(&(header_json.len() as u32).to_le_bytes())?;
    out.write_all(&header_json)?;
    write_blobs(&mut out, &header.params, &ckpt.params)?;
    if let Some(m) = &ckpt.momentum {
        write_blobs(&mut out, &header.params, m)?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut input = BufReader::new(File::open(path).map_err(|source| NnError::IoAt {
        path: path.to_path_buf(),
        source,
    })?);
    let mut magic = [0u8; 6];
    input
        .read_exact(&mut magic)
        .map_err(|_| NnError::CheckpointMismatch("file too short for magic".into()))?;
    if &magic != MAGIC {
        return Err(NnError::CheckpointMismatch(format!(
            "bad magic {:?}, expected MSFCN1",
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut len_bytes = [0u8; 4];
    input
        .read_exact(&mut len_bytes)
        .map_err(|_| NnError::CheckpointMismatch("missing header length".into()))?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    input
        .read_exact(&mut header_json)
        .map_err(|_| NnError::CheckpointMismatch("header is truncated".into()))?;
    let header: Header = serde_json::from_slice(&header_json)?;
    if header.version != 1 {
        return Err(NnError::CheckpointMismatch(format!(
            "unsupported version {}",
            header.version
        )));
    }

    // The stored layout must agree with the graph its own config builds.
    let expected = canonical_entries(&header.config)?;
    if expected.len() != header.params.len()
        || expected
            .iter()
            .zip(header.params.iter())
            .any(|(a, b)| a.name != b.name || a.dims != b.dims)
    {
        return Err(NnError::CheckpointMismatch(
            "stored parameter list does not match the config's graph".into(),
        ));
    }

    let params = read_blobs(&mut input, &header.params)?;
    let momentum = if header.has_momentum {
        Some(read_blobs(&mut input, &header.params)?)
    } else {
        None
    };
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(NnError::CheckpointMismatch("trailing bytes after blobs".into()));
    }
    let rng_word_pos: u128 = header
        .rng_word_pos
        .parse()
        .map_err(|_| NnError::CheckpointMismatch("bad rng position".into()))?;

    Ok(Checkpoint {
        config: header.config,
        params,
        momentum,
        state: TrainState {
            iteration: header.iteration,
            epoch: header.epoch,
            rng_seed: header.rng_seed,
            rng_word_pos,
        },
    })
}
