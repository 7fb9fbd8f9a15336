//! Model persistence.
//!
//! Binary layout: magic "HARW", u16 version, u64 architecture hash, u64
//! init seed, u32 layer count, then per layer a presence flag and, when
//! present, weight dims and little-endian f64 weight/bias blocks. A JSON
//! sidecar carries the layer specs and training config.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::ModelParams;
use super::tensor::Tensor;
use super::{LayerSpec, TrainConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HARW";
const VERSION: u16 = 1;

/// Layer specs and training config stored next to the weight file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub input_shape: Vec<usize>,
    pub specs: Vec<LayerSpec>,
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

pub fn save_model(path: &Path, params: &ModelParams) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&params.arch_hash.to_le_bytes())?;
    out.write_all(&params.seed.to_le_bytes())?;
    out.write_all(&(params.layers.len() as u32).to_le_bytes())?;
    for layer in &params.layers {
        match layer {
            None => out.write_all(&[0u8])?,
            Some((w, b)) => {
                out.write_all(&[1u8])?;
                out.write_all(&(w.dims.len() as u32).to_le_bytes())?;
                for &d in &w.dims {
                    out.write_all(&(d as u32).to_le_bytes())?;
                }
                out.write_all(&(w.data.len() as u64).to_le_bytes())?;
                for &v in &w.data {
                    out.write_all(&v.to_le_bytes())?;
                }
                out.write_all(&(b.len() as u64).to_le_bytes())?;
                for &v in b {
                    out.write_all(&v.to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

/// Loads a model and verifies it was saved for the expected architecture.
pub fn load_model(path: &Path, expected_arch_hash: u64) -> Result<ModelParams> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let path_str = path.display().to_string();
    let malformed = |detail: &str| Error::MalformedFile {
        path: path_str.clone(),
        detail: detail.to_string(),
    };

    let mut head = [0u8; 4 + 2 + 8 + 8 + 4];
    file.read_exact(&mut head).map_err(|_| malformed("short header"))?;
    if &head[0..4] != MAGIC {
        return Err(malformed("bad magic"));
    }
    if u16::from_le_bytes(head[4..6].try_into().unwrap()) != VERSION {
        return Err(malformed("unsupported version"));
    }
    let arch_hash = u64::from_le_bytes(head[6..14].try_into().unwrap());
    if arch_hash != expected_arch_hash {
        return Err(Error::ArchHashMismatch {
            file: arch_hash,
            expected: expected_arch_hash,
        });
    }
    let seed = u64::from_le_bytes(head[14..22].try_into().unwrap());
    let n_layers = u32::from_le_bytes(head[22..26].try_into().unwrap()) as usize;

    let read_u32 = |file: &mut dyn Read| -> Result<u32> {
        let mut b = [0u8; 4];
        file.read_exact(&mut b).map_err(|_| malformed("truncated"))?;
        Ok(u32::from_le_bytes(b))
    };
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let mut flag = [0u8; 1];
        file.read_exact(&mut flag).map_err(|_| malformed("truncated"))?;
        if flag[0] == 0 {
            layers.push(None);
            continue;
        }
        let ndims = read_u32(&mut file)? as usize;
        let mut dims = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            dims.push(read_u32(&mut file)? as usize);
        }
        let read_f64s = |file: &mut dyn Read, len: usize| -> Result<Vec<f64>> {
            let mut raw = vec![0u8; len * 8];
            file.read_exact(&mut raw).map_err(|_| malformed("truncated block"))?;
            Ok(raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let mut len8 = [0u8; 8];
        file.read_exact(&mut len8).map_err(|_| malformed("truncated"))?;
        let wlen = u64::from_le_bytes(len8) as usize;
        if wlen != dims.iter().product::<usize>() {
            return Err(malformed("weight length disagrees with dims"));
        }
        let wdata = read_f64s(&mut file, wlen)?;
        file.read_exact(&mut len8).map_err(|_| malformed("truncated"))?;
        let blen = u64::from_le_bytes(len8) as usize;
        let bdata = read_f64s(&mut file, blen)?;
        layers.push(Some((Tensor::from_vec(dims, wdata)?, bdata)));
    }
    let mut trailing = [0u8; 1];
    if file.read(&mut trailing)? != 0 {
        return Err(malformed("trailing bytes"));
    }
    Ok(ModelParams {
        layers,
        seed,
        arch_hash,
    })
}

pub fn write_model_sidecar(path: &Path, sidecar: &ModelSidecar) -> Result<()> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), sidecar)?;
    Ok(())
}

pub fn read_model_sidecar(path: &Path) -> Result<ModelSidecar> {
    let file = std::fs::File::open(path)?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}
