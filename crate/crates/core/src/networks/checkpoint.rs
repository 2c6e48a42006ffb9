//! Versioned model checkpoints: a small JSON header (architectures and
//! parameter shapes) followed by raw little-endian f64 buffers. Writing the
//! same parameters always produces the same bytes.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Real;

use super::{ArchDescriptor, ModelParams, ParamBuf, ParamGroup};

const MAGIC: &[u8; 4] = b"CSTN";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct GroupHeader {
    arch: ArchDescriptor,
    params: Vec<ParamHeader>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    groups: Vec<GroupHeader>,
}

fn bad(detail: impl Into<String>) -> Error {
    Error::Checkpoint(detail.into())
}

/// Serialize a model to a writer.
pub fn save<T: Real, W: Write>(model: &ModelParams<T>, mut w: W) -> Result<()> {
    let header = Header {
        groups: model
            .groups
            .iter()
            .map(|g| GroupHeader {
                arch: g.arch.clone(),
                params: g
                    .bufs
                    .iter()
                    .map(|p| ParamHeader {
                        name: p.name.clone(),
                        shape: p.shape.clone(),
                    })
                    .collect(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| bad(format!("header encode: {}", e)))?;
    let io = |e: std::io::Error| bad(format!("write: {}", e));
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    for g in &model.groups {
        for p in &g.bufs {
            for v in &p.data {
                w.write_all(&v.to_f64c().to_le_bytes()).map_err(io)?;
            }
        }
    }
    Ok(())
}

/// Deserialize a model from a reader, validating magic, version, and
/// buffer sizes against the header.
pub fn load<T: Real, R: Read>(mut r: R) -> Result<ModelParams<T>> {
    let io = |e: std::io::Error| bad(format!("read: {}", e));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(bad(format!("bad magic {:?}, want {:?}", magic, MAGIC)));
    }
    let mut v4 = [0u8; 4];
    r.read_exact(&mut v4).map_err(io)?;
    let version = u32::from_le_bytes(v4);
    if version != VERSION {
        return Err(bad(format!("unsupported version {}", version)));
    }
    let mut l8 = [0u8; 8];
    r.read_exact(&mut l8).map_err(io)?;
    let json_len = u64::from_le_bytes(l8) as usize;
    let mut json = vec![0u8; json_len];
    r.read_exact(&mut json).map_err(io)?;
    let header: Header =
        serde_json::from_slice(&json).map_err(|e| bad(format!("header decode: {}", e)))?;
    let mut groups = Vec::with_capacity(header.groups.len());
    for gh in header.groups {
        let mut bufs = Vec::with_capacity(gh.params.len());
        for ph in gh.params {
            let n: usize = ph.shape.iter().product();
            let mut raw = vec![0u8; 8 * n];
            r.read_exact(&mut raw).map_err(|e| {
                bad(format!("buffer {} ({} values): {}", ph.name, n, e))
            })?;
            let data: Vec<T> = raw
                .chunks_exact(8)
                .map(|c| T::from_f64c(f64::from_le_bytes(c.try_into().unwrap())))
                .collect();
            if !data.iter().all(|v| v.is_finite()) {
                return Err(bad(format!("buffer {} holds non-finite values", ph.name)));
            }
            bufs.push(ParamBuf {
                name: ph.name,
                shape: ph.shape,
                data,
            });
        }
        groups.push(ParamGroup {
            arch: gh.arch,
            bufs,
        });
    }
    // trailing garbage means a mismatched header
    let mut extra = [0u8; 1];
    match r.read(&mut extra).map_err(io)? {
        0 => Ok(ModelParams { groups }),
        _ => Err(bad("trailing bytes after final buffer")),
    }
}

pub fn save_to_path<T: Real>(model: &ModelParams<T>, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    save(model, std::io::BufWriter::new(file))
}

pub fn load_from_path<T: Real>(path: &Path) -> Result<ModelParams<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load(std::io::BufReader::new(file))
}
