//! Checkpoint container: magic + version, JSON metadata, named f32 tensors,
//! and a trailing SHA-256 over everything before it. Loads verify the digest
//! before parsing, so a flipped byte anywhere is an integrity error.

use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::generator::GeneratorConfig;
use crate::discriminator::DiscriminatorConfig;

const MAGIC: &[u8; 8] = b"ATSRCKP\x01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub iteration: u64,
    pub mode: String,
    pub seed: u64,
    pub adam_t_g: u64,
    pub adam_t_d1: u64,
    pub adam_t_d2: u64,
    pub gen_config: GeneratorConfig,
    pub disc_config: Option<DiscriminatorConfig>,
    pub perceptual_stages: usize,
    pub perceptual_weights_file: String,
}

#[derive(Debug, Clone)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn write_checkpoint(
    path: impl AsRef<Path>,
    meta: &CheckpointMeta,
    tensors: &[NamedTensor],
) -> Result<()> {
    let path = path.as_ref();
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let meta_json = serde_json::to_vec(meta).map_err(|e| Error::Format(e.to_string()))?;
    buf.extend_from_slice(&(meta_json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&meta_json);
    buf.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for t in tensors {
        let name = t.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name);
        buf.push(t.shape.len() as u8);
        for &d in &t.shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        let count: usize = t.shape.iter().product();
        if count != t.data.len() {
            return Err(Error::Format(format!(
                "tensor {} shape/data mismatch: {:?} vs {}",
                t.name,
                t.shape,
                t.data.len()
            )));
        }
        buf.extend_from_slice(&(t.data.len() as u64).to_le_bytes());
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;
    f.write_all(&digest).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(CheckpointMeta, Vec<NamedTensor>)> {
    let path = path.as_ref();
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.len() < MAGIC.len() + 4 + 32 {
        return Err(Error::Integrity(format!(
            "{} is too short to be a checkpoint",
            path.display()
        )));
    }
    let (body, digest) = raw.split_at(raw.len() - 32);
    let want = Sha256::digest(body);
    if want.as_slice() != digest {
        return Err(Error::Integrity(format!(
            "checksum mismatch in {}",
            path.display()
        )));
    }
    let mut at = 0usize;
    let take = |at: &mut usize, n: usize| -> Result<&[u8]> {
        if *at + n > body.len() {
            return Err(Error::Integrity("truncated checkpoint body".into()));
        }
        let s = &body[*at..*at + n];
        *at += n;
        Ok(s)
    };
    if take(&mut at, 8)? != MAGIC {
        return Err(Error::Integrity(format!(
            "{} does not start with the checkpoint magic",
            path.display()
        )));
    }
    let version = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let meta_len = u64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap()) as usize;
    let meta: CheckpointMeta = serde_json::from_slice(take(&mut at, meta_len)?)
        .map_err(|e| Error::Format(format!("bad checkpoint metadata: {e}")))?;
    let count = u64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap()) as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut at, 2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut at, name_len)?.to_vec())
            .map_err(|e| Error::Format(format!("bad tensor name: {e}")))?;
        let ndim = take(&mut at, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap()) as usize);
        }
        let len = u64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap()) as usize;
        let bytes = take(&mut at, len * 4)?;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(NamedTensor { name, shape, data });
    }
    Ok((meta, tensors))
}
