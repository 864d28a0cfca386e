//! Checkpoint container.
//!
//! ```text
//! magic      8 bytes   b"PALCKPT\0"
//! header_len u64 LE
//! header     JSON: format_version, kind, tokenizer, hyper, tensors, blob_sha256
//! blob       f64 LE parameters, tensors back to back
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tiny::{Hyper, TinyLm};
use super::tokenizer::Tokenizer;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"PALCKPT\0";
const KIND: &str = "tiny-rnn-lm";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: [usize; 2],
    /// Offset in parameters (not bytes) from the start of the blob.
    pub offset: usize,
}

impl TensorInfo {
    pub(crate) fn new(name: impl Into<String>, shape: [usize; 2], offset: usize) -> Self {
        TensorInfo {
            name: name.into(),
            shape,
            offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tokenizer: Tokenizer,
    pub hyper: Hyper,
    pub tensors: Vec<TensorInfo>,
    pub params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    kind: String,
    tokenizer: Tokenizer,
    hyper: Hyper,
    tensors: Vec<TensorInfo>,
    blob_sha256: String,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let blob: Vec<u8> = self.params.iter().flat_map(|p| p.to_le_bytes()).collect();
        let header = Header {
            format_version: CHECKPOINT_FORMAT_VERSION,
            kind: KIND.into(),
            tokenizer: self.tokenizer.clone(),
            hyper: self.hyper,
            tensors: self.tensors.clone(),
            blob_sha256: hex::encode(Sha256::digest(&blob)),
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + header.len() + blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&blob);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if body.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| bad(&format!("header: {e}")))?;
        if header.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                header.format_version
            )));
        }
        if header.kind != KIND {
            return Err(Error::Checkpoint(format!("unsupported model kind {}", header.kind)));
        }
        let blob = &body[hlen..];
        if hex::encode(Sha256::digest(blob)) != header.blob_sha256 {
            return Err(bad("parameter blob does not match its checksum"));
        }
        if !blob.len().is_multiple_of(8) {
            return Err(bad("parameter blob is not a whole number of f64 values"));
        }
        let params = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Checkpoint {
            tokenizer: header.tokenizer,
            hyper: header.hyper,
            tensors: header.tensors,
            params,
        })
    }

    pub fn into_model(self) -> Result<TinyLm> {
        TinyLm::from_parts(self.tokenizer, self.hyper, self.params)
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TinyLm> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)?.into_model()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PolicyHandle;

    #[test]
    fn roundtrip_preserves_parameters() {
        let m = TinyLm::new(
            Tokenizer::from_chars("xyz".chars()),
            Hyper {
                embed_dim: 3,
                hidden_dim: 4,
                layers: 2,
            },
            5,
        );
        let bytes = m.checkpoint().to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap().into_model().unwrap();
        assert_eq!(back.parameters(), m.parameters());
        assert_eq!(back.tokenizer(), m.tokenizer());
    }

    #[test]
    fn flipped_byte_is_detected() {
        let m = TinyLm::new(
            Tokenizer::from_chars("xyz".chars()),
            Hyper {
                embed_dim: 3,
                hidden_dim: 4,
                layers: 1,
            },
            5,
        );
        let mut bytes = m.checkpoint().to_bytes().unwrap();
        let n = bytes.len();
        bytes[n - 3] ^= 0x40;
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
