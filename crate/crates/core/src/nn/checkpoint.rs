//! Checkpoint layout: the 8-byte magic `MCNNCKPT`, a little-endian `u32`
//! header length, a JSON header, then every parameter as a little-endian
//! `f64`, weight before bias, in layer order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::nn::{Architecture, Network, NnError};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MCNNCKPT";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    layer: usize,
    name: String,
    /// Byte offset from the start of the weight block.
    offset: usize,
    bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    seed: Option<u64>,
    architecture: Architecture,
    tensors: Vec<TensorEntry>,
}

fn entries<S: Scalar>(net: &Network<S>) -> Vec<TensorEntry> {
    let mut offset = 0;
    let mut out = Vec::new();
    for (layer, l) in net.layers().iter().enumerate() {
        if let Some((w, b)) = l.params() {
            for (name, len) in [("weight", w.len()), ("bias", b.len())] {
                out.push(TensorEntry {
                    layer,
                    name: name.to_string(),
                    offset,
                    bytes: len * 8,
                });
                offset += len * 8;
            }
        }
    }
    out
}

pub fn save_checkpoint<S: Scalar>(net: &Network<S>, seed: Option<u64>) -> Vec<u8> {
    let header = Header {
        format_version: FORMAT_VERSION,
        seed,
        architecture: net.architecture().clone(),
        tensors: entries(net),
    };
    let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
    let header_len = u32::try_from(json.len()).expect("checkpoint header fits in u32");
    let mut out = Vec::with_capacity(12 + json.len() + net.param_count() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&json);
    for p in net.param_slices() {
        for v in p {
            out.extend_from_slice(&v.to_f64_lossless().to_le_bytes());
        }
    }
    out
}

/// Parses a checkpoint, returning the network and the recorded seed.
pub fn load_checkpoint<S: Scalar>(bytes: &[u8]) -> Result<(Network<S>, Option<u64>), NnError> {
    let bad = |m: &str| NnError::BadCheckpoint(m.to_string());
    if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("missing MCNNCKPT magic"));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body_start = 12usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("header length exceeds file size"))?;
    let header: Header =
        serde_json::from_slice(&bytes[12..body_start]).map_err(|e| NnError::BadCheckpoint(e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(NnError::BadCheckpoint(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    let mut net = Network::<S>::zeroed(header.architecture)?;
    if header.tensors != entries(&net) {
        return Err(bad("tensor table does not match the architecture"));
    }
    let body = &bytes[body_start..];
    let expected: usize = header.tensors.iter().map(|t| t.bytes).sum();
    if body.len() != expected {
        return Err(NnError::BadCheckpoint(format!(
            "weight block is {} bytes, header declares {expected}",
            body.len()
        )));
    }
    for (dst, entry) in net.param_slices_mut().into_iter().zip(&header.tensors) {
        let raw = &body[entry.offset..entry.offset + entry.bytes];
        for (d, chunk) in dst.iter_mut().zip(raw.chunks_exact(8)) {
            let v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            if !v.is_finite() {
                return Err(bad("non-finite weight"));
            }
            *d = S::from_f64_lossy(v);
        }
    }
    Ok((net, header.seed))
}

pub fn write_checkpoint<S: Scalar>(path: &Path, net: &Network<S>, seed: Option<u64>) -> Result<(), NnError> {
    fs::write(path, save_checkpoint(net, seed))?;
    Ok(())
}

pub fn read_checkpoint<S: Scalar>(path: &Path) -> Result<(Network<S>, Option<u64>), NnError> {
    load_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;
    use crate::rng::PinnedRng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = PinnedRng::new(21);
        let net = Network::<f64>::he_init(Architecture::micro_vd(), &mut rng).unwrap();
        let bytes = save_checkpoint(&net, Some(21));
        assert_eq!(&bytes[..8], b"MCNNCKPT");
        let (back, seed) = load_checkpoint::<f64>(&bytes).unwrap();
        assert_eq!(seed, Some(21));
        assert_eq!(back, net);
        assert_eq!(save_checkpoint(&back, Some(21)), bytes);

        let x = Tensor::from_vec(vec![3, 64, 64], (0..3 * 64 * 64).map(|_| rng.next_unit()).collect()).unwrap();
        let a = net.forward(&x).unwrap();
        let b = back.forward(&x).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert_eq!(p.to_bits(), q.to_bits());
        }
    }

    #[test]
    fn byte_length_matches_header() {
        let net = Network::<f64>::zeroed(Architecture::micro_vd()).unwrap();
        let bytes = save_checkpoint(&net, None);
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), 12 + header_len + net.param_count() * 8);
    }

    #[test]
    fn rejects_corruption() {
        let net = Network::<f64>::zeroed(Architecture::micro_vd()).unwrap();
        let bytes = save_checkpoint(&net, None);
        assert!(load_checkpoint::<f64>(&bytes[..bytes.len() - 8]).is_err());
        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(load_checkpoint::<f64>(&wrong_magic).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(load_checkpoint::<f64>(&long).is_err());
        assert!(load_checkpoint::<f64>(b"MCNN").is_err());
    }

    #[test]
    fn f32_networks_share_the_format() {
        let mut rng = PinnedRng::new(2);
        let net = Network::<f32>::he_init(Architecture::micro_vd(), &mut rng).unwrap();
        let (back, _) = load_checkpoint::<f32>(&save_checkpoint(&net, None)).unwrap();
        assert_eq!(back, net);
    }
}
