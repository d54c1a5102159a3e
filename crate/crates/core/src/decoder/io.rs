//! W2LE emissions files: magic, version u32 = 1, T u32, N u32, then T·N
//! little-endian f32 scores, row-major.

use std::fs;
use std::path::Path;

use crate::criterion::Emissions;

use super::DecodeError;

pub const EMISSIONS_MAGIC: &[u8; 4] = b"W2LE";
const VERSION: u32 = 1;
const HEADER: usize = 16;

pub fn encode_emissions_bytes(em: &Emissions) -> Result<Vec<u8>, DecodeError> {
    if em.frames == 0 {
        return Err(DecodeError::Contract("refusing to write emissions with T=0".into()));
    }
    let dims = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| DecodeError::Contract(format!("{what}={v} does not fit in u32")))
    };
    let mut out = Vec::with_capacity(HEADER + em.scores.len() * 4);
    out.extend_from_slice(EMISSIONS_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&dims(em.frames, "T")?.to_le_bytes());
    out.extend_from_slice(&dims(em.tokens, "N")?.to_le_bytes());
    for v in &em.scores {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_emissions_bytes(bytes: &[u8]) -> Result<Emissions, DecodeError> {
    let err = |offset, message: &str| DecodeError::Format { offset, message: message.to_string() };
    if bytes.len() < HEADER {
        return Err(err(bytes.len(), "truncated header"));
    }
    if &bytes[..4] != EMISSIONS_MAGIC {
        return Err(err(0, "bad magic, expected W2LE"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    if word(4) != VERSION {
        return Err(err(4, &format!("unsupported version {}", word(4))));
    }
    let (t, n) = (word(8) as usize, word(12) as usize);
    if t == 0 || n == 0 {
        return Err(err(8, "empty dimensions"));
    }
    let want = t.checked_mul(n).and_then(|c| c.checked_mul(4)).ok_or_else(|| err(8, "dimensions overflow"))?;
    let body = &bytes[HEADER..];
    if body.len() < want {
        return Err(err(bytes.len(), &format!("truncated payload, expected {want} bytes")));
    }
    if body.len() > want {
        return Err(err(HEADER + want, "trailing bytes after payload"));
    }
    let scores = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Emissions::new(t, n, scores).map_err(|e| DecodeError::Contract(e.to_string()))
}

pub fn save_emissions(em: &Emissions, path: impl AsRef<Path>) -> Result<(), DecodeError> {
    let path = path.as_ref();
    let bytes = encode_emissions_bytes(em)?;
    fs::write(path, bytes).map_err(|e| DecodeError::Io(format!("{}: {e}", path.display())))
}

pub fn load_emissions(path: impl AsRef<Path>) -> Result<Emissions, DecodeError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| DecodeError::Io(format!("{}: {e}", path.display())))?;
    decode_emissions_bytes(&bytes)
}
