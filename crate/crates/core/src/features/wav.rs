//! Minimal RIFF/WAVE reader and writer (PCM16 and IEEE float32).

use std::fs;
use std::path::Path;

use super::{AudioBuffer, FeatureError};

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioBuffer, FeatureError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| FeatureError::Io(format!("{}: {e}", path.display())))?;
    parse_wav(&bytes)
}

fn parse_err(offset: usize, msg: impl Into<String>) -> FeatureError {
    FeatureError::WavParse { offset, message: msg.into() }
}

fn u16_at(b: &[u8], off: usize) -> Result<u16, FeatureError> {
    b.get(off..off + 2)
        .map(|s| u16::from_le_bytes([s[0], s[1]]))
        .ok_or_else(|| parse_err(off, "unexpected end of file"))
}

fn u32_at(b: &[u8], off: usize) -> Result<u32, FeatureError> {
    b.get(off..off + 4)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or_else(|| parse_err(off, "unexpected end of file"))
}

struct Format {
    codec: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

pub fn parse_wav(b: &[u8]) -> Result<AudioBuffer, FeatureError> {
    if b.len() < 12 {
        return Err(parse_err(b.len(), "file shorter than RIFF header"));
    }
    if &b[0..4] != b"RIFF" {
        return Err(parse_err(0, "missing RIFF magic"));
    }
    if &b[8..12] != b"WAVE" {
        return Err(parse_err(8, "missing WAVE form type"));
    }

    let mut off = 12;
    let mut format: Option<Format> = None;
    while off + 8 <= b.len() {
        let id = &b[off..off + 4];
        let size = u32_at(b, off + 4)? as usize;
        let body = off + 8;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(parse_err(off + 4, format!("fmt chunk too small ({size} bytes)")));
                }
                let mut codec = u16_at(b, body)?;
                let channels = u16_at(b, body + 2)?;
                let sample_rate = u32_at(b, body + 4)?;
                let bits = u16_at(b, body + 14)?;
                if codec == FORMAT_EXTENSIBLE {
                    // sub-format GUID starts with the real codec tag
                    codec = u16_at(b, body + 24)?;
                }
                if channels == 0 || channels > 2 {
                    return Err(parse_err(body + 2, format!("unsupported channel count {channels}")));
                }
                if sample_rate == 0 {
                    return Err(parse_err(body + 4, "sample rate is zero"));
                }
                match (codec, bits) {
                    (FORMAT_PCM, 16) | (FORMAT_FLOAT, 32) => {}
                    _ => return Err(FeatureError::UnsupportedCodec { offset: body, codec, bits }),
                }
                format = Some(Format { codec, channels, sample_rate, bits });
            }
            b"data" => {
                let fmt = format.as_ref().ok_or_else(|| parse_err(off, "data chunk before fmt chunk"))?;
                if body + size > b.len() {
                    return Err(parse_err(
                        b.len(),
                        format!("data chunk declares {size} bytes, only {} present", b.len() - body),
                    ));
                }
                let frame_bytes = fmt.channels as usize * fmt.bits as usize / 8;
                if size % frame_bytes != 0 {
                    return Err(parse_err(body + size, "data chunk ends mid-frame"));
                }
                let data = &b[body..body + size];
                let samples = decode_samples(data, fmt);
                if samples.is_empty() {
                    return Err(parse_err(body, "no audio samples"));
                }
                return Ok(AudioBuffer { samples, sample_rate: fmt.sample_rate });
            }
            _ => {}
        }
        off = body + size + (size & 1);
    }
    Err(parse_err(off.min(b.len()), "no data chunk found"))
}

fn decode_samples(data: &[u8], fmt: &Format) -> Vec<f32> {
    let ch = fmt.channels as usize;
    let raw: Vec<f32> = if fmt.codec == FORMAT_PCM {
        data.chunks_exact(2).map(|s| i16::from_le_bytes([s[0], s[1]]) as f32 / 32768.0).collect()
    } else {
        data.chunks_exact(4).map(|s| f32::from_le_bytes([s[0], s[1], s[2], s[3]])).collect()
    };
    if ch == 1 {
        raw
    } else {
        raw.chunks_exact(ch).map(|f| f.iter().sum::<f32>() / ch as f32).collect()
    }
}

/// Encode interleaved samples as a PCM16 WAV file image. Values are clamped
/// to [-1, 1) before quantization.
pub fn encode_wav_pcm16(samples: &[f32], sample_rate: u32, channels: u16) -> Vec<u8> {
    let data: Vec<u8> =
        samples.iter().flat_map(|&s| ((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16).to_le_bytes()).collect();
    riff(&data, FORMAT_PCM, 16, sample_rate, channels)
}

pub fn encode_wav_f32(samples: &[f32], sample_rate: u32, channels: u16) -> Vec<u8> {
    let data: Vec<u8> = samples.iter().flat_map(|s| s.to_le_bytes()).collect();
    riff(&data, FORMAT_FLOAT, 32, sample_rate, channels)
}

fn riff(data: &[u8], codec: u16, bits: u16, sample_rate: u32, channels: u16) -> Vec<u8> {
    let block_align = channels * bits / 8;
    let mut out = Vec::with_capacity(44 + data.len());
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data.len() as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&codec.to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * block_align as u32).to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data.len() as u32).to_le_bytes());
    out.extend_from_slice(data);
    out
}
