//! RIFF/WAV PCM16 decoding and encoding.
//!
//! Only the subset used by the pipeline is accepted: PCM format code 1,
//! 16-bit little-endian samples, one or two channels. Stereo input is
//! averaged to mono. Samples are normalized by 32768 so the decoded domain
//! is exactly `[-1, 1)`.

use thiserror::Error;

/// PCM16 normalization divisor.
pub const PCM16_SCALE: f32 = 32768.0;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WavError {
    #[error("malformed container: {0}")]
    MalformedContainer(String),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
}

/// Decoded mono audio.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f32>,
    pub sample_rate_hz: u32,
    pub source_id: String,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32, source_id: impl Into<String>) -> Self {
        assert!(sample_rate_hz > 0, "sample rate must be positive");
        Self {
            samples,
            sample_rate_hz,
            source_id: source_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WavHeader {
    pub sample_rate_hz: u32,
    pub bits_per_sample: u16,
    pub num_channels: u16,
    pub num_frames: u32,
}

impl WavHeader {
    pub fn duration_s(&self) -> f64 {
        self.num_frames as f64 / self.sample_rate_hz as f64
    }
}

struct Fmt {
    format_code: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
    block_align: u16,
}

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Walks the chunk list and returns the fmt description and the data chunk slice.
fn locate_chunks(bytes: &[u8]) -> Result<(Fmt, &[u8]), WavError> {
    let malformed = |m: &str| WavError::MalformedContainer(m.to_string());
    if bytes.len() < 12 {
        return Err(malformed("shorter than RIFF header"));
    }
    if &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(malformed("missing RIFF/WAVE magic"));
    }
    let riff_len = read_u32(bytes, 4) as usize;
    // The RIFF size covers everything after the first 8 bytes.
    let riff_end = riff_len
        .checked_add(8)
        .ok_or_else(|| malformed("RIFF length overflow"))?;
    if riff_end > bytes.len() {
        return Err(malformed("RIFF length exceeds input"));
    }
    if riff_end < 12 {
        return Err(malformed("RIFF length too small"));
    }

    let mut fmt: Option<Fmt> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12usize;
    while pos < riff_end {
        if pos + 8 > riff_end {
            return Err(malformed("truncated chunk header"));
        }
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .ok_or_else(|| malformed("chunk length overflow"))?;
        if body_end > riff_end {
            return Err(malformed(&format!(
                "chunk '{}' extends past end of container",
                String::from_utf8_lossy(id)
            )));
        }
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if fmt.is_some() {
                    return Err(malformed("duplicate fmt chunk"));
                }
                if size < 16 {
                    return Err(malformed("fmt chunk shorter than 16 bytes"));
                }
                fmt = Some(Fmt {
                    format_code: read_u16(body, 0),
                    channels: read_u16(body, 2),
                    sample_rate: read_u32(body, 4),
                    block_align: read_u16(body, 12),
                    bits: read_u16(body, 14),
                });
            }
            b"data" => {
                if data.is_some() {
                    return Err(malformed("duplicate data chunk"));
                }
                data = Some(body);
            }
            // LIST, fact, cue and friends are skipped.
            _ => {}
        }
        // Chunks are word aligned; the pad byte is optional at the very end.
        pos = body_end + (size & 1);
        if pos > riff_end {
            pos = riff_end;
        }
    }

    let fmt = fmt.ok_or_else(|| malformed("missing fmt chunk"))?;
    let data = data.ok_or_else(|| malformed("missing data chunk"))?;
    Ok((fmt, data))
}

/// Decodes a PCM16 WAV byte stream into its header and a mono buffer.
pub fn parse_wav(bytes: &[u8]) -> Result<(WavHeader, AudioBuffer), WavError> {
    let (fmt, data) = locate_chunks(bytes)?;
    let unsupported = |m: String| WavError::UnsupportedFormat(m);
    if fmt.format_code != 1 {
        return Err(unsupported(format!(
            "format code {} (only PCM = 1)",
            fmt.format_code
        )));
    }
    if fmt.bits != 16 {
        return Err(unsupported(format!("{} bits per sample", fmt.bits)));
    }
    if fmt.channels == 0 || fmt.channels > 2 {
        return Err(unsupported(format!("{} channels", fmt.channels)));
    }
    if fmt.sample_rate == 0 {
        return Err(WavError::MalformedContainer("zero sample rate".into()));
    }
    let frame_bytes = 2 * fmt.channels as usize;
    if fmt.block_align as usize != frame_bytes {
        return Err(WavError::MalformedContainer(format!(
            "block align {} inconsistent with {} channels",
            fmt.block_align, fmt.channels
        )));
    }
    if data.len() % frame_bytes != 0 {
        return Err(WavError::MalformedContainer(format!(
            "data length {} is not a whole number of {}-byte frames",
            data.len(),
            frame_bytes
        )));
    }
    let num_frames = data.len() / frame_bytes;
    let num_frames_u32 = u32::try_from(num_frames)
        .map_err(|_| WavError::MalformedContainer("too many frames".into()))?;

    let samples: Vec<f32> = if fmt.channels == 1 {
        data.chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / PCM16_SCALE)
            .collect()
    } else {
        data.chunks_exact(4)
            .map(|c| {
                let l = i16::from_le_bytes([c[0], c[1]]) as i32;
                let r = i16::from_le_bytes([c[2], c[3]]) as i32;
                // Mean of two i16 stays in [-32768, 32767].
                (l + r) as f32 / 2.0 / PCM16_SCALE
            })
            .collect()
    };

    let header = WavHeader {
        sample_rate_hz: fmt.sample_rate,
        bits_per_sample: fmt.bits,
        num_channels: fmt.channels,
        num_frames: num_frames_u32,
    };
    Ok((header, AudioBuffer::new(samples, fmt.sample_rate, "")))
}

/// Reads only the header of a WAV stream (still validates the full chunk layout).
pub fn parse_header(bytes: &[u8]) -> Result<WavHeader, WavError> {
    parse_wav(bytes).map(|(h, _)| h)
}

/// Quantizes a normalized sample to PCM16, saturating at the grid ends.
pub fn quantize(sample: f32) -> i16 {
    let v = (sample as f64 * PCM16_SCALE as f64).round();
    v.clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

/// Emits a canonical 44-byte-header mono PCM16 WAV.
pub fn encode_wav(buffer: &AudioBuffer) -> Vec<u8> {
    let data_len = buffer.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&buffer.sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&(buffer.sample_rate_hz * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &buffer.samples {
        out.extend_from_slice(&quantize(s).to_le_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wav_with_data(channels: u16, data: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&((36 + data.len()) as u32).to_le_bytes());
        out.extend_from_slice(b"WAVEfmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&16000u32.to_le_bytes());
        out.extend_from_slice(&(16000u32 * 2 * channels as u32).to_le_bytes());
        out.extend_from_slice(&(2 * channels).to_le_bytes());
        out.extend_from_slice(&16u16.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(data.len() as u32).to_le_bytes());
        out.extend_from_slice(data);
        out
    }

    #[test]
    fn max_positive_sample() {
        let (h, b) = parse_wav(&wav_with_data(1, &[0xFF, 0x7F])).unwrap();
        assert_eq!(h.num_frames, 1);
        assert_eq!(b.samples, vec![32767.0 / 32768.0]);
    }

    #[test]
    fn min_negative_sample() {
        let (_, b) = parse_wav(&wav_with_data(1, &[0x00, 0x80])).unwrap();
        assert_eq!(b.samples, vec![-1.0]);
    }

    #[test]
    fn ten_seconds_of_audio() {
        let data = vec![0u8; 160_000 * 2];
        let (h, b) = parse_wav(&wav_with_data(1, &data)).unwrap();
        assert_eq!(h.sample_rate_hz, 16000);
        assert_eq!(b.len(), 160_000);
        assert!((b.duration_s() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn stereo_is_averaged() {
        // L = 1000, R = -3000 -> -1000
        let mut data = Vec::new();
        data.extend_from_slice(&1000i16.to_le_bytes());
        data.extend_from_slice(&(-3000i16).to_le_bytes());
        let (h, b) = parse_wav(&wav_with_data(2, &data)).unwrap();
        assert_eq!(h.num_channels, 2);
        assert_eq!(h.num_frames, 1);
        assert_eq!(b.samples, vec![-1000.0 / 32768.0]);
    }

    #[test]
    fn skips_list_chunk() {
        let plain = wav_with_data(1, &[1, 0, 2, 0]);
        // Splice a 3-byte LIST chunk (odd, padded) between fmt and data.
        let mut out = plain[..36].to_vec();
        out.extend_from_slice(b"LIST");
        out.extend_from_slice(&3u32.to_le_bytes());
        out.extend_from_slice(&[b'a', b'b', b'c', 0]);
        out.extend_from_slice(&plain[36..]);
        let riff_len = (out.len() - 8) as u32;
        out[4..8].copy_from_slice(&riff_len.to_le_bytes());
        let (_, b) = parse_wav(&out).unwrap();
        assert_eq!(b.samples, vec![1.0 / 32768.0, 2.0 / 32768.0]);
    }

    #[test]
    fn rejects_bad_magic_and_formats() {
        let mut bad = wav_with_data(1, &[0, 0]);
        bad[0] = b'X';
        assert!(matches!(parse_wav(&bad), Err(WavError::MalformedContainer(_))));

        let mut float = wav_with_data(1, &[0, 0]);
        float[20] = 3;
        assert!(matches!(parse_wav(&float), Err(WavError::UnsupportedFormat(_))));

        let mut bits = wav_with_data(1, &[0, 0]);
        bits[34] = 24;
        assert!(matches!(parse_wav(&bits), Err(WavError::UnsupportedFormat(_))));

        let six = wav_with_data(6, &[0; 12]);
        assert!(matches!(parse_wav(&six), Err(WavError::UnsupportedFormat(_))));
    }

    #[test]
    fn truncated_data_chunk_is_malformed() {
        let mut w = wav_with_data(1, &[0, 0, 0, 0]);
        w.truncate(w.len() - 1);
        assert!(matches!(parse_wav(&w), Err(WavError::MalformedContainer(_))));
    }

    #[test]
    fn encode_zero_roundtrip() {
        let b = AudioBuffer::new(vec![0.0], 16000, "z");
        let (h, back) = parse_wav(&encode_wav(&b)).unwrap();
        assert_eq!(h.sample_rate_hz, 16000);
        assert_eq!(back.samples, vec![0.0]);
    }

    #[test]
    fn encode_half_roundtrip() {
        let b = AudioBuffer::new(vec![0.5, -0.5], 8000, "h");
        let (h, back) = parse_wav(&encode_wav(&b)).unwrap();
        assert_eq!(h.sample_rate_hz, 8000);
        // Quantize-dequantize oracle.
        for (a, o) in b.samples.iter().zip(&back.samples) {
            let expected = (a * 32768.0).round() / 32768.0;
            assert_eq!(*o, expected);
            assert!((a - o).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn sine_roundtrip_error_bounded() {
        let sr = 16000u32;
        let samples: Vec<f32> = (0..sr)
            .map(|n| (0.8 * (2.0 * std::f64::consts::PI * 440.0 * n as f64 / sr as f64).sin()) as f32)
            .collect();
        let b = AudioBuffer::new(samples, sr, "sine");
        let (_, back) = parse_wav(&encode_wav(&b)).unwrap();
        let max_err = b
            .samples
            .iter()
            .zip(&back.samples)
            .map(|(a, o)| (a - o).abs())
            .fold(0.0f32, f32::max);
        assert!(max_err <= 1.0 / 32768.0, "max error {max_err}");
    }

    proptest! {
        #[test]
        fn grid_samples_roundtrip_exactly(raw in proptest::collection::vec(any::<i16>(), 1..200), sr in 1u32..96_000) {
            let samples: Vec<f32> = raw.iter().map(|&r| r as f32 / 32768.0).collect();
            let b = AudioBuffer::new(samples.clone(), sr, "p");
            let (h, back) = parse_wav(&encode_wav(&b)).unwrap();
            prop_assert_eq!(h.sample_rate_hz, sr);
            prop_assert_eq!(back.samples, samples);
        }

        #[test]
        fn corrupted_length_fields_never_panic(n in 1usize..64, field in 0usize..3, value in any::<u32>()) {
            let b = AudioBuffer::new(vec![0.25; n], 16000, "p");
            let mut bytes = encode_wav(&b);
            let at = [4usize, 16, 40][field];
            bytes[at..at + 4].copy_from_slice(&value.to_le_bytes());
            let original = u32::from_le_bytes(encode_wav(&b)[at..at + 4].try_into().unwrap());
            let parsed = parse_wav(&bytes);
            if value == original {
                prop_assert!(parsed.is_ok());
            } else {
                prop_assert!(matches!(parsed, Err(WavError::MalformedContainer(_))), "{:?}", parsed);
            }
        }
    }
}
