use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::AudioBuffer;

const FORMAT_PCM: u16 = 1;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

/// The Table-2 recording criterion a file violates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatCriterion {
    /// Format tag other than integer PCM, e.g. IEEE float.
    Encoding(u16),
    Channels(u16),
    Bits(u16),
}

impl std::fmt::Display for FormatCriterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FormatCriterion::Encoding(tag) => write!(f, "encoding={tag:#06x} (PCM required)"),
            FormatCriterion::Channels(n) => write!(f, "channels={n} (mono required)"),
            FormatCriterion::Bits(n) => write!(f, "bits={n} (16-bit required)"),
        }
    }
}

#[derive(Debug, Error)]
pub enum WavError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed WAV at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: &'static str },
    #[error("unsupported WAV format: {0}")]
    Unsupported(FormatCriterion),
}

/// Header fields of a WAV file, as declared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WavFormat {
    pub format_tag: u16,
    pub channels: u16,
    pub sample_rate: u32,
    pub bits_per_sample: u16,
    pub data_len: usize,
}

impl WavFormat {
    fn is_pcm(&self) -> bool {
        self.format_tag == FORMAT_PCM || self.format_tag == FORMAT_EXTENSIBLE
    }

    fn check(&self) -> Result<(), WavError> {
        if !self.is_pcm() {
            return Err(WavError::Unsupported(FormatCriterion::Encoding(self.format_tag)));
        }
        if self.channels != 1 {
            return Err(WavError::Unsupported(FormatCriterion::Channels(self.channels)));
        }
        if self.bits_per_sample != 16 {
            return Err(WavError::Unsupported(FormatCriterion::Bits(self.bits_per_sample)));
        }
        Ok(())
    }
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Scans chunks and returns the format plus the data chunk's byte range.
fn scan(bytes: &[u8]) -> Result<(WavFormat, std::ops::Range<usize>), WavError> {
    let malformed = |offset, reason| WavError::Malformed { offset, reason };
    if bytes.len() < 12 {
        return Err(malformed(bytes.len(), "file shorter than RIFF header"));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(malformed(0, "missing RIFF tag"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(malformed(8, "missing WAVE tag"));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        if id == b"fmt " {
            if size < 16 || body + 16 > bytes.len() {
                return Err(malformed(pos, "truncated fmt chunk"));
            }
            let mut tag = u16_at(bytes, body);
            if tag == FORMAT_EXTENSIBLE && size >= 40 && body + 26 <= bytes.len() {
                // The sub-format GUID starts with the real format tag.
                tag = match u16_at(bytes, body + 24) {
                    FORMAT_PCM => FORMAT_EXTENSIBLE,
                    other => other,
                };
            }
            fmt = Some((
                tag,
                u16_at(bytes, body + 2),
                u32_at(bytes, body + 4),
                u16_at(bytes, body + 14),
            ));
        } else if id == b"data" {
            let Some((format_tag, channels, sample_rate, bits_per_sample)) = fmt else {
                return Err(malformed(pos, "data chunk before fmt chunk"));
            };
            // Writers that stream sometimes leave the size unset; clamp to the file.
            let end = body.saturating_add(size).min(bytes.len());
            let format = WavFormat {
                format_tag,
                channels,
                sample_rate,
                bits_per_sample,
                data_len: end - body,
            };
            return Ok((format, body..end));
        }
        pos = body.saturating_add(size).saturating_add(size & 1);
    }
    if fmt.is_none() {
        Err(malformed(pos.min(bytes.len()), "no fmt chunk"))
    } else {
        Err(malformed(pos.min(bytes.len()), "no data chunk"))
    }
}

/// Reads header fields without enforcing the mono 16-bit PCM requirement.
pub fn parse_wav_format(bytes: &[u8]) -> Result<WavFormat, WavError> {
    scan(bytes).map(|(f, _)| f)
}

pub fn parse_wav(bytes: &[u8]) -> Result<AudioBuffer, WavError> {
    let (format, data) = scan(bytes)?;
    format.check()?;
    if format.sample_rate == 0 {
        return Err(WavError::Malformed {
            offset: 24,
            reason: "zero sample rate",
        });
    }
    let samples = bytes[data]
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]))
        .collect();
    Ok(AudioBuffer::new(samples, format.sample_rate))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, WavError> {
    fs::read(path).map_err(|source| WavError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_wav(path: &Path) -> Result<AudioBuffer, WavError> {
    parse_wav(&read_bytes(path)?)
}

pub fn read_wav_format(path: &Path) -> Result<WavFormat, WavError> {
    parse_wav_format(&read_bytes(path)?)
}

/// Canonical 44-byte header followed by little-endian samples.
pub fn encode_wav(buf: &AudioBuffer) -> Vec<u8> {
    let data_len = buf.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&buf.sample_rate.to_le_bytes());
    out.extend_from_slice(&(buf.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for s in &buf.samples {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

pub fn write_wav(buf: &AudioBuffer, path: &Path) -> Result<(), WavError> {
    fs::write(path, encode_wav(buf)).map_err(|source| WavError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header(tag: u16, channels: u16, rate: u32, bits: u16, data: &[u8]) -> Vec<u8> {
        let block = channels * bits / 8;
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&((36 + data.len()) as u32).to_le_bytes());
        out.extend_from_slice(b"WAVE");
        out.extend_from_slice(b"fmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&tag.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&rate.to_le_bytes());
        out.extend_from_slice(&(rate * block as u32).to_le_bytes());
        out.extend_from_slice(&block.to_le_bytes());
        out.extend_from_slice(&bits.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(data.len() as u32).to_le_bytes());
        out.extend_from_slice(data);
        out
    }

    #[test]
    fn three_samples_byte_layout() {
        let bytes = encode_wav(&AudioBuffer::new(vec![1, -1, 256], 8000));
        assert_eq!(bytes.len(), 50);
        assert_eq!(&bytes[0..4], b"RIFF");
        assert_eq!(u32_at(&bytes, 4), 42);
        assert_eq!(u32_at(&bytes, 16), 16);
        assert_eq!(u16_at(&bytes, 20), 1);
        assert_eq!(u16_at(&bytes, 22), 1);
        assert_eq!(u32_at(&bytes, 24), 8000);
        assert_eq!(u32_at(&bytes, 28), 16000);
        assert_eq!(u16_at(&bytes, 32), 2);
        assert_eq!(u16_at(&bytes, 34), 16);
        assert_eq!(&bytes[36..40], b"data");
        assert_eq!(u32_at(&bytes, 40), 6);
        assert_eq!(&bytes[44..], &[0x01, 0x00, 0xFF, 0xFF, 0x00, 0x01]);
        assert_eq!(parse_wav(&bytes).unwrap().samples, vec![1, -1, 256]);
    }

    #[test]
    fn one_second_silence_at_88k_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.wav");
        let buf = AudioBuffer::new(vec![0; 88000], 88000);
        write_wav(&buf, &path).unwrap();
        assert_eq!(read_wav(&path).unwrap(), buf);
    }

    #[test]
    fn empty_buffer_is_valid() {
        let buf = AudioBuffer::new(vec![], 16000);
        let bytes = encode_wav(&buf);
        assert_eq!(bytes.len(), 44);
        assert_eq!(parse_wav(&bytes).unwrap(), buf);
    }

    #[test]
    fn stereo_rejected_by_channel_criterion() {
        let bytes = header(1, 2, 44100, 16, &[0; 8]);
        assert!(matches!(
            parse_wav(&bytes),
            Err(WavError::Unsupported(FormatCriterion::Channels(2)))
        ));
    }

    #[test]
    fn float_and_24_bit_rejected() {
        assert!(matches!(
            parse_wav(&header(3, 1, 44100, 32, &[0; 8])),
            Err(WavError::Unsupported(FormatCriterion::Encoding(3)))
        ));
        assert!(matches!(
            parse_wav(&header(1, 1, 44100, 24, &[0; 6])),
            Err(WavError::Unsupported(FormatCriterion::Bits(24)))
        ));
    }

    #[test]
    fn truncated_header_reports_offset() {
        let bytes = encode_wav(&AudioBuffer::new(vec![0; 10], 16000));
        match parse_wav(&bytes[..20]) {
            Err(WavError::Malformed { offset, .. }) => assert!(offset <= 20),
            other => panic!("expected malformed, got {other:?}"),
        }
        assert!(matches!(parse_wav(b"RIFX"), Err(WavError::Malformed { offset: 4, .. })));
    }

    #[test]
    fn unknown_chunks_skipped() {
        let plain = encode_wav(&AudioBuffer::new(vec![5, 6, 7], 22050));
        let mut bytes = plain[..36].to_vec();
        bytes.extend_from_slice(b"LIST");
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&[1, 2, 3, 0]); // odd size plus pad byte
        bytes.extend_from_slice(&plain[36..]);
        assert_eq!(parse_wav(&bytes).unwrap().samples, vec![5, 6, 7]);
    }

    #[test]
    fn format_readable_for_unsupported_files() {
        let f = parse_wav_format(&header(1, 2, 44100, 16, &[0; 8])).unwrap();
        assert_eq!((f.channels, f.sample_rate, f.bits_per_sample), (2, 44100, 16));
    }

    proptest! {
        #[test]
        fn round_trip(samples in proptest::collection::vec(any::<i16>(), 0..2000), rate in 1u32..200_000) {
            let buf = AudioBuffer::new(samples, rate);
            prop_assert_eq!(parse_wav(&encode_wav(&buf)).unwrap(), buf);
        }
    }
}
