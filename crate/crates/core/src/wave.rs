//! WAV decoding and min/max peak pyramids for waveform display.

use thiserror::Error;

/// Samples per bucket at the finest pyramid level.
pub const BASE_BUCKET: usize = 256;
/// Coarsening stops once a level has at most this many buckets.
pub const TOP_LEVEL_MAX_BUCKETS: usize = 1024;

const FORMAT_PCM: u16 = 0x0001;
const FORMAT_FLOAT: u16 = 0x0003;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WavError {
    #[error("not a RIFF/WAVE file")]
    BadMagic,
    #[error("{0} chunk is truncated")]
    TruncatedChunk(String),
    #[error("data chunk is truncated: {declared} bytes declared, {available} available")]
    TruncatedData { declared: usize, available: usize },
    #[error("no fmt chunk before the data chunk")]
    MissingFormat,
    #[error("no data chunk")]
    MissingData,
    #[error("unsupported encoding (format tag {format_tag:#06x}, {bits} bits per sample); only 16-bit PCM and 32-bit float are supported")]
    UnsupportedEncoding { format_tag: u16, bits: u16 },
    #[error("unsupported channel count {0}; only mono and stereo are supported")]
    UnsupportedChannels(u16),
    #[error("sample rate must be positive")]
    ZeroSampleRate,
    #[error("channels have different lengths")]
    RaggedChannels,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcmAudio {
    sample_rate: u32,
    channels: Vec<Vec<f32>>,
}

impl PcmAudio {
    /// One or two equally long channels of normalized samples.
    pub fn new(sample_rate: u32, channels: Vec<Vec<f32>>) -> Result<Self, WavError> {
        if sample_rate == 0 {
            return Err(WavError::ZeroSampleRate);
        }
        if !(1..=2).contains(&channels.len()) {
            return Err(WavError::UnsupportedChannels(channels.len() as u16));
        }
        if channels.iter().any(|c| c.len() != channels[0].len()) {
            return Err(WavError::RaggedChannels);
        }
        Ok(Self {
            sample_rate,
            channels,
        })
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn channels(&self) -> &[Vec<f32>] {
        &self.channels
    }

    /// Frames per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_sec(&self) -> f64 {
        self.len() as f64 / f64::from(self.sample_rate)
    }

    /// Mean of the channels, frame by frame.
    pub fn mono(&self) -> Vec<f32> {
        match self.channels.as_slice() {
            [only] => only.clone(),
            [left, right] => left.iter().zip(right).map(|(l, r)| (l + r) * 0.5).collect(),
            _ => unreachable!("channel count checked on construction"),
        }
    }
}

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

struct Format {
    tag: u16,
    channels: u16,
    sample_rate: u32,
    block_align: u16,
    bits: u16,
}

fn parse_fmt(body: &[u8]) -> Result<Format, WavError> {
    if body.len() < 16 {
        return Err(WavError::TruncatedChunk("fmt".into()));
    }
    let mut tag = le_u16(body, 0);
    if tag == FORMAT_EXTENSIBLE {
        // cbSize(2) validBits(2) channelMask(4), then the sub-format GUID whose first two
        // bytes are the effective format tag.
        if body.len() < 26 {
            return Err(WavError::TruncatedChunk("fmt".into()));
        }
        tag = le_u16(body, 24);
    }
    Ok(Format {
        tag,
        channels: le_u16(body, 2),
        sample_rate: le_u32(body, 4),
        block_align: le_u16(body, 12),
        bits: le_u16(body, 14),
    })
}

/// Decodes a RIFF/WAVE file holding 16-bit PCM or 32-bit float samples, mono or stereo.
/// 16-bit samples are scaled by 1/32768. Chunks other than `fmt ` and `data` are skipped.
pub fn parse_wav(bytes: &[u8]) -> Result<PcmAudio, WavError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(WavError::BadMagic);
    }
    let mut pos = 12;
    let mut format: Option<Format> = None;

    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = le_u32(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let available = bytes.len() - body_start;

        if id == b"data" {
            let fmt = format.ok_or(WavError::MissingFormat)?;
            if size > available {
                return Err(WavError::TruncatedData {
                    declared: size,
                    available,
                });
            }
            return decode_samples(&fmt, &bytes[body_start..body_start + size]);
        }

        if size > available {
            return Err(WavError::TruncatedChunk(
                String::from_utf8_lossy(id).into_owned(),
            ));
        }
        if id == b"fmt " {
            format = Some(parse_fmt(&bytes[body_start..body_start + size])?);
        }
        // Chunk bodies are padded to an even length.
        pos = body_start + size + (size & 1);
    }
    Err(WavError::MissingData)
}

fn decode_samples(fmt: &Format, data: &[u8]) -> Result<PcmAudio, WavError> {
    if !(1..=2).contains(&fmt.channels) {
        return Err(WavError::UnsupportedChannels(fmt.channels));
    }
    if fmt.sample_rate == 0 {
        return Err(WavError::ZeroSampleRate);
    }
    let width = match (fmt.tag, fmt.bits) {
        (FORMAT_PCM, 16) => 2,
        (FORMAT_FLOAT, 32) => 4,
        (tag, bits) => {
            return Err(WavError::UnsupportedEncoding {
                format_tag: tag,
                bits,
            })
        }
    };
    let channel_count = usize::from(fmt.channels);
    let frame = usize::from(fmt.block_align).max(width * channel_count);
    let frames = data.len() / frame;

    let mut channels = vec![Vec::with_capacity(frames); channel_count];
    for chunk in data.chunks_exact(frame) {
        for (c, samples) in channels.iter_mut().enumerate() {
            let at = c * width;
            let value = if width == 2 {
                f32::from(i16::from_le_bytes([chunk[at], chunk[at + 1]])) / 32768.0
            } else {
                f32::from_le_bytes([chunk[at], chunk[at + 1], chunk[at + 2], chunk[at + 3]])
            };
            samples.push(value);
        }
    }
    PcmAudio::new(fmt.sample_rate, channels)
}

/// Min/max summary of consecutive buckets of `bucket_size` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakLevel {
    pub bucket_size: usize,
    /// `(min, max)` per bucket; the final bucket may cover fewer samples.
    pub buckets: Vec<(f32, f32)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PeakPyramid {
    /// Total samples summarised.
    pub sample_count: usize,
    /// Finest level first; each level halves the resolution of the one before.
    pub levels: Vec<PeakLevel>,
}

fn combine(a: (f32, f32), b: (f32, f32)) -> (f32, f32) {
    (a.0.min(b.0), a.1.max(b.1))
}

/// Builds the pyramid over the mono mixdown: 256-sample buckets at the base, doubling bucket
/// size per level until a level has at most 1024 buckets.
pub fn build_peaks(pcm: &PcmAudio) -> PeakPyramid {
    peaks_from_samples(&pcm.mono())
}

pub fn peaks_from_samples(samples: &[f32]) -> PeakPyramid {
    let base: Vec<(f32, f32)> = samples
        .chunks(BASE_BUCKET)
        .map(|chunk| {
            chunk
                .iter()
                .fold((f32::INFINITY, f32::NEG_INFINITY), |acc, &s| {
                    combine(acc, (s, s))
                })
        })
        .collect();
    let mut levels = vec![PeakLevel {
        bucket_size: BASE_BUCKET,
        buckets: base,
    }];
    while levels
        .last()
        .is_some_and(|l| l.buckets.len() > TOP_LEVEL_MAX_BUCKETS)
    {
        let prev = levels.last().unwrap();
        let buckets = prev
            .buckets
            .chunks(2)
            .map(|pair| pair.iter().copied().reduce(combine).unwrap())
            .collect();
        levels.push(PeakLevel {
            bucket_size: prev.bucket_size * 2,
            buckets,
        });
    }
    PeakPyramid {
        sample_count: samples.len(),
        levels,
    }
}

/// Waveform columns for the time window `[t0, t1)`.
///
/// Uses the coarsest level whose buckets are no longer than one column, and reports for each
/// column the min/max over every bucket it touches, so the true sample extremes are always
/// contained. Columns outside the audio read `(0, 0)`.
pub fn peaks_for_window(
    pyramid: &PeakPyramid,
    sample_rate: u32,
    t0: f64,
    t1: f64,
    columns: usize,
) -> Vec<(f32, f32)> {
    let mut out = vec![(0.0, 0.0); columns];
    if columns == 0
        || t1.partial_cmp(&t0) != Some(std::cmp::Ordering::Greater)
        || sample_rate == 0
        || pyramid.levels.is_empty()
    {
        return out;
    }
    let rate = f64::from(sample_rate);
    let samples_per_column = (t1 - t0) * rate / columns as f64;
    let level = pyramid
        .levels
        .iter()
        .rev()
        .find(|l| l.bucket_size as f64 <= samples_per_column)
        .unwrap_or(&pyramid.levels[0]);
    let total = pyramid.sample_count as f64;

    for (c, slot) in out.iter_mut().enumerate() {
        let start = t0 + (t1 - t0) * c as f64 / columns as f64;
        let end = t0 + (t1 - t0) * (c + 1) as f64 / columns as f64;
        // Tolerate float noise so a column aligned to a bucket edge stays inside it.
        let s0 = (start * rate + 1e-6).floor().max(0.0);
        let mut s1 = (end * rate - 1e-6).ceil().min(total);
        if s0 >= total || s1 <= 0.0 {
            continue;
        }
        if s1 <= s0 {
            s1 = s0 + 1.0;
        }
        let first = s0 as usize / level.bucket_size;
        let last = (s1 as usize - 1) / level.bucket_size;
        *slot = level.buckets[first..=last]
            .iter()
            .copied()
            .reduce(combine)
            .unwrap_or((0.0, 0.0));
    }
    out
}

/// Decoded reference audio as the document keeps it.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub sample_rate: u32,
    pub channel_count: usize,
    pub duration_sec: f64,
    pub peaks: PeakPyramid,
}

impl Waveform {
    pub fn from_pcm(pcm: &PcmAudio) -> Self {
        Self {
            sample_rate: pcm.sample_rate(),
            channel_count: pcm.channel_count(),
            duration_sec: pcm.duration_sec(),
            peaks: build_peaks(pcm),
        }
    }
}
