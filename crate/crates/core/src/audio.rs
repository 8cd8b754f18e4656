//! Per-participant audio tracks: WAV I/O, validation and mixing.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The only sample rate accepted downstream.
pub const SAMPLE_RATE: u32 = 16_000;

/// One participant's mono track.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioChannel {
    samples: Vec<f32>,
    sample_rate: u32,
    participant_id: String,
}

impl AudioChannel {
    /// Builds a channel, rejecting non-finite or out-of-range samples.
    pub fn new(participant_id: impl Into<String>, samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("sample {i} is not finite")));
        }
        if let Some(i) = samples.iter().position(|s| s.abs() > 1.0) {
            return Err(Error::InvalidAudio(format!(
                "sample {i} = {} is outside [-1, 1]",
                samples[i]
            )));
        }
        Ok(AudioChannel { samples, sample_rate, participant_id: participant_id.into() })
    }

    /// Like [`AudioChannel::new`] but clamps out-of-range samples instead of failing.
    pub fn normalized(participant_id: impl Into<String>, mut samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        for s in &mut samples {
            *s = s.clamp(-1.0, 1.0);
        }
        Self::new(participant_id, samples, sample_rate)
    }

    pub fn silence(participant_id: impl Into<String>, len: usize) -> Self {
        AudioChannel { samples: vec![0.0; len], sample_rate: SAMPLE_RATE, participant_id: participant_id.into() }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn participant_id(&self) -> &str {
        &self.participant_id
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let sum: f64 = self.samples.iter().map(|&s| f64::from(s) * f64::from(s)).sum();
        (sum / self.samples.len() as f64).sqrt()
    }

    pub fn ensure_canonical_rate(&self) -> Result<()> {
        if self.sample_rate != SAMPLE_RATE {
            return Err(Error::SampleRate { found: self.sample_rate, expected: SAMPLE_RATE });
        }
        Ok(())
    }

    /// Copies `[start, end)` into a new channel with the same identity.
    pub fn window(&self, start: usize, end: usize) -> Result<AudioChannel> {
        if start > end || end > self.samples.len() {
            return Err(Error::OutOfBounds { start, end, len: self.samples.len() });
        }
        Ok(AudioChannel {
            samples: self.samples[start..end].to_vec(),
            sample_rate: self.sample_rate,
            participant_id: self.participant_id.clone(),
        })
    }

    fn zero_padded(mut self, len: usize) -> Self {
        self.samples.resize(len, 0.0);
        self
    }
}

/// All channels of one meeting, aligned to a common length.
#[derive(Debug, Clone)]
pub struct MeetingAudio {
    meeting_id: String,
    channels: Vec<AudioChannel>,
    /// Number of zero samples appended to each channel at construction.
    padding: Vec<usize>,
}

impl MeetingAudio {
    pub fn new(meeting_id: impl Into<String>, channels: Vec<AudioChannel>) -> Result<Self> {
        if channels.len() < 2 {
            return Err(Error::InvalidAudio(format!(
                "a meeting needs at least 2 channels, got {}",
                channels.len()
            )));
        }
        let rate = channels[0].sample_rate;
        if let Some(c) = channels.iter().find(|c| c.sample_rate != rate) {
            return Err(Error::InvalidAudio(format!(
                "channel {} has rate {} Hz, expected {} Hz",
                c.participant_id, c.sample_rate, rate
            )));
        }
        let len = channels.iter().map(AudioChannel::len).max().unwrap_or(0);
        let padding = channels.iter().map(|c| len - c.len()).collect();
        let channels = channels.into_iter().map(|c| c.zero_padded(len)).collect();
        Ok(MeetingAudio { meeting_id: meeting_id.into(), channels, padding })
    }

    pub fn meeting_id(&self) -> &str {
        &self.meeting_id
    }

    pub fn channels(&self) -> &[AudioChannel] {
        &self.channels
    }

    pub fn padding(&self) -> &[usize] {
        &self.padding
    }

    pub fn sample_rate(&self) -> u32 {
        self.channels[0].sample_rate
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_s(&self) -> f64 {
        self.channels[0].duration_s()
    }
}

/// Sample-wise sum of equal-length channels, hard-clipped to [-1, 1].
///
/// Per-sample terms are summed in sorted order so the result does not depend
/// on the order of `channels`.
pub fn mixdown(channels: &[&AudioChannel]) -> Result<AudioChannel> {
    let first = channels
        .first()
        .ok_or_else(|| Error::InvalidAudio("mixdown of an empty channel list".into()))?;
    for c in channels {
        if c.len() != first.len() || c.sample_rate != first.sample_rate {
            return Err(Error::InvalidAudio(format!(
                "cannot mix {} ({} samples @ {} Hz) with {} ({} samples @ {} Hz)",
                c.participant_id, c.len(), c.sample_rate, first.participant_id, first.len(), first.sample_rate
            )));
        }
    }
    if channels.len() == 1 {
        return Ok(AudioChannel { participant_id: "mix".into(), ..(*first).clone() });
    }
    let mut terms = vec![0.0f32; channels.len()];
    let samples = (0..first.len())
        .map(|i| {
            for (t, c) in terms.iter_mut().zip(channels) {
                *t = c.samples[i];
            }
            terms.sort_by(f32::total_cmp);
            let sum: f64 = terms.iter().map(|&t| f64::from(t)).sum();
            sum.clamp(-1.0, 1.0) as f32
        })
        .collect();
    Ok(AudioChannel { samples, sample_rate: first.sample_rate, participant_id: "mix".into() })
}

/// On-disk sample encoding for [`write_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

fn map_hound(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
            Error::MalformedWav(format!("{}: truncated file", path.display()))
        }
        hound::Error::IoError(io) => Error::io(path, io),
        hound::Error::FormatError(m) => Error::MalformedWav(format!("{}: {m}", path.display())),
        hound::Error::Unsupported => {
            Error::UnsupportedEncoding(format!("{}: unsupported wav feature", path.display()))
        }
        other => Error::MalformedWav(format!("{}: {other}", path.display())),
    }
}

fn pcm16_to_f32(s: i16) -> f32 {
    f32::from(s) / 32768.0
}

fn f32_to_pcm16(s: f32) -> i16 {
    (f64::from(s) * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Reads raw interleaved samples, returning `(channels, rate, samples)`.
fn read_interleaved(path: &Path) -> Result<(u16, u32, Vec<f32>)> {
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(pcm16_to_f32))
            .collect::<std::result::Result<Vec<_>, _>>(),
        (hound::SampleFormat::Float, 32) => {
            reader.into_samples::<f32>().collect::<std::result::Result<Vec<_>, _>>()
        }
        (fmt, bits) => {
            return Err(Error::UnsupportedEncoding(format!(
                "{}: {bits}-bit {fmt:?} (expected 16-bit PCM or 32-bit float)",
                path.display()
            )))
        }
    }
    .map_err(|e| map_hound(path, e))?;
    Ok((spec.channels, spec.sample_rate, samples))
}

/// Loads a mono 16 kHz WAV file (PCM16 or float32) as an [`AudioChannel`].
///
/// The participant id is taken from the file stem.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioChannel> {
    let path = path.as_ref();
    let (channels, rate, samples) = read_interleaved(path)?;
    if channels != 1 {
        return Err(Error::MultiChannel(channels));
    }
    if rate != SAMPLE_RATE {
        return Err(Error::SampleRate { found: rate, expected: SAMPLE_RATE });
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("{}: non-finite sample", path.display())));
    }
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    AudioChannel::normalized(id, samples, rate)
}

/// Loads a two-channel clip file as `(left, right)`.
pub fn load_stereo_wav(path: impl AsRef<Path>) -> Result<(AudioChannel, AudioChannel)> {
    let path = path.as_ref();
    let (channels, rate, samples) = read_interleaved(path)?;
    if channels != 2 {
        return Err(Error::InvalidAudio(format!(
            "{}: expected 2 channels, found {channels}",
            path.display()
        )));
    }
    if rate != SAMPLE_RATE {
        return Err(Error::SampleRate { found: rate, expected: SAMPLE_RATE });
    }
    let left = samples.iter().step_by(2).copied().collect();
    let right = samples.iter().skip(1).step_by(2).copied().collect();
    Ok((
        AudioChannel::normalized("left", left, rate)?,
        AudioChannel::normalized("right", right, rate)?,
    ))
}

fn write_interleaved(path: &Path, channels: &[&AudioChannel], encoding: WavEncoding) -> Result<()> {
    let first = channels[0];
    if channels.iter().any(|c| c.len() != first.len() || c.sample_rate != first.sample_rate) {
        return Err(Error::InvalidAudio("interleaved channels differ in length or rate".into()));
    }
    let (bits, format) = match encoding {
        WavEncoding::Pcm16 => (16, hound::SampleFormat::Int),
        WavEncoding::Float32 => (32, hound::SampleFormat::Float),
    };
    let spec = hound::WavSpec {
        channels: channels.len() as u16,
        sample_rate: first.sample_rate,
        bits_per_sample: bits,
        sample_format: format,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for i in 0..first.len() {
        for c in channels {
            let s = c.samples[i];
            match encoding {
                WavEncoding::Pcm16 => writer.write_sample(f32_to_pcm16(s)),
                WavEncoding::Float32 => writer.write_sample(s),
            }
            .map_err(|e| map_hound(path, e))?;
        }
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}

/// Writes a mono WAV file.
pub fn write_wav(path: impl AsRef<Path>, channel: &AudioChannel, encoding: WavEncoding) -> Result<()> {
    write_interleaved(path.as_ref(), &[channel], encoding)
}

/// Writes a two-channel PCM16 file: channel 0 = `left`, channel 1 = `right`.
pub fn write_stereo_wav(path: impl AsRef<Path>, left: &AudioChannel, right: &AudioChannel) -> Result<()> {
    write_interleaved(path.as_ref(), &[left, right], WavEncoding::Pcm16)
}
