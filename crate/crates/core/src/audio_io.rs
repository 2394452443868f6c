//! Multichannel WAV input and output.

use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};

use crate::error::{Error, Result};

/// Real multichannel time-domain signal, `samples[(n, channel)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSignal {
    samples: Array2<f64>,
    sample_rate: u32,
}

impl TimeSignal {
    pub fn new(samples: Array2<f64>, sample_rate: u32) -> Result<Self> {
        if samples.nrows() == 0 || samples.ncols() == 0 {
            return Err(Error::InvalidInput(
                "signal needs at least one sample and one channel".into(),
            ));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("signal contains non-finite samples".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        let n = samples.len();
        let arr = Array2::from_shape_vec((n, 1), samples)
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        Self::new(arr, sample_rate)
    }

    /// Stacks equally long mono channels into one signal.
    pub fn from_channels(channels: &[Vec<f64>], sample_rate: u32) -> Result<Self> {
        let len = channels.first().map_or(0, Vec::len);
        if let Some(bad) = channels.iter().find(|c| c.len() != len) {
            return Err(Error::LengthMismatch {
                left: len,
                right: bad.len(),
            });
        }
        let arr = Array2::from_shape_fn((len, channels.len()), |(n, m)| channels[m][n]);
        Self::new(arr, sample_rate)
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn num_samples(&self) -> usize {
        self.samples.nrows()
    }

    pub fn num_channels(&self) -> usize {
        self.samples.ncols()
    }

    pub fn channel(&self, m: usize) -> ArrayView1<'_, f64> {
        self.samples.column(m)
    }

    pub fn channel_vec(&self, m: usize) -> Vec<f64> {
        self.samples.column(m).to_vec()
    }

    pub fn channels(&self) -> Vec<Vec<f64>> {
        self.samples
            .axis_iter(Axis(1))
            .map(|c| c.to_vec())
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |a, &x| a.max(x.abs()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WavFormat {
    Float32,
    Pcm16,
}

fn map_hound(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) => Error::io(path, e),
        hound::Error::Unsupported => Error::UnsupportedFormat(format!("{}", path.display())),
        hound::Error::FormatError(msg) => Error::CorruptHeader(msg.to_string()),
        hound::Error::TooWide => Error::UnsupportedFormat("sample width above 32 bits".into()),
        other => Error::CorruptHeader(other.to_string()),
    }
}

/// Reads a PCM16/24/32 or IEEE float32 WAV file. Integer samples are divided by `2^(bits-1)`.
pub fn read_wav(path: impl AsRef<Path>) -> Result<TimeSignal> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::CorruptHeader("zero channels".into()));
    }
    let flat: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (hound::SampleFormat::Int, bits @ (16 | 24 | 32)) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| map_hound(path, e))?
        }
        (fmt, bits) => {
            return Err(Error::UnsupportedFormat(format!(
                "{fmt:?} with {bits} bits per sample"
            )))
        }
    };
    if !flat.len().is_multiple_of(channels) {
        return Err(Error::CorruptHeader(
            "sample count is not a multiple of the channel count".into(),
        ));
    }
    let frames = flat.len() / channels;
    let samples = Array2::from_shape_vec((frames, channels), flat)
        .map_err(|e| Error::CorruptHeader(e.to_string()))?;
    TimeSignal::new(samples, spec.sample_rate)
}

/// Writes a signal as float32 or PCM16. PCM16 clips to `[-1, 1 - 2^-15]`.
pub fn write_wav(path: impl AsRef<Path>, signal: &TimeSignal, format: WavFormat) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: signal.num_channels() as u16,
        sample_rate: signal.sample_rate(),
        bits_per_sample: match format {
            WavFormat::Float32 => 32,
            WavFormat::Pcm16 => 16,
        },
        sample_format: match format {
            WavFormat::Float32 => hound::SampleFormat::Float,
            WavFormat::Pcm16 => hound::SampleFormat::Int,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for row in signal.samples().rows() {
        for &x in row {
            match format {
                WavFormat::Float32 => writer.write_sample(x as f32),
                WavFormat::Pcm16 => {
                    let q = (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    writer.write_sample(q)
                }
            }
            .map_err(|e| map_hound(path, e))?;
        }
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}
