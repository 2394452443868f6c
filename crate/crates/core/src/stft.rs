//! Multichannel STFT analysis and weighted overlap-add synthesis.
//!
//! Analysis and synthesis share one square-root Hann window, so the pair is
//! self-dual: with `shift` dividing `window_size / 2` the squared windows sum to
//! the constant `window_size / (2 * shift)` and overlap-add reconstructs the
//! input exactly. The input is zero-padded by `window_size - shift` samples on
//! both ends so that every original sample sees the full overlap.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{s, Array2, Array3, ArrayView1};
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio_io::TimeSignal;
use crate::error::{Error, Result};
use crate::linalg::C64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    SqrtHann,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    window_size: usize,
    shift: usize,
    window: Window,
}

impl StftConfig {
    pub fn new(window_size: usize, shift: usize) -> Result<Self> {
        if window_size < 2 || !window_size.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "STFT size must be a power of two >= 2, got {window_size}"
            )));
        }
        if shift == 0 || shift > window_size || window_size % shift != 0 {
            return Err(Error::InvalidConfig(format!(
                "STFT shift {shift} must divide the window size {window_size}"
            )));
        }
        let cfg = Self {
            window_size,
            shift,
            window: Window::SqrtHann,
        };
        // sqrt-Hann is only COLA-consistent once every sample sees at least two frames
        if !cfg.satisfies_cola() {
            return Err(Error::InvalidConfig(format!(
                "shift {shift} breaks the overlap-add condition for window {window_size}"
            )));
        }
        Ok(cfg)
    }

    /// Quarter-window shift.
    pub fn with_default_shift(window_size: usize) -> Result<Self> {
        Self::new(window_size, (window_size / 4).max(1))
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }

    pub fn shift(&self) -> usize {
        self.shift
    }

    pub fn fft_size(&self) -> usize {
        self.window_size
    }

    pub fn window_kind(&self) -> Window {
        self.window
    }

    pub fn num_bins(&self) -> usize {
        self.window_size / 2 + 1
    }

    pub fn padding(&self) -> usize {
        self.window_size - self.shift
    }

    /// Periodic square-root Hann window.
    pub fn window(&self) -> Vec<f64> {
        let n = self.window_size as f64;
        (0..self.window_size)
            .map(|i| (0.5 - 0.5 * (2.0 * PI * i as f64 / n).cos()).sqrt())
            .collect()
    }

    /// `Σ_j w²[n - j·shift]`, constant over `n` for a valid config.
    pub fn cola_constant(&self) -> f64 {
        self.overlap_sum(0, &self.window())
    }

    fn overlap_sum(&self, n: usize, w: &[f64]) -> f64 {
        let mut s = 0.0;
        let mut idx = n % self.shift;
        while idx < self.window_size {
            s += w[idx] * w[idx];
            idx += self.shift;
        }
        s
    }

    fn satisfies_cola(&self) -> bool {
        let w = self.window();
        let reference = self.overlap_sum(0, &w);
        if reference <= 0.0 {
            return false;
        }
        (0..self.shift).all(|n| (self.overlap_sum(n, &w) - reference).abs() <= 1e-12 * reference)
    }

    /// Number of frames the analysis produces for `len` input samples.
    pub fn num_frames(&self, len: usize) -> usize {
        let padded = len + 2 * self.padding();
        1 + (padded - self.window_size).div_ceil(self.shift)
    }
}

/// Complex tensor `data[(f, t, m)]`: frequency bin, frame, channel.
#[derive(Clone, Debug, PartialEq)]
pub struct MultichannelSpectrogram {
    data: Array3<C64>,
    config: StftConfig,
    sample_rate: u32,
}

/// Per-source STFT-domain estimates share the spectrogram layout, with the
/// third axis indexing sources instead of microphones.
pub type SourceEstimates = MultichannelSpectrogram;

impl MultichannelSpectrogram {
    pub fn new(data: Array3<C64>, config: StftConfig, sample_rate: u32) -> Result<Self> {
        let (f, t, m) = data.dim();
        if f != config.num_bins() {
            return Err(Error::InvalidInput(format!(
                "spectrogram has {f} bins, config expects {}",
                config.num_bins()
            )));
        }
        if t == 0 || m == 0 {
            return Err(Error::InvalidInput("spectrogram needs frames and channels".into()));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidInput("spectrogram contains non-finite values".into()));
        }
        Ok(Self {
            data: data.as_standard_layout().into_owned(),
            config,
            sample_rate,
        })
    }

    pub fn zeros(config: StftConfig, frames: usize, channels: usize, sample_rate: u32) -> Self {
        Self {
            data: Array3::zeros((config.num_bins(), frames, channels)),
            config,
            sample_rate,
        }
    }

    pub fn data(&self) -> &Array3<C64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<C64> {
        &mut self.data
    }

    pub fn into_data(self) -> Array3<C64> {
        self.data
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn num_bins(&self) -> usize {
        self.data.dim().0
    }

    pub fn num_frames(&self) -> usize {
        self.data.dim().1
    }

    pub fn num_channels(&self) -> usize {
        self.data.dim().2
    }

    /// Observation vector `y_{f,t}` as a contiguous slice.
    pub fn observation(&self, f: usize, t: usize) -> &[C64] {
        let m = self.num_channels();
        let start = (f * self.num_frames() + t) * m;
        &self.data.as_slice().expect("standard layout")[start..start + m]
    }

    /// All frames of bin `f`, frame-major: `frames × channels` values.
    pub fn bin(&self, f: usize) -> &[C64] {
        let len = self.num_frames() * self.num_channels();
        &self.data.as_slice().expect("standard layout")[f * len..(f + 1) * len]
    }

    pub fn channel_bin(&self, f: usize, m: usize) -> ArrayView1<'_, C64> {
        self.data.slice(s![f, .., m])
    }

    /// Single-channel spectrogram holding channel `m`.
    pub fn select_channel(&self, m: usize) -> MultichannelSpectrogram {
        let data = self.data.slice(s![.., .., m..m + 1]).to_owned();
        Self {
            data,
            config: self.config,
            sample_rate: self.sample_rate,
        }
    }
}

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn plans(n: usize) -> Plans {
    let mut planner = FftPlanner::new();
    Plans {
        forward: planner.plan_fft_forward(n),
        inverse: planner.plan_fft_inverse(n),
    }
}

/// Forward STFT of every channel.
pub fn stft(signal: &TimeSignal, config: &StftConfig) -> Result<MultichannelSpectrogram> {
    let len = signal.num_samples();
    let n = config.window_size();
    if len < n {
        return Err(Error::SignalTooShort { min: n, actual: len });
    }
    let frames = config.num_frames(len);
    let bins = config.num_bins();
    let pad = config.padding();
    let shift = config.shift();
    let window = config.window();
    let plans = plans(n);

    let per_channel: Vec<Array2<C64>> = (0..signal.num_channels())
        .into_par_iter()
        .map(|m| {
            let x = signal.channel(m);
            let mut out = Array2::<C64>::zeros((bins, frames));
            let mut buf = vec![C64::new(0.0, 0.0); n];
            let mut scratch = vec![C64::new(0.0, 0.0); plans.forward.get_inplace_scratch_len()];
            for t in 0..frames {
                let start = (t * shift) as isize - pad as isize;
                for (i, b) in buf.iter_mut().enumerate() {
                    let idx = start + i as isize;
                    let v = if idx >= 0 && (idx as usize) < len {
                        x[idx as usize]
                    } else {
                        0.0
                    };
                    *b = C64::new(v * window[i], 0.0);
                }
                plans.forward.process_with_scratch(&mut buf, &mut scratch);
                for f in 0..bins {
                    out[(f, t)] = buf[f];
                }
            }
            out
        })
        .collect();

    let mut data = Array3::<C64>::zeros((bins, frames, signal.num_channels()));
    for (m, ch) in per_channel.iter().enumerate() {
        data.slice_mut(s![.., .., m]).assign(ch);
    }
    Ok(MultichannelSpectrogram {
        data,
        config: *config,
        sample_rate: signal.sample_rate(),
    })
}

/// Inverse STFT by weighted overlap-add, trimmed or zero-extended to `target_length`.
///
/// The imaginary parts of the DC and Nyquist bins do not correspond to any real
/// signal and are ignored.
pub fn istft(spec: &MultichannelSpectrogram, target_length: usize) -> Result<TimeSignal> {
    let config = spec.config();
    let n = config.window_size();
    let shift = config.shift();
    let pad = config.padding();
    let bins = spec.num_bins();
    let frames = spec.num_frames();
    let window = config.window();
    let norm = 1.0 / (config.cola_constant() * n as f64);
    let total = (frames - 1) * shift + n;
    let plans = plans(n);

    let per_channel: Vec<Vec<f64>> = (0..spec.num_channels())
        .into_par_iter()
        .map(|m| {
            let mut acc = vec![0.0; total];
            let mut buf = vec![C64::new(0.0, 0.0); n];
            let mut scratch = vec![C64::new(0.0, 0.0); plans.inverse.get_inplace_scratch_len()];
            for t in 0..frames {
                for f in 0..bins {
                    buf[f] = spec.data[(f, t, m)];
                }
                buf[0] = C64::new(buf[0].re, 0.0);
                buf[n / 2] = C64::new(buf[n / 2].re, 0.0);
                for f in 1..n / 2 {
                    buf[n - f] = buf[f].conj();
                }
                plans.inverse.process_with_scratch(&mut buf, &mut scratch);
                let start = t * shift;
                for i in 0..n {
                    acc[start + i] += buf[i].re * window[i] * norm;
                }
            }
            (0..target_length)
                .map(|i| acc.get(pad + i).copied().unwrap_or(0.0))
                .collect()
        })
        .collect();

    TimeSignal::from_channels(&per_channel, spec.sample_rate())
}
