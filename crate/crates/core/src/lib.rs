//! Multichannel blind source separation in the STFT domain.
//!
//! Two separators are provided, plus their serial combination:
//!
//! * [`cacgmm`]: a complex angular central Gaussian mixture model on
//!   unit-norm observations, whose posteriors drive mask-based MVDR
//!   beamformers ([`beamforming`]).
//! * [`overiva`]: overdetermined independent vector analysis with a
//!   stationary background subspace, updated by iterative projection.
//! * [`chain`]: runs the mixture model first and initializes OverIVA from its
//!   beamformed output by per-frequency least squares ([`init`]).
//!
//! [`simulate`] builds synthetic scenes with ground truth and [`metrics`]
//! scores separated signals against them.

pub mod audio_io;
pub mod beamforming;
pub mod cacgmm;
pub mod chain;
pub mod error;
pub mod init;
pub mod linalg;
pub mod metrics;
pub mod overiva;
pub mod simulate;
pub mod stft;
pub mod tensor_io;

pub use audio_io::{read_wav, write_wav, TimeSignal, WavFormat};
pub use error::{Error, Result};
pub use linalg::{CMatrix, HermitianMatrix, C64};
pub use stft::{istft, stft, MultichannelSpectrogram, SourceEstimates, StftConfig};
