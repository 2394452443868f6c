//! End-to-end separation: cACGMM + beamforming, OverIVA, and their chain.
//!
//! The chain runs the mixture model at one STFT size, beamforms, goes back to
//! the time domain, and seeds OverIVA at its own STFT size by per-frequency
//! least squares onto the beamformed signals. Every stage is a pure function
//! of its inputs, so it can be re-run from saved intermediates.

use std::path::Path;

use ndarray::{Array3, ArrayD};
use serde::{Deserialize, Serialize};

use crate::audio_io::{write_wav, TimeSignal, WavFormat};
use crate::beamforming::{beamform_from_masks, mask_multiply, BeamformOptions};
use crate::cacgmm::{run_cacgmm, CacgmmConfig, SmmInit};
use crate::error::{Error, Result, StageContext};
use crate::init::InitSpec;
use crate::linalg::C64;
use crate::overiva::{run_overiva, stack_demixing, IvaConfig, IvaReport};
use crate::stft::{istft, stft, StftConfig};
use crate::tensor_io::{read_tensor, write_tensor, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Cacgmm,
    Overiva,
    Chain,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    Identity,
    Pca,
    Smm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeparationConfig {
    pub algorithm: Algorithm,
    pub sources: usize,
    /// Mixture classes; defaults to `sources + 1` (one noise class).
    pub smm_classes: Option<usize>,
    pub smm_stft_size: usize,
    /// Defaults to a quarter of the window.
    pub smm_shift: Option<usize>,
    pub iva_stft_size: usize,
    pub iva_shift: Option<usize>,
    pub smm_iterations: usize,
    /// Defaults to 100 from identity/PCA and 50 when seeded by the mixture model.
    pub iva_iterations: Option<usize>,
    /// OverIVA initialization; `chain` always seeds from the mixture model.
    pub init: InitMode,
    pub seed: u64,
    /// Forces the beamformer reference and the rescaling reference.
    pub ref_channel: Option<usize>,
    pub permutation_solver: bool,
    /// Extract mixture-model sources by masking the reference channel instead of beamforming.
    pub mask_multiply: bool,
}

impl Default for SeparationConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Chain,
            sources: 2,
            smm_classes: None,
            smm_stft_size: 1024,
            smm_shift: None,
            iva_stft_size: 2048,
            iva_shift: None,
            smm_iterations: crate::cacgmm::DEFAULT_ITERATIONS,
            iva_iterations: None,
            init: InitMode::Identity,
            seed: 0,
            ref_channel: None,
            permutation_solver: true,
            mask_multiply: false,
        }
    }
}

impl SeparationConfig {
    pub fn smm_stft(&self) -> Result<StftConfig> {
        StftConfig::new(self.smm_stft_size, self.smm_shift.unwrap_or(self.smm_stft_size / 4))
    }

    pub fn iva_stft(&self) -> Result<StftConfig> {
        StftConfig::new(self.iva_stft_size, self.iva_shift.unwrap_or(self.iva_stft_size / 4))
    }

    pub fn classes(&self) -> usize {
        self.smm_classes.unwrap_or(self.sources + 1)
    }

    /// The initialization OverIVA actually uses for this algorithm.
    pub fn effective_init(&self) -> InitMode {
        match self.algorithm {
            Algorithm::Chain => InitMode::Smm,
            _ => self.init,
        }
    }

    pub fn iva_iteration_count(&self) -> usize {
        self.iva_iterations.unwrap_or(match self.effective_init() {
            InitMode::Smm => crate::overiva::DEFAULT_CHAINED_ITERATIONS,
            _ => crate::overiva::DEFAULT_ITERATIONS,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.sources == 0 {
            return Err(Error::InvalidConfig("sources must be at least 1".into()));
        }
        if self.classes() < self.sources {
            return Err(Error::InvalidConfig(format!(
                "{} mixture classes cannot hold {} sources",
                self.classes(),
                self.sources
            )));
        }
        if self.smm_iterations == 0 || self.iva_iteration_count() == 0 {
            return Err(Error::InvalidConfig("iteration counts must be positive".into()));
        }
        if self.algorithm == Algorithm::Overiva && self.init == InitMode::Smm {
            return Err(Error::InvalidConfig("init smm requires the chain algorithm".into()));
        }
        let uses_smm = matches!(self.algorithm, Algorithm::Cacgmm | Algorithm::Chain);
        let uses_iva = matches!(self.algorithm, Algorithm::Overiva | Algorithm::Chain);
        if uses_smm {
            self.smm_stft()?;
        }
        if uses_iva {
            self.iva_stft()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SmmStageReport {
    pub stft_size: usize,
    pub shift: usize,
    pub iterations: usize,
    pub classes: usize,
    pub log_likelihood: Vec<f64>,
    pub reseeded_classes: usize,
    pub silent_bins: usize,
    pub noise_class: usize,
    pub target_classes: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BeamformStageReport {
    pub mask_multiply: bool,
    pub reference_channels: Vec<usize>,
    pub degenerate_bins: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IvaStageReport {
    pub stft_size: usize,
    pub shift: usize,
    pub init: String,
    pub reference_channel: usize,
    #[serde(flatten)]
    pub iva: IvaReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub algorithm: Algorithm,
    pub sources: usize,
    pub channels: usize,
    pub samples: usize,
    pub smm: Option<SmmStageReport>,
    pub beamforming: Option<BeamformStageReport>,
    pub iva: Option<IvaStageReport>,
    /// Reference channel each output is scaled to.
    pub reference_channels: Vec<usize>,
}

/// Stage artifacts.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Intermediates {
    /// Posteriors `(F, T, C)` of the mixture model.
    pub masks: Option<Array3<f64>>,
    pub target_classes: Vec<usize>,
    /// Beamformer coefficients `(F, K, M)`.
    pub beamformer: Option<Array3<C64>>,
    /// Mixture-model outputs in the time domain, `K` channels.
    pub smm_estimates: Option<TimeSignal>,
    /// OverIVA demixing matrices `(F, M, M)`.
    pub demixing: Option<Array3<C64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct IntermediatesIndex {
    target_classes: Vec<usize>,
    sample_rate: u32,
}

pub const MASKS_FILE: &str = "smm_masks.bsst";
pub const BEAMFORMER_FILE: &str = "beamformer.bsst";
pub const SMM_ESTIMATES_FILE: &str = "smm_estimates.bsst";
pub const SMM_ESTIMATES_WAV: &str = "smm_estimates.wav";
pub const DEMIXING_FILE: &str = "demixing.bsst";
pub const INDEX_FILE: &str = "intermediates.json";

impl Intermediates {
    /// Writes every present artifact into `dir` (which must exist).
    /// Signals are stored losslessly as tensors and additionally as float32 WAV.
    pub fn save(&self, dir: &Path) -> Result<()> {
        if let Some(m) = &self.masks {
            write_tensor(dir.join(MASKS_FILE), &Tensor::Real(m.clone().into_dyn()))?;
        }
        if let Some(w) = &self.beamformer {
            write_tensor(dir.join(BEAMFORMER_FILE), &Tensor::Complex(w.clone().into_dyn()))?;
        }
        let mut sample_rate = 0;
        if let Some(s) = &self.smm_estimates {
            write_tensor(dir.join(SMM_ESTIMATES_FILE), &Tensor::Real(s.samples().clone().into_dyn()))?;
            write_wav(dir.join(SMM_ESTIMATES_WAV), s, WavFormat::Float32)?;
            sample_rate = s.sample_rate();
        }
        if let Some(d) = &self.demixing {
            write_tensor(dir.join(DEMIXING_FILE), &Tensor::Complex(d.clone().into_dyn()))?;
        }
        let index = IntermediatesIndex {
            target_classes: self.target_classes.clone(),
            sample_rate,
        };
        let path = dir.join(INDEX_FILE);
        let json = serde_json::to_string_pretty(&index).map_err(|e| Error::InvalidInput(e.to_string()))?;
        std::fs::write(&path, json).map_err(|e| Error::io(path, e))
    }

    /// Reads back whatever [`Intermediates::save`] wrote.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(INDEX_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let index: IntermediatesIndex =
            serde_json::from_str(&text).map_err(|e| Error::MalformedTensor(format!("{}: {e}", path.display())))?;
        let optional = |name: &str| -> Result<Option<Tensor>> {
            let p = dir.join(name);
            if p.exists() {
                read_tensor(p).map(Some)
            } else {
                Ok(None)
            }
        };
        let rank3_real = |a: ArrayD<f64>| a.into_dimensionality::<ndarray::Ix3>().map_err(|e| Error::MalformedTensor(e.to_string()));
        let rank3_complex =
            |a: ArrayD<C64>| a.into_dimensionality::<ndarray::Ix3>().map_err(|e| Error::MalformedTensor(e.to_string()));
        Ok(Self {
            masks: optional(MASKS_FILE)?.map(|t| t.into_real().and_then(rank3_real)).transpose()?,
            target_classes: index.target_classes,
            beamformer: optional(BEAMFORMER_FILE)?
                .map(|t| t.into_complex().and_then(rank3_complex))
                .transpose()?,
            smm_estimates: optional(SMM_ESTIMATES_FILE)?
                .map(|t| {
                    let a = t
                        .into_real()?
                        .into_dimensionality::<ndarray::Ix2>()
                        .map_err(|e| Error::MalformedTensor(e.to_string()))?;
                    TimeSignal::new(a, index.sample_rate)
                })
                .transpose()?,
            demixing: optional(DEMIXING_FILE)?
                .map(|t| t.into_complex().and_then(rank3_complex))
                .transpose()?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct SeparationOutput {
    /// One channel per source, same length as the input.
    pub estimates: TimeSignal,
    pub report: SeparationReport,
    pub intermediates: Intermediates,
}

/// Output of the mixture-model stage.
#[derive(Clone, Debug)]
pub struct SmmStage {
    pub masks: Array3<f64>,
    pub target_classes: Vec<usize>,
    pub report: SmmStageReport,
}

/// Output of the extraction stage that follows the mixture model.
#[derive(Clone, Debug)]
pub struct BeamformStage {
    pub estimates: TimeSignal,
    pub beamformer: Option<Array3<C64>>,
    pub report: BeamformStageReport,
}

#[derive(Clone, Debug)]
pub struct IvaStage {
    pub estimates: TimeSignal,
    pub demixing: Array3<C64>,
    pub report: IvaStageReport,
}

fn require_multichannel(signal: &TimeSignal) -> Result<()> {
    if signal.num_channels() < 2 {
        return Err(Error::InvalidInput(format!(
            "separation requires at least two channels, got {}",
            signal.num_channels()
        )));
    }
    Ok(())
}

/// STFT, cACGMM, and the choice of target classes.
pub fn smm_stage(signal: &TimeSignal, config: &SeparationConfig) -> Result<SmmStage> {
    let stft_cfg = config.smm_stft()?;
    let spec = stft(signal, &stft_cfg)?;
    let mut cfg = CacgmmConfig::new(config.classes());
    cfg.iterations = config.smm_iterations;
    cfg.seed = config.seed;
    cfg.init = SmmInit::Random;
    cfg.permutation_solver = config.permutation_solver;
    let out = run_cacgmm(&spec, &cfg)?;
    let target_classes = out.state.target_classes(config.sources);
    let report = SmmStageReport {
        stft_size: stft_cfg.window_size(),
        shift: stft_cfg.shift(),
        iterations: out.report.iterations,
        classes: out.report.classes,
        log_likelihood: out.report.log_likelihood.clone(),
        reseeded_classes: out.report.reseeded_classes,
        silent_bins: out.report.silent_bins,
        noise_class: out.state.noise_class(),
        target_classes: target_classes.clone(),
    };
    Ok(SmmStage {
        masks: out.state.gamma,
        target_classes,
        report,
    })
}

/// Beamforms (or masks) the target classes and returns time-domain signals.
pub fn beamform_stage(
    signal: &TimeSignal,
    masks: &Array3<f64>,
    target_classes: &[usize],
    config: &SeparationConfig,
) -> Result<BeamformStage> {
    let spec = stft(signal, &config.smm_stft()?)?;
    if config.mask_multiply {
        let r = config.ref_channel.unwrap_or(0);
        let est = mask_multiply(&spec, masks, target_classes, r)?;
        return Ok(BeamformStage {
            estimates: istft(&est, signal.num_samples())?,
            beamformer: None,
            report: BeamformStageReport {
                mask_multiply: true,
                reference_channels: vec![r; target_classes.len()],
                degenerate_bins: 0,
            },
        });
    }
    let options = BeamformOptions {
        reference_channel: config.ref_channel,
    };
    let (est, bf) = beamform_from_masks(&spec, masks, target_classes, options)?;
    Ok(BeamformStage {
        estimates: istft(&est, signal.num_samples())?,
        report: BeamformStageReport {
            mask_multiply: false,
            reference_channels: bf.reference_channel.clone(),
            degenerate_bins: bf.degenerate_bins(),
        },
        beamformer: Some(bf.w),
    })
}

/// OverIVA at its STFT size; `seed_estimates` (time domain, `K` channels)
/// selects the least-squares initialization.
pub fn iva_stage(signal: &TimeSignal, seed_estimates: Option<&TimeSignal>, config: &SeparationConfig) -> Result<IvaStage> {
    let stft_cfg = config.iva_stft()?;
    let spec = stft(signal, &stft_cfg)?;
    let init = match (config.effective_init(), seed_estimates) {
        (InitMode::Identity, _) => InitSpec::Identity,
        (InitMode::Pca, _) => InitSpec::Pca,
        (InitMode::Smm, Some(est)) => {
            if est.num_samples() != signal.num_samples() {
                return Err(Error::LengthMismatch {
                    left: est.num_samples(),
                    right: signal.num_samples(),
                });
            }
            InitSpec::FromEstimates(stft(est, &stft_cfg)?)
        }
        (InitMode::Smm, None) => {
            return Err(Error::InvalidConfig("least-squares initialization needs mixture-model estimates".into()))
        }
    };
    let reference_channel = config.ref_channel.unwrap_or(0);
    let mut iva_cfg = IvaConfig::new(config.sources);
    iva_cfg.iterations = config.iva_iteration_count();
    iva_cfg.reference_channel = reference_channel;
    let out = run_overiva(&spec, &iva_cfg, &init)?;
    Ok(IvaStage {
        estimates: istft(&out.estimates, signal.num_samples())?,
        demixing: stack_demixing(&out.w_tilde),
        report: IvaStageReport {
            stft_size: stft_cfg.window_size(),
            shift: stft_cfg.shift(),
            init: init.name().to_string(),
            reference_channel,
            iva: out.report,
        },
    })
}

/// Optional time-domain preprocessing applied before any separation stage.
pub type PreStage<'a> = &'a dyn Fn(&TimeSignal) -> Result<TimeSignal>;

/// Runs the configured algorithm. Errors carry the name of the failing stage.
pub fn separate(signal: &TimeSignal, config: &SeparationConfig) -> Result<SeparationOutput> {
    separate_with(signal, config, None)
}

pub fn separate_with(signal: &TimeSignal, config: &SeparationConfig, pre: Option<PreStage<'_>>) -> Result<SeparationOutput> {
    config.validate()?;
    require_multichannel(signal)?;
    let processed;
    let signal = match pre {
        Some(f) => {
            processed = f(signal).stage("preprocessing")?;
            &processed
        }
        None => signal,
    };
    let mut intermediates = Intermediates::default();
    let mut report = SeparationReport {
        algorithm: config.algorithm,
        sources: config.sources,
        channels: signal.num_channels(),
        samples: signal.num_samples(),
        smm: None,
        beamforming: None,
        iva: None,
        reference_channels: Vec::new(),
    };
    if config.sources > signal.num_channels() && config.algorithm != Algorithm::Cacgmm {
        return Err(Error::InvalidConfig(format!(
            "cannot extract {} sources from {} channels",
            config.sources,
            signal.num_channels()
        )));
    }

    let mut smm_estimates = None;
    if matches!(config.algorithm, Algorithm::Cacgmm | Algorithm::Chain) {
        let smm = smm_stage(signal, config).stage("smm")?;
        let bf = beamform_stage(signal, &smm.masks, &smm.target_classes, config).stage("beamforming")?;
        report.reference_channels = bf.report.reference_channels.clone();
        report.smm = Some(smm.report);
        report.beamforming = Some(bf.report);
        intermediates.masks = Some(smm.masks);
        intermediates.target_classes = smm.target_classes;
        intermediates.beamformer = bf.beamformer;
        intermediates.smm_estimates = Some(bf.estimates.clone());
        smm_estimates = Some(bf.estimates);
    }

    let estimates = if matches!(config.algorithm, Algorithm::Overiva | Algorithm::Chain) {
        let iva = iva_stage(signal, smm_estimates.as_ref(), config).stage("overiva")?;
        report.reference_channels = vec![iva.report.reference_channel; config.sources];
        report.iva = Some(iva.report);
        intermediates.demixing = Some(iva.demixing);
        iva.estimates
    } else {
        smm_estimates.expect("mixture-model stage ran")
    };

    Ok(SeparationOutput {
        estimates,
        report,
        intermediates,
    })
}
