//! Mask-based spatial covariance estimation and Souden MVDR beamforming.

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{inner, load_diagonal, CMatrix, Cholesky, HermitianMatrix, C64, DEFAULT_LOADING};
use crate::stft::{MultichannelSpectrogram, SourceEstimates};

/// Mask mass below this is treated as empty.
pub const MASK_MASS_FLOOR: f64 = 1e-10;
/// `|trace(Φ_n⁻¹ Φ_x)|` below this yields a zero beamformer.
pub const TRACE_FLOOR: f64 = 1e-12;
/// Relative score difference under which two reference channels count as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Masked spatial covariance at one frequency plus a degeneracy flag
/// (set when the mask carries no mass and only the loading remains).
#[derive(Clone, Debug)]
pub struct Scm {
    pub matrix: HermitianMatrix,
    pub degenerate: bool,
}

/// `Φ_f = Σ_t mask·y yᴴ / max(Σ_t mask, 1e-10)`, symmetrized and loaded.
pub fn estimate_scm(spec: &MultichannelSpectrogram, mask: ArrayView2<'_, f64>) -> Result<Vec<Scm>> {
    let (nf, nt, nm) = spec.data().dim();
    if mask.dim() != (nf, nt) {
        return Err(Error::InvalidInput(format!(
            "mask has shape {:?}, expected {:?}",
            mask.dim(),
            (nf, nt)
        )));
    }
    if mask.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::InvalidInput("mask values must lie in [0, 1]".into()));
    }
    Ok((0..nf)
        .into_par_iter()
        .map(|f| {
            let mut acc = CMatrix::zeros(nm, nm);
            let mut mass = 0.0;
            for t in 0..nt {
                let g = mask[(f, t)];
                if g == 0.0 {
                    continue;
                }
                let y = spec.observation(f, t);
                for i in 0..nm {
                    let yi = y[i] * g;
                    for (j, r) in acc.row_mut(i).iter_mut().enumerate() {
                        *r += yi * y[j].conj();
                    }
                }
                mass += g;
            }
            let raw = HermitianMatrix::new(acc.scale(C64::new(1.0 / mass.max(MASK_MASS_FLOOR), 0.0)));
            Scm {
                matrix: load_diagonal(&raw, DEFAULT_LOADING),
                degenerate: mass < MASK_MASS_FLOOR,
            }
        })
        .collect())
}

/// Souden MVDR `w = Φ_n⁻¹Φ_x e_ref / trace(Φ_n⁻¹Φ_x)`.
///
/// Returns the zero vector and `true` when the trace vanishes.
pub fn mvdr_souden(
    target: &HermitianMatrix,
    distortion: &HermitianMatrix,
    reference: usize,
) -> Result<(Vec<C64>, bool)> {
    let m = target.dim();
    if distortion.dim() != m {
        return Err(Error::LengthMismatch {
            left: m,
            right: distortion.dim(),
        });
    }
    if reference >= m {
        return Err(Error::InvalidInput(format!(
            "reference channel {reference} out of range for {m} channels"
        )));
    }
    let chol = Cholesky::new(distortion)?;
    let ratio = chol.solve_matrix(target.matrix());
    let trace = ratio.trace();
    if !(trace.norm() >= TRACE_FLOOR) {
        return Ok((vec![C64::new(0.0, 0.0); m], true));
    }
    Ok((ratio.column(reference).into_iter().map(|z| z / trace).collect(), false))
}

/// Expected output SNR proxy `Σ_f (wᴴΦ_x w)/(wᴴΦ_n w)`, skipping zero beamformers.
pub fn snr_proxy(targets: &[HermitianMatrix], distortions: &[HermitianMatrix], w: &[Vec<C64>]) -> f64 {
    targets
        .iter()
        .zip(distortions)
        .zip(w)
        .map(|((x, n), w)| {
            let den = n.quadratic_form(w);
            if den > 0.0 && den.is_finite() {
                x.quadratic_form(w) / den
            } else {
                0.0
            }
        })
        .sum()
}

/// Picks the reference maximizing [`snr_proxy`]; `candidates[ref][f]` is the
/// beamformer for reference `ref` at frequency `f`. Near-ties go to the lowest index.
pub fn select_reference_channel(
    targets: &[HermitianMatrix],
    distortions: &[HermitianMatrix],
    candidates: &[Vec<Vec<C64>>],
) -> usize {
    let scores: Vec<f64> = candidates
        .iter()
        .map(|w| snr_proxy(targets, distortions, w))
        .collect();
    let mut best = 0;
    for (r, &s) in scores.iter().enumerate().skip(1) {
        let b = scores[best];
        if s > b && (s - b) > TIE_TOLERANCE * b.abs().max(s.abs()) {
            best = r;
        }
    }
    best
}

/// Per-source, per-frequency beamformers.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamformerSet {
    /// Coefficients `(F, K, M)`.
    pub w: Array3<C64>,
    pub reference_channel: Vec<usize>,
    /// `(F, K)`: bins whose beamformer was forced to zero or whose covariance was empty.
    pub degenerate: Array2<bool>,
}

impl BeamformerSet {
    pub fn num_sources(&self) -> usize {
        self.w.dim().1
    }

    pub fn degenerate_bins(&self) -> usize {
        self.degenerate.iter().filter(|&&d| d).count()
    }
}

/// `d̂_{f,t,k} = w_{f,k}ᴴ y_{f,t}`.
pub fn extract_with_beamformer(spec: &MultichannelSpectrogram, bf: &BeamformerSet) -> Result<SourceEstimates> {
    let (nf, nt, nm) = spec.data().dim();
    let (bf_f, nk, bf_m) = bf.w.dim();
    if bf_f != nf || bf_m != nm {
        return Err(Error::InvalidInput(format!(
            "beamformers have shape {:?}, spectrogram has {nf} bins and {nm} channels",
            bf.w.dim()
        )));
    }
    let planes: Vec<C64> = (0..nf)
        .into_par_iter()
        .flat_map_iter(|f| {
            let w: Vec<Vec<C64>> = (0..nk).map(|k| (0..nm).map(|m| bf.w[(f, k, m)]).collect()).collect();
            (0..nt).flat_map(move |t| {
                let y = spec.observation(f, t);
                w.iter().map(|wk| inner(wk, y)).collect::<Vec<_>>()
            })
        })
        .collect();
    let out = Array3::from_shape_vec((nf, nt, nk), planes).map_err(|e| Error::InvalidInput(e.to_string()))?;
    MultichannelSpectrogram::new(out, *spec.config(), spec.sample_rate())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeamformOptions {
    /// Use this reference channel for every source instead of selecting one.
    pub reference_channel: Option<usize>,
}

/// For each target class: `Φ_x` from its mask, `Φ_n` from the complement,
/// Souden MVDR per frequency with one reference channel per source.
pub fn beamform_from_masks(
    spec: &MultichannelSpectrogram,
    masks: &Array3<f64>,
    target_classes: &[usize],
    options: BeamformOptions,
) -> Result<(SourceEstimates, BeamformerSet)> {
    let (nf, nt, nm) = spec.data().dim();
    let (mf, mt, nclasses) = masks.dim();
    if (mf, mt) != (nf, nt) {
        return Err(Error::InvalidInput(format!(
            "masks have shape {:?}, spectrogram has {nf} bins and {nt} frames",
            masks.dim()
        )));
    }
    if let Some(&bad) = target_classes.iter().find(|&&k| k >= nclasses) {
        return Err(Error::InvalidInput(format!("target class {bad} out of range")));
    }
    if let Some(r) = options.reference_channel {
        if r >= nm {
            return Err(Error::InvalidInput(format!(
                "reference channel {r} out of range for {nm} channels"
            )));
        }
    }
    let nk = target_classes.len();
    let mut w = Array3::<C64>::zeros((nf, nk, nm));
    let mut degenerate = Array2::from_elem((nf, nk), false);
    let mut reference_channel = Vec::with_capacity(nk);

    for (slot, &class) in target_classes.iter().enumerate() {
        let mask = masks.index_axis(Axis(2), class);
        let complement = mask.mapv(|g| (1.0 - g).clamp(0.0, 1.0));
        let phi_x = estimate_scm(spec, mask)?;
        let phi_n = estimate_scm(spec, complement.view())?;
        let refs: Vec<usize> = match options.reference_channel {
            Some(r) => vec![r],
            None => (0..nm).collect(),
        };
        // candidates[ref][f]
        let candidates: Vec<Vec<(Vec<C64>, bool)>> = refs
            .iter()
            .map(|&r| {
                (0..nf)
                    .into_par_iter()
                    .map(|f| mvdr_souden(&phi_x[f].matrix, &phi_n[f].matrix, r))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let targets: Vec<HermitianMatrix> = phi_x.iter().map(|s| s.matrix.clone()).collect();
        let distortions: Vec<HermitianMatrix> = phi_n.iter().map(|s| s.matrix.clone()).collect();
        let vectors: Vec<Vec<Vec<C64>>> = candidates
            .iter()
            .map(|c| c.iter().map(|(v, _)| v.clone()).collect())
            .collect();
        let chosen = select_reference_channel(&targets, &distortions, &vectors);
        reference_channel.push(refs[chosen]);
        for f in 0..nf {
            let (v, zero) = &candidates[chosen][f];
            for m in 0..nm {
                w[(f, slot, m)] = v[m];
            }
            degenerate[(f, slot)] = *zero || phi_x[f].degenerate || phi_n[f].degenerate;
        }
    }
    let bf = BeamformerSet {
        w,
        reference_channel,
        degenerate,
    };
    let est = extract_with_beamformer(spec, &bf)?;
    Ok((est, bf))
}

/// Debug extraction `d̂_{f,t,k} = mask_{f,t,k} · y_{f,t,ref}`.
pub fn mask_multiply(
    spec: &MultichannelSpectrogram,
    masks: &Array3<f64>,
    target_classes: &[usize],
    reference_channel: usize,
) -> Result<SourceEstimates> {
    let (nf, nt, nm) = spec.data().dim();
    if reference_channel >= nm {
        return Err(Error::InvalidInput(format!(
            "reference channel {reference_channel} out of range for {nm} channels"
        )));
    }
    if (masks.dim().0, masks.dim().1) != (nf, nt) || target_classes.iter().any(|&k| k >= masks.dim().2) {
        return Err(Error::InvalidInput("masks do not match the spectrogram".into()));
    }
    let out = Array3::from_shape_fn((nf, nt, target_classes.len()), |(f, t, k)| {
        spec.data()[(f, t, reference_channel)] * masks[(f, t, target_classes[k])]
    });
    MultichannelSpectrogram::new(out, *spec.config(), spec.sample_rate())
}
