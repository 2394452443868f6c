//! Overdetermined independent vector analysis (OverIVA).
//!
//! Each of the `K` target sources has a time-varying, frequency-independent
//! variance `r_{t,k}`; the remaining `M - K` dimensions are a stationary
//! Gaussian background. The demixing matrix per frequency is
//! `W̃_f = [W_f; U_f]`, rows of `W_f` being `w_{f,k}ᴴ` and `U_f = [J_f  -I]`.
//! Rows are updated by iterative projection, the background in closed form.

use ndarray::{Array2, Array3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::{initial_demixing, InitSpec};
use crate::linalg::{inner, load_diagonal, CMatrix, HermitianMatrix, Lu, C64, DEFAULT_LOADING};
use crate::stft::{MultichannelSpectrogram, SourceEstimates};

/// Relative floor applied to the source variances.
pub const VARIANCE_FLOOR: f64 = 1e-10;
/// Absolute floor used when all raw variances are zero.
pub const ABSOLUTE_VARIANCE_FLOOR: f64 = 1e-30;
/// Loading applied to `R` before the single retry of a singular row update.
pub const RETRY_LOADING: f64 = 1e-6;
pub const DEFAULT_ITERATIONS: usize = 100;
pub const DEFAULT_CHAINED_ITERATIONS: usize = 50;

/// `Σ_{y,f} = (1/T) Σ_t y yᴴ`, loaded.
pub fn observation_covariance(spec: &MultichannelSpectrogram) -> Vec<HermitianMatrix> {
    let (nf, nt, _) = spec.data().dim();
    let ones = vec![1.0; nt];
    (0..nf)
        .into_par_iter()
        .map(|f| weighted_covariance(spec, f, &ones))
        .collect()
}

/// `R_{f,k} = (1/T) Σ_t y yᴴ / r_t`, symmetrized and loaded.
pub fn weighted_covariance(spec: &MultichannelSpectrogram, f: usize, r: &[f64]) -> HermitianMatrix {
    let (_, nt, nm) = spec.data().dim();
    let mut acc = CMatrix::zeros(nm, nm);
    for (t, &rt) in r.iter().enumerate().take(nt) {
        let y = spec.observation(f, t);
        let s = 1.0 / rt;
        for i in 0..nm {
            let yi = y[i] * s;
            for (j, v) in acc.row_mut(i).iter_mut().enumerate() {
                *v += yi * y[j].conj();
            }
        }
    }
    let raw = HermitianMatrix::new(acc.scale(C64::new(1.0 / nt as f64, 0.0)));
    load_diagonal(&raw, DEFAULT_LOADING)
}

/// `|row_k(W̃_f) y_{f,t}|²` averaged over frequencies, for every frame.
/// Per-frequency terms are summed in frequency order.
fn raw_variance(spec: &MultichannelSpectrogram, w_tilde: &[CMatrix], k: usize) -> Vec<f64> {
    let (nf, nt, _) = spec.data().dim();
    let per_f: Vec<Vec<f64>> = (0..nf)
        .into_par_iter()
        .map(|f| {
            let row = w_tilde[f].row(k);
            (0..nt)
                .map(|t| crate::linalg::dot(row, spec.observation(f, t)).norm_sqr())
                .collect()
        })
        .collect();
    let mut r = vec![0.0; nt];
    for v in &per_f {
        for (acc, x) in r.iter_mut().zip(v) {
            *acc += x;
        }
    }
    r.iter_mut().for_each(|x| *x /= nf as f64);
    r
}

fn floor_values(values: &mut [f64]) {
    let mean = if values.is_empty() { 0.0 } else { values.iter().sum::<f64>() / values.len() as f64 };
    let floor = if mean > 0.0 { VARIANCE_FLOOR * mean } else { ABSOLUTE_VARIANCE_FLOOR };
    for x in values {
        *x = x.max(floor);
    }
}

/// `r_{t,k} = (1/F) Σ_f |w_{f,k}ᴴ y_{f,t}|²` for one source, floored at
/// `1e-10` times its mean over frames.
pub fn source_variance(spec: &MultichannelSpectrogram, w_tilde: &[CMatrix], k: usize) -> Vec<f64> {
    let mut r = raw_variance(spec, w_tilde, k);
    floor_values(&mut r);
    r
}

/// All `K` source variances `(T, K)`, floored at `1e-10` times the overall mean.
pub fn update_source_variances(spec: &MultichannelSpectrogram, w_tilde: &[CMatrix], sources: usize) -> Array2<f64> {
    let nt = spec.num_frames();
    let mut r = Array2::zeros((nt, sources));
    for k in 0..sources {
        for (t, v) in raw_variance(spec, w_tilde, k).into_iter().enumerate() {
            r[(t, k)] = v;
        }
    }
    floor_values(r.as_slice_mut().expect("standard layout"));
    r
}

/// Result of one iterative-projection step.
#[derive(Clone, Debug, PartialEq)]
pub struct RowUpdate {
    /// The new `w` (the row of `W̃` becomes `wᴴ`).
    pub w: Vec<C64>,
    /// Whether the solve needed the stronger loading.
    pub retried: bool,
}

/// `w = (W̃ R)⁻¹ e_k`, normalized so that `wᴴ R w = 1`.
///
/// A singular system is retried once with `R` loaded by `1e-6`; a second
/// failure is returned as [`Error::SingularMatrix`].
pub fn ip_update_row(w_tilde: &CMatrix, r: &HermitianMatrix, k: usize) -> Result<RowUpdate> {
    let m = r.dim();
    if w_tilde.rows() != m || w_tilde.cols() != m || k >= m {
        return Err(Error::InvalidInput("row update dimensions do not agree".into()));
    }
    let attempt = |r: &HermitianMatrix| -> Result<Vec<C64>> {
        let a = w_tilde.matmul(r.matrix());
        let mut e = vec![C64::new(0.0, 0.0); m];
        e[k] = C64::new(1.0, 0.0);
        let w = Lu::new(&a)?.solve(&e);
        let q = r.quadratic_form(&w);
        if !(q > 0.0 && q.is_finite()) {
            return Err(Error::SingularMatrix);
        }
        let s = 1.0 / q.sqrt();
        Ok(w.into_iter().map(|z| z * s).collect())
    };
    match attempt(r) {
        Ok(w) => Ok(RowUpdate { w, retried: false }),
        Err(_) => attempt(&load_diagonal(r, RETRY_LOADING)).map(|w| RowUpdate { w, retried: true }),
    }
}

/// Background rows `U = [J  -I]` with `J = (E₂ Σ Wᴴ)(E₁ Σ Wᴴ)⁻¹`, where `W` is
/// the first `K` rows of `W̃`. Returns an `(M-K) × M` matrix (empty if `M = K`).
pub fn update_background(w_tilde: &CMatrix, sigma_y: &HermitianMatrix, sources: usize) -> Result<CMatrix> {
    let m = sigma_y.dim();
    if sources > m || w_tilde.rows() != m {
        return Err(Error::InvalidInput("background update dimensions do not agree".into()));
    }
    let nb = m - sources;
    if nb == 0 {
        return Ok(CMatrix::zeros(0, m));
    }
    let w = w_tilde.block(0, sources, 0, m);
    let sw = sigma_y.matrix().matmul(&w.adjoint());
    let a = sw.block(0, sources, 0, sources);
    let b = sw.block(sources, m, 0, sources);
    // J A = B  ⇔  Aᵀ (row j of J)ᵀ = (row j of B)ᵀ
    let lu = Lu::new(&a.transpose())?;
    let mut u = CMatrix::zeros(nb, m);
    for j in 0..nb {
        let x = lu.solve(b.row(j));
        u.row_mut(j)[..sources].copy_from_slice(&x);
        u[(j, sources + j)] = C64::new(-1.0, 0.0);
    }
    Ok(u)
}

fn assemble(w_tilde: &mut CMatrix, u: &CMatrix, sources: usize) {
    for j in 0..u.rows() {
        w_tilde.set_row(sources + j, u.row(j));
    }
}

/// `d̂_{f,t,k} = row_k(W̃_f)·y_{f,t}` for the first `sources` rows.
pub fn demix(spec: &MultichannelSpectrogram, w_tilde: &[CMatrix], sources: usize) -> Result<SourceEstimates> {
    let (nf, nt, _) = spec.data().dim();
    let values: Vec<C64> = (0..nf)
        .into_par_iter()
        .flat_map_iter(|f| {
            let w = &w_tilde[f];
            (0..nt).flat_map(move |t| {
                let y = spec.observation(f, t);
                (0..sources).map(move |k| crate::linalg::dot(w.row(k), y))
            })
        })
        .collect();
    let data = Array3::from_shape_vec((nf, nt, sources), values).map_err(|e| Error::InvalidInput(e.to_string()))?;
    MultichannelSpectrogram::new(data, *spec.config(), spec.sample_rate())
}

/// Negative log-likelihood of the model with the variances at their optimum for
/// the current `W̃`, up to constants:
/// `Σ_f [-2T ln|det W̃_f| + T ln det(U_f Σ_y Uᴴ_f)] + Σ_{f,t,k} (|d̂|²/r + ln r)`.
pub fn negative_log_likelihood(
    spec: &MultichannelSpectrogram,
    w_tilde: &[CMatrix],
    sigma_y: &[HermitianMatrix],
    sources: usize,
) -> Result<f64> {
    let (nf, nt, nm) = spec.data().dim();
    let r = update_source_variances(spec, w_tilde, sources);
    let per_f: Vec<f64> = (0..nf)
        .into_par_iter()
        .map(|f| -> Result<f64> {
            let w = &w_tilde[f];
            let mut v = -2.0 * nt as f64 * Lu::new(w)?.log_abs_det();
            if sources < nm {
                let u = w.block(sources, nm, 0, nm);
                let s = HermitianMatrix::new(u.matmul(sigma_y[f].matrix()).matmul(&u.adjoint()));
                v += nt as f64 * crate::linalg::Cholesky::new(&s)?.log_det();
            }
            for t in 0..nt {
                let y = spec.observation(f, t);
                for k in 0..sources {
                    let rk = r[(t, k)];
                    v += crate::linalg::dot(w.row(k), y).norm_sqr() / rk + rk.ln();
                }
            }
            Ok(v)
        })
        .collect::<Result<_>>()?;
    Ok(per_f.iter().sum())
}

/// Minimum-distortion rescaling `d̂ ← β d̂`, `β = Σ_t y_{ref} d̂* / Σ_t |d̂|²`,
/// per frequency and source. All-zero estimates are left unchanged.
pub fn minimum_distortion_rescale(
    estimates: &SourceEstimates,
    spec: &MultichannelSpectrogram,
    reference_channel: usize,
) -> Result<SourceEstimates> {
    let (nf, nt, nm) = spec.data().dim();
    let (ef, et, nk) = estimates.data().dim();
    if (ef, et) != (nf, nt) {
        return Err(Error::InvalidInput("estimates and observations differ in shape".into()));
    }
    if reference_channel >= nm {
        return Err(Error::InvalidInput(format!(
            "reference channel {reference_channel} out of range for {nm} channels"
        )));
    }
    let mut out = estimates.data().clone();
    for f in 0..nf {
        for k in 0..nk {
            let mut num = C64::new(0.0, 0.0);
            let mut den = 0.0;
            for t in 0..nt {
                let d = estimates.data()[(f, t, k)];
                num += spec.data()[(f, t, reference_channel)] * d.conj();
                den += d.norm_sqr();
            }
            if den > 0.0 {
                let beta = num / den;
                for t in 0..nt {
                    out[(f, t, k)] *= beta;
                }
            }
        }
    }
    MultichannelSpectrogram::new(out, *spec.config(), spec.sample_rate())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IvaConfig {
    pub sources: usize,
    pub iterations: usize,
    pub reference_channel: usize,
    /// Evaluate the negative log-likelihood after every outer iteration.
    pub track_likelihood: bool,
}

impl IvaConfig {
    pub fn new(sources: usize) -> Self {
        Self {
            sources,
            iterations: DEFAULT_ITERATIONS,
            reference_channel: 0,
            track_likelihood: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IvaReport {
    pub iterations: usize,
    pub sources: usize,
    /// Row updates left unchanged because the system stayed singular after the retry.
    pub singular_skips: usize,
    /// Row updates that needed the stronger loading.
    pub retries: usize,
    /// Background updates that kept the previous `U_f`.
    pub background_failures: usize,
    /// Largest `|wᴴ R w - 1|` seen over all row updates.
    pub max_normalization_error: f64,
    /// Initial value followed by one value per outer iteration, when tracked.
    pub negative_log_likelihood: Vec<f64>,
    /// Bins where the least-squares initialization fell back to PCA rows.
    pub init_fallback_bins: usize,
}

#[derive(Clone, Debug)]
pub struct IvaOutput {
    /// Demixing matrices `W̃_f`.
    pub w_tilde: Vec<CMatrix>,
    /// Final source variances `(T, K)`.
    pub variances: Array2<f64>,
    /// Separated and rescaled estimates `(F, T, K)`.
    pub estimates: SourceEstimates,
    pub report: IvaReport,
}

/// Stacks per-frequency demixing matrices into `(F, M, M)`.
pub fn stack_demixing(w_tilde: &[CMatrix]) -> Array3<C64> {
    let m = w_tilde.first().map_or(0, CMatrix::rows);
    Array3::from_shape_fn((w_tilde.len(), m, m), |(f, i, j)| w_tilde[f][(i, j)])
}

pub fn unstack_demixing(stacked: &Array3<C64>) -> Vec<CMatrix> {
    let (nf, m, n) = stacked.dim();
    (0..nf)
        .map(|f| CMatrix::from_fn(m, n, |i, j| stacked[(f, i, j)]))
        .collect()
}

/// Runs the iterative-projection loop from the given demixing matrices, then
/// separates and rescales.
///
/// Each outer iteration visits the sources in order; for source `k` the
/// variances are refreshed, then every frequency gets its weighted covariance,
/// a row update and a background update.
pub fn run_overiva_from(
    spec: &MultichannelSpectrogram,
    config: &IvaConfig,
    mut w_tilde: Vec<CMatrix>,
) -> Result<IvaOutput> {
    let (nf, _, nm) = spec.data().dim();
    let nk = config.sources;
    if nk == 0 || nk > nm {
        return Err(Error::InvalidConfig(format!(
            "OverIVA needs 1 <= sources <= channels, got {nk} sources for {nm} channels"
        )));
    }
    if config.iterations == 0 {
        return Err(Error::InvalidConfig("OverIVA needs at least one iteration".into()));
    }
    if w_tilde.len() != nf || w_tilde.iter().any(|w| w.rows() != nm || w.cols() != nm) {
        return Err(Error::InvalidInput("initial demixing matrices have the wrong shape".into()));
    }
    let sigma_y = observation_covariance(spec);
    let mut report = IvaReport {
        iterations: config.iterations,
        sources: nk,
        ..IvaReport::default()
    };
    if config.track_likelihood {
        report
            .negative_log_likelihood
            .push(negative_log_likelihood(spec, &w_tilde, &sigma_y, nk)?);
    }

    for _ in 0..config.iterations {
        for k in 0..nk {
            let r = source_variance(spec, &w_tilde, k);
            let results: Vec<(CMatrix, Option<bool>, bool, f64)> = w_tilde
                .par_iter()
                .enumerate()
                .map(|(f, w)| {
                    let rk = weighted_covariance(spec, f, &r);
                    let mut w = w.clone();
                    let mut outcome = None;
                    let mut err = 0.0;
                    if let Ok(update) = ip_update_row(&w, &rk, k) {
                        err = (rk.quadratic_form(&update.w) - 1.0).abs();
                        let row: Vec<C64> = update.w.iter().map(|z| z.conj()).collect();
                        w.set_row(k, &row);
                        outcome = Some(update.retried);
                    }
                    let mut background_ok = true;
                    if nk < nm {
                        match update_background(&w, &sigma_y[f], nk) {
                            Ok(u) => assemble(&mut w, &u, nk),
                            Err(_) => background_ok = false,
                        }
                    }
                    (w, outcome, background_ok, err)
                })
                .collect();
            for (f, (w, outcome, background_ok, err)) in results.into_iter().enumerate() {
                match outcome {
                    None => report.singular_skips += 1,
                    Some(true) => report.retries += 1,
                    Some(false) => {}
                }
                if !background_ok {
                    report.background_failures += 1;
                }
                report.max_normalization_error = report.max_normalization_error.max(err);
                w_tilde[f] = w;
            }
        }
        if config.track_likelihood {
            report
                .negative_log_likelihood
                .push(negative_log_likelihood(spec, &w_tilde, &sigma_y, nk)?);
        }
    }

    let variances = update_source_variances(spec, &w_tilde, nk);
    let raw = demix(spec, &w_tilde, nk)?;
    let estimates = minimum_distortion_rescale(&raw, spec, config.reference_channel)?;
    Ok(IvaOutput {
        w_tilde,
        variances,
        estimates,
        report,
    })
}

/// Initializes per `init` and runs [`run_overiva_from`].
pub fn run_overiva(spec: &MultichannelSpectrogram, config: &IvaConfig, init: &InitSpec) -> Result<IvaOutput> {
    let start = initial_demixing(spec, config.sources, init)?;
    let mut out = run_overiva_from(spec, config, start.w_tilde)?;
    out.report.init_fallback_bins = start.fallback_bins;
    Ok(out)
}

/// Largest relative orthogonality residual `|Σ_t (y_ref - d̂) d̂*| / (‖y_ref‖‖d̂‖)`
/// of rescaled estimates.
pub fn rescale_residual(rescaled: &SourceEstimates, spec: &MultichannelSpectrogram, reference_channel: usize) -> f64 {
    let (nf, nt, nk) = rescaled.data().dim();
    let mut worst = 0.0_f64;
    for f in 0..nf {
        for k in 0..nk {
            let d: Vec<C64> = (0..nt).map(|t| rescaled.data()[(f, t, k)]).collect();
            let y: Vec<C64> = (0..nt).map(|t| spec.data()[(f, t, reference_channel)]).collect();
            let nd = crate::linalg::norm(&d);
            let ny = crate::linalg::norm(&y);
            if nd == 0.0 || ny == 0.0 {
                continue;
            }
            let resid: Vec<C64> = y.iter().zip(&d).map(|(a, b)| a - b).collect();
            worst = worst.max(inner(&d, &resid).norm() / (nd * ny));
        }
    }
    worst
}
