//! Initial demixing matrices for OverIVA.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{eigh, load_diagonal, CMatrix, Cholesky, HermitianMatrix, C64, DEFAULT_LOADING};
use crate::overiva::{observation_covariance, update_background};
use crate::stft::{MultichannelSpectrogram, SourceEstimates};

#[derive(Clone, Debug)]
pub enum InitSpec {
    /// `W̃_f = I`.
    Identity,
    /// Top-`K` eigenvectors of the observation covariance, plus the background update.
    Pca,
    /// Per-frequency least squares onto given estimates at the same STFT configuration.
    FromEstimates(SourceEstimates),
}

impl InitSpec {
    pub fn name(&self) -> &'static str {
        match self {
            InitSpec::Identity => "identity",
            InitSpec::Pca => "pca",
            InitSpec::FromEstimates(_) => "smm",
        }
    }
}

#[derive(Clone, Debug)]
pub struct InitialDemixing {
    pub w_tilde: Vec<CMatrix>,
    /// `(f, k)` rows replaced by PCA rows because the estimate was identically zero.
    pub fallback_bins: usize,
}

pub fn init_identity(bins: usize, channels: usize) -> Vec<CMatrix> {
    vec![CMatrix::identity(channels); bins]
}

/// Rows `0..K` are `vᴴ` for the eigenvectors of the `K` largest eigenvalues
/// (descending), remaining rows the background `[J  -I]`.
pub fn init_pca(sigma_y: &[HermitianMatrix], sources: usize) -> Result<Vec<CMatrix>> {
    sigma_y
        .par_iter()
        .map(|s| {
            let m = s.dim();
            if sources == 0 || sources > m {
                return Err(Error::InvalidConfig(format!("cannot extract {sources} sources from {m} channels")));
            }
            let (_, vecs) = eigh(s)?;
            let mut w = CMatrix::identity(m);
            for k in 0..sources {
                let col = vecs.column(m - 1 - k);
                let row: Vec<C64> = col.iter().map(|z| z.conj()).collect();
                w.set_row(k, &row);
            }
            attach_background(w, s, sources)
        })
        .collect()
}

fn attach_background(mut w: CMatrix, sigma: &HermitianMatrix, sources: usize) -> Result<CMatrix> {
    let m = sigma.dim();
    if sources < m {
        let u = update_background(&w, sigma, sources)?;
        for j in 0..u.rows() {
            w.set_row(sources + j, u.row(j));
        }
    }
    Ok(w)
}

/// `w_{f,k} = (Σ_t y yᴴ)⁻¹ Σ_t y d̂*_{f,t,k}` for every bin and estimate, with
/// PCA rows substituted where `d̂ ≡ 0`. Returns the least-squares rows only
/// (`K × M` per frequency) and the number of substitutions.
pub fn ls_rows(spec: &MultichannelSpectrogram, estimates: &SourceEstimates) -> Result<(Vec<CMatrix>, usize)> {
    let (nf, nt, nm) = spec.data().dim();
    let (ef, et, nk) = estimates.data().dim();
    if ef != nf || et != nt {
        return Err(Error::InvalidInput(format!(
            "estimates have shape {:?}, observations {:?}",
            estimates.data().dim(),
            spec.data().dim()
        )));
    }
    if estimates.config() != spec.config() {
        return Err(Error::InvalidInput("estimates and observations use different STFT configurations".into()));
    }
    if nk == 0 || nk > nm {
        return Err(Error::InvalidConfig(format!("cannot extract {nk} sources from {nm} channels")));
    }
    let per_f: Vec<(CMatrix, usize)> = (0..nf)
        .into_par_iter()
        .map(|f| -> Result<(CMatrix, usize)> {
            let mut acc = CMatrix::zeros(nm, nm);
            let mut cross = CMatrix::zeros(nm, nk);
            let mut energy = vec![0.0; nk];
            for t in 0..nt {
                let y = spec.observation(f, t);
                let d = estimates.observation(f, t);
                for i in 0..nm {
                    for j in 0..nm {
                        acc[(i, j)] += y[i] * y[j].conj();
                    }
                    for k in 0..nk {
                        cross[(i, k)] += y[i] * d[k].conj();
                    }
                }
                for k in 0..nk {
                    energy[k] += d[k].norm_sqr();
                }
            }
            let gram = load_diagonal(&HermitianMatrix::new(acc), DEFAULT_LOADING);
            let chol = Cholesky::new(&gram)?;
            let mut rows = CMatrix::zeros(nk, nm);
            let mut fallbacks = 0;
            let mut pca: Option<CMatrix> = None;
            for k in 0..nk {
                if energy[k] == 0.0 {
                    let vecs = match &pca {
                        Some(v) => v,
                        None => pca.insert(eigh(&gram)?.1),
                    };
                    let row: Vec<C64> = vecs.column(nm - 1 - k).iter().map(|z| z.conj()).collect();
                    rows.set_row(k, &row);
                    fallbacks += 1;
                } else {
                    let w = chol.solve(&cross.column(k));
                    let row: Vec<C64> = w.iter().map(|z| z.conj()).collect();
                    rows.set_row(k, &row);
                }
            }
            Ok((rows, fallbacks))
        })
        .collect::<Result<_>>()?;
    let fallbacks = per_f.iter().map(|(_, n)| n).sum();
    Ok((per_f.into_iter().map(|(w, _)| w).collect(), fallbacks))
}

/// Least-squares rows from [`ls_rows`] completed by the background update.
pub fn ls_init_from_estimates(spec: &MultichannelSpectrogram, estimates: &SourceEstimates) -> Result<InitialDemixing> {
    let (rows, fallback_bins) = ls_rows(spec, estimates)?;
    let sigma = observation_covariance(spec);
    let nm = spec.num_channels();
    let w_tilde = rows
        .into_par_iter()
        .zip(sigma.par_iter())
        .map(|(r, s)| {
            let mut w = CMatrix::identity(nm);
            for k in 0..r.rows() {
                w.set_row(k, r.row(k));
            }
            attach_background(w, s, r.rows())
        })
        .collect::<Result<_>>()?;
    Ok(InitialDemixing { w_tilde, fallback_bins })
}

/// Demixing matrices for the requested initialization.
pub fn initial_demixing(spec: &MultichannelSpectrogram, sources: usize, init: &InitSpec) -> Result<InitialDemixing> {
    let (nf, _, nm) = spec.data().dim();
    if sources == 0 || sources > nm {
        return Err(Error::InvalidConfig(format!("cannot extract {sources} sources from {nm} channels")));
    }
    match init {
        InitSpec::Identity => Ok(InitialDemixing {
            w_tilde: init_identity(nf, nm),
            fallback_bins: 0,
        }),
        InitSpec::Pca => Ok(InitialDemixing {
            w_tilde: init_pca(&observation_covariance(spec), sources)?,
            fallback_bins: 0,
        }),
        InitSpec::FromEstimates(est) => {
            if est.num_channels() != sources {
                return Err(Error::InvalidInput(format!(
                    "initialization needs {sources} estimates, got {}",
                    est.num_channels()
                )));
            }
            ls_init_from_estimates(spec, est)
        }
    }
}
