//! Complex angular central Gaussian mixture model (cACGMM).
//!
//! Observations are normalized to unit length per TF bin, so only their
//! direction (the spatial signature of the dominant source) is modeled. Each
//! class has a per-frequency shape matrix `B_{f,k}`; mixture weights are
//! time-varying and shared across frequencies. EM alternates posterior
//! computation, a frequency permutation alignment, one fixed-point sweep of the
//! shape update and the weight update.

use ndarray::{Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{load_diagonal, CMatrix, Cholesky, HermitianMatrix, C64, DEFAULT_LOADING};
use crate::metrics::permutations;
use crate::stft::MultichannelSpectrogram;

/// Mixture weights are floored here before renormalization.
pub const PI_FLOOR: f64 = 1e-6;
/// Silence threshold relative to the global RMS observation norm.
pub const DEFAULT_SILENCE_FLOOR: f64 = 1e-8;
/// A class whose total posterior mass drops below this fraction of `F·T` is reseeded.
pub const RESEED_MASS_FRACTION: f64 = 1e-3;
pub const DEFAULT_ITERATIONS: usize = 20;

/// Unit-norm observations `ỹ = y / ‖y‖` plus the bins considered silent.
#[derive(Clone, Debug)]
pub struct NormalizedObservations {
    pub y_tilde: Array3<C64>,
    pub silent: Array2<bool>,
}

impl NormalizedObservations {
    pub fn num_bins(&self) -> usize {
        self.y_tilde.dim().0
    }

    pub fn num_frames(&self) -> usize {
        self.y_tilde.dim().1
    }

    pub fn num_channels(&self) -> usize {
        self.y_tilde.dim().2
    }

    pub fn observation(&self, f: usize, t: usize) -> &[C64] {
        let m = self.num_channels();
        let start = (f * self.num_frames() + t) * m;
        &self.y_tilde.as_slice().expect("standard layout")[start..start + m]
    }
}

pub fn normalize_observations(spec: &MultichannelSpectrogram, floor: f64) -> NormalizedObservations {
    let (nf, nt, nm) = spec.data().dim();
    let norms = Array2::from_shape_fn((nf, nt), |(f, t)| {
        spec.observation(f, t).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    });
    let rms = (norms.iter().map(|n| n * n).sum::<f64>() / (nf * nt) as f64).sqrt();
    let threshold = floor * rms;
    let mut y_tilde = Array3::<C64>::zeros((nf, nt, nm));
    let mut silent = Array2::from_elem((nf, nt), false);
    for f in 0..nf {
        for t in 0..nt {
            let n = norms[(f, t)];
            if n > 0.0 && n >= threshold {
                for (m, z) in spec.observation(f, t).iter().enumerate() {
                    y_tilde[(f, t, m)] = z / n;
                }
            } else {
                silent[(f, t)] = true;
                y_tilde[(f, t, 0)] = C64::new(1.0, 0.0);
            }
        }
    }
    NormalizedObservations { y_tilde, silent }
}

/// `ln((M-1)!) - ln 2 - M ln π`: the normalizer of the cACG density with `det B = 1`.
fn log_normalizer(m: usize) -> f64 {
    let log_fact: f64 = (1..m).map(|i| (i as f64).ln()).sum();
    log_fact - std::f64::consts::LN_2 - m as f64 * std::f64::consts::PI.ln()
}

/// A cACG component with its factorization cached.
#[derive(Clone, Debug)]
pub struct CacgComponent {
    chol: Cholesky,
    offset: f64,
    dim: usize,
}

impl CacgComponent {
    pub fn new(b: &HermitianMatrix) -> Result<Self> {
        let chol = Cholesky::new(b)?;
        let dim = b.dim();
        let offset = log_normalizer(dim) - chol.log_det();
        Ok(Self { chol, offset, dim })
    }

    pub fn log_pdf(&self, y: &[C64]) -> f64 {
        let q = self.chol.inverse_quadratic_form(y);
        self.offset - self.dim as f64 * q.ln()
    }
}

/// Log density of the cACG distribution,
/// `ln A(ỹ; B) = ln((M-1)!) - ln 2 - M ln π - ln det B - M ln(ỹ^H B^{-1} ỹ)`.
pub fn cacg_log_pdf(y_tilde: &[C64], b: &HermitianMatrix) -> Result<f64> {
    if y_tilde.len() != b.dim() {
        return Err(Error::LengthMismatch {
            left: y_tilde.len(),
            right: b.dim(),
        });
    }
    Ok(CacgComponent::new(b)?.log_pdf(y_tilde))
}

/// Parameters and posteriors of the mixture.
#[derive(Clone, Debug)]
pub struct SmmState {
    /// Shape matrices, indexed `f * classes + k`.
    b: Vec<HermitianMatrix>,
    /// Mixture weights `(T, K)`.
    pub pi: Array2<f64>,
    /// Posteriors `(F, T, K)`.
    pub gamma: Array3<f64>,
    classes: usize,
}

impl SmmState {
    pub fn new(b: Vec<HermitianMatrix>, pi: Array2<f64>, gamma: Array3<f64>) -> Result<Self> {
        let classes = pi.ncols();
        let (nf, nt, nk) = gamma.dim();
        if nk != classes || pi.nrows() != nt || b.len() != nf * classes {
            return Err(Error::InvalidInput("inconsistent mixture state shapes".into()));
        }
        Ok(Self { b, pi, gamma, classes })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn b(&self, f: usize, k: usize) -> &HermitianMatrix {
        &self.b[f * self.classes + k]
    }

    pub fn shapes(&self) -> &[HermitianMatrix] {
        &self.b
    }

    /// Time-averaged mixture weight of each class.
    pub fn mean_weights(&self) -> Vec<f64> {
        self.pi.mean_axis(Axis(0)).expect("nonempty").to_vec()
    }

    /// The class with the smallest average weight.
    pub fn noise_class(&self) -> usize {
        let w = self.mean_weights();
        (0..w.len())
            .min_by(|&a, &b| w[a].total_cmp(&w[b]))
            .unwrap_or(0)
    }

    /// Keeps the `sources` classes with the largest average weight, in class order.
    pub fn target_classes(&self, sources: usize) -> Vec<usize> {
        let w = self.mean_weights();
        let mut order: Vec<usize> = (0..w.len()).collect();
        order.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
        let mut keep: Vec<usize> = order.into_iter().take(sources).collect();
        keep.sort_unstable();
        keep
    }
}

/// Posteriors plus the data log-likelihood `Σ_{f,t} ln Σ_k π_{t,k} A(ỹ_{f,t}; B_{f,k})`
/// over non-silent bins.
#[derive(Clone, Debug)]
pub struct Posteriors {
    pub gamma: Array3<f64>,
    pub log_likelihood: f64,
}

fn components(b: &[HermitianMatrix]) -> Result<Vec<CacgComponent>> {
    b.iter().map(CacgComponent::new).collect()
}

pub fn e_step(obs: &NormalizedObservations, state: &SmmState) -> Result<Posteriors> {
    let (nf, nt, _) = obs.y_tilde.dim();
    let nk = state.classes;
    let comps = components(&state.b)?;
    let log_pi = state.pi.mapv(|p| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY });

    let per_bin: Vec<(Vec<f64>, f64)> = (0..nf)
        .into_par_iter()
        .map(|f| {
            let mut out = vec![0.0; nt * nk];
            let mut ll = 0.0;
            let mut logp = vec![0.0; nk];
            for t in 0..nt {
                let row = &mut out[t * nk..(t + 1) * nk];
                if obs.silent[(f, t)] {
                    row.fill(1.0 / nk as f64);
                    continue;
                }
                let y = obs.observation(f, t);
                for k in 0..nk {
                    logp[k] = log_pi[(t, k)] + comps[f * nk + k].log_pdf(y);
                }
                let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in 0..nk {
                    let e = (logp[k] - max).exp();
                    row[k] = e;
                    total += e;
                }
                for v in row.iter_mut() {
                    *v /= total;
                }
                ll += max + total.ln();
            }
            (out, ll)
        })
        .collect();

    let mut gamma = Array3::<f64>::zeros((nf, nt, nk));
    let mut log_likelihood = 0.0;
    for (f, (vals, ll)) in per_bin.into_iter().enumerate() {
        gamma
            .index_axis_mut(Axis(0), f)
            .as_slice_mut()
            .expect("standard layout")
            .copy_from_slice(&vals);
        log_likelihood += ll;
    }
    Ok(Posteriors {
        gamma,
        log_likelihood,
    })
}

/// One fixed-point sweep of the shape update
/// `B = M Σ_t γ ỹỹ^H / (ỹ^H B_prev^{-1} ỹ) / Σ_t γ`, then symmetrization,
/// diagonal loading and trace normalization to `M`.
///
/// Classes with no posterior mass at a frequency keep their previous shape.
pub fn m_step_b(
    obs: &NormalizedObservations,
    gamma: &Array3<f64>,
    prev_b: &[HermitianMatrix],
) -> Result<Vec<HermitianMatrix>> {
    let (nf, nt, nm) = obs.y_tilde.dim();
    let nk = gamma.dim().2;
    if prev_b.len() != nf * nk {
        return Err(Error::InvalidInput("shape matrix count mismatch".into()));
    }
    let prev = components(prev_b)?;
    let updated: Vec<HermitianMatrix> = (0..nf * nk)
        .into_par_iter()
        .map(|idx| {
            let (f, k) = (idx / nk, idx % nk);
            let mut acc = CMatrix::zeros(nm, nm);
            let mut mass = 0.0;
            for t in 0..nt {
                if obs.silent[(f, t)] {
                    continue;
                }
                let g = gamma[(f, t, k)];
                if g == 0.0 {
                    continue;
                }
                let y = obs.observation(f, t);
                let q = prev[idx].chol.inverse_quadratic_form(y);
                let w = g / q;
                for i in 0..nm {
                    let yi = y[i] * w;
                    let row = acc.row_mut(i);
                    for (j, r) in row.iter_mut().enumerate() {
                        *r += yi * y[j].conj();
                    }
                }
                mass += g;
            }
            if !(mass > f64::MIN_POSITIVE) {
                return prev_b[idx].clone();
            }
            let b = HermitianMatrix::new(acc.scale(C64::new(nm as f64 / mass, 0.0)));
            load_diagonal(&b, DEFAULT_LOADING).with_trace(nm as f64)
        })
        .collect();
    Ok(updated)
}

/// `π_{t,k} = mean_f γ_{f,t,k}` over non-silent bins, floored at [`PI_FLOOR`]
/// and renormalized. Frames with no active bin get uniform weights.
pub fn m_step_pi(gamma: &Array3<f64>, silent: &Array2<bool>) -> Array2<f64> {
    let (nf, nt, nk) = gamma.dim();
    let mut pi = Array2::<f64>::zeros((nt, nk));
    for t in 0..nt {
        let mut count = 0usize;
        for f in 0..nf {
            if silent[(f, t)] {
                continue;
            }
            count += 1;
            for k in 0..nk {
                pi[(t, k)] += gamma[(f, t, k)];
            }
        }
        let mut row = pi.row_mut(t);
        if count == 0 {
            row.fill(1.0 / nk as f64);
            continue;
        }
        row.mapv_inplace(|v| (v / count as f64).max(PI_FLOOR));
        let total: f64 = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    pi
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Aligns the class order across frequencies in place.
///
/// Each frequency contributes an activity profile per class (its posteriors
/// over time). Centroids start as the average profile over all frequencies;
/// frequencies are visited from the most to the least confident (largest gap
/// between the maximum entropy `ln K` and the mean posterior entropy), and each
/// gets the permutation maximizing the summed cosine similarity between its
/// permuted profiles and the centroids, after which the centroids absorb it as
/// a running mean. Two passes are made; the centroids are rebuilt from the
/// aligned profiles before the second.
///
/// Returns, per frequency, `perm[f][k]` = the original class now stored in slot `k`.
pub fn solve_permutation(gamma: &mut Array3<f64>) -> Vec<Vec<usize>> {
    let (nf, nt, nk) = gamma.dim();
    let mut total_perm: Vec<Vec<usize>> = vec![(0..nk).collect(); nf];
    if nk < 2 || nf == 0 {
        return total_perm;
    }
    let candidates = permutations(nk);
    let profile = |g: &Array3<f64>, f: usize, k: usize| -> Vec<f64> { (0..nt).map(|t| g[(f, t, k)]).collect() };

    let max_entropy = (nk as f64).ln();
    let mut gaps: Vec<(usize, f64)> = (0..nf)
        .map(|f| {
            let mut h = 0.0;
            for t in 0..nt {
                for k in 0..nk {
                    let p = gamma[(f, t, k)];
                    if p > 0.0 {
                        h -= p * p.ln();
                    }
                }
            }
            (f, max_entropy - h / nt as f64)
        })
        .collect();
    gaps.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let order: Vec<usize> = gaps.into_iter().map(|(f, _)| f).collect();

    for _pass in 0..2 {
        let mut centroids: Vec<Vec<f64>> = (0..nk)
            .map(|k| {
                let mut c = vec![0.0; nt];
                for f in 0..nf {
                    for t in 0..nt {
                        c[t] += gamma[(f, t, k)];
                    }
                }
                c.iter_mut().for_each(|v| *v /= nf as f64);
                c
            })
            .collect();
        let mut count = 1.0;
        for &f in &order {
            let profiles: Vec<Vec<f64>> = (0..nk).map(|k| profile(gamma, f, k)).collect();
            let sims: Vec<Vec<f64>> = (0..nk)
                .map(|src| (0..nk).map(|dst| cosine(&profiles[src], &centroids[dst])).collect())
                .collect();
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for (i, perm) in candidates.iter().enumerate() {
                let score: f64 = (0..nk).map(|k| sims[perm[k]][k]).sum();
                if score > best_score + 1e-12 {
                    best_score = score;
                    best = i;
                }
            }
            let perm = &candidates[best];
            if best != 0 {
                for t in 0..nt {
                    let old: Vec<f64> = (0..nk).map(|k| gamma[(f, t, k)]).collect();
                    for k in 0..nk {
                        gamma[(f, t, k)] = old[perm[k]];
                    }
                }
                let prev = total_perm[f].clone();
                total_perm[f] = (0..nk).map(|k| prev[perm[k]]).collect();
            }
            count += 1.0;
            for (k, c) in centroids.iter_mut().enumerate() {
                for (t, v) in c.iter_mut().enumerate() {
                    *v += (gamma[(f, t, k)] - *v) / count;
                }
            }
        }
    }
    total_perm
}

fn permute_shapes(b: &mut [HermitianMatrix], classes: usize, perms: &[Vec<usize>]) {
    for (f, perm) in perms.iter().enumerate() {
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            continue;
        }
        let old: Vec<HermitianMatrix> = b[f * classes..(f + 1) * classes].to_vec();
        for k in 0..classes {
            b[f * classes + k] = old[perm[k]].clone();
        }
    }
}

#[derive(Clone, Debug)]
pub enum SmmInit {
    /// `B_{f,k} = I + 0.1 G_k G_k^H` with one random `G_k` per class shared by all frequencies.
    Random,
    /// Start from given posteriors `(F, T, K)`.
    Masks(Array3<f64>),
}

#[derive(Clone, Debug)]
pub struct CacgmmConfig {
    pub classes: usize,
    pub iterations: usize,
    pub seed: u64,
    pub init: SmmInit,
    pub permutation_solver: bool,
    pub silence_floor: f64,
}

impl CacgmmConfig {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            iterations: DEFAULT_ITERATIONS,
            seed: 0,
            init: SmmInit::Random,
            permutation_solver: true,
            silence_floor: DEFAULT_SILENCE_FLOOR,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SmmReport {
    pub iterations: usize,
    pub classes: usize,
    /// Log-likelihood at every E-step, including the final one.
    pub log_likelihood: Vec<f64>,
    pub reseeded_classes: usize,
    pub silent_bins: usize,
}

#[derive(Clone, Debug)]
pub struct CacgmmOutput {
    pub state: SmmState,
    pub report: SmmReport,
}

impl CacgmmOutput {
    /// Final posteriors, used as masks.
    pub fn masks(&self) -> &Array3<f64> {
        &self.state.gamma
    }
}

fn complex_gaussian_matrix(rng: &mut ChaCha8Rng, n: usize) -> CMatrix {
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    CMatrix::from_fn(n, n, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re * scale, im * scale)
    })
}

fn perturbed_shape(base: &HermitianMatrix, rng: &mut ChaCha8Rng) -> HermitianMatrix {
    let n = base.dim();
    let g = complex_gaussian_matrix(rng, n);
    let p = g.matmul(&g.adjoint()).scale(C64::new(0.1, 0.0));
    HermitianMatrix::new(base.matrix().add(&p)).with_trace(n as f64)
}

fn global_shapes(obs: &NormalizedObservations) -> Vec<HermitianMatrix> {
    let (nf, nt, nm) = obs.y_tilde.dim();
    (0..nf)
        .map(|f| {
            let mut acc = CMatrix::zeros(nm, nm);
            for t in 0..nt {
                if obs.silent[(f, t)] {
                    continue;
                }
                acc = acc.add(&CMatrix::outer(obs.observation(f, t), obs.observation(f, t)));
            }
            let h = load_diagonal(&HermitianMatrix::new(acc), DEFAULT_LOADING);
            if h.trace() > 0.0 {
                h.with_trace(nm as f64)
            } else {
                HermitianMatrix::identity(nm)
            }
        })
        .collect()
}

/// Runs EM: normalize, initialize, then `iterations` rounds of
/// E-step → permutation alignment → shape update → weight update, and a final
/// E-step plus alignment. Deterministic for a given seed.
pub fn run_cacgmm(spec: &MultichannelSpectrogram, config: &CacgmmConfig) -> Result<CacgmmOutput> {
    if config.iterations == 0 {
        return Err(Error::InvalidConfig("cACGMM needs at least one iteration".into()));
    }
    if config.classes == 0 {
        return Err(Error::InvalidConfig("cACGMM needs at least one class".into()));
    }
    let obs = normalize_observations(spec, config.silence_floor);
    let (nf, nt, nm) = obs.y_tilde.dim();
    let nk = config.classes;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut state = match &config.init {
        SmmInit::Random => {
            let shared: Vec<HermitianMatrix> = (0..nk)
                .map(|_| perturbed_shape(&HermitianMatrix::identity(nm), &mut rng))
                .collect();
            let b = (0..nf * nk).map(|i| shared[i % nk].clone()).collect();
            SmmState {
                b,
                pi: Array2::from_elem((nt, nk), 1.0 / nk as f64),
                gamma: Array3::from_elem((nf, nt, nk), 1.0 / nk as f64),
                classes: nk,
            }
        }
        SmmInit::Masks(masks) => {
            if masks.dim() != (nf, nt, nk) {
                return Err(Error::InvalidInput(format!(
                    "initial masks have shape {:?}, expected {:?}",
                    masks.dim(),
                    (nf, nt, nk)
                )));
            }
            let identity = vec![HermitianMatrix::identity(nm); nf * nk];
            let b = m_step_b(&obs, masks, &identity)?;
            SmmState {
                b,
                pi: m_step_pi(masks, &obs.silent),
                gamma: masks.clone(),
                classes: nk,
            }
        }
    };

    let mut report = SmmReport {
        iterations: config.iterations,
        classes: nk,
        silent_bins: obs.silent.iter().filter(|&&s| s).count(),
        ..SmmReport::default()
    };
    let mut globals: Option<Vec<HermitianMatrix>> = None;

    for _ in 0..config.iterations {
        let post = e_step(&obs, &state)?;
        state.gamma = post.gamma;
        report.log_likelihood.push(post.log_likelihood);
        if config.permutation_solver {
            let perms = solve_permutation(&mut state.gamma);
            permute_shapes(&mut state.b, nk, &perms);
        }
        state.b = m_step_b(&obs, &state.gamma, &state.b)?;
        state.pi = m_step_pi(&state.gamma, &obs.silent);

        let mass = state.gamma.sum_axis(Axis(0)).sum_axis(Axis(0));
        for k in 0..nk {
            if mass[k] < RESEED_MASS_FRACTION * (nf * nt) as f64 {
                let base = globals.get_or_insert_with(|| global_shapes(&obs));
                for f in 0..nf {
                    state.b[f * nk + k] = perturbed_shape(&base[f], &mut rng);
                }
                for t in 0..nt {
                    state.pi[(t, k)] = 1.0 / nk as f64;
                    let total: f64 = state.pi.row(t).sum();
                    state.pi.row_mut(t).mapv_inplace(|v| v / total);
                }
                report.reseeded_classes += 1;
            }
        }
    }
    let post = e_step(&obs, &state)?;
    state.gamma = post.gamma;
    report.log_likelihood.push(post.log_likelihood);
    if config.permutation_solver {
        let perms = solve_permutation(&mut state.gamma);
        permute_shapes(&mut state.b, nk, &perms);
    }
    Ok(CacgmmOutput { state, report })
}
