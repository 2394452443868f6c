//! Signal-to-distortion metrics with permutation resolution.

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulate::convolve_truncated;

/// Ratios are clamped to `±SDR_CAP` dB.
pub const SDR_CAP: f64 = 300.0;
pub const DEFAULT_FILTER_TAPS: usize = 512;
/// Relative loading used when the delayed-reference Gram matrix is not positive definite.
pub const PROJECTION_LOADING: f64 = 1e-8;
/// Step of the CDF grid.
pub const CDF_STEP_DB: f64 = 0.5;

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn ratio_db(target: f64, residual: f64) -> f64 {
    if residual <= 0.0 {
        return if target > 0.0 { SDR_CAP } else { -SDR_CAP };
    }
    (10.0 * (target / residual).log10()).clamp(-SDR_CAP, SDR_CAP)
}

fn check_pair(est: &[f64], reference: &[f64]) -> Result<()> {
    if est.len() != reference.len() {
        return Err(Error::LengthMismatch {
            left: est.len(),
            right: reference.len(),
        });
    }
    if reference.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroReference);
    }
    Ok(())
}

/// Scale-invariant SDR, `10 log10(‖α r‖² / ‖e - α r‖²)` with `α = ⟨e, r⟩ / ‖r‖²`.
pub fn si_sdr(est: &[f64], reference: &[f64]) -> Result<f64> {
    check_pair(est, reference)?;
    let alpha = est.iter().zip(reference).map(|(e, r)| e * r).sum::<f64>() / energy(reference);
    let mut target = 0.0;
    let mut residual = 0.0;
    for (e, r) in est.iter().zip(reference) {
        let t = alpha * r;
        target += t * t;
        residual += (e - t) * (e - t);
    }
    Ok(ratio_db(target, residual))
}

/// `c[i] = Σ_n a[n] b[n - i]` for `i < lags`, zero-padded.
fn cross_correlation(a: &[f64], b: &[f64], lags: usize) -> Vec<f64> {
    let n = a.len();
    if lags <= 32 {
        return (0..lags)
            .map(|i| (i..n).map(|j| a[j] * b[j - i]).sum())
            .collect();
    }
    let size = (n + lags).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let pad = |x: &[f64]| -> Vec<Complex<f64>> { (0..size).map(|i| Complex::new(x.get(i).copied().unwrap_or(0.0), 0.0)).collect() };
    let mut fa = pad(a);
    let mut fb = pad(b);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y.conj();
    }
    inv.process(&mut fa);
    fa[..lags].iter().map(|z| z.re / size as f64).collect()
}

/// Real Cholesky solve; `None` if the matrix is not positive definite.
fn cholesky_solve(a: &[f64], n: usize, b: &[f64]) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i * n + i];
    }
    Some(x)
}

/// SDR after the least-squares projection of `est` onto `taps` delayed copies
/// of `reference` (a length-`taps` distortion filter). `taps = 1` is [`si_sdr`].
pub fn filtered_sdr(est: &[f64], reference: &[f64], taps: usize) -> Result<f64> {
    check_pair(est, reference)?;
    if taps == 0 {
        return Err(Error::InvalidConfig("filter_taps must be at least 1".into()));
    }
    if taps == 1 {
        return si_sdr(est, reference);
    }
    let n = reference.len();
    let taps = taps.min(n);
    // Gram matrix of the truncated delayed references:
    // G[i+1][j+1] = G[i][j] - r[n-1-i] r[n-1-j]
    let auto = cross_correlation(reference, reference, taps);
    let mut gram = vec![0.0; taps * taps];
    for j in 0..taps {
        gram[j] = auto[j];
        gram[j * taps] = auto[j];
    }
    for i in 1..taps {
        for j in i..taps {
            let v = gram[(i - 1) * taps + (j - 1)] - reference[n - i] * reference[n - j];
            gram[i * taps + j] = v;
            gram[j * taps + i] = v;
        }
    }
    let rhs = cross_correlation(est, reference, taps);
    let coeffs = match cholesky_solve(&gram, taps, &rhs) {
        Some(x) => x,
        None => {
            let trace: f64 = (0..taps).map(|i| gram[i * taps + i]).sum();
            let delta = PROJECTION_LOADING * trace / taps as f64;
            let mut loaded = gram.clone();
            for i in 0..taps {
                loaded[i * taps + i] += delta;
            }
            cholesky_solve(&loaded, taps, &rhs).ok_or(Error::NotPositiveDefinite)?
        }
    };
    let target = convolve_truncated(reference, &coeffs);
    let residual: f64 = est.iter().zip(&target).map(|(e, t)| (e - t) * (e - t)).sum();
    Ok(ratio_db(energy(&target), residual))
}

/// Which SDR variant to compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    SiSdr,
    Filtered { taps: usize },
}

impl Metric {
    /// `taps ≤ 1` selects SI-SDR.
    pub fn from_taps(taps: usize) -> Self {
        if taps <= 1 {
            Metric::SiSdr
        } else {
            Metric::Filtered { taps }
        }
    }

    pub fn eval(&self, est: &[f64], reference: &[f64]) -> Result<f64> {
        match *self {
            Metric::SiSdr => si_sdr(est, reference),
            Metric::Filtered { taps } => filtered_sdr(est, reference, taps),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Score of each reference against its assigned estimate.
    pub per_source: Vec<f64>,
    /// `permutation[k]` is the estimate assigned to reference `k`.
    pub permutation: Vec<usize>,
    pub mean: f64,
    /// Mean score of the unprocessed input against the references, if given.
    pub input_sdr: Option<f64>,
    pub improvement: Option<f64>,
}

/// Permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Maximum supported source count for the exhaustive search.
pub const MAX_PERMUTATION_SOURCES: usize = 6;

/// Best assignment for a score matrix `scores[reference][estimate]`:
/// returns the permutation and the assigned scores. Ties go to the
/// lexicographically first permutation.
pub fn best_assignment(scores: &[Vec<f64>]) -> Result<(Vec<usize>, Vec<f64>)> {
    let k = scores.len();
    if k == 0 || k > MAX_PERMUTATION_SOURCES || scores.iter().any(|r| r.len() != k) {
        return Err(Error::InvalidInput(format!("need a square score matrix with 1..={MAX_PERMUTATION_SOURCES} rows")));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in permutations(k) {
        let total: f64 = (0..k).map(|i| scores[i][perm[i]]).sum();
        if best.as_ref().is_none_or(|(b, _)| total > *b) {
            best = Some((total, perm));
        }
    }
    let (_, permutation) = best.expect("at least one permutation");
    let assigned = (0..k).map(|i| scores[i][permutation[i]]).collect();
    Ok((permutation, assigned))
}

/// Scores every assignment of estimates to references and keeps the one with
/// the highest mean; ties go to the lexicographically first permutation.
/// `input` (one mixture channel) adds the input score and the improvement.
pub fn permutation_invariant_eval<F>(
    estimates: &[Vec<f64>],
    references: &[Vec<f64>],
    input: Option<&[f64]>,
    metric: F,
) -> Result<EvalResult>
where
    F: Fn(&[f64], &[f64]) -> Result<f64> + Sync,
{
    let k = references.len();
    if estimates.len() != k {
        return Err(Error::LengthMismatch {
            left: estimates.len(),
            right: k,
        });
    }
    if k == 0 {
        return Err(Error::InvalidInput("no references to evaluate against".into()));
    }
    if k > MAX_PERMUTATION_SOURCES {
        return Err(Error::InvalidInput(format!(
            "permutation search supports at most {MAX_PERMUTATION_SOURCES} sources"
        )));
    }
    use rayon::prelude::*;
    let scores: Vec<Vec<f64>> = references
        .par_iter()
        .map(|r| estimates.iter().map(|e| metric(e, r)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let (permutation, per_source) = best_assignment(&scores)?;
    let mean = per_source.iter().sum::<f64>() / k as f64;
    let input_sdr = match input {
        Some(x) => Some(references.iter().map(|r| metric(x, r)).sum::<Result<f64>>()? / k as f64),
        None => None,
    };
    Ok(EvalResult {
        per_source,
        permutation,
        mean,
        input_sdr,
        improvement: input_sdr.map(|i| mean - i),
    })
}

/// Empirical distribution of per-mixture mean scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdrCdf {
    /// `(threshold dB, fraction of values ≤ threshold)` on a 0.5 dB grid.
    pub points: Vec<(f64, f64)>,
    sorted: Vec<f64>,
}

impl SdrCdf {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("CDF needs at least one value".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("CDF values must be finite".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let lo = (sorted[0] / CDF_STEP_DB).floor() as i64;
        let hi = (sorted[sorted.len() - 1] / CDF_STEP_DB).ceil() as i64;
        let n = sorted.len() as f64;
        let points = (lo..=hi)
            .map(|i| {
                let x = i as f64 * CDF_STEP_DB;
                (x, sorted.partition_point(|&v| v <= x) as f64 / n)
            })
            .collect();
        Ok(Self { points, sorted })
    }

    /// Fraction of values `≤ threshold`.
    pub fn fraction_at(&self, threshold: f64) -> f64 {
        self.sorted.partition_point(|&v| v <= threshold) as f64 / self.sorted.len() as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.sorted
    }

    pub fn median(&self) -> f64 {
        median(&self.sorted)
    }
}

/// CDF over the per-mixture mean of each result.
pub fn sdr_cdf(results: &[EvalResult]) -> Result<SdrCdf> {
    let means: Vec<f64> = results.iter().map(|r| r.mean).collect();
    SdrCdf::from_values(&means)
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Renders one or more CDFs as a standalone SVG step plot.
pub fn cdf_svg(curves: &[(&str, &SdrCdf)]) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let xmin = curves.iter().filter_map(|(_, c)| c.points.first()).map(|p| p.0).fold(f64::INFINITY, f64::min);
    let xmax = curves.iter().filter_map(|(_, c)| c.points.last()).map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let (xmin, xmax) = if xmin.is_finite() && xmax > xmin { (xmin, xmax) } else { (xmin - 1.0, xmin + 1.0) };
    let sx = |x: f64| pad + (x - xmin) / (xmax - xmin) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - y * (h - 2.0 * pad);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <line x1=\"{pad}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{cx}\" y=\"{tx}\" text-anchor=\"middle\" font-size=\"14\">SDR (dB)</text>\n\
         <text x=\"15\" y=\"{cy}\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 15 {cy})\">fraction</text>\n\
         <text x=\"{pad}\" y=\"{tl}\" text-anchor=\"middle\" font-size=\"11\">{xmin:.1}</text>\n\
         <text x=\"{r}\" y=\"{tl}\" text-anchor=\"middle\" font-size=\"11\">{xmax:.1}</text>\n",
        b = h - pad,
        r = w - pad,
        cx = w / 2.0,
        tx = h - 10.0,
        cy = h / 2.0,
        tl = h - pad + 15.0,
    );
    for (i, (name, cdf)) in curves.iter().enumerate() {
        let color = colors[i % colors.len()];
        let mut pts = String::new();
        let mut prev = 0.0;
        for &(x, y) in &cdf.points {
            pts.push_str(&format!("{:.2},{:.2} {:.2},{:.2} ", sx(x), sy(prev), sx(x), sy(y)));
            prev = y;
        }
        out.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" fill=\"{color}\">{}</text>\n",
            pts.trim_end(),
            pad + 10.0,
            pad + 15.0 * (i as f64 + 1.0),
            escape(name)
        ));
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::substream;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn white(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = substream(seed, 9, 0);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn delayed(x: &[f64], d: usize) -> Vec<f64> {
        (0..x.len()).map(|i| if i >= d { x[i - d] } else { 0.0 }).collect()
    }

    #[test]
    fn si_sdr_examples() {
        let r = white(1, 4000);
        assert_eq!(si_sdr(&r, &r).unwrap(), SDR_CAP);
        let twice: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
        assert_eq!(si_sdr(&twice, &r).unwrap(), SDR_CAP);

        // noise orthogonal to r with a hundredth of its energy
        let raw = white(2, 4000);
        let proj = raw.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / energy(&r);
        let mut n: Vec<f64> = raw.iter().zip(&r).map(|(a, b)| a - proj * b).collect();
        let scale = (energy(&r) / 100.0 / energy(&n)).sqrt();
        n.iter_mut().for_each(|v| *v *= scale);
        let est: Vec<f64> = r.iter().zip(&n).map(|(a, b)| a + b).collect();
        assert!((si_sdr(&est, &r).unwrap() - 20.0).abs() < 0.01);

        assert!(matches!(si_sdr(&r, &r[..10]), Err(Error::LengthMismatch { .. })));
        assert!(matches!(si_sdr(&r, &vec![0.0; 4000]), Err(Error::ZeroReference)));
    }

    #[test]
    fn filtered_sdr_examples() {
        let r = white(3, 3000);
        let est = white(4, 3000);
        let a = filtered_sdr(&est, &r, 1).unwrap();
        assert!((a - si_sdr(&est, &r).unwrap()).abs() < 1e-9);

        let d3 = delayed(&r, 3);
        assert!(filtered_sdr(&d3, &r, 8).unwrap() > 250.0);
        let low = filtered_sdr(&d3, &r, 1).unwrap();
        // oracle: white reference, lag-3 autocorrelation over energy
        let rho = (3..3000).map(|i| r[i] * r[i - 3]).sum::<f64>() / energy(&r);
        let expected = 10.0 * (rho * rho * energy(&r) / (energy(&d3) - rho * rho * energy(&r))).log10();
        assert!((low - expected).abs() < 1e-6);
        assert!(low < 5.0);
    }

    #[test]
    fn filtered_sdr_large_filter_matches_direct_solution() {
        let r = white(5, 1500);
        let est: Vec<f64> = convolve_truncated(&r, &white(6, 40)).iter().zip(white(7, 1500)).map(|(a, b)| a + 0.3 * b).collect();
        let taps = 48;
        // oracle: build the delayed matrix explicitly and solve the normal equations
        let cols: Vec<Vec<f64>> = (0..taps).map(|d| delayed(&r, d)).collect();
        let mut g = vec![0.0; taps * taps];
        let mut b = vec![0.0; taps];
        for i in 0..taps {
            b[i] = cols[i].iter().zip(&est).map(|(x, y)| x * y).sum();
            for j in 0..taps {
                g[i * taps + j] = cols[i].iter().zip(&cols[j]).map(|(x, y)| x * y).sum();
            }
        }
        let x = cholesky_solve(&g, taps, &b).unwrap();
        let target: Vec<f64> = (0..1500).map(|n| (0..taps).map(|i| x[i] * cols[i][n]).sum()).collect();
        let resid: f64 = est.iter().zip(&target).map(|(e, t)| (e - t) * (e - t)).sum();
        let oracle = 10.0 * (energy(&target) / resid).log10();
        assert!((filtered_sdr(&est, &r, taps).unwrap() - oracle).abs() < 1e-8);
    }

    #[test]
    fn permutation_examples() {
        let refs: Vec<Vec<f64>> = (0..3u64).map(|k| white(10 + k, 800)).collect();
        let ests = vec![refs[2].clone(), refs[0].clone(), refs[1].clone()];
        let res = permutation_invariant_eval(&ests, &refs, None, si_sdr).unwrap();
        assert_eq!(res.permutation, vec![1, 2, 0]);
        assert!(res.per_source.iter().all(|&v| v == SDR_CAP));
        assert!(res.input_sdr.is_none());

        let one = permutation_invariant_eval(&refs[..1], &refs[..1], Some(&refs[0]), si_sdr).unwrap();
        assert_eq!(one.permutation, vec![0]);
        assert_eq!(one.improvement, Some(0.0));

        assert!(permutation_invariant_eval(&refs[..2], &refs, None, si_sdr).is_err());
    }

    #[test]
    fn permutation_search_agrees_with_independent_brute_force() {
        let refs: Vec<Vec<f64>> = (0..3u64).map(|k| white(20 + k, 600)).collect();
        let ests: Vec<Vec<f64>> = (0..3)
            .map(|k| {
                let n = white(30 + k as u64, 600);
                refs[(k + 1) % 3].iter().zip(&refs[k]).zip(&n).map(|((a, b), c)| a + 0.5 * b + 0.7 * c).collect()
            })
            .collect();
        let res = permutation_invariant_eval(&ests, &refs, None, si_sdr).unwrap();
        // independent evaluator: all six assignments written out by hand
        let all = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut best = f64::NEG_INFINITY;
        let mut arg = [0; 3];
        for p in all {
            let s: f64 = (0..3).map(|k| si_sdr(&ests[p[k]], &refs[k]).unwrap()).sum();
            if s > best {
                best = s;
                arg = p;
            }
        }
        assert_eq!(res.permutation, arg.to_vec());
        assert!((res.mean - best / 3.0).abs() < 1e-12);
    }

    fn result(mean: f64) -> EvalResult {
        EvalResult {
            per_source: vec![mean],
            permutation: vec![0],
            mean,
            input_sdr: None,
            improvement: None,
        }
    }

    #[test]
    fn cdf_examples() {
        let c = sdr_cdf(&[result(10.0)]).unwrap();
        assert_eq!(c.fraction_at(9.99), 0.0);
        assert_eq!(c.fraction_at(10.0), 1.0);
        assert_eq!(c.points.last().unwrap().1, 1.0);
        let c = sdr_cdf(&[result(5.0), result(15.0)]).unwrap();
        assert_eq!(c.fraction_at(10.0), 0.5);
        let at10 = c.points.iter().find(|p| p.0 == 10.0).unwrap();
        assert_eq!(at10.1, 0.5);
        assert_eq!(c.points.len(), 21);
        assert!(sdr_cdf(&[]).is_err());
        let svg = cdf_svg(&[("a", &c)]);
        assert!(svg.starts_with("<svg") && svg.contains("polyline"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn si_sdr_scale_invariance(seed in any::<u64>(), c in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0]) {
            let r = white(seed, 500);
            let e = white(seed.wrapping_add(1), 500);
            let scaled: Vec<f64> = e.iter().map(|v| v * c).collect();
            prop_assert!((si_sdr(&scaled, &r).unwrap() - si_sdr(&e, &r).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn filtered_sdr_nested(seed in any::<u64>(), taps in 1usize..40) {
            let r = white(seed, 400);
            let e: Vec<f64> = convolve_truncated(&r, &[1.0, 0.5, -0.3]).iter().zip(white(seed ^ 5, 400)).map(|(a, b)| a + b).collect();
            let a = filtered_sdr(&e, &r, taps).unwrap();
            let b = filtered_sdr(&e, &r, taps + 1).unwrap();
            prop_assert!(b >= a - 1e-9, "{a} {b}");
        }

        #[test]
        fn eval_invariant_under_input_permutation(seed in any::<u64>(), shift in 0usize..3) {
            let refs: Vec<Vec<f64>> = (0..3u64).map(|k| white(seed.wrapping_add(k), 300)).collect();
            let ests: Vec<Vec<f64>> = (0..3)
                .map(|k| refs[k].iter().zip(white(seed.wrapping_add(10 + k as u64), 300)).map(|(a, b)| a + 0.8 * b).collect())
                .collect();
            let base = permutation_invariant_eval(&ests, &refs, None, si_sdr).unwrap();
            let rotated: Vec<Vec<f64>> = (0..3).map(|k| ests[(k + shift) % 3].clone()).collect();
            let res = permutation_invariant_eval(&rotated, &refs, None, si_sdr).unwrap();
            prop_assert_eq!(&res.per_source, &base.per_source);
            for k in 0..3 {
                prop_assert_eq!((res.permutation[k] + shift) % 3, base.permutation[k]);
            }
        }

        #[test]
        fn cdf_monotone(values in prop::collection::vec(-30.0f64..40.0, 1..30)) {
            let c = SdrCdf::from_values(&values).unwrap();
            for w in c.points.windows(2) {
                prop_assert!(w[1].1 >= w[0].1);
                prop_assert!((w[1].0 - w[0].0 - CDF_STEP_DB).abs() < 1e-12);
            }
            prop_assert_eq!(c.points.last().unwrap().1, 1.0);
        }
    }
}
