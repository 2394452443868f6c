//! Scoring separated outputs against simulated scenes.

use std::path::{Path, PathBuf};

use bss_core::audio_io::{read_wav, TimeSignal};
use bss_core::metrics::{best_assignment, cdf_svg, mean, median, sdr_cdf, EvalResult, Metric, SdrCdf};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Threshold of the reported CDF point, in dB.
pub const CDF_THRESHOLD_DB: f64 = 7.0;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneEval {
    pub scene: String,
    #[serde(flatten)]
    pub result: EvalResult,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalSummary {
    pub metric: Metric,
    pub scenes: Vec<SceneEval>,
    pub mean: f64,
    pub median: f64,
    pub cdf_at_7db: f64,
    pub mean_improvement: Option<f64>,
    pub cdf: SdrCdf,
}

impl EvalSummary {
    pub fn new(metric: Metric, scenes: Vec<SceneEval>) -> Result<Self, CliError> {
        let results: Vec<EvalResult> = scenes.iter().map(|s| s.result.clone()).collect();
        let means: Vec<f64> = results.iter().map(|r| r.mean).collect();
        let cdf = sdr_cdf(&results)?;
        let improvements: Option<Vec<f64>> = results.iter().map(|r| r.improvement).collect();
        Ok(Self {
            metric,
            mean: mean(&means),
            median: median(&means),
            cdf_at_7db: cdf.fraction_at(CDF_THRESHOLD_DB),
            mean_improvement: improvements.map(|v| mean(&v)),
            cdf,
            scenes,
        })
    }
}

/// Files `{prefix}_{n}.wav` in `dir`, ordered by `n`.
pub fn numbered_files(dir: &Path, prefix: &str) -> Result<Vec<PathBuf>, CliError> {
    let mut found = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let entry = entry.map_err(|e| CliError::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let index = name
            .strip_prefix(prefix)
            .and_then(|s| s.strip_prefix('_'))
            .and_then(|s| s.strip_suffix(".wav"))
            .and_then(|s| s.parse::<usize>().ok());
        if let Some(i) = index {
            found.push((i, entry.path()));
        }
    }
    found.sort();
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

/// Scene subdirectories (`scene_*`) in name order.
pub fn scene_dirs(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut dirs = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let entry = entry.map_err(|e| CliError::io(dir, e))?;
        if entry.path().is_dir() && entry.file_name().to_string_lossy().starts_with("scene_") {
            dirs.push(entry.path());
        }
    }
    dirs.sort();
    Ok(dirs)
}

fn read_all(paths: &[PathBuf]) -> Result<Vec<TimeSignal>, CliError> {
    paths.iter().map(|p| read_wav(p).map_err(CliError::from)).collect()
}

/// Reference channel per estimate from a `report.json` next to the
/// estimates, or channel 0.
pub fn reference_channels(est_dir: &Path, count: usize) -> Result<Vec<usize>, CliError> {
    let path = est_dir.join("report.json");
    if !path.exists() {
        return Ok(vec![0; count]);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let channels: Vec<usize> = serde_json::from_value(value["reference_channels"].clone())
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if channels.len() != count {
        return Err(CliError::Config(format!(
            "{} lists {} reference channels for {count} estimates",
            path.display(),
            channels.len()
        )));
    }
    Ok(channels)
}

/// Mono estimates from `est_*.wav`, or channel 0 of `image_*.wav`.
pub fn load_estimates(est_dir: &Path) -> Result<(Vec<Vec<f64>>, Vec<usize>), CliError> {
    let est = numbered_files(est_dir, "est")?;
    if !est.is_empty() {
        let signals = read_all(&est)?;
        let refs = reference_channels(est_dir, signals.len())?;
        return Ok((signals.iter().map(|s| s.channel_vec(0)).collect(), refs));
    }
    let images = numbered_files(est_dir, "image")?;
    if images.is_empty() {
        return Err(CliError::Config(format!("no est_*.wav or image_*.wav in {}", est_dir.display())));
    }
    let signals = read_all(&images)?;
    Ok((signals.iter().map(|s| s.channel_vec(0)).collect(), vec![0; signals.len()]))
}

/// Permutation-invariant score of `estimates` against the images in
/// `scene_dir`. Estimate `i` is compared with each image at its own
/// reference channel `ref_channels[i]`; the input score uses the mixture at
/// the same channel.
pub fn evaluate_scene(
    estimates: &[Vec<f64>],
    ref_channels: &[usize],
    scene_dir: &Path,
    metric: Metric,
) -> Result<EvalResult, CliError> {
    let images = read_all(&numbered_files(scene_dir, "image")?)?;
    if images.is_empty() {
        return Err(CliError::Config(format!("no image_*.wav in {}", scene_dir.display())));
    }
    if images.len() != estimates.len() {
        return Err(CliError::Config(format!(
            "{} estimates but {} references in {}",
            estimates.len(),
            images.len(),
            scene_dir.display()
        )));
    }
    let channels = images[0].num_channels();
    if let Some(&r) = ref_channels.iter().find(|&&r| r >= channels) {
        return Err(CliError::Config(format!("reference channel {r} but references have {channels} channels")));
    }
    let mut scores = Vec::with_capacity(images.len());
    for image in &images {
        let row = estimates
            .iter()
            .zip(ref_channels)
            .map(|(e, &r)| metric.eval(e, &image.channel_vec(r)))
            .collect::<bss_core::Result<Vec<f64>>>()?;
        scores.push(row);
    }
    let (permutation, per_source) = best_assignment(&scores)?;
    let k = per_source.len() as f64;
    let result_mean = per_source.iter().sum::<f64>() / k;

    let mixture_path = scene_dir.join("mixture.wav");
    let input_sdr = if mixture_path.exists() {
        let mixture = read_wav(&mixture_path)?;
        let mut total = 0.0;
        for (j, image) in images.iter().enumerate() {
            let r = ref_channels[permutation[j]];
            total += metric.eval(&mixture.channel_vec(r), &image.channel_vec(r))?;
        }
        Some(total / k)
    } else {
        None
    };
    Ok(EvalResult {
        per_source,
        permutation,
        mean: result_mean,
        input_sdr,
        improvement: input_sdr.map(|i| result_mean - i),
    })
}

/// Evaluates one scene directory or a corpus of `scene_*` directories.
pub fn evaluate(est: &Path, reference: &Path, metric: Metric) -> Result<EvalSummary, CliError> {
    let scenes = scene_dirs(reference)?;
    let mut out = Vec::new();
    if scenes.is_empty() {
        let (estimates, refs) = load_estimates(est)?;
        out.push(SceneEval {
            scene: reference.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            result: evaluate_scene(&estimates, &refs, reference, metric)?,
        });
    } else {
        for scene in scenes {
            let name = scene.file_name().expect("scene dir has a name").to_string_lossy().into_owned();
            let est_dir = est.join(&name);
            if !est_dir.is_dir() {
                return Err(CliError::Config(format!("missing estimates for {name} in {}", est.display())));
            }
            let (estimates, refs) = load_estimates(&est_dir)?;
            out.push(SceneEval {
                scene: name,
                result: evaluate_scene(&estimates, &refs, &scene, metric)?,
            });
        }
    }
    EvalSummary::new(metric, out)
}

pub fn plot(summary: &EvalSummary, label: &str) -> String {
    cdf_svg(&[(label, &summary.cdf)])
}
