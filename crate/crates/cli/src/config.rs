//! Run configuration: defaults, then a flat JSON file, then flags.

use std::path::{Path, PathBuf};

use bss_core::chain::{Algorithm, InitMode, SeparationConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Environment variable consulted when neither the file nor a flag sets a seed.
pub const SEED_ENV: &str = "BSS_SEED";

/// Keys mirror the `separate` flag names.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub algorithm: Option<Algorithm>,
    pub sources: Option<usize>,
    pub smm_classes: Option<usize>,
    pub smm_stft_size: Option<usize>,
    pub smm_shift: Option<usize>,
    pub iva_stft_size: Option<usize>,
    pub iva_shift: Option<usize>,
    pub smm_iterations: Option<usize>,
    pub iva_iterations: Option<usize>,
    pub init: Option<InitMode>,
    pub seed: Option<u64>,
    pub ref_channel: Option<usize>,
    pub permutation_solver: Option<bool>,
    pub mask_multiply: Option<bool>,
    pub dump_intermediate: Option<PathBuf>,
    pub threads: Option<usize>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident, $($field:ident),*) => {
        $(if $src.$field.is_some() { $dst.$field = $src.$field.clone(); })*
    };
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Values set in `other` win.
    pub fn overlay(&mut self, other: &RunConfig) {
        overlay!(
            self,
            other,
            input,
            out,
            algorithm,
            sources,
            smm_classes,
            smm_stft_size,
            smm_shift,
            iva_stft_size,
            iva_shift,
            smm_iterations,
            iva_iterations,
            init,
            seed,
            ref_channel,
            permutation_solver,
            mask_multiply,
            dump_intermediate,
            threads
        );
    }

    /// Fills every unset separation value from the defaults (seed from the
    /// environment first) so the echoed file pins the run completely.
    pub fn resolve(mut self) -> Result<(Self, SeparationConfig), CliError> {
        if self.seed.is_none() {
            if let Ok(v) = std::env::var(SEED_ENV) {
                let seed = v
                    .trim()
                    .parse()
                    .map_err(|_| CliError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
                self.seed = Some(seed);
            }
        }
        let d = SeparationConfig::default();
        let mut sep = SeparationConfig {
            algorithm: self.algorithm.unwrap_or(d.algorithm),
            sources: self.sources.unwrap_or(d.sources),
            smm_classes: self.smm_classes,
            smm_stft_size: self.smm_stft_size.unwrap_or(d.smm_stft_size),
            smm_shift: self.smm_shift,
            iva_stft_size: self.iva_stft_size.unwrap_or(d.iva_stft_size),
            iva_shift: self.iva_shift,
            smm_iterations: self.smm_iterations.unwrap_or(d.smm_iterations),
            iva_iterations: self.iva_iterations,
            init: self.init.unwrap_or(d.init),
            seed: self.seed.unwrap_or(d.seed),
            ref_channel: self.ref_channel,
            permutation_solver: self.permutation_solver.unwrap_or(d.permutation_solver),
            mask_multiply: self.mask_multiply.unwrap_or(d.mask_multiply),
        };
        sep.validate()?;
        sep.smm_classes = Some(sep.classes());
        sep.smm_shift = Some(sep.smm_stft()?.shift());
        sep.iva_shift = Some(sep.iva_stft()?.shift());
        sep.iva_iterations = Some(sep.iva_iteration_count());

        self.algorithm = Some(sep.algorithm);
        self.sources = Some(sep.sources);
        self.smm_classes = sep.smm_classes;
        self.smm_stft_size = Some(sep.smm_stft_size);
        self.smm_shift = sep.smm_shift;
        self.iva_stft_size = Some(sep.iva_stft_size);
        self.iva_shift = sep.iva_shift;
        self.smm_iterations = Some(sep.smm_iterations);
        self.iva_iterations = sep.iva_iterations;
        self.init = Some(sep.init);
        self.seed = Some(sep.seed);
        self.permutation_solver = Some(sep.permutation_solver);
        self.mask_multiply = Some(sep.mask_multiply);
        Ok((self, sep))
    }
}

/// Resolves `dir` below `out`; absolute paths must already lie inside it.
pub fn inside_out_dir(out: &Path, dir: &Path) -> Result<PathBuf, CliError> {
    if dir.is_absolute() {
        if dir.starts_with(out) {
            return Ok(dir.to_path_buf());
        }
        return Err(CliError::Config(format!(
            "{} is outside the output directory {}",
            dir.display(),
            out.display()
        )));
    }
    if dir.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
        return Err(CliError::Config(format!("{} must not leave the output directory", dir.display())));
    }
    Ok(out.join(dir))
}

/// Parses an enum value the way the JSON config spells it.
pub fn parse_keyword<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let mut cfg: RunConfig = serde_json::from_str(r#"{"sources": 3, "smm-stft-size": 512, "algorithm": "overiva"}"#).unwrap();
        cfg.overlay(&RunConfig {
            smm_stft_size: Some(256),
            seed: Some(9),
            ..RunConfig::default()
        });
        let (echo, sep) = cfg.resolve().unwrap();
        assert_eq!(sep.sources, 3);
        assert_eq!(sep.smm_stft_size, 256);
        assert_eq!(sep.algorithm, Algorithm::Overiva);
        assert_eq!(sep.iva_stft_size, 2048);
        assert_eq!(echo.seed, Some(9));
        assert_eq!(echo.iva_iterations, Some(100));
        assert_eq!(echo.iva_shift, Some(512));
    }

    #[test]
    fn resolved_config_is_a_fixed_point() {
        let (echo, sep) = RunConfig {
            seed: Some(1),
            ..RunConfig::default()
        }
        .resolve()
        .unwrap();
        let json = serde_json::to_string(&echo).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        let (echo2, sep2) = back.resolve().unwrap();
        assert_eq!(echo, echo2);
        assert_eq!(sep, sep2);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"stft": 3}"#).is_err());
        let bad = RunConfig {
            smm_stft_size: Some(1000),
            seed: Some(0),
            ..RunConfig::default()
        };
        assert_eq!(bad.resolve().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn dump_dir_stays_inside_out() {
        let out = Path::new("/tmp/run");
        assert_eq!(inside_out_dir(out, Path::new("dump")).unwrap(), out.join("dump"));
        assert!(inside_out_dir(out, Path::new("../x")).is_err());
        assert!(inside_out_dir(out, Path::new("/etc")).is_err());
    }

    #[test]
    fn keywords_parse_like_json() {
        assert_eq!(parse_keyword::<Algorithm>("chain").unwrap(), Algorithm::Chain);
        assert_eq!(parse_keyword::<InitMode>("pca").unwrap(), InitMode::Pca);
        assert!(parse_keyword::<InitMode>("random").is_err());
    }
}
