//! Run configuration: presets, flat TOML files and flag overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("bad config file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unknown preset {0:?} (expected doubling-plain, doubling-refined, unimodal-a2eps, first-return-doubling)")]
    UnknownPreset(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Every key a config file or flag may set. Unset keys fall back to the preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub preset: Option<String>,
    pub map: Option<String>,
    pub a: Option<f64>,
    pub slope: Option<f64>,
    pub scheme: Option<String>,
    pub n_max: Option<u32>,
    pub t: Option<f64>,
    pub c: Option<f64>,
    pub alphabet: Option<u64>,
    pub depth: Option<usize>,
    pub audit_depth: Option<usize>,
    pub audit_cap: Option<usize>,
    pub sample_depth: Option<usize>,
    pub verify_depth: Option<u32>,
    pub h1_tol: Option<f64>,
    pub bracket_tol: Option<f64>,
    pub t_grid: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub n: Option<usize>,
    pub lag_max: Option<usize>,
    pub block_len: Option<usize>,
    pub blocks: Option<usize>,
    pub observable: Option<String>,
    pub observable2: Option<String>,
    pub measure: Option<String>,
    pub force: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    /// `doubling`, `tent` or `quadratic`.
    pub map: String,
    pub a: f64,
    pub slope: f64,
    /// `plain`, `refined`, `first-return` or `unimodal`.
    pub scheme: String,
    /// Truncation: doubling levels, first-return depth or unimodal τ cap.
    pub n_max: u32,
    /// The potential is `φ = -t log|df| + c`.
    pub t: f64,
    pub c: f64,
    pub alphabet: u64,
    pub depth: usize,
    pub audit_depth: usize,
    pub audit_cap: usize,
    pub sample_depth: usize,
    pub verify_depth: u32,
    pub h1_tol: f64,
    pub bracket_tol: f64,
    pub t_grid: Vec<f64>,
    pub seed: u64,
    pub n: usize,
    pub lag_max: usize,
    pub block_len: usize,
    pub blocks: usize,
    pub observable: String,
    pub observable2: String,
    pub measure: Option<String>,
    pub force: bool,
}

impl RunConfig {
    fn base(preset: &str) -> Self {
        Self {
            preset: preset.to_string(),
            map: "doubling".into(),
            a: 2.0,
            slope: 2.0,
            scheme: "plain".into(),
            n_max: 29,
            t: 1.0,
            c: 0.0,
            alphabet: 30,
            depth: 1,
            audit_depth: 3,
            audit_cap: 30_000,
            sample_depth: 12,
            verify_depth: 6,
            h1_tol: 1e-9,
            bracket_tol: 1e-3,
            t_grid: vec![-0.5, 0.0, 0.5, 1.0, 1.5],
            seed: 0x5eed,
            n: 100_000,
            lag_max: 20,
            block_len: 1 << 14,
            blocks: 10_000,
            observable: "x".into(),
            observable2: "x".into(),
            measure: None,
            force: false,
        }
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let mut c = Self::base(name);
        match name {
            "doubling-plain" => {}
            "doubling-refined" => {
                c.scheme = "refined".into();
                c.n_max = 4;
                c.t = 0.0;
                c.c = -2.0;
                c.alphabet = 65_814;
                c.audit_depth = 1;
                c.audit_cap = 1 << 17;
                c.verify_depth = 4;
            }
            "unimodal-a2eps" => {
                c.map = "quadratic".into();
                c.a = 1.999;
                c.scheme = "unimodal".into();
                c.n_max = 14;
                c.alphabet = 24;
                c.depth = 2;
                c.audit_depth = 2;
                c.audit_cap = 2_000;
                c.verify_depth = 3;
                c.t_grid = vec![0.0, 0.25, 0.5, 0.75, 1.0];
            }
            "first-return-doubling" => {
                c.scheme = "first-return".into();
                c.n_max = 24;
                c.alphabet = 24;
            }
            other => return Err(ConfigError::UnknownPreset(other.to_string())),
        }
        Ok(c)
    }

    fn apply(&mut self, o: &Overrides) {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = &o.$f { self.$f = v.clone(); } )* };
        }
        set!(map, a, slope, scheme, n_max, t, c, alphabet, depth, audit_depth, audit_cap, sample_depth);
        set!(verify_depth, h1_tol, bracket_tol, t_grid, seed, n, lag_max, block_len, blocks);
        set!(observable, observable2, force);
        if o.measure.is_some() {
            self.measure = o.measure.clone();
        }
    }

    /// Preset defaults, then the file, then the flags.
    pub fn resolve(file: Option<&Path>, flags: &Overrides) -> Result<Self, ConfigError> {
        let from_file = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read { path: p.into(), source })?;
                toml::from_str::<Overrides>(&text)?
            }
            None => Overrides::default(),
        };
        let preset = flags
            .preset
            .clone()
            .or_else(|| from_file.preset.clone())
            .unwrap_or_else(|| "doubling-plain".into());
        let mut cfg = Self::preset(&preset)?;
        cfg.apply(&from_file);
        cfg.apply(flags);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !["doubling", "tent", "quadratic"].contains(&self.map.as_str()) {
            return bad(format!("map must be doubling, tent or quadratic, got {}", self.map));
        }
        if !["plain", "refined", "first-return", "unimodal"].contains(&self.scheme.as_str()) {
            return bad(format!("scheme must be plain, refined, first-return or unimodal, got {}", self.scheme));
        }
        if self.n_max < 4 {
            return bad(format!("truncation n_max must be at least 4, got {}", self.n_max));
        }
        if self.scheme == "refined" && self.n_max > 5 {
            return bad("refined doubling supports n_max <= 5".into());
        }
        for (name, v) in [("h1_tol", self.h1_tol), ("bracket_tol", self.bracket_tol)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !self.t.is_finite() || !self.c.is_finite() || !self.a.is_finite() || !self.slope.is_finite() {
            return bad("t, c, a and slope must be finite".into());
        }
        if self.depth == 0 || self.audit_depth == 0 || self.sample_depth == 0 || self.alphabet == 0 {
            return bad("depths and alphabet must be positive".into());
        }
        if self.t_grid.is_empty() || self.t_grid.windows(2).any(|w| w[1] <= w[0]) {
            return bad("t_grid must be non-empty and strictly increasing".into());
        }
        if self.n == 0 || self.blocks < 2 || self.block_len < 16 {
            return bad("need n >= 1, blocks >= 2 and block_len >= 16".into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the serialized config, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip() {
        for p in ["doubling-plain", "doubling-refined", "unimodal-a2eps", "first-return-doubling"] {
            let c = RunConfig::preset(p).unwrap();
            c.validate().unwrap();
            let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.hash(), c.hash());
        }
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "t = 0.5\nseed = 9\n").unwrap();
        let flags = Overrides { t: Some(2.0), ..Default::default() };
        let c = RunConfig::resolve(Some(&path), &flags).unwrap();
        assert_eq!((c.t, c.seed), (2.0, 9));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(toml::from_str::<Overrides>("colour = 1").is_err());
        let flags = Overrides { n_max: Some(2), ..Default::default() };
        assert!(RunConfig::resolve(None, &flags).is_err());
        let flags = Overrides { preset: Some("nope".into()), ..Default::default() };
        assert!(matches!(RunConfig::resolve(None, &flags), Err(ConfigError::UnknownPreset(_))));
    }
}
