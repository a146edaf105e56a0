//! Plain-text `key = value` run configuration with `[section]` headers.

use crate::error::{Error, Result};
use crate::kernels::{params_hash, CutoffSpec};
use crate::model::{derive_params, ModelParams, Regulator};
use crate::regions::LatticeGeometry;
use std::path::{Path, PathBuf};

pub const OUTPUT_DIR_ENV: &str = "LARGEN_SIGMA_OUT";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub lambda: f64,
    pub big_k: f64,
    pub big_n: u64,
    pub regulator: Regulator,
    /// Λ = [−n, n]².
    pub n: usize,
    pub sites_per_side: usize,
    pub cutoff: CutoffSpec,
    pub seed: u64,
    pub samples: usize,
    pub batches: usize,
    pub window: Option<(f64, f64)>,
    pub corridor_override: Option<f64>,
    pub output_dir: PathBuf,
    pub timings: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            lambda: 1.0,
            big_k: 1.0,
            big_n: 1_000_000,
            regulator: Regulator::Exponential,
            n: 4,
            sites_per_side: 2,
            cutoff: CutoffSpec::default(),
            seed: 1,
            samples: 10_000,
            batches: 20,
            window: None,
            corridor_override: None,
            output_dir: std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("results")),
            timings: false,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("cannot parse `{key}` = `{v}`")))
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Apply `key = value` lines; `section.key` names are formed from `[section]` headers.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut section = String::new();
        let (mut alpha, mut big_a, mut c) = (self.cutoff.alpha, self.cutoff.big_a, self.cutoff.c);
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(s) = line.strip_prefix('[') {
                section = s
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config(format!("line {}: unterminated section header", lineno + 1)))?
                    .trim()
                    .to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let key = if section.is_empty() {
                k.trim().to_string()
            } else {
                format!("{section}.{}", k.trim())
            };
            let v = v.trim();
            match key.as_str() {
                "model.lambda" => self.lambda = parse(&key, v)?,
                "model.K" => self.big_k = parse(&key, v)?,
                "model.N" => self.big_n = parse(&key, v)?,
                "model.regulator" => self.regulator = parse(&key, v)?,
                "geometry.n" => self.n = parse(&key, v)?,
                "geometry.sites_per_side" => self.sites_per_side = parse(&key, v)?,
                "cutoff.alpha" => alpha = parse(&key, v)?,
                "cutoff.A" => big_a = parse(&key, v)?,
                "cutoff.c" => c = parse(&key, v)?,
                "sampler.seed" => self.seed = parse(&key, v)?,
                "sampler.samples" => self.samples = parse(&key, v)?,
                "sampler.batches" => self.batches = parse(&key, v)?,
                "sampler.window" => self.window = Some(parse_window(v)?),
                "run.corridor_override" => self.corridor_override = Some(parse(&key, v)?),
                "run.output_dir" => self.output_dir = PathBuf::from(v),
                "run.timings" => self.timings = parse(&key, v)?,
                _ => return Err(Error::Config(format!("unknown key `{key}`"))),
            }
        }
        self.cutoff = CutoffSpec::quartic(alpha, big_a, c).map_err(|e| Error::Config(format!("cutoff: {e}")))?;
        Ok(())
    }

    /// Checks run before any module work.
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(Error::Config(format!("`{key}` {why}")));
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("model.lambda", "must be positive");
        }
        if !(self.big_k > 0.0 && self.big_k.is_finite()) {
            return bad("model.K", "must be positive");
        }
        if self.big_n < 2 || self.big_n % 2 != 0 {
            return bad("model.N", "must be an even integer ≥ 2");
        }
        if self.n == 0 || self.sites_per_side == 0 {
            return bad("geometry", "n and sites_per_side must be positive");
        }
        if self.batches < crate::twopoint::MIN_BATCHES || self.samples < self.batches {
            return bad("sampler.batches", "needs ≥ 20 batches and samples ≥ batches");
        }
        if let Some((lo, hi)) = self.window {
            if !(lo >= 0.0 && hi > lo) {
                return bad("sampler.window", "needs 0 ≤ lo < hi");
            }
        }
        if let Some(m) = self.corridor_override {
            if !(m > 0.0) {
                return bad("run.corridor_override", "must be positive");
            }
        }
        Ok(())
    }

    pub fn params(&self) -> Result<ModelParams> {
        let p = derive_params(self.lambda, self.big_k, self.big_n, self.regulator)?;
        match self.corridor_override {
            Some(m) => p.with_corridor(m),
            None => Ok(p),
        }
    }

    pub fn geometry(&self) -> Result<LatticeGeometry> {
        LatticeGeometry::new(self.n, self.sites_per_side)
    }

    /// Canonical text form; reruns with equal configs give equal hashes.
    pub fn canonical(&self) -> String {
        format!(
            "lambda={:e};K={:e};N={};regulator={};n={};sps={};cutoff={:e},{:e},{:e};seed={};samples={};batches={};window={:?};corridor={:?}",
            self.lambda,
            self.big_k,
            self.big_n,
            self.regulator,
            self.n,
            self.sites_per_side,
            self.cutoff.alpha,
            self.cutoff.big_a,
            self.cutoff.c,
            self.seed,
            self.samples,
            self.batches,
            self.window,
            self.corridor_override
        )
    }

    pub fn hash(&self) -> String {
        params_hash(&self.canonical())
    }
}

pub fn parse_window(v: &str) -> Result<(f64, f64)> {
    let (a, b) = v
        .split_once(',')
        .ok_or_else(|| Error::Config(format!("window `{v}` must be `lo,hi`")))?;
    Ok((parse("window", a.trim())?, parse("window", b.trim())?))
}
