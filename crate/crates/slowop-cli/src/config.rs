//! Experiment configuration: flat key=value files, grid syntax, CLI merging,
//! and the canonical hash used for caching.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use sha2::{Digest, Sha256};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    Find,
    SweepOverlap,
    SweepScaling,
    Evolve,
    Otoc,
    Entropy,
    Transition,
    Verify,
}

impl Experiment {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "find" => Experiment::Find,
            "sweep_overlap" | "sweep-overlap" => Experiment::SweepOverlap,
            "sweep_scaling" | "sweep-scaling" => Experiment::SweepScaling,
            "evolve" => Experiment::Evolve,
            "otoc" => Experiment::Otoc,
            "entropy" => Experiment::Entropy,
            "transition" => Experiment::Transition,
            "verify" => Experiment::Verify,
            _ => bail!("unknown experiment {s:?}"),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Find => "find",
            Experiment::SweepOverlap => "sweep_overlap",
            Experiment::SweepScaling => "sweep_scaling",
            Experiment::Evolve => "evolve",
            Experiment::Otoc => "otoc",
            Experiment::Entropy => "entropy",
            Experiment::Transition => "transition",
            Experiment::Verify => "verify",
        }
    }
}

/// Parses a float grid: a single value, a comma list, or `start:stop:step`
/// (inclusive endpoints up to rounding).
pub fn parse_f64_grid(s: &str) -> Result<Vec<f64>> {
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            bail!("range must be start:stop:step, got {s:?}");
        }
        let (start, stop, step): (f64, f64, f64) =
            (parts[0].parse()?, parts[1].parse()?, parts[2].parse()?);
        if step <= 0.0 {
            bail!("step must be positive in {s:?}");
        }
        let mut out = Vec::new();
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        for i in 0..=n {
            out.push(start + step * i as f64);
        }
        return Ok(out);
    }
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| anyhow!("bad number {t:?}: {e}")))
        .collect()
}

pub fn parse_usize_grid(s: &str) -> Result<Vec<usize>> {
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            bail!("range must be start:stop:step, got {s:?}");
        }
        let (start, stop, step): (usize, usize, usize) =
            (parts[0].parse()?, parts[1].parse()?, parts[2].parse()?);
        if step == 0 {
            bail!("step must be positive in {s:?}");
        }
        return Ok((start..=stop).step_by(step).collect());
    }
    s.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| anyhow!("bad integer {t:?}: {e}")))
        .collect()
}

/// The full experiment configuration as a flat, ordered key-value map.
///
/// Everything is kept in string form so the canonical serialization (and the
/// cache hash) is independent of parse order.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    values: BTreeMap<String, String>,
}

pub const KNOWN_KEYS: &[&str] = &[
    "experiment",
    "definition",
    "backend",
    "g",
    "h",
    "N",
    "L",
    "times",
    "K",
    "seed",
    "e_bar",
    "trunc_tol",
    "bond_dims",
    "inner_tol",
    "outer_tol",
    "max_sweeps",
    "threshold",
    "method",
    "axes",
    "offsets",
    "sites",
    "output",
    "fixture_mpo",
];

impl ExperimentConfig {
    pub fn new(experiment: Experiment) -> Self {
        let mut values = BTreeMap::new();
        values.insert("experiment".to_string(), experiment.name().to_string());
        ExperimentConfig { experiment, values }
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !KNOWN_KEYS.contains(&key) {
            bail!("unknown config key {key:?}");
        }
        self.values.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| anyhow!("missing required config key {key:?}"))
    }

    pub fn get_or(&self, key: &str, default: &str) -> String {
        self.get(key).unwrap_or(default).to_string()
    }

    pub fn f64_grid(&self, key: &str, default: &str) -> Result<Vec<f64>> {
        parse_f64_grid(&self.get_or(key, default)).with_context(|| format!("config key {key}"))
    }

    pub fn usize_grid(&self, key: &str, default: &str) -> Result<Vec<usize>> {
        parse_usize_grid(&self.get_or(key, default)).with_context(|| format!("config key {key}"))
    }

    pub fn f64_value(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => s.parse().with_context(|| format!("config key {key}")),
        }
    }

    pub fn usize_value(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => s.parse().with_context(|| format!("config key {key}")),
        }
    }

    pub fn u64_value(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => s.parse().with_context(|| format!("config key {key}")),
        }
    }

    pub fn output(&self) -> Result<PathBuf> {
        Ok(PathBuf::from(self.require("output")?))
    }

    /// Loads `key=value` lines (blank lines and `#` comments skipped) on top
    /// of the current values.
    pub fn merge_file(&mut self, text: &str) -> Result<()> {
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key=value, got {line:?}", ln + 1))?;
            let k = k.trim();
            if k == "experiment" {
                let e = Experiment::parse(v.trim())?;
                if e != self.experiment {
                    bail!(
                        "config file sets experiment={} but the {} subcommand was invoked",
                        v.trim(),
                        self.experiment.name()
                    );
                }
                continue;
            }
            self.set(k, v.trim().to_string())?;
        }
        Ok(())
    }

    /// Canonical serialization: sorted `key=value` lines.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    /// Cache key: hash of the canonical config plus the tool version.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(TOOL_VERSION.as_bytes());
        hasher.update(b"\n");
        hasher.update(self.canonical().as_bytes());
        let digest = hasher.finalize();
        let mut s = String::new();
        for b in digest.iter().take(16) {
            let _ = write!(s, "{b:02x}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        assert_eq!(parse_f64_grid("0.0:0.1:0.05").unwrap(), vec![0.0, 0.05, 0.1]);
        assert_eq!(parse_f64_grid("1.05").unwrap(), vec![1.05]);
        assert_eq!(parse_f64_grid("0.1,0.4").unwrap(), vec![0.1, 0.4]);
        assert_eq!(parse_usize_grid("4,5,6").unwrap(), vec![4, 5, 6]);
        assert_eq!(parse_usize_grid("4:8:2").unwrap(), vec![4, 6, 8]);
        assert!(parse_f64_grid("0:1:0").is_err());
    }

    #[test]
    fn canonical_and_hash_stability() {
        let mut a = ExperimentConfig::new(Experiment::Find);
        a.set("g", "1.05").unwrap();
        a.set("h", "0.1").unwrap();
        let mut b = ExperimentConfig::new(Experiment::Find);
        b.set("h", "0.1").unwrap();
        b.set("g", "1.05").unwrap();
        assert_eq!(a.canonical(), b.canonical());
        assert_eq!(a.hash(), b.hash());
        b.set("h", "0.2").unwrap();
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn file_merge_and_unknown_key() {
        let mut c = ExperimentConfig::new(Experiment::Transition);
        c.merge_file("# comment\ng=1.05\nh=0.0:0.6:0.02\nN=6\n").unwrap();
        assert_eq!(c.get("g"), Some("1.05"));
        assert!(c.merge_file("bogus_key=1\n").is_err());
    }
}
