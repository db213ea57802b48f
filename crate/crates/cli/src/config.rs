//! Command-line options and the flat `key = value` configuration file.
//! Flags given on the command line override the file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, ValueEnum};

/// A value or the literal `auto`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Auto<T> {
    Auto,
    Value(T),
}

impl<T: FromStr> FromStr for Auto<T>
where
    T::Err: fmt::Display,
{
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            Ok(Auto::Auto)
        } else {
            s.parse().map(Auto::Value).map_err(|e: T::Err| format!("expected 'auto' or a value: {e}"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Bartlett,
    None,
}

impl FromStr for KernelArg {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        <Self as ValueEnum>::from_str(s, true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BreakArg {
    /// Within-regime variation of the refined slope matrices.
    Slope,
    /// Normalized right singular vectors.
    Sv,
}

impl FromStr for BreakArg {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        <Self as ValueEnum>::from_str(s, true)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Args)]
pub struct Options {
    /// Long-format panel CSV with columns unit,time,y,x1..xp.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Number of factors, or `auto` to estimate it.
    #[arg(long)]
    pub r0: Option<Auto<usize>>,
    /// Trimming fraction of the sup-F test.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Critical value of the sup-F test.
    #[arg(long)]
    pub critical: Option<f64>,
    /// Largest number of breaks searched by the sequential test; 0 skips it.
    #[arg(long)]
    pub max_breaks: Option<usize>,
    /// Significance level of the group-count tests, or `auto` for 1/N^2.
    #[arg(long)]
    pub varsigma: Option<Auto<f64>>,
    #[arg(long)]
    pub kernel: Option<KernelArg>,
    /// Kernel bandwidth in periods, or `auto` for floor(4 (T/100)^(2/9)).
    #[arg(long)]
    pub bandwidth: Option<Auto<usize>>,
    #[arg(long)]
    pub break_method: Option<BreakArg>,
    /// Report uncorrected slopes.
    #[arg(long)]
    pub no_bias_correction: bool,
    /// The first regressor is the lagged outcome.
    #[arg(long)]
    pub dynamic: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Simulation design, e.g. 1.1 or 4.3.
    #[arg(long)]
    pub dgp: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Flat `key = value` file; keys are the long flag names.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| anyhow!("line {}: expected key = value", k + 1))?;
        let key = key.trim().replace('_', "-");
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            bail!("line {}: '{key}' given twice", k + 1);
        }
    }
    Ok(map)
}

fn fill<T: FromStr>(slot: &mut Option<T>, key: &str, value: &str) -> Result<()>
where
    T::Err: fmt::Display,
{
    if slot.is_none() {
        *slot = Some(value.parse().map_err(|e| anyhow!("config key '{key}': {e}"))?);
    }
    Ok(())
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    value.parse().map_err(|_| anyhow!("config key '{key}': expected true or false, got '{value}'"))
}

impl Options {
    /// Fills options not given on the command line from `map`.
    pub fn merge(&mut self, map: &BTreeMap<String, String>) -> Result<()> {
        for (key, v) in map {
            match key.as_str() {
                "input" => fill(&mut self.input, key, v)?,
                "output-dir" => fill(&mut self.output_dir, key, v)?,
                "r0" => fill(&mut self.r0, key, v)?,
                "epsilon" => fill(&mut self.epsilon, key, v)?,
                "critical" => fill(&mut self.critical, key, v)?,
                "max-breaks" => fill(&mut self.max_breaks, key, v)?,
                "varsigma" => fill(&mut self.varsigma, key, v)?,
                "kernel" => fill(&mut self.kernel, key, v)?,
                "bandwidth" => fill(&mut self.bandwidth, key, v)?,
                "break-method" => fill(&mut self.break_method, key, v)?,
                "bias-correction" => self.no_bias_correction |= !parse_bool(key, v)?,
                "dynamic" => self.dynamic |= parse_bool(key, v)?,
                "seed" => fill(&mut self.seed, key, v)?,
                "reps" => fill(&mut self.reps, key, v)?,
                "dgp" => fill(&mut self.dgp, key, v)?,
                "n" => fill(&mut self.n, key, v)?,
                "t" => fill(&mut self.t, key, v)?,
                "workers" => fill(&mut self.workers, key, v)?,
                other => bail!("unknown config key '{other}'"),
            }
        }
        Ok(())
    }

    /// Applies the configuration file named by `--config`, if any.
    pub fn with_config_file(mut self) -> Result<Self> {
        if let Some(path) = self.config.clone() {
            let text = std::fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
            self.merge(&parse_config(&text).with_context(|| format!("in {}", path.display()))?)?;
        }
        Ok(self)
    }

    pub fn input(&self) -> Result<&Path> {
        self.input.as_deref().ok_or_else(|| anyhow!("--input is required"))
    }

    pub fn output_dir(&self) -> Result<&Path> {
        self.output_dir.as_deref().ok_or_else(|| anyhow!("--output-dir is required"))
    }

    pub fn workers(&self) -> Result<usize> {
        match self.workers {
            Some(0) => bail!("--workers must be at least 1"),
            Some(w) => Ok(w),
            None => Ok(1),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_file() {
        let map = parse_config("# run\nr0 = 2\nvarsigma=auto  # default\n\nkernel = none\nmax_breaks = 3\n").unwrap();
        assert_eq!(map["r0"], "2");
        assert_eq!(map["varsigma"], "auto");
        assert_eq!(map["max-breaks"], "3");
        assert!(parse_config("r0 2").is_err());
        assert!(parse_config("r0 = 1\nr0 = 2").is_err());
    }

    #[test]
    fn flags_win_over_file() {
        let mut o = Options { r0: Some(Auto::Value(3)), ..Default::default() };
        o.merge(&parse_config("r0 = 1\nepsilon = 0.2\nkernel = none\nbias-correction = false\nvarsigma = auto").unwrap()).unwrap();
        assert_eq!(o.r0, Some(Auto::Value(3)));
        assert_eq!(o.epsilon, Some(0.2));
        assert_eq!(o.kernel, Some(KernelArg::None));
        assert_eq!(o.varsigma, Some(Auto::Auto));
        assert!(o.no_bias_correction);
    }

    #[test]
    fn bad_values_are_rejected() {
        let mut o = Options::default();
        assert!(o.merge(&parse_config("r0 = many").unwrap()).is_err());
        assert!(o.merge(&parse_config("colour = red").unwrap()).is_err());
        assert!(o.merge(&parse_config("kernel = parzen").unwrap()).is_err());
        assert!(o.merge(&parse_config("dynamic = yes").unwrap()).is_err());
    }
}
