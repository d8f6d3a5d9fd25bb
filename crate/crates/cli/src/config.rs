use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

/// Numeric parameters shared by the estimate commands. Every field may also come
/// from the JSON file given with `--config`; flags win.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    /// Number of paths in the bundle
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<u32>,
    /// Weight exponent
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Scales, as `a..b` (inclusive) or a comma list
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scales: Option<String>,
    /// Samples per scale or per configuration
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    /// Particles in each population
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub particles: Option<usize>,
    /// Power iteration steps, or walk steps for the dimension commands
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// Inner Monte Carlo samples per extension (0 = exact)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inner_samples: Option<usize>,
    /// Lattice rows per unit of log r
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rows_per_unit: Option<usize>,
    /// Lattice half-width in cells
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extent: Option<usize>,
    /// Side of the walk's bounding box in cells
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub span: Option<f64>,
    /// Checkpoint windows for pioneer cells
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<usize>,
    /// Independent walks
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub walks: Option<usize>,
    /// Starting height in the half-strip
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
    /// Histogram bins
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    /// Number of random configurations
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub configs: Option<usize>,
    /// Master seed
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Output directory (default: $BROWNLAB_OUT, else the working directory)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// File name prefix for outputs (default: the command name)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prefix: Option<String>,
}

impl Params {
    /// Flags over file values.
    pub fn merged(self, file: Option<&Path>) -> Result<Self> {
        let Some(path) = file else { return Ok(self) };
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut base: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let Some(obj) = base.as_object_mut() else {
            bail!("{}: expected a JSON object", path.display());
        };
        if let serde_json::Value::Object(flags) = serde_json::to_value(&self)? {
            for (k, v) in flags {
                if !v.is_null() {
                    obj.insert(k, v);
                }
            }
        }
        serde_json::from_value(base)
            .with_context(|| format!("invalid parameters in {}", path.display()))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os("BROWNLAB_OUT").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."))
    }
}

/// `a..b` inclusive, or `a,b,c`.
pub fn parse_list(s: &str) -> Result<Vec<u32>> {
    let v: Vec<u32> = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u32, u32) = (a.trim().parse()?, b.trim().parse()?);
        if a > b {
            bail!("empty range {s}");
        }
        (a..=b).collect()
    } else {
        s.split(',')
            .map(|t| t.trim().parse())
            .collect::<Result<_, _>>()?
    };
    if v.is_empty() || v.windows(2).any(|w| w[0] >= w[1]) {
        bail!("expected increasing values, got {s}");
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists() {
        assert_eq!(parse_list("2..6").unwrap(), vec![2, 3, 4, 5, 6]);
        assert_eq!(parse_list("3, 6,9").unwrap(), vec![3, 6, 9]);
        assert!(parse_list("6..2").is_err());
        assert!(parse_list("3,3").is_err());
        assert!(parse_list("x").is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("c.json");
        std::fs::write(&f, r#"{"k": 2, "lambda": 0.5, "samples": 10}"#).unwrap();
        let p = Params {
            lambda: Some(1.0),
            ..Default::default()
        }
        .merged(Some(&f))
        .unwrap();
        assert_eq!((p.k, p.lambda, p.samples), (Some(2), Some(1.0), Some(10)));
        std::fs::write(&f, r#"{"lamda": 1}"#).unwrap();
        assert!(Params::default().merged(Some(&f)).is_err());
    }
}
