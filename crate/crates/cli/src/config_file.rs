//! Flat `key = value` config files. Lines starting with `#` are comments;
//! CLI flags override file values.

use std::path::Path;

use anyhow::{bail, Context, Result};
use roigraph_core::config::PipelineConfig;

pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config from {}", path.display()))?;
    let mut cfg = PipelineConfig::default();
    apply_str(&mut cfg, &text).with_context(|| format!("in {}", path.display()))?;
    Ok(cfg)
}

pub fn apply_str(cfg: &mut PipelineConfig, text: &str) -> Result<()> {
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("line {}: expected `key = value`, found `{raw}`", i + 1);
        };
        cfg.set(key.trim(), value.trim())
            .map_err(|e| anyhow::anyhow!("line {}: {e}", i + 1))?;
    }
    Ok(())
}

/// Applies `key=value` overrides from the command line, flags winning over
/// whatever the file said.
pub fn apply_overrides(cfg: &mut PipelineConfig, overrides: &[String]) -> Result<()> {
    for item in overrides {
        let Some((key, value)) = item.split_once('=') else {
            bail!("override `{item}` is not of the form key=value");
        };
        cfg.set(key.trim(), value.trim())
            .map_err(|e| anyhow::anyhow!("{e}"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use roigraph_core::sampling::SamplingStrategy;

    #[test]
    fn file_text_parses_with_comments() {
        let mut cfg = PipelineConfig::default();
        apply_str(
            &mut cfg,
            "# tuning\nsigma = 0.6\nstrategy = fps\n\niter_dims = 16,16\n",
        )
        .unwrap();
        assert_eq!(cfg.sigma, 0.6);
        assert_eq!(cfg.strategy, SamplingStrategy::Fps);
        assert_eq!(cfg.iter_dims, vec![16, 16]);
    }

    #[test]
    fn bad_lines_are_rejected_with_position() {
        let mut cfg = PipelineConfig::default();
        let err = apply_str(&mut cfg, "sigma = 0.5\nwhat\n").unwrap_err();
        assert!(format!("{err}").contains("line 2"));
        let err = apply_str(&mut cfg, "unknown_key = 3\n").unwrap_err();
        assert!(format!("{err:#}").contains("unknown_key"));
    }

    #[test]
    fn overrides_win() {
        let mut cfg = PipelineConfig::default();
        apply_str(&mut cfg, "sigma = 0.6\n").unwrap();
        apply_overrides(&mut cfg, &["sigma=0.8".to_string()]).unwrap();
        assert_eq!(cfg.sigma, 0.8);
        assert!(apply_overrides(&mut cfg, &["nope".to_string()]).is_err());
    }
}
