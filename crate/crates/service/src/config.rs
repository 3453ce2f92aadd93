use std::path::PathBuf;

use stitchwork_core::preview::{DEFAULT_PREVIEW_ITERATIONS, DEFAULT_WORKING_SIZE};
use stitchwork_core::{Error, Result};

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_MAX_BODY_BYTES: usize = 4 * 1024 * 1024;
pub const DEFAULT_MAX_PIXELS: usize = 1024 * 1024;
/// Upper bound on requested style iterations.
pub const MAX_ITERATIONS: usize = 2000;

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub port: u16,
    /// Projects and jobs live under this directory.
    pub data_dir: PathBuf,
    pub stitch_dir: PathBuf,
    /// EmbGAN checkpoint used for `embgan` previews; other checkpoints in the
    /// same directory may be selected per request by file name.
    pub checkpoint: Option<PathBuf>,
    /// Optional directory served at `/` (the browser demo).
    pub static_dir: Option<PathBuf>,
    pub max_body_bytes: usize,
    pub max_pixels: usize,
    pub workers: usize,
    pub working_size: usize,
    pub preview_iterations: usize,
}

/// One fewer than the available cores, at least one.
pub fn default_workers() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get().saturating_sub(1))
        .unwrap_or(1)
        .max(1)
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            port: DEFAULT_PORT,
            data_dir: PathBuf::from("stitchwork-data"),
            stitch_dir: PathBuf::from("stitches"),
            checkpoint: None,
            static_dir: None,
            max_body_bytes: DEFAULT_MAX_BODY_BYTES,
            max_pixels: DEFAULT_MAX_PIXELS,
            workers: default_workers(),
            working_size: DEFAULT_WORKING_SIZE,
            preview_iterations: DEFAULT_PREVIEW_ITERATIONS,
        }
    }
}

impl ServiceConfig {
    /// Overrides fields from `STITCHWORK_*` variables.
    pub fn apply_env<I, K, V>(mut self, vars: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: Into<String>,
    {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::invalid(format!("{key}: cannot parse '{v}'")))
        }
        for (k, v) in vars {
            let (k, v) = (k.as_ref(), v.into());
            match k {
                "STITCHWORK_PORT" => self.port = num(k, &v)?,
                "STITCHWORK_DATA_DIR" => self.data_dir = v.into(),
                "STITCHWORK_STITCH_DIR" => self.stitch_dir = v.into(),
                "STITCHWORK_CHECKPOINT" => self.checkpoint = Some(v.into()),
                "STITCHWORK_STATIC_DIR" => self.static_dir = Some(v.into()),
                "STITCHWORK_MAX_BODY_BYTES" => self.max_body_bytes = num(k, &v)?,
                "STITCHWORK_MAX_PIXELS" => self.max_pixels = num(k, &v)?,
                "STITCHWORK_WORKERS" => self.workers = num(k, &v)?,
                _ => {}
            }
        }
        self.validate()?;
        Ok(self)
    }

    pub fn from_env() -> Result<Self> {
        Self::default().apply_env(std::env::vars())
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::invalid("at least one worker is required"));
        }
        if self.max_pixels == 0 || self.max_body_bytes == 0 {
            return Err(Error::invalid("size limits must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_overrides_defaults() {
        let cfg = ServiceConfig::default()
            .apply_env([
                ("STITCHWORK_PORT", "9001"),
                ("STITCHWORK_STITCH_DIR", "/tmp/s"),
                ("STITCHWORK_CHECKPOINT", "/tmp/c.stwt"),
                ("UNRELATED", "x"),
            ])
            .unwrap();
        assert_eq!(cfg.port, 9001);
        assert_eq!(cfg.stitch_dir, PathBuf::from("/tmp/s"));
        assert_eq!(cfg.checkpoint, Some(PathBuf::from("/tmp/c.stwt")));
        assert_eq!(cfg.max_body_bytes, 4 * 1024 * 1024);
        assert!(ServiceConfig::default().apply_env([("STITCHWORK_PORT", "x")]).is_err());
        assert!(ServiceConfig::default().apply_env([("STITCHWORK_WORKERS", "0")]).is_err());
    }
}
