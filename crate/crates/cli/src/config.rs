//! Run configuration: input paths, seed, stack settings and output dir.

use std::path::{Path, PathBuf};

use orchardcast_core::io;
use orchardcast_core::stack::{Preset, StackConfig};
use orchardcast_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const DEFAULT_SEED: u64 = 42;
pub const CONFIG_FILE: &str = "orchardcast.toml";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub climate_dir: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub yields: Option<PathBuf>,
    pub phenology: Option<PathBuf>,
    pub roster: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub preset: Option<Preset>,
    #[serde(default)]
    pub paths: Paths,
    /// Full stack settings; overrides `preset` when present.
    pub stack: Option<StackConfig>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::config(format!("run config `{}` not found", path.display())));
        }
        let text = io::read_text(path)?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {}", path.display(), e.message())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths();
        cfg.check_paths()?;
        Ok(cfg)
    }

    pub fn load_optional(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(RunConfig::default()),
        }
    }

    fn resolve(&self, p: &mut Option<PathBuf>) {
        if let Some(path) = p {
            if path.is_relative() {
                *path = self.base_dir.join(&*path);
            }
        }
    }

    fn resolve_paths(&mut self) {
        let mut paths = std::mem::take(&mut self.paths);
        let mut out = self.out_dir.take();
        for p in [
            &mut paths.climate_dir,
            &mut paths.mask,
            &mut paths.yields,
            &mut paths.phenology,
            &mut paths.roster,
            &mut out,
        ] {
            self.resolve(p);
        }
        self.paths = paths;
        self.out_dir = out;
    }

    /// Every input path named in the file must exist.
    fn check_paths(&self) -> Result<()> {
        let p = &self.paths;
        for (name, path) in [
            ("climate_dir", &p.climate_dir),
            ("mask", &p.mask),
            ("yields", &p.yields),
            ("phenology", &p.phenology),
            ("roster", &p.roster),
        ] {
            if let Some(path) = path {
                if !path.exists() {
                    return Err(Error::config(format!("paths.{name} `{}` does not exist", path.display())));
                }
            }
        }
        Ok(())
    }

    pub fn seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.seed).unwrap_or(DEFAULT_SEED)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    /// Output path: the flag if given, else `<out_dir>/<default_name>`.
    pub fn output(&self, flag: Option<PathBuf>, default_name: &str) -> PathBuf {
        flag.unwrap_or_else(|| self.out_dir().join(default_name))
    }

    /// An input path: the flag if given, else the configured value.
    pub fn input(&self, flag: Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
        let p = flag.or_else(|| configured.clone()).ok_or_else(|| {
            Error::config(format!("no {what} given; pass the flag or set it in the run config"))
        })?;
        if !p.exists() {
            return Err(Error::config(format!("{what} `{}` does not exist", p.display())));
        }
        Ok(p)
    }

    /// Stack settings for `seed`: the explicit `[stack]` table, else the preset.
    pub fn stack_config(&self, preset_flag: Option<Preset>, seed: u64) -> StackConfig {
        match (&self.stack, preset_flag) {
            (Some(s), None) => StackConfig { seed, ..s.clone() },
            (_, Some(p)) => StackConfig::from_preset(p, seed),
            (None, None) => StackConfig::from_preset(self.preset.unwrap_or(Preset::HighQuality), seed),
        }
    }
}

/// Digest of any serializable settings, for output metadata.
pub fn digest_of<T: Serialize>(value: &T) -> String {
    io::digest(toml::to_string(value).unwrap_or_default().as_bytes())
}
