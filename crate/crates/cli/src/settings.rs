//! Effective settings: config file values overridden by command-line flags.

use std::path::{Path, PathBuf};

use clap::Args;
use kfocus::domain::PipelineConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    /// Extra file of example-pool samples (the dataset's own `train_pool` records are used too).
    pub pool: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub neighbors: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub run_dir: Option<PathBuf>,
    pub image_root: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Backends {
    pub mock_script: Option<PathBuf>,
    pub chat_url: Option<String>,
    pub chat_model: String,
    pub vision_url: Option<String>,
    pub vision_model: String,
    pub embed_url: Option<String>,
    pub embed_model: String,
    pub embed_dim: Option<usize>,
    /// Whether the chat endpoint returns token log-probabilities.
    pub logprobs: bool,
    pub parallelism: usize,
    pub timeout_secs: u64,
    pub retries: u32,
}

impl Default for Backends {
    fn default() -> Self {
        Self {
            mock_script: None,
            chat_url: None,
            chat_model: "llama-3-8b-instruct".into(),
            vision_url: None,
            vision_model: "llama-3.2-11b-vision-instruct".into(),
            embed_url: None,
            embed_model: "contriever".into(),
            embed_dim: None,
            logprobs: true,
            parallelism: 8,
            timeout_secs: 120,
            retries: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunOptions {
    pub strict: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { strict: true }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub pipeline: PipelineConfig,
    pub paths: Paths,
    pub backends: Backends,
    pub run: RunOptions,
}

impl Settings {
    pub fn load(path: &Path) -> kfocus::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| kfocus::Error::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| kfocus::Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("settings serialize")
    }

    /// SHA-256 of the canonical JSON form of the whole effective configuration.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("settings serialize")))
    }
}

/// Flags shared by every command. Unset flags leave the config file value in place.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML config file with [pipeline], [paths], [backends] and [run] sections
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    pub pool: Option<PathBuf>,
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    pub index: Option<PathBuf>,
    #[arg(long, global = true)]
    pub neighbors: Option<PathBuf>,
    #[arg(long, global = true)]
    pub templates: Option<PathBuf>,
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub run_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub image_root: Option<PathBuf>,

    /// Scripted mock backend for all three capabilities
    #[arg(long, global = true)]
    pub mock_script: Option<PathBuf>,
    #[arg(long, global = true)]
    pub chat_url: Option<String>,
    #[arg(long, global = true)]
    pub chat_model: Option<String>,
    #[arg(long, global = true)]
    pub vision_url: Option<String>,
    #[arg(long, global = true)]
    pub vision_model: Option<String>,
    #[arg(long, global = true)]
    pub embed_url: Option<String>,
    #[arg(long, global = true)]
    pub embed_model: Option<String>,
    #[arg(long, global = true)]
    pub embed_dim: Option<usize>,
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,

    #[arg(long, global = true)]
    pub r: Option<usize>,
    #[arg(long, global = true)]
    pub h: Option<usize>,
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    #[arg(long, global = true)]
    pub m: Option<usize>,
    #[arg(long, global = true)]
    pub n: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_name = "BOOL")]
    pub toggle_lnq: Option<bool>,
    #[arg(long, global = true, value_name = "BOOL")]
    pub toggle_krf: Option<bool>,
    #[arg(long, global = true, value_name = "BOOL")]
    pub toggle_ski: Option<bool>,
    /// Disable retrieval entirely (answer from the visual context alone)
    #[arg(long, global = true)]
    pub no_knowledge: bool,

    /// Abort on the first failing sample (default)
    #[arg(long, global = true, conflicts_with = "lenient")]
    pub strict: bool,
    /// Record failing samples and continue
    #[arg(long, global = true)]
    pub lenient: bool,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

impl Overrides {
    pub fn resolve(&self) -> kfocus::Result<Settings> {
        let mut s = match &self.config {
            Some(path) => Settings::load(path)?,
            None => Settings::default(),
        };
        let o = self.clone();
        set_opt(&mut s.paths.dataset, o.dataset);
        set_opt(&mut s.paths.pool, o.pool);
        set_opt(&mut s.paths.corpus, o.corpus);
        set_opt(&mut s.paths.index, o.index);
        set_opt(&mut s.paths.neighbors, o.neighbors);
        set_opt(&mut s.paths.templates, o.templates);
        set_opt(&mut s.paths.cache_dir, o.cache_dir);
        set_opt(&mut s.paths.run_dir, o.run_dir);
        set_opt(&mut s.paths.image_root, o.image_root);

        set_opt(&mut s.backends.mock_script, o.mock_script);
        set_opt(&mut s.backends.chat_url, o.chat_url);
        set(&mut s.backends.chat_model, o.chat_model);
        set_opt(&mut s.backends.vision_url, o.vision_url);
        set(&mut s.backends.vision_model, o.vision_model);
        set_opt(&mut s.backends.embed_url, o.embed_url);
        set(&mut s.backends.embed_model, o.embed_model);
        set_opt(&mut s.backends.embed_dim, o.embed_dim);
        set(&mut s.backends.parallelism, o.parallelism);

        let p = &mut s.pipeline;
        set(&mut p.r, o.r);
        set(&mut p.h, o.h);
        set(&mut p.tau, o.tau);
        set(&mut p.m, o.m);
        set(&mut p.n, o.n);
        set(&mut p.seed, o.seed);
        set(&mut p.toggles.lnq, o.toggle_lnq);
        set(&mut p.toggles.krf, o.toggle_krf);
        set(&mut p.toggles.ski, o.toggle_ski);
        if o.no_knowledge {
            p.toggles.knowledge = false;
        }

        if o.strict {
            s.run.strict = true;
        }
        if o.lenient {
            s.run.strict = false;
        }
        s.pipeline.validate()?;
        if s.backends.parallelism == 0 {
            return Err(kfocus::Error::InvalidValue {
                param: "parallelism".into(),
                message: "must be >= 1".into(),
            });
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_without_file() {
        let s = Overrides::default().resolve().unwrap();
        assert_eq!((s.pipeline.r, s.pipeline.h, s.pipeline.tau, s.pipeline.m, s.pipeline.n), (20, 7, 0.8, 5, 10));
        assert!(s.run.strict);
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[pipeline]\nr = 5\ntau = 0.5\n[pipeline.toggles]\nski = false\n[run]\nstrict = false\n").unwrap();
        let o = Overrides {
            config: Some(path),
            r: Some(9),
            toggle_krf: Some(false),
            ..Default::default()
        };
        let s = o.resolve().unwrap();
        assert_eq!(s.pipeline.r, 9);
        assert_eq!(s.pipeline.tau, 0.5);
        assert!(!s.pipeline.toggles.ski && !s.pipeline.toggles.krf && s.pipeline.toggles.lnq);
        assert!(!s.run.strict);
        let round: Settings = toml::from_str(&s.to_toml()).unwrap();
        assert_eq!(round, s);
    }

    #[test]
    fn rejects_bad_values_and_unknown_keys() {
        let o = Overrides {
            tau: Some(2.0),
            ..Default::default()
        };
        assert!(o.resolve().is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[pipeline]\nrr = 5\n").unwrap();
        let o = Overrides {
            config: Some(path),
            ..Default::default()
        };
        assert!(matches!(o.resolve(), Err(kfocus::Error::Config(_))));
    }
}
