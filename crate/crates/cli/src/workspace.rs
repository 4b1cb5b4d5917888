//! Backends, inputs and the run directory for one invocation.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use kfocus::domain::{load_dataset, PipelineConfig, Sample, SelectorKind, Split};
use kfocus::evaluation::{evaluate_with, Evaluation, ReportHeader};
use kfocus::gateway::http::{HttpChatBackend, HttpEmbedBackend, HttpSettings};
use kfocus::gateway::{
    BackendReply, ChatRequest, CompletionBackend, EmbeddingBackend, Gateway, MockScript, ResponseCache,
    TemplateSet,
};
use kfocus::pipeline::{config_digest, identity, Pipeline, SampleTrace};
use kfocus::reasoner::{load_neighbors, ExampleSelector};
use kfocus::retrieval::KnowledgeIndex;
use kfocus::Error;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::settings::Settings;

pub const API_KEY_ENV: &str = "KFOCUS_API_KEY";

/// Stands in for a capability that was not configured.
struct Unconfigured(&'static str);

impl CompletionBackend for Unconfigured {
    fn id(&self) -> &str {
        "none"
    }
    fn model(&self) -> &str {
        "none"
    }
    fn supports_logprobs(&self) -> bool {
        true
    }
    fn complete(&self, _: &ChatRequest<'_>) -> kfocus::Result<BackendReply> {
        Err(Error::Config(format!("no {} backend configured", self.0)))
    }
}

impl EmbeddingBackend for Unconfigured {
    fn id(&self) -> &str {
        "none"
    }
    fn model(&self) -> &str {
        "none"
    }
    fn dim(&self) -> Option<usize> {
        None
    }
    fn embed(&self, _: &str) -> kfocus::Result<Vec<f32>> {
        Err(Error::Config(format!("no {} backend configured", self.0)))
    }
}

pub fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> kfocus::Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::Config(format!("--{flag} is required for this command")))
}

pub fn build_gateway(settings: &Settings) -> kfocus::Result<Gateway> {
    let b = &settings.backends;
    let builder = if let Some(script) = &b.mock_script {
        Gateway::mock(MockScript::load(script)?)
    } else {
        let api_key = std::env::var(API_KEY_ENV).ok();
        let http = |url: &str, model: &str| HttpSettings {
            api_key: api_key.clone(),
            timeout: Duration::from_secs(b.timeout_secs),
            retries: b.retries,
            ..HttpSettings::new(url, model)
        };
        let chat: Arc<dyn CompletionBackend> = match &b.chat_url {
            Some(url) => {
                let backend = HttpChatBackend::new(http(url, &b.chat_model));
                Arc::new(if b.logprobs { backend } else { backend.without_logprobs() })
            }
            None => Arc::new(Unconfigured("chat")),
        };
        let vision: Arc<dyn CompletionBackend> = match (&b.vision_url, &b.chat_url) {
            (Some(url), _) | (None, Some(url)) => Arc::new(HttpChatBackend::new(http(url, &b.vision_model))),
            (None, None) => Arc::new(Unconfigured("vision")),
        };
        let embed: Arc<dyn EmbeddingBackend> = match &b.embed_url {
            Some(url) => Arc::new(HttpEmbedBackend::new(http(url, &b.embed_model), b.embed_dim)),
            None => Arc::new(Unconfigured("embedding")),
        };
        Gateway::builder(chat, embed).vision(vision)
    };
    let mut builder = builder.parallelism(b.parallelism);
    if let Some(dir) = &settings.paths.cache_dir {
        builder = builder.cache(ResponseCache::open(dir)?);
    }
    if let Some(root) = &settings.paths.image_root {
        builder = builder.image_root(root);
    }
    Ok(builder.build())
}

pub struct Inputs {
    pub templates: TemplateSet,
    pub samples: Vec<Sample>,
    pub pool: Vec<Sample>,
    pub index: Option<KnowledgeIndex>,
}

impl Inputs {
    pub fn load(settings: &Settings) -> kfocus::Result<Self> {
        let templates = match &settings.paths.templates {
            Some(p) => TemplateSet::load(p)?,
            None => TemplateSet::default(),
        };
        let all = load_dataset(required(&settings.paths.dataset, "dataset")?)?;
        let mut pool: Vec<Sample> = all.iter().filter(|s| s.split == Split::TrainPool).cloned().collect();
        if let Some(p) = &settings.paths.pool {
            pool.extend(load_dataset(p)?.into_iter().map(|mut s| {
                s.split = Split::TrainPool;
                s
            }));
        }
        let samples = all.into_iter().filter(|s| s.split == Split::Eval).collect();
        let index = if settings.pipeline.toggles.knowledge {
            let index_path = required(&settings.paths.index, "index")?;
            let corpus_path = required(&settings.paths.corpus, "corpus")?;
            Some(KnowledgeIndex::open(index_path, corpus_path)?)
        } else {
            None
        };
        Ok(Self {
            templates,
            samples,
            pool,
            index,
        })
    }

    pub fn selector(&self, settings: &Settings, gateway: &Gateway) -> kfocus::Result<ExampleSelector> {
        match settings.pipeline.selector {
            SelectorKind::PrecomputedNeighbors => {
                let neighbors = match &settings.paths.neighbors {
                    Some(p) => load_neighbors(p)?,
                    None if settings.pipeline.n == 0 => Default::default(),
                    None => return Err(Error::Config("--neighbors is required by the precomputed selector".into())),
                };
                Ok(ExampleSelector::precomputed(&self.pool, neighbors))
            }
            SelectorKind::EmbeddingSimilarity => ExampleSelector::embedding(&self.pool, gateway),
        }
    }

    pub fn config_digest(&self, config: &PipelineConfig, gateway: &Gateway) -> String {
        config_digest(config, &self.templates, gateway, self.index.as_ref())
    }
}

#[derive(Serialize, serde::Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub command_line: Vec<String>,
    pub config_digest: String,
    pub settings_digest: String,
    pub corpus_digest: Option<String>,
    pub template_versions: Vec<String>,
    pub identity: Vec<String>,
    pub seed: u64,
    pub started_at_unix: u64,
    pub tool_version: String,
    pub settings: Settings,
}

pub fn atomic_write(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    /// Creates the directory and writes `manifest.json`, unless a manifest for the same
    /// configuration already exists (a resumed run keeps the original).
    pub fn open(
        root: &Path,
        command: &str,
        settings: &Settings,
        inputs: &Inputs,
        gateway: &Gateway,
    ) -> anyhow::Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::Io {
            path: root.to_path_buf(),
            source: e,
        })?;
        let digest = inputs.config_digest(&settings.pipeline, gateway);
        let manifest_path = root.join("manifest.json");
        if let Ok(existing) = fs::read(&manifest_path) {
            let old: RunManifest = serde_json::from_slice(&existing)
                .map_err(|e| Error::Config(format!("{}: {e}", manifest_path.display())))?;
            if old.config_digest != digest || old.command != command {
                return Err(Error::Config(format!(
                    "run directory {} holds a different run ({} with config {}); use a fresh --run-dir",
                    root.display(),
                    old.command,
                    &old.config_digest[..12]
                ))
                .into());
            }
            tracing::info!(dir = %root.display(), "resuming run");
        } else {
            let manifest = RunManifest {
                command: command.to_string(),
                command_line: std::env::args().collect(),
                config_digest: digest,
                settings_digest: settings.digest(),
                corpus_digest: inputs.index.as_ref().map(|i| i.corpus_digest().to_string()),
                template_versions: inputs.templates.versions(),
                identity: identity(&inputs.templates, gateway, inputs.index.as_ref()),
                seed: settings.pipeline.seed,
                started_at_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                settings: settings.clone(),
            };
            atomic_write(&manifest_path, &serde_json::to_vec_pretty(&manifest)?)?;
        }
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn trace_path(&self, config_digest: &str, sample_id: &str) -> PathBuf {
        let name = hex::encode(Sha256::digest(sample_id.as_bytes()));
        self.root
            .join("traces")
            .join(config_digest)
            .join(format!("{}.json", &name[..32]))
    }

    /// Evaluates `samples`, reusing any per-sample trace already stored for this configuration.
    pub fn evaluate(&self, pipeline: &Pipeline<'_>, samples: &[Sample], header: ReportHeader) -> anyhow::Result<Evaluation> {
        let digest = header.config_digest.clone();
        let dir = self.root.join("traces").join(&digest);
        fs::create_dir_all(&dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        let eval = evaluate_with(samples, header, pipeline.strict, |sample| {
            let path = self.trace_path(&digest, &sample.sample_id);
            if let Ok(bytes) = fs::read(&path) {
                match serde_json::from_slice::<SampleTrace>(&bytes) {
                    Ok(t) if t.sample_id == sample.sample_id && t.config_digest == digest => return Ok(t),
                    _ => tracing::warn!(path = %path.display(), "ignoring unreadable stored trace"),
                }
            }
            let trace = pipeline.run_sample(sample)?;
            let bytes = serde_json::to_vec(&trace).expect("trace serializes");
            atomic_write(&path, &bytes).map_err(|e| Error::Config(format!("{e:#}")))?;
            Ok(trace)
        })?;
        Ok(eval)
    }

    /// `traces.jsonl` and `answers.jsonl` in sample order, under an optional prefix.
    pub fn write_outputs(&self, prefix: &str, eval: &Evaluation) -> anyhow::Result<()> {
        let mut traces = Vec::new();
        let mut answers = Vec::new();
        for t in &eval.traces {
            serde_json::to_writer(&mut traces, t)?;
            traces.write_all(b"\n")?;
            serde_json::to_writer(
                &mut answers,
                &serde_json::json!({"id": t.sample_id, "answer": t.answer, "knowledge_used": t.knowledge_used}),
            )?;
            answers.write_all(b"\n")?;
        }
        atomic_write(&self.path(&format!("{prefix}traces.jsonl")), &traces)?;
        atomic_write(&self.path(&format!("{prefix}answers.jsonl")), &answers)?;
        Ok(())
    }
}
