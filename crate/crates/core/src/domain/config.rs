use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// How the `h` knowledge segments are drawn from the filtered set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    #[default]
    Head,
    SeededUniform,
}

/// How token log-probabilities are folded into the confidence statistic `f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Sum,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorKind {
    #[default]
    PrecomputedNeighbors,
    EmbeddingSimilarity,
}

/// Which pipeline stages are active. `knowledge = false` is the LLM-only setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageToggles {
    pub knowledge: bool,
    pub lnq: bool,
    pub krf: bool,
    pub ski: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self {
            knowledge: true,
            lnq: true,
            krf: true,
            ski: true,
        }
    }
}

impl StageToggles {
    pub const BASELINE: Self = Self {
        knowledge: true,
        lnq: false,
        krf: false,
        ski: false,
    };
    pub const LNQ: Self = Self {
        lnq: true,
        ..Self::BASELINE
    };
    pub const LNQ_KRF: Self = Self {
        krf: true,
        ..Self::LNQ
    };
    pub const FULL: Self = Self {
        ski: true,
        ..Self::LNQ_KRF
    };
    pub const LLM_ONLY: Self = Self {
        knowledge: false,
        lnq: false,
        krf: false,
        ski: false,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Documents retrieved per query.
    pub r: usize,
    /// Knowledge segments injected into the answer prompt.
    pub h: usize,
    /// Confidence threshold; knowledge is used when `s_max <= tau`.
    pub tau: f64,
    /// Ensemble size (number of example sets).
    pub m: usize,
    /// In-context examples per prompt.
    pub n: usize,
    pub seed: u64,
    pub toggles: StageToggles,
    pub keyword_cap: usize,
    pub segment_cap: usize,
    pub sample_mode: SampleMode,
    pub aggregation: Aggregation,
    pub selector: SelectorKind,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            r: 20,
            h: 7,
            tau: 0.8,
            m: 5,
            n: 10,
            seed: 0,
            toggles: StageToggles::default(),
            keyword_cap: 8,
            segment_cap: 64,
            sample_mode: SampleMode::Head,
            aggregation: Aggregation::Sum,
            selector: SelectorKind::PrecomputedNeighbors,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |param: &str, message: &str| {
            Err(Error::InvalidValue {
                param: param.into(),
                message: message.into(),
            })
        };
        if self.r == 0 {
            return bad("r", "must be >= 1");
        }
        if self.h == 0 {
            return bad("h", "must be >= 1");
        }
        if self.h > self.segment_cap {
            return bad("h", "exceeds segment_cap");
        }
        if self.m == 0 {
            return bad("m", "must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau", "must lie in [0, 1]");
        }
        if self.keyword_cap == 0 {
            return bad("keyword_cap", "must be >= 1");
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON encoding of the config plus any extra
    /// identity strings (template versions, backend ids).
    pub fn digest(&self, extra: &[&str]) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("config serializes"));
        for e in extra {
            h.update([0u8]);
            h.update(e.as_bytes());
        }
        hex::encode(h.finalize())
    }
}
