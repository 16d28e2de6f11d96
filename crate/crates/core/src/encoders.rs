//! Encodings of (age, gender) into input vectors.
//!
//! * `trad`: `[ln(1 + age), g]`
//! * `pe`: sinusoidal position code of the floored age with `g` added to
//!   every component
//! * `txt`: a sentence such as `Male, 75 years old` passed through a text
//!   embedder (remote service, or a hash-seeded fallback)

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Gender;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed;

pub const DEFAULT_TEMPLATE: &str = "{gender}, {age} years old";
pub const REMOTE_DIM: usize = 384;
pub const MAX_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Trad,
    Pe,
    Txt,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 3] = [EncoderKind::Trad, EncoderKind::Pe, EncoderKind::Txt];

    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::Trad => "trad",
            EncoderKind::Pe => "pe",
            EncoderKind::Txt => "txt",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "trad" => Some(EncoderKind::Trad),
            "pe" => Some(EncoderKind::Pe),
            "txt" => Some(EncoderKind::Txt),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderMode {
    Remote,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub text_template: String,
    pub embedder: EmbedderMode,
    pub fallback_dim: usize,
    pub remote_url: String,
    /// Degrade to the fallback embedder when the remote one is unreachable.
    pub allow_fallback: bool,
    pub timeout_ms: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            text_template: DEFAULT_TEMPLATE.to_string(),
            embedder: EmbedderMode::Fallback,
            fallback_dim: 16,
            remote_url: "http://127.0.0.1:8088".to_string(),
            allow_fallback: true,
            timeout_ms: 5_000,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || !self.d_model.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "d_model must be even and positive, got {}",
                self.d_model
            )));
        }
        if self.fallback_dim < 8 {
            return Err(Error::Config(format!(
                "fallback_dim must be >= 8, got {}",
                self.fallback_dim
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedVector<T> {
    pub kind: EncoderKind,
    pub values: Vec<T>,
}

impl<T> EncodedVector<T> {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

fn check_age(age: f64) -> Result<()> {
    if !(age >= 0.0) || !age.is_finite() {
        return Err(Error::Domain(format!(
            "age must be a finite non-negative number, got {age}"
        )));
    }
    Ok(())
}

pub fn encode_trad<T: Scalar>(age: f64, gender: Gender) -> Result<EncodedVector<T>> {
    check_age(age)?;
    Ok(EncodedVector {
        kind: EncoderKind::Trad,
        values: vec![T::of(age.ln_1p()), T::of(f64::from(gender.bit()))],
    })
}

pub fn encode_pe<T: Scalar>(age: f64, gender: Gender, d_model: usize) -> Result<EncodedVector<T>> {
    check_age(age)?;
    if d_model == 0 || !d_model.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "d_model must be even and positive, got {d_model}"
        )));
    }
    let pos = age.floor();
    let g = f64::from(gender.bit());
    let mut values = Vec::with_capacity(d_model);
    for i in 0..d_model / 2 {
        let angle = pos / 10_000f64.powf(2.0 * i as f64 / d_model as f64);
        values.push(T::of(angle.sin() + g));
        values.push(T::of(angle.cos() + g));
    }
    Ok(EncodedVector {
        kind: EncoderKind::Pe,
        values,
    })
}

/// Substitute `{age}` and `{gender}` (`Male` / `Female`) into `template`.
pub fn render_text(age: u32, gender: Gender, template: &str) -> String {
    template
        .replace("{age}", &age.to_string())
        .replace("{gender}", gender.label())
}

/// Unit-norm vector of `dim` standard normals drawn from a generator seeded
/// by a stable hash of `text`.
pub fn fallback_embed(text: &str, dim: usize) -> Vec<f64> {
    assert!(dim >= 8, "fallback embedding dimension must be >= 8");
    let mut rng = seed::rng(seed::stable_hash64(text.as_bytes()));
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut v {
        *x /= norm;
    }
    v
}

pub trait TextEmbedder: Send + Sync {
    fn dim(&self) -> usize;
    fn version(&self) -> String;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
}

#[derive(Debug, Clone)]
pub struct FallbackEmbedder {
    pub dim: usize,
}

impl TextEmbedder for FallbackEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn version(&self) -> String {
        format!("hash-normal-v1-d{}", self.dim)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| fallback_embed(t, self.dim)).collect())
    }
}

#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
    model_version: String,
}

#[derive(Debug, Deserialize)]
struct HealthResponse {
    #[serde(default)]
    model_version: String,
}

/// Client for the HTTP embedding service (`POST /embed`, `GET /health`).
pub struct RemoteEmbedder {
    base_url: String,
    agent: ureq::Agent,
    version: String,
}

impl RemoteEmbedder {
    /// Connect and confirm the service reports ready.
    pub fn connect(base_url: &str, timeout: Duration) -> Result<Self> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let base_url = base_url.trim_end_matches('/').to_string();
        let mut resp = agent
            .get(format!("{base_url}/health"))
            .call()
            .map_err(|e| Error::Transport(format!("{base_url}/health: {e}")))?;
        if resp.status().as_u16() != 200 {
            return Err(Error::Transport(format!(
                "{base_url}/health returned {}",
                resp.status().as_u16()
            )));
        }
        let health: HealthResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| Error::Transport(format!("bad /health body: {e}")))?;
        Ok(Self {
            base_url,
            agent,
            version: health.model_version,
        })
    }
}

impl TextEmbedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        REMOTE_DIM
    }

    fn version(&self) -> String {
        self.version.clone()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(MAX_BATCH) {
            let mut resp = self
                .agent
                .post(format!("{}/embed", self.base_url))
                .send_json(EmbedRequest { texts: chunk })
                .map_err(|e| Error::Transport(format!("{}/embed: {e}", self.base_url)))?;
            let status = resp.status().as_u16();
            if status != 200 {
                return Err(Error::Transport(format!("{}/embed returned {status}", self.base_url)));
            }
            let body: EmbedResponse = resp
                .body_mut()
                .read_json()
                .map_err(|e| Error::Transport(format!("bad /embed body: {e}")))?;
            if body.vectors.len() != chunk.len() {
                return Err(Error::Transport(format!(
                    "/embed returned {} vectors for {} texts",
                    body.vectors.len(),
                    chunk.len()
                )));
            }
            if body.vectors.iter().any(|v| v.len() != REMOTE_DIM) {
                return Err(Error::Transport(format!(
                    "/embed vectors are not {REMOTE_DIM}-dimensional"
                )));
            }
            if body.model_version != self.version && !self.version.is_empty() {
                return Err(Error::Transport(format!(
                    "model_version changed mid-run: {} -> {}",
                    self.version, body.model_version
                )));
            }
            out.extend(body.vectors);
        }
        Ok(out)
    }
}

/// Encoder bound to a configuration; resolves the text embedder once and
/// records any downgrade to the fallback.
pub struct Encoder {
    config: EncoderConfig,
    text: Box<dyn TextEmbedder>,
    downgrades: Mutex<Vec<String>>,
}

impl std::fmt::Debug for Encoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Encoder")
            .field("config", &self.config)
            .field("text_embedder", &self.text.version())
            .finish()
    }
}

impl Encoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut downgrades = Vec::new();
        let text: Box<dyn TextEmbedder> = match config.embedder {
            EmbedderMode::Fallback => Box::new(FallbackEmbedder {
                dim: config.fallback_dim,
            }),
            EmbedderMode::Remote => {
                match RemoteEmbedder::connect(&config.remote_url, Duration::from_millis(config.timeout_ms)) {
                    Ok(r) => Box::new(r),
                    Err(e) if config.allow_fallback => {
                        downgrades.push(format!("remote embedder unavailable ({e}); using fallback"));
                        Box::new(FallbackEmbedder {
                            dim: config.fallback_dim,
                        })
                    }
                    Err(e) => return Err(e),
                }
            }
        };
        Ok(Self {
            config,
            text,
            downgrades: Mutex::new(downgrades),
        })
    }

    /// Encoder with a caller-supplied text embedder.
    pub fn with_text_embedder(config: EncoderConfig, text: Box<dyn TextEmbedder>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            text,
            downgrades: Mutex::new(Vec::new()),
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn text_embedder_version(&self) -> String {
        self.text.version()
    }

    pub fn downgrades(&self) -> Vec<String> {
        self.downgrades.lock().map(|d| d.clone()).unwrap_or_default()
    }

    pub fn dim(&self, kind: EncoderKind) -> usize {
        match kind {
            EncoderKind::Trad => 2,
            EncoderKind::Pe => self.config.d_model,
            EncoderKind::Txt => self.text.dim(),
        }
    }

    pub fn encode_text<T: Scalar>(&self, age: f64, gender: Gender) -> Result<EncodedVector<T>> {
        let mut v = self.encode_batch::<T>(EncoderKind::Txt, &[(age, gender)])?;
        Ok(EncodedVector {
            kind: EncoderKind::Txt,
            values: v.pop().expect("one vector per input"),
        })
    }

    pub fn encode<T: Scalar>(&self, kind: EncoderKind, age: f64, gender: Gender) -> Result<EncodedVector<T>> {
        match kind {
            EncoderKind::Trad => encode_trad(age, gender),
            EncoderKind::Pe => encode_pe(age, gender, self.config.d_model),
            EncoderKind::Txt => self.encode_text(age, gender),
        }
    }

    /// Encode many (age, gender) pairs; text embeddings are requested once
    /// per distinct sentence.
    pub fn encode_batch<T: Scalar>(&self, kind: EncoderKind, inputs: &[(f64, Gender)]) -> Result<Vec<Vec<T>>> {
        match kind {
            EncoderKind::Trad | EncoderKind::Pe => inputs
                .iter()
                .map(|&(a, g)| self.encode::<T>(kind, a, g).map(|e| e.values))
                .collect(),
            EncoderKind::Txt => {
                let mut texts: Vec<String> = Vec::new();
                let mut index: HashMap<String, usize> = HashMap::new();
                let mut which = Vec::with_capacity(inputs.len());
                for &(age, g) in inputs {
                    check_age(age)?;
                    let t = render_text(age.floor() as u32, g, &self.config.text_template);
                    let next = texts.len();
                    let k = *index.entry(t.clone()).or_insert_with(|| {
                        texts.push(t);
                        next
                    });
                    which.push(k);
                }
                let vecs = self.text.embed(&texts)?;
                Ok(which
                    .into_iter()
                    .map(|k| vecs[k].iter().map(|&v| T::of(v)).collect())
                    .collect())
            }
        }
    }
}
