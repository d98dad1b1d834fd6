//! Run configuration and its `key = value` text representation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// How backend features are turned into vectors for the embedding loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmbeddingMode {
    /// Per-channel spatial mean, L2-normalized.
    Pooled,
    /// The whole feature map flattened, no normalization.
    Raw,
}

impl EmbeddingMode {
    fn as_str(self) -> &'static str {
        match self {
            EmbeddingMode::Pooled => "pooled",
            EmbeddingMode::Raw => "raw",
        }
    }
}

impl FromStr for EmbeddingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(EmbeddingMode::Pooled),
            "raw" => Ok(EmbeddingMode::Raw),
            other => Err(Error::config(format!("unknown embedding mode `{other}`"))),
        }
    }
}

/// Ablation arm: which interaction modules and losses are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arm {
    /// sSE at every scale, no embedding loss.
    Baseline,
    /// Efficient GC at scales 1 and 2, no embedding loss.
    Gcn,
    /// Efficient GC plus the discriminative embedding loss.
    GcnDe,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::Baseline, Arm::Gcn, Arm::GcnDe];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Baseline => "baseline",
            Arm::Gcn => "gcn",
            Arm::GcnDe => "gcn-de",
        }
    }

    /// `(gc_scales, de_loss_weight)` for this arm.
    pub fn settings(self) -> (BTreeSet<usize>, f64) {
        match self {
            Arm::Baseline => (BTreeSet::new(), 0.0),
            Arm::Gcn => ([1, 2].into_iter().collect(), 0.0),
            Arm::GcnDe => ([1, 2].into_iter().collect(), 1.0),
        }
    }
}

impl FromStr for Arm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Arm::Baseline),
            "gcn" => Ok(Arm::Gcn),
            "gcn-de" => Ok(Arm::GcnDe),
            other => Err(Error::config(format!(
                "unknown arm `{other}` (expected baseline, gcn or gcn-de)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub iterations_per_episode: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Rescale each step's gradient to at most this global L2 norm (0 disables).
    pub grad_clip: f64,
    pub seed: u64,
    pub image_size: (usize, usize),
    pub channel_widths: Vec<usize>,
    pub partition_factors: (usize, usize),
    pub de_loss_weight: f64,
    pub gc_scales: BTreeSet<usize>,
    pub threshold: f64,
    pub embedding: EmbeddingMode,
    /// Write a checkpoint every this many episodes (0 disables periodic checkpoints).
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            epochs: 10,
            episodes_per_epoch: 25,
            iterations_per_episode: 1,
            learning_rate: 1e-2,
            momentum: 0.0,
            grad_clip: 0.0,
            seed: 0,
            image_size: (64, 64),
            channel_widths: vec![16, 32, 64, 128],
            partition_factors: (4, 4),
            de_loss_weight: 1.0,
            gc_scales: [1, 2].into_iter().collect(),
            threshold: 0.5,
            embedding: EmbeddingMode::Pooled,
            checkpoint_every: 0,
        }
    }
}

const KEYS: &[&str] = &[
    "epochs",
    "episodes_per_epoch",
    "iterations_per_episode",
    "learning_rate",
    "momentum",
    "grad_clip",
    "seed",
    "image_size",
    "channel_widths",
    "partition_factors",
    "de_loss_weight",
    "gc_scales",
    "threshold",
    "embedding",
    "checkpoint_every",
];

impl RunConfig {
    /// Paper-scale training length for the MR arm (25 epochs of 25 episodes).
    pub fn paper_mr() -> Self {
        RunConfig {
            epochs: 25,
            ..RunConfig::default()
        }
    }

    /// Paper-scale training length for the CT arm (40 epochs of 25 episodes).
    pub fn paper_ct() -> Self {
        RunConfig {
            epochs: 40,
            ..RunConfig::default()
        }
    }

    /// Switches modules and the DE term to match `arm`. A positive
    /// configured DE weight is kept for the arm that uses the loss.
    pub fn with_arm(mut self, arm: Arm) -> Self {
        let (gc, de) = arm.settings();
        self.gc_scales = gc;
        if de == 0.0 || self.de_loss_weight <= 0.0 {
            self.de_loss_weight = de;
        }
        self
    }

    pub fn total_iterations(&self) -> usize {
        self.epochs * self.episodes_per_epoch * self.iterations_per_episode
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("epochs", self.epochs),
            ("episodes_per_epoch", self.episodes_per_epoch),
            ("iterations_per_episode", self.iterations_per_episode),
            ("image height", self.image_size.0),
            ("image width", self.image_size.1),
            ("partition P_h", self.partition_factors.0),
            ("partition P_w", self.partition_factors.1),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.channel_widths.is_empty() {
            return Err(Error::config("channel_widths must list at least one scale"));
        }
        if let Some(bad) = self.gc_scales.iter().find(|&&s| s >= self.channel_widths.len()) {
            return Err(Error::config(format!(
                "gc scale {bad} out of range for {} scales",
                self.channel_widths.len()
            )));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config("threshold must lie in (0,1)"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if !(self.de_loss_weight.is_finite() && self.de_loss_weight >= 0.0) {
            return Err(Error::config("de_loss_weight must be >= 0"));
        }
        if !(self.grad_clip.is_finite() && self.grad_clip >= 0.0) {
            return Err(Error::config("grad_clip must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must lie in [0,1)"));
        }
        Ok(())
    }

    pub fn to_kv_string(&self) -> String {
        let join = |v: &mut dyn Iterator<Item = usize>| {
            v.map(|x| x.to_string()).collect::<Vec<_>>().join(",")
        };
        let mut s = String::new();
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "episodes_per_epoch = {}", self.episodes_per_epoch);
        let _ = writeln!(s, "iterations_per_episode = {}", self.iterations_per_episode);
        let _ = writeln!(s, "learning_rate = {:?}", self.learning_rate);
        let _ = writeln!(s, "momentum = {:?}", self.momentum);
        let _ = writeln!(s, "grad_clip = {:?}", self.grad_clip);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "image_size = {},{}", self.image_size.0, self.image_size.1);
        let _ = writeln!(
            s,
            "channel_widths = {}",
            join(&mut self.channel_widths.iter().copied())
        );
        let _ = writeln!(
            s,
            "partition_factors = {},{}",
            self.partition_factors.0, self.partition_factors.1
        );
        let _ = writeln!(s, "de_loss_weight = {:?}", self.de_loss_weight);
        let _ = writeln!(s, "gc_scales = {}", join(&mut self.gc_scales.iter().copied()));
        let _ = writeln!(s, "threshold = {:?}", self.threshold);
        let _ = writeln!(s, "embedding = {}", self.embedding.as_str());
        let _ = writeln!(s, "checkpoint_every = {}", self.checkpoint_every);
        s
    }

    /// Parses `key = value` lines. Keys absent from the text keep their
    /// defaults; unknown keys are rejected.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let map = parse_kv(text, KEYS)?;
        let mut cfg = RunConfig::default();
        for (key, value) in &map {
            let v = value.as_str();
            match key.as_str() {
                "epochs" => cfg.epochs = parse_num(key, v)?,
                "episodes_per_epoch" => cfg.episodes_per_epoch = parse_num(key, v)?,
                "iterations_per_episode" => cfg.iterations_per_episode = parse_num(key, v)?,
                "learning_rate" => cfg.learning_rate = parse_num(key, v)?,
                "momentum" => cfg.momentum = parse_num(key, v)?,
                "grad_clip" => cfg.grad_clip = parse_num(key, v)?,
                "seed" => cfg.seed = parse_num(key, v)?,
                "image_size" => cfg.image_size = parse_pair(key, v)?,
                "channel_widths" => cfg.channel_widths = parse_list(key, v)?,
                "partition_factors" => cfg.partition_factors = parse_pair(key, v)?,
                "de_loss_weight" => cfg.de_loss_weight = parse_num(key, v)?,
                "gc_scales" => cfg.gc_scales = parse_list(key, v)?.into_iter().collect(),
                "threshold" => cfg.threshold = parse_num(key, v)?,
                "embedding" => cfg.embedding = v.parse()?,
                "checkpoint_every" => cfg.checkpoint_every = parse_num(key, v)?,
                _ => unreachable!("parse_kv filters unknown keys"),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::io::read_text(path)?;
        RunConfig::from_kv_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::format(path, msg),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_kv_string().as_bytes())
    }

    /// Hex SHA-256 of the canonical text form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_kv_string().as_bytes());
        hex::encode(&digest[..8])
    }
}

/// Splits `key = value` lines, skipping blanks and `#` comments.
pub fn parse_kv(text: &str, allowed: &[&str]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::config(format!("line {}: expected `key = value`", lineno + 1))
        })?;
        let key = k.trim();
        if !allowed.contains(&key) {
            return Err(Error::config(format!(
                "line {}: unknown key `{key}`",
                lineno + 1
            )));
        }
        if out.insert(key.to_string(), v.trim().to_string()).is_some() {
            return Err(Error::config(format!(
                "line {}: duplicate key `{key}`",
                lineno + 1
            )));
        }
    }
    Ok(out)
}

pub(crate) fn parse_num<N: FromStr>(key: &str, v: &str) -> Result<N> {
    v.parse()
        .map_err(|_| Error::config(format!("`{key}`: cannot parse `{v}`")))
}

pub(crate) fn parse_list<N: FromStr>(key: &str, v: &str) -> Result<Vec<N>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|p| parse_num(key, p.trim())).collect()
}

pub(crate) fn parse_pair<N: FromStr + Copy>(key: &str, v: &str) -> Result<(N, N)> {
    match parse_list::<N>(key, v)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err(Error::config(format!("`{key}`: expected two values, got `{v}`"))),
    }
}
