use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Target dimensions of the reduced descriptors.
pub const TARGET_DIMS: [usize; 4] = [64, 32, 24, 16];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Autoencoder trained on reconstruction.
    Unsupervised,
    /// Classifier on k-means pseudo-labels.
    SelfSupervised,
    /// Triplet margin loss on ground-truth patch labels.
    Supervised,
}

impl Scheme {
    pub fn code(self) -> &'static str {
        match self {
            Scheme::Unsupervised => "us",
            Scheme::SelfSupervised => "ss",
            Scheme::Supervised => "sv",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Scheme> {
        match s.trim().to_ascii_lowercase().as_str() {
            "us" | "unsupervised" => Ok(Scheme::Unsupervised),
            "ss" | "self-supervised" | "selfsupervised" => Ok(Scheme::SelfSupervised),
            "sv" | "supervised" => Ok(Scheme::Supervised),
            other => Err(Error::config(format!("unknown scheme '{other}' (expected us, ss or sv)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub scheme: Scheme,
    pub target_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Decay the learning rate linearly to zero over the whole run.
    pub lr_decay: bool,
    pub margin: f64,
    /// Weight of the distance loss in the unsupervised scheme.
    pub alpha: f64,
    /// Weight of the distance loss in the supervised scheme.
    pub beta: f64,
    pub use_distance_loss: bool,
    /// Supervised scheme: also apply the distance loss to the positives.
    pub distance_on_positives: bool,
    /// Cluster count; `None` means `min(100 000, N/4)`.
    pub k: Option<usize>,
    pub recluster_period: usize,
    pub kmeans_max_iters: usize,
    /// k-means++ initializations per clustering.
    pub kmeans_restarts: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Default settings for each scheme, with two hidden layers of 512.
    pub fn new(scheme: Scheme, target_dim: usize) -> TrainConfig {
        let (epochs, batch_size, lr_decay) = match scheme {
            Scheme::Unsupervised => (5, 1024, false),
            Scheme::SelfSupervised => (200, 256, false),
            Scheme::Supervised => (10, 1024, true),
        };
        TrainConfig {
            scheme,
            target_dim,
            hidden_sizes: vec![512, 512],
            epochs,
            batch_size,
            learning_rate: 1e-3,
            lr_decay,
            margin: 1.0,
            alpha: 0.1,
            beta: 3.0,
            use_distance_loss: false,
            distance_on_positives: false,
            k: None,
            recluster_period: 10,
            kmeans_max_iters: crate::cluster::DEFAULT_MAX_ITERS,
            kmeans_restarts: 1,
            seed: 0,
        }
    }

    /// Weight of the distance loss for this scheme, zero when it is disabled.
    pub fn distance_weight(&self) -> f64 {
        match (self.use_distance_loss, self.scheme) {
            (false, _) | (_, Scheme::SelfSupervised) => 0.0,
            (true, Scheme::Unsupervised) => self.alpha,
            (true, Scheme::Supervised) => self.beta,
        }
    }

    /// Cluster count used for a training set of `n` rows.
    pub fn cluster_count(&self, n: usize) -> usize {
        self.k.unwrap_or_else(|| (n / 4).clamp(1, 100_000))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.target_dim),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("recluster_period", self.recluster_period),
            ("kmeans_iters", self.kmeans_max_iters),
            ("kmeans_restarts", self.kmeans_restarts),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{name} must be positive")));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("lr must be positive, got {}", self.learning_rate)));
        }
        for (name, v) in [("margin", self.margin), ("alpha", self.alpha), ("beta", self.beta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.hidden_sizes.len() > crate::nn::MAX_HIDDEN_LAYERS {
            return Err(Error::config(format!(
                "at most {} hidden layers are supported",
                crate::nn::MAX_HIDDEN_LAYERS
            )));
        }
        if self.k == Some(0) {
            return Err(Error::config("k must be positive"));
        }
        Ok(())
    }

    /// Applies one `key=value` setting (config-file or flag spelling).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let bad = |what: &str| Error::config(format!("invalid {what} '{value}' for key '{key}'"));
        let usize_of = || value.parse::<usize>().map_err(|_| bad("integer"));
        let f64_of = || value.parse::<f64>().map_err(|_| bad("number"));
        match key.trim().replace('-', "_").as_str() {
            "scheme" => self.scheme = value.parse()?,
            "dim" | "target_dim" => self.target_dim = usize_of()?,
            "hidden" | "hidden_sizes" => self.hidden_sizes = parse_hidden(value)?,
            "epochs" => self.epochs = usize_of()?,
            "batch_size" | "batch" => self.batch_size = usize_of()?,
            "lr" | "learning_rate" => self.learning_rate = f64_of()?,
            "lr_schedule" | "lr_decay" => {
                self.lr_decay = match value {
                    "linear" | "true" | "1" => true,
                    "none" | "constant" | "false" | "0" => false,
                    _ => return Err(bad("schedule (linear or none)")),
                }
            }
            "margin" => self.margin = f64_of()?,
            "alpha" => self.alpha = f64_of()?,
            "beta" => self.beta = f64_of()?,
            "distance_loss" | "use_distance_loss" => self.use_distance_loss = parse_bool(value).ok_or_else(|| bad("boolean"))?,
            "distance_on_positives" => self.distance_on_positives = parse_bool(value).ok_or_else(|| bad("boolean"))?,
            "k" | "clusters" => {
                self.k = if value == "auto" { None } else { Some(usize_of()?) };
            }
            "recluster_period" | "recluster" => self.recluster_period = usize_of()?,
            "kmeans_iters" | "kmeans_max_iters" => self.kmeans_max_iters = usize_of()?,
            "kmeans_restarts" => self.kmeans_restarts = usize_of()?,
            "seed" => self.seed = value.parse::<u64>().map_err(|_| bad("seed"))?,
            other => return Err(Error::config(format!("unknown training key '{other}'"))),
        }
        Ok(())
    }

    /// `key=value` lines that reproduce this configuration through [`TrainConfig::set`].
    pub fn to_lines(&self) -> Vec<String> {
        let hidden = if self.hidden_sizes.is_empty() {
            "none".to_string()
        } else {
            self.hidden_sizes.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
        };
        vec![
            format!("scheme={}", self.scheme),
            format!("dim={}", self.target_dim),
            format!("hidden={hidden}"),
            format!("epochs={}", self.epochs),
            format!("batch_size={}", self.batch_size),
            format!("lr={}", self.learning_rate),
            format!("lr_schedule={}", if self.lr_decay { "linear" } else { "none" }),
            format!("margin={}", self.margin),
            format!("alpha={}", self.alpha),
            format!("beta={}", self.beta),
            format!("distance_loss={}", self.use_distance_loss),
            format!("distance_on_positives={}", self.distance_on_positives),
            format!("k={}", self.k.map_or("auto".to_string(), |k| k.to_string())),
            format!("recluster_period={}", self.recluster_period),
            format!("kmeans_iters={}", self.kmeans_max_iters),
            format!("kmeans_restarts={}", self.kmeans_restarts),
            format!("seed={}", self.seed),
        ]
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Some(true),
        "false" | "0" | "no" | "off" => Some(false),
        _ => None,
    }
}

/// Comma-separated hidden widths; `none` or an empty string means no hidden layer.
pub fn parse_hidden(v: &str) -> Result<Vec<usize>> {
    let v = v.trim();
    if v.is_empty() || v.eq_ignore_ascii_case("none") {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .ok()
                .filter(|&w| w > 0)
                .ok_or_else(|| Error::config(format!("invalid hidden layer width '{s}'")))
        })
        .collect()
}
